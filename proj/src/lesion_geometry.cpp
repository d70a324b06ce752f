#include "dermpolar/lesion_geometry.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace dermpolar {

LesionMask LesionMask::from_grid(ValueGrid grid) {
    if (grid.rank() != 2) {
        throw ShapeError("lesion mask must be a height x width grid");
    }
    int area = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double v = grid[i];
        if (v != 0.0 && v != 1.0) {
            throw Error("lesion mask values must be strictly 0 or 1");
        }
        if (v == 1.0) ++area;
    }
    LesionMask mask;
    mask.grid = std::move(grid);
    mask.area = area;
    return mask;
}

MaskMoments mask_moments(const LesionMask& mask) {
    if (mask.area < 1) throw EmptyMask("mask_moments: mask has no foreground pixels");

    const int height = mask.height();
    const int width = mask.width();
    double sum_x = 0.0;
    double sum_y = 0.0;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            if (mask.grid.at(y, x) == 1.0) {
                sum_x += x;
                sum_y += y;
            }
        }
    }
    MaskMoments m;
    m.area = mask.area;
    m.cx = sum_x / mask.area;
    m.cy = sum_y / mask.area;

    double sxx = 0.0;
    double sxy = 0.0;
    double syy = 0.0;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            if (mask.grid.at(y, x) == 1.0) {
                const double dx = x - m.cx;
                const double dy = y - m.cy;
                sxx += dx * dx;
                sxy += dx * dy;
                syy += dy * dy;
            }
        }
    }
    m.sxx = sxx / mask.area;
    m.sxy = sxy / mask.area;
    m.syy = syy / mask.area;
    return m;
}

MomentEllipse ellipse_from_moments(const MaskMoments& moments) {
    if (moments.area < kMinMaskArea) {
        throw DegenerateMask("ellipse_from_moments: mask area " +
                             std::to_string(moments.area) + " below minimum " +
                             std::to_string(kMinMaskArea));
    }
    const double trace = moments.sxx + moments.syy;
    const double half_diff = 0.5 * (moments.sxx - moments.syy);
    const double disc = std::sqrt(half_diff * half_diff + moments.sxy * moments.sxy);
    const double lambda1 = 0.5 * trace + disc;
    const double lambda2 = 0.5 * trace - disc;

    if (lambda1 <= 0.0 || lambda2 <= kDegenerateEigenRatio * lambda1) {
        throw DegenerateMask("ellipse_from_moments: eigenvalue ratio below threshold");
    }

    MomentEllipse ellipse;
    ellipse.cx = moments.cx;
    ellipse.cy = moments.cy;
    ellipse.a = 2.0 * std::sqrt(lambda1);
    ellipse.b = 2.0 * std::sqrt(lambda2);

    // Circles get orientation 0 by tie-break.
    if (disc <= 1e-12 * std::max(trace, 1.0)) {
        ellipse.orientation = 0.0;
    } else {
        double angle = 0.5 * std::atan2(2.0 * moments.sxy, moments.sxx - moments.syy);
        if (angle < 0.0) angle += std::numbers::pi;
        if (angle >= std::numbers::pi) angle -= std::numbers::pi;
        ellipse.orientation = angle;
    }
    return ellipse;
}

Affine2x3 normalizing_affine(const MomentEllipse& ellipse) {
    const double c = std::cos(ellipse.orientation);
    const double s = std::sin(ellipse.orientation);
    Affine2x3 affine;
    affine.m[0] = c / ellipse.a;
    affine.m[1] = s / ellipse.a;
    affine.m[2] = -(c * ellipse.cx + s * ellipse.cy) / ellipse.a;
    affine.m[3] = -s / ellipse.b;
    affine.m[4] = c / ellipse.b;
    affine.m[5] = (s * ellipse.cx - c * ellipse.cy) / ellipse.b;
    return affine;
}

NormalizedPolarMap polar_map(int height, int width, const Affine2x3& affine) {
    if (height < 1 || width < 1) throw InvalidShape("polar_map: extents must be positive");

    NormalizedPolarMap map;
    map.rho = ValueGrid({height, width});
    map.theta = ValueGrid({height, width});
    map.affine = affine;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const auto [u, v] = affine.apply(x, y);
            map.rho.at(y, x) = std::hypot(u, v);
            double angle = std::atan2(v, u);
            if (angle < 0.0) angle += 2.0 * std::numbers::pi;
            if (angle >= 2.0 * std::numbers::pi) angle = 0.0;
            map.theta.at(y, x) = angle;
        }
    }
    return map;
}

MomentEllipse ellipse_of_mask(const LesionMask& mask) {
    return ellipse_from_moments(mask_moments(mask));
}

NormalizedPolarMap npc_from_mask(const LesionMask& mask) {
    const MomentEllipse ellipse = ellipse_of_mask(mask);
    const Affine2x3 affine = normalizing_affine(ellipse);
    return polar_map(mask.height(), mask.width(), affine);
}

NormalizedPolarMap downsample_npc(const NormalizedPolarMap& npc, int factor) {
    const int height = npc.height();
    const int width = npc.width();
    if (factor < 1 || height % factor != 0 || width % factor != 0) {
        throw ShapeError("downsample_npc: factor must evenly divide both extents");
    }
    const int out_h = height / factor;
    const int out_w = width / factor;

    NormalizedPolarMap out;
    out.rho = ValueGrid({out_h, out_w});
    out.theta = ValueGrid({out_h, out_w});
    const double inv_count = 1.0 / (static_cast<double>(factor) * factor);
    for (int y = 0; y < out_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            double rho_sum = 0.0;
            double cos_sum = 0.0;
            double sin_sum = 0.0;
            for (int dy = 0; dy < factor; ++dy) {
                for (int dx = 0; dx < factor; ++dx) {
                    const int fy = y * factor + dy;
                    const int fx = x * factor + dx;
                    rho_sum += npc.rho.at(fy, fx);
                    const double angle = npc.theta.at(fy, fx);
                    cos_sum += std::cos(angle);
                    sin_sum += std::sin(angle);
                }
            }
            out.rho.at(y, x) = rho_sum * inv_count;
            double angle = std::atan2(sin_sum, cos_sum);
            if (angle < 0.0) angle += 2.0 * std::numbers::pi;
            if (angle >= 2.0 * std::numbers::pi) angle = 0.0;
            out.theta.at(y, x) = angle;
        }
    }

    // Compose with the coarse-to-fine pixel-center map
    // x_fine = factor * x_coarse + (factor - 1) / 2.
    const double scale = factor;
    const double offset = 0.5 * (factor - 1);
    out.affine = npc.affine;
    out.affine.m[0] *= scale;
    out.affine.m[1] *= scale;
    out.affine.m[2] += npc.affine.m[0] * offset + npc.affine.m[1] * offset;
    out.affine.m[3] *= scale;
    out.affine.m[4] *= scale;
    out.affine.m[5] += npc.affine.m[3] * offset + npc.affine.m[4] * offset;
    return out;
}

LesionMask rasterize_ellipse(const MomentEllipse& ellipse, int height, int width) {
    const double c = std::cos(ellipse.orientation);
    const double s = std::sin(ellipse.orientation);
    ValueGrid grid({height, width}, 0.0);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double dx = x - ellipse.cx;
            const double dy = y - ellipse.cy;
            const double u = (c * dx + s * dy) / ellipse.a;
            const double v = (-s * dx + c * dy) / ellipse.b;
            if (u * u + v * v <= 1.0) grid.at(y, x) = 1.0;
        }
    }
    return LesionMask::from_grid(std::move(grid));
}

} // namespace dermpolar
