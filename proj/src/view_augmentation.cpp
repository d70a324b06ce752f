#include "dermpolar/view_augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace dermpolar {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

bool is_right_angle(double angle_deg, int& quarter_turns) {
    const double turns = angle_deg / 90.0;
    const double nearest = std::round(turns);
    if (std::abs(turns - nearest) < 1e-12) {
        int q = static_cast<int>(nearest) % 4;
        if (q < 0) q += 4;
        quarter_turns = q;
        return true;
    }
    return false;
}

double sample_bilinear(const ValueGrid& grid, double x, double y, int channel,
                       int x_lo, int x_hi, int y_lo, int y_hi) {
    x = std::clamp(x, static_cast<double>(x_lo), static_cast<double>(x_hi));
    y = std::clamp(y, static_cast<double>(y_lo), static_cast<double>(y_hi));
    int x0 = static_cast<int>(std::floor(x));
    int y0 = static_cast<int>(std::floor(y));
    if (x0 >= x_hi) x0 = x_hi - 1;
    if (y0 >= y_hi) y0 = y_hi - 1;
    x0 = std::max(x0, x_lo);
    y0 = std::max(y0, y_lo);
    const int x1 = std::min(x0 + 1, x_hi);
    const int y1 = std::min(y0 + 1, y_hi);
    const double tx = x - x0;
    const double ty = y - y0;
    const double top = (1.0 - tx) * grid.at(y0, x0, channel) + tx * grid.at(y0, x1, channel);
    const double bottom = (1.0 - tx) * grid.at(y1, x0, channel) + tx * grid.at(y1, x1, channel);
    return (1.0 - ty) * top + ty * bottom;
}

RotationResult rotate_right_angle(const ValueGrid& image, const LesionMask& mask,
                                  int quarter_turns) {
    const int height = image.extent(0);
    const int width = image.extent(1);
    const int channels = image.extent(2);
    const bool swap = (quarter_turns % 2) == 1;
    const int out_h = swap ? width : height;
    const int out_w = swap ? height : width;

    RotationResult out;
    out.image = ValueGrid({out_h, out_w, channels});
    out.mask = ValueGrid({out_h, out_w});
    out.valid = ValueGrid({out_h, out_w}, 1.0);
    for (int y = 0; y < out_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            int sx = x;
            int sy = y;
            // Same convention as the general inverse-rotation path.
            switch (quarter_turns) {
                case 0: break;
                case 1:
                    sx = y;
                    sy = height - 1 - x;
                    break;
                case 2:
                    sx = width - 1 - x;
                    sy = height - 1 - y;
                    break;
                case 3:
                    sx = width - 1 - y;
                    sy = x;
                    break;
            }
            for (int c = 0; c < channels; ++c) {
                out.image.at(y, x, c) = image.at(sy, sx, c);
            }
            out.mask.at(y, x) = mask.grid.at(sy, sx);
        }
    }
    return out;
}

} // namespace

void rotated_canvas_size(int width, int height, double angle_deg, int& out_w, int& out_h) {
    int quarter = 0;
    if (is_right_angle(angle_deg, quarter)) {
        const bool swap = (quarter % 2) == 1;
        out_w = swap ? height : width;
        out_h = swap ? width : height;
        return;
    }
    const double rad = angle_deg * kDegToRad;
    const double si = std::abs(std::sin(rad));
    const double co = std::abs(std::cos(rad));
    out_w = static_cast<int>(std::ceil(width * co + height * si - 1e-9));
    out_h = static_cast<int>(std::ceil(width * si + height * co - 1e-9));
}

RotationResult rotate_with_mask(const ValueGrid& image, const LesionMask& mask,
                                double angle_deg) {
    if (image.rank() != 3) throw ShapeError("rotate_with_mask: image must be H x W x C");
    if (image.extent(0) != mask.height() || image.extent(1) != mask.width()) {
        throw ShapeError("rotate_with_mask: image and mask extents differ");
    }

    int quarter = 0;
    if (is_right_angle(angle_deg, quarter)) {
        return rotate_right_angle(image, mask, quarter);
    }

    const int height = image.extent(0);
    const int width = image.extent(1);
    const int channels = image.extent(2);
    int out_w = 0;
    int out_h = 0;
    rotated_canvas_size(width, height, angle_deg, out_w, out_h);

    const double rad = angle_deg * kDegToRad;
    const double co = std::cos(rad);
    const double si = std::sin(rad);
    const double src_cx = 0.5 * (width - 1);
    const double src_cy = 0.5 * (height - 1);
    const double dst_cx = 0.5 * (out_w - 1);
    const double dst_cy = 0.5 * (out_h - 1);

    RotationResult out;
    out.image = ValueGrid({out_h, out_w, channels});
    out.mask = ValueGrid({out_h, out_w});
    out.valid = ValueGrid({out_h, out_w});
    for (int y = 0; y < out_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            const double dx = x - dst_cx;
            const double dy = y - dst_cy;
            // Inverse rotation back into source coordinates.
            const double sx = co * dx + si * dy + src_cx;
            const double sy = -si * dx + co * dy + src_cy;
            const bool valid = sx >= 0.0 && sx <= width - 1 && sy >= 0.0 && sy <= height - 1;
            out.valid.at(y, x) = valid ? 1.0 : 0.0;
            if (!valid) continue;
            for (int c = 0; c < channels; ++c) {
                out.image.at(y, x, c) =
                    sample_bilinear(image, sx, sy, c, 0, width - 1, 0, height - 1);
            }
            const int nx = std::clamp(static_cast<int>(std::lround(sx)), 0, width - 1);
            const int ny = std::clamp(static_cast<int>(std::lround(sy)), 0, height - 1);
            out.mask.at(y, x) = mask.grid.at(ny, nx);
        }
    }
    return out;
}

RectI largest_inscribed_rect(int width, int height, double angle_deg) {
    if (width < 1 || height < 1) {
        throw InvalidShape("largest_inscribed_rect: extents must be positive");
    }

    int quarter = 0;
    if (is_right_angle(angle_deg, quarter)) {
        const bool swap = (quarter % 2) == 1;
        return RectI{0, 0, swap ? height : width, swap ? width : height};
    }

    const double rad = angle_deg * kDegToRad;
    const double si = std::abs(std::sin(rad));
    const double co = std::abs(std::cos(rad));

    // Solved over pixel-center extents: valid sampling spans (W-1) x (H-1)
    // around the center, so the inscribed box is computed for those spans.
    const double w_eff = width - 1;
    const double h_eff = height - 1;
    const double short_side = std::min(w_eff, h_eff);
    const double long_side = std::max(w_eff, h_eff);

    double wr = 0.0;
    double hr = 0.0;
    if (short_side <= 2.0 * si * co * long_side) {
        // One constraint active: the rectangle is limited by the short side.
        const double half = 0.5 * short_side;
        if (w_eff <= h_eff) {
            wr = half / co;
            hr = half / si;
        } else {
            wr = half / si;
            hr = half / co;
        }
    } else {
        const double cos2 = co * co - si * si;
        wr = (w_eff * co - h_eff * si) / cos2;
        hr = (h_eff * co - w_eff * si) / cos2;
    }

    int canvas_w = 0;
    int canvas_h = 0;
    rotated_canvas_size(width, height, angle_deg, canvas_w, canvas_h);
    const double cx = 0.5 * (canvas_w - 1);
    const double cy = 0.5 * (canvas_h - 1);

    const int x0 = static_cast<int>(std::ceil(cx - 0.5 * wr - 1e-9));
    const int x1 = static_cast<int>(std::floor(cx + 0.5 * wr + 1e-9));
    const int y0 = static_cast<int>(std::ceil(cy - 0.5 * hr - 1e-9));
    const int y1 = static_cast<int>(std::floor(cy + 0.5 * hr + 1e-9));
    RectI rect{x0, y0, std::max(1, x1 - x0 + 1), std::max(1, y1 - y0 + 1)};
    return rect;
}

std::vector<RectI> square_crops(const RectI& rect, int count) {
    if (rect.w < 1 || rect.h < 1) {
        throw InvalidShape("square_crops: rectangle must be non-empty");
    }
    if (count < 1) throw Error("square_crops: count must be positive");

    const int side = std::min(rect.w, rect.h);
    const int slack = std::max(rect.w, rect.h) - side;
    const bool along_width = rect.w >= rect.h;

    std::vector<RectI> crops;
    crops.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const int offset = count > 1 ? (slack * i) / (count - 1) : slack / 2;
        RectI crop{rect.x, rect.y, side, side};
        if (along_width) {
            crop.x += offset;
        } else {
            crop.y += offset;
        }
        crops.push_back(crop);
    }
    return crops;
}

ValueGrid resize_bilinear(const ValueGrid& src, const RectI& src_rect, int out_h,
                          int out_w) {
    const int channels = src.rank() >= 3 ? src.extent(2) : 1;
    const double scale_x = static_cast<double>(src_rect.w) / out_w;
    const double scale_y = static_cast<double>(src_rect.h) / out_h;
    const int x_lo = src_rect.x;
    const int x_hi = src_rect.x + src_rect.w - 1;
    const int y_lo = src_rect.y;
    const int y_hi = src_rect.y + src_rect.h - 1;

    ValueGrid out(src.rank() >= 3 ? std::vector<int>{out_h, out_w, channels}
                                  : std::vector<int>{out_h, out_w});
    for (int y = 0; y < out_h; ++y) {
        const double sy = src_rect.y + (y + 0.5) * scale_y - 0.5;
        for (int x = 0; x < out_w; ++x) {
            const double sx = src_rect.x + (x + 0.5) * scale_x - 0.5;
            if (src.rank() >= 3) {
                for (int c = 0; c < channels; ++c) {
                    out.at(y, x, c) = sample_bilinear(src, sx, sy, c, x_lo, x_hi, y_lo, y_hi);
                }
            } else {
                // Treat a rank-2 grid as a single channel.
                const double clamped_x = std::clamp(sx, static_cast<double>(x_lo),
                                                    static_cast<double>(x_hi));
                const double clamped_y = std::clamp(sy, static_cast<double>(y_lo),
                                                    static_cast<double>(y_hi));
                int x0 = std::min(static_cast<int>(std::floor(clamped_x)), x_hi - 1);
                int y0 = std::min(static_cast<int>(std::floor(clamped_y)), y_hi - 1);
                x0 = std::max(x0, x_lo);
                y0 = std::max(y0, y_lo);
                const int x1 = std::min(x0 + 1, x_hi);
                const int y1 = std::min(y0 + 1, y_hi);
                const double tx = clamped_x - x0;
                const double ty = clamped_y - y0;
                const double top = (1 - tx) * src.at(y0, x0) + tx * src.at(y0, x1);
                const double bottom = (1 - tx) * src.at(y1, x0) + tx * src.at(y1, x1);
                out.at(y, x) = (1 - ty) * top + ty * bottom;
            }
        }
    }
    return out;
}

ValueGrid resize_nearest(const ValueGrid& src, const RectI& src_rect, int out_h,
                         int out_w) {
    const double scale_x = static_cast<double>(src_rect.w) / out_w;
    const double scale_y = static_cast<double>(src_rect.h) / out_h;
    const int channels = src.rank() >= 3 ? src.extent(2) : 1;

    ValueGrid out(src.rank() >= 3 ? std::vector<int>{out_h, out_w, channels}
                                  : std::vector<int>{out_h, out_w});
    for (int y = 0; y < out_h; ++y) {
        const double sy = src_rect.y + (y + 0.5) * scale_y - 0.5;
        const int ny = std::clamp(static_cast<int>(std::lround(sy)), src_rect.y,
                                  src_rect.y + src_rect.h - 1);
        for (int x = 0; x < out_w; ++x) {
            const double sx = src_rect.x + (x + 0.5) * scale_x - 0.5;
            const int nx = std::clamp(static_cast<int>(std::lround(sx)), src_rect.x,
                                      src_rect.x + src_rect.w - 1);
            if (src.rank() >= 3) {
                for (int c = 0; c < channels; ++c) out.at(y, x, c) = src.at(ny, nx, c);
            } else {
                out.at(y, x) = src.at(ny, nx);
            }
        }
    }
    return out;
}

namespace {

int mask_pixel_count(const ValueGrid& mask) {
    int count = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] == 1.0) ++count;
    }
    return count;
}

View make_view(const ValueGrid& canvas_image, const ValueGrid& canvas_mask,
               const RectI& crop, const ViewSpec& spec) {
    View view;
    view.spec = spec;
    view.spec.crop = crop;
    view.image = resize_bilinear(canvas_image, crop, spec.output_side, spec.output_side);
    ValueGrid mask_grid = resize_nearest(canvas_mask, crop, spec.output_side, spec.output_side);
    view.mask = LesionMask::from_grid(std::move(mask_grid));
    return view;
}

} // namespace

ViewSet augment_case(const std::string& case_id, const ValueGrid& image,
                     const LesionMask& mask, const AugmentOptions& options) {
    if (image.rank() != 3 || image.extent(2) != 3) {
        throw ShapeError("augment_case: image must be H x W x 3");
    }
    if (image.extent(0) != mask.height() || image.extent(1) != mask.width()) {
        throw ShapeError("augment_case: image and mask extents differ");
    }

    const int width = image.extent(1);
    const int height = image.extent(0);

    // Fallback target: center square crop of the unrotated image.
    const RectI full_rect{0, 0, width, height};
    const auto center_crops = square_crops(full_rect, 3);
    const RectI center_crop = center_crops[1];

    ViewSet set;
    set.case_id = case_id;
    set.views.reserve(options.rotation_angles_deg.size() *
                      static_cast<std::size_t>(options.crops_per_rotation));

    for (std::size_t ri = 0; ri < options.rotation_angles_deg.size(); ++ri) {
        const double angle = options.rotation_angles_deg[ri];
        const RotationResult rotated = rotate_with_mask(image, mask, angle);
        const RectI inscribed = largest_inscribed_rect(width, height, angle);
        const auto crops = square_crops(inscribed, options.crops_per_rotation);

        for (std::size_t ci = 0; ci < crops.size(); ++ci) {
            ViewSpec spec;
            spec.rotation_deg = angle;
            spec.output_side = options.output_side;
            spec.rotation_index = static_cast<int>(ri);
            spec.crop_index = static_cast<int>(ci);

            View view = make_view(rotated.image, rotated.mask, crops[ci], spec);
            bool needs_fallback = view.mask.area < options.min_view_lesion_px;
            if (!needs_fallback) {
                try {
                    view.npc = npc_from_mask(view.mask);
                } catch (const DegenerateMask&) {
                    needs_fallback = true;
                }
            }
            if (needs_fallback) {
                ViewSpec fb = spec;
                fb.rotation_deg = 0.0;
                fb.fallback = true;
                view = make_view(image, mask.grid, center_crop, fb);
                if (view.mask.area < options.min_view_lesion_px) {
                    throw DegenerateMask("augment_case: fallback crop of case '" + case_id +
                                         "' leaves too few lesion pixels");
                }
                view.npc = npc_from_mask(view.mask); // DegenerateMask propagates
            }
            set.views.push_back(std::move(view));
        }
    }
    return set;
}

} // namespace dermpolar
