#pragma once

#include <array>

#include "dermpolar/value_grid.hpp"

namespace dermpolar {

/// Binary lesion mask over a height x width grid. Values are strictly
/// 0 or 1; `area` counts the foreground pixels.
struct LesionMask {
    ValueGrid grid;
    int area = 0;

    /// Validates that `grid` is a rank-2 binary grid and counts its area.
    static LesionMask from_grid(ValueGrid grid);

    int height() const { return grid.extent(0); }
    int width() const { return grid.extent(1); }
};

/// Centroid and population central second moments of a mask, measured
/// over pixel centers with x = column and y = row.
struct MaskMoments {
    double cx = 0.0;
    double cy = 0.0;
    double sxx = 0.0;
    double sxy = 0.0;
    double syy = 0.0;
    int area = 0;
};

/// Ellipse with the same second-order moments as a mask: semi-axes are
/// 2 sqrt(lambda) for the covariance eigenvalues, a >= b, orientation of
/// the major axis in [0, pi) measured from the image x-axis.
struct MomentEllipse {
    double cx = 0.0;
    double cy = 0.0;
    double a = 0.0;
    double b = 0.0;
    double orientation = 0.0;
};

/// Row-major 2x3 affine map from pixel coordinates (x, y) to
/// normalized-circle coordinates.
struct Affine2x3 {
    std::array<double, 6> m{1, 0, 0, 0, 1, 0};

    std::array<double, 2> apply(double x, double y) const {
        return {m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5]};
    }
};

/// Per-pixel normalized polar coordinates plus the affine that produced
/// them. rho is the Euclidean norm of the affine image of the pixel
/// center (not clamped; values above 1 occur outside the ellipse) and
/// theta is its atan2 angle wrapped to [0, 2 pi).
struct NormalizedPolarMap {
    ValueGrid rho;
    ValueGrid theta;
    Affine2x3 affine;

    int height() const { return rho.extent(0); }
    int width() const { return rho.extent(1); }
};

/// Ratio below which the minor eigenvalue renders the ellipse frame
/// meaningless, and the minimum area accepted for fitting.
inline constexpr double kDegenerateEigenRatio = 1e-6;
inline constexpr int kMinMaskArea = 16;

MaskMoments mask_moments(const LesionMask& mask);

MomentEllipse ellipse_from_moments(const MaskMoments& moments);

/// translate(-center) -> rotate(-orientation) -> scale(1/a, 1/b);
/// maps the ellipse boundary to the unit circle and its center to the origin.
Affine2x3 normalizing_affine(const MomentEllipse& ellipse);

NormalizedPolarMap polar_map(int height, int width, const Affine2x3& affine);

/// Convenience chain: moments -> ellipse -> affine -> polar map at the
/// mask's own resolution.
NormalizedPolarMap npc_from_mask(const LesionMask& mask);

MomentEllipse ellipse_of_mask(const LesionMask& mask);

/// Coarse polar map at (height/factor, width/factor): rho is obtained by
/// factor x factor average pooling of the fine rho grid, theta by average
/// pooling the (cos theta, sin theta) unit vectors and re-taking the
/// angle. The stored affine is composed with the coarse-to-fine pixel map.
NormalizedPolarMap downsample_npc(const NormalizedPolarMap& npc, int factor);

/// Fills every pixel whose center lies inside the ellipse.
LesionMask rasterize_ellipse(const MomentEllipse& ellipse, int height, int width);

} // namespace dermpolar
