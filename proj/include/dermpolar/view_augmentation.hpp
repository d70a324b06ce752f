#pragma once

#include <string>
#include <vector>

#include "dermpolar/lesion_geometry.hpp"
#include "dermpolar/value_grid.hpp"

namespace dermpolar {

/// Axis-aligned integer pixel rectangle.
struct RectI {
    int x = 0;
    int y = 0;
    int w = 0;
    int h = 0;

    bool operator==(const RectI&) const = default;
};

/// Provenance of one augmented view: the rotation applied to the source
/// case, the square crop taken from the rotated canvas, and the output
/// resolution. `fallback` marks views that were replaced by the center
/// crop of the unrotated image because the crop left too few lesion pixels.
struct ViewSpec {
    double rotation_deg = 0.0;
    RectI crop;
    int output_side = 256;
    bool fallback = false;
    int rotation_index = 0;
    int crop_index = 0;
};

struct View {
    ValueGrid image; // output_side x output_side x 3
    LesionMask mask; // output_side x output_side
    NormalizedPolarMap npc;
    ViewSpec spec;
};

/// The augmented views of one clinical case, in rotation-major order.
struct ViewSet {
    std::string case_id;
    std::vector<View> views;
};

struct RotationResult {
    ValueGrid image;
    ValueGrid mask;
    ValueGrid valid; // 1 where the sampled source point lies inside the original image
};

struct AugmentOptions {
    std::vector<double> rotation_angles_deg{0, 45, 90, 135, 180, 225, 270, 315};
    int crops_per_rotation = 3;
    int output_side = 256;
    int min_view_lesion_px = 16;
};

/// Rotates image and mask about the image center onto the bounding-box
/// canvas of the rotated frame. The image is sampled bilinearly, the mask
/// with nearest neighbor; multiples of 90 degrees take an exact
/// permutation path. A destination pixel is valid when its source point
/// falls inside [0, W-1] x [0, H-1].
RotationResult rotate_with_mask(const ValueGrid& image, const LesionMask& mask,
                                double angle_deg);

/// Canvas size of the rotated frame produced by rotate_with_mask.
void rotated_canvas_size(int width, int height, double angle_deg, int& out_w, int& out_h);

/// Maximum-area axis-aligned rectangle inside the rotated image frame,
/// in rotated-canvas pixel coordinates. Closed form for a rotated
/// rectangle; the result stays within 1 px per edge of a discrete
/// brute-force search.
RectI largest_inscribed_rect(int width, int height, double angle_deg);

/// `count` squares of side min(w, h) placed at the start, middle, and end
/// of the longer dimension (evenly spaced for other counts).
std::vector<RectI> square_crops(const RectI& rect, int count = 3);

/// Bilinear resize of the sub-rectangle `src_rect` of `src` (any channel
/// count) to out_h x out_w; sample taps are clamped to the rectangle.
ValueGrid resize_bilinear(const ValueGrid& src, const RectI& src_rect, int out_h,
                          int out_w);

/// Nearest-neighbor variant, used for masks so values stay binary.
ValueGrid resize_nearest(const ValueGrid& src, const RectI& src_rect, int out_h,
                         int out_w);

/// Full augmentation of one case: every rotation angle crossed with the
/// square crops of its largest inscribed rectangle, each view resized and
/// given a polar map recomputed from its own transformed mask.
ViewSet augment_case(const std::string& case_id, const ValueGrid& image,
                     const LesionMask& mask, const AugmentOptions& options = {});

} // namespace dermpolar
