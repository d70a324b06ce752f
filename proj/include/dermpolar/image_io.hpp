#pragma once

#include <string>
#include <vector>

#include "dermpolar/lesion_geometry.hpp"
#include "dermpolar/value_grid.hpp"

namespace dermpolar {

/// Interleaved 8-bit image, 1 (gray) or 3 (RGB) channels.
struct ImageU8 {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<unsigned char> pixels;

    unsigned char at(int y, int x, int c) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
};

/// Reads a PNG or binary PGM/PPM file, recognized by its magic bytes.
/// PNG palette and low-depth images expand to 8-bit; alpha is dropped.
ImageU8 read_image(const std::string& path);

ImageU8 read_png(const std::string& path);
ImageU8 read_pnm(const std::string& path);

void write_png(const std::string& path, const ImageU8& image);

/// P5 for one channel, P6 for three.
void write_pnm(const std::string& path, const ImageU8& image);

/// Bytes map to [0, 1].
ValueGrid image_to_grid(const ImageU8& image);

/// Values clamp to [0, 1] and round to bytes.
ImageU8 grid_to_image(const ValueGrid& grid);

/// Binary mask from a mask image: a pixel is lesion when its value
/// (channel mean for RGB) reaches 128.
ValueGrid mask_from_image(const ImageU8& image);

ImageU8 mask_to_image(const ValueGrid& mask);

} // namespace dermpolar
