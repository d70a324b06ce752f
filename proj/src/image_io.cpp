#include "dermpolar/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

#include <png.h>

#include "dermpolar/errors.hpp"

namespace dermpolar {

namespace {

void check_image(const ImageU8& image) {
    if (image.height < 1 || image.width < 1 ||
        (image.channels != 1 && image.channels != 3)) {
        throw InvalidShape("images must be H x W with 1 or 3 channels");
    }
    const std::size_t expected = static_cast<std::size_t>(image.height) * image.width *
                                 image.channels;
    if (image.pixels.size() != expected) {
        throw InvalidShape("image buffer does not match its declared shape");
    }
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f != nullptr) {
            std::fclose(f);
        }
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

int pnm_token(std::istream& in) {
    // Whitespace and '#' comments separate PNM header tokens.
    int ch = in.get();
    while (ch != EOF && (std::isspace(ch) != 0 || ch == '#')) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') {
                ch = in.get();
            }
        } else {
            ch = in.get();
        }
    }
    if (ch == EOF) {
        throw IoError("truncated PNM header");
    }
    int value = 0;
    while (ch != EOF && std::isdigit(ch) != 0) {
        value = value * 10 + (ch - '0');
        ch = in.get();
    }
    return value;
}

} // namespace

ImageU8 read_png(const std::string& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) {
        throw IoError("cannot open '" + path + "' for reading");
    }
    png_structp png =
        png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
    if (info == nullptr) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("'" + path + "' is not a valid PNG file");
    }
    png_init_io(png, file.get());
    png_read_png(png, info,
                 PNG_TRANSFORM_STRIP_16 | PNG_TRANSFORM_PACKING | PNG_TRANSFORM_EXPAND |
                     PNG_TRANSFORM_STRIP_ALPHA | PNG_TRANSFORM_GRAY_TO_RGB,
                 nullptr);

    ImageU8 image;
    image.height = static_cast<int>(png_get_image_height(png, info));
    image.width = static_cast<int>(png_get_image_width(png, info));
    image.channels = static_cast<int>(png_get_channels(png, info));
    if (image.channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("'" + path + "' did not decode to 8-bit RGB");
    }
    png_bytepp rows = png_get_rows(png, info);
    image.pixels.resize(static_cast<std::size_t>(image.height) * image.width * 3);
    const std::size_t row_bytes = static_cast<std::size_t>(image.width) * 3;
    for (int y = 0; y < image.height; ++y) {
        std::copy_n(rows[y], row_bytes, image.pixels.begin() + y * row_bytes);
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return image;
}

void write_png(const std::string& path, const ImageU8& image) {
    check_image(image);
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    png_structp png =
        png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
    if (info == nullptr) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed while writing '" + path + "'");
    }
    png_init_io(png, file.get());
    const int color_type = image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
                 static_cast<png_uint_32>(image.height), 8, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t row_bytes = static_cast<std::size_t>(image.width) * image.channels;
    for (int y = 0; y < image.height; ++y) {
        png_write_row(png, const_cast<png_bytep>(image.pixels.data() + y * row_bytes));
    }
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
}

ImageU8 read_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path + "' for reading");
    }
    char magic[2];
    in.read(magic, 2);
    if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) {
        throw IoError("'" + path + "' is not a binary PGM or PPM file");
    }
    ImageU8 image;
    image.channels = magic[1] == '5' ? 1 : 3;
    image.width = pnm_token(in);
    image.height = pnm_token(in);
    const int maxval = pnm_token(in);
    if (image.width < 1 || image.height < 1 || maxval != 255) {
        throw IoError("'" + path + "' must be 8-bit with positive dimensions");
    }
    image.pixels.resize(static_cast<std::size_t>(image.height) * image.width *
                        image.channels);
    in.read(reinterpret_cast<char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
    if (!in) {
        throw IoError("'" + path + "' ends before its pixel data");
    }
    return image;
}

void write_pnm(const std::string& path, const ImageU8& image) {
    check_image(image);
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    out << (image.channels == 1 ? "P5" : "P6") << '\n'
        << image.width << ' ' << image.height << '\n'
        << "255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()),
              static_cast<std::streamsize>(image.pixels.size()));
    if (!out) {
        throw IoError("failed while writing '" + path + "'");
    }
}

ImageU8 read_image(const std::string& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) {
        throw IoError("cannot open '" + path + "' for reading");
    }
    unsigned char magic[2] = {0, 0};
    probe.read(reinterpret_cast<char*>(magic), 2);
    probe.close();
    if (magic[0] == 0x89 && magic[1] == 'P') {
        return read_png(path);
    }
    if (magic[0] == 'P' && (magic[1] == '5' || magic[1] == '6')) {
        return read_pnm(path);
    }
    throw IoError("'" + path + "' is neither PNG nor binary PGM/PPM");
}

ValueGrid image_to_grid(const ImageU8& image) {
    check_image(image);
    ValueGrid grid({image.height, image.width, image.channels}, 0.0);
    for (std::size_t i = 0; i < image.pixels.size(); ++i) {
        grid[i] = image.pixels[i] / 255.0;
    }
    return grid;
}

ImageU8 grid_to_image(const ValueGrid& grid) {
    if (grid.rank() != 3 || (grid.extent(2) != 1 && grid.extent(2) != 3)) {
        throw InvalidShape("image grids must be H x W x {1,3}");
    }
    ImageU8 image;
    image.height = grid.extent(0);
    image.width = grid.extent(1);
    image.channels = grid.extent(2);
    image.pixels.resize(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double v = std::clamp(grid[i], 0.0, 1.0);
        image.pixels[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    return image;
}

ValueGrid mask_from_image(const ImageU8& image) {
    check_image(image);
    ValueGrid mask({image.height, image.width}, 0.0);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            double level = 0.0;
            for (int c = 0; c < image.channels; ++c) {
                level += image.at(y, x, c);
            }
            level /= image.channels;
            mask.at(y, x) = level >= 128.0 ? 1.0 : 0.0;
        }
    }
    return mask;
}

ImageU8 mask_to_image(const ValueGrid& mask) {
    if (mask.rank() != 2) {
        throw InvalidShape("masks are H x W grids");
    }
    ImageU8 image;
    image.height = mask.extent(0);
    image.width = mask.extent(1);
    image.channels = 1;
    image.pixels.resize(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        image.pixels[i] = mask[i] != 0.0 ? 255 : 0;
    }
    return image;
}

} // namespace dermpolar
