#include "psv/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "psv/error.hpp"

namespace psv {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

struct PngReader {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngReader() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    }
};

struct PngWriter {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWriter() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    }
};

void read_png_common(const std::string& path, int want_channels, int& width,
                     int& height, std::vector<uint8_t>& out) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw ValidationError("cannot open PNG for reading: " + path);

    PngReader r;
    r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!r.png) throw ValidationError("libpng init failed");
    r.info = png_create_info_struct(r.png);
    if (!r.info) throw ValidationError("libpng info init failed");
    if (setjmp(png_jmpbuf(r.png)))
        throw ValidationError("corrupt or unreadable PNG: " + path);

    png_init_io(r.png, f.get());
    png_read_info(r.png, r.info);

    png_uint_32 w = png_get_image_width(r.png, r.info);
    png_uint_32 h = png_get_image_height(r.png, r.info);
    int bit_depth = png_get_bit_depth(r.png, r.info);
    int color_type = png_get_color_type(r.png, r.info);

    if (bit_depth == 16) png_set_strip_16(r.png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(r.png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8)
        png_set_expand_gray_1_2_4_to_8(r.png);
    if (png_get_valid(r.png, r.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(r.png);
    png_set_strip_alpha(r.png);
    if (want_channels == 3) {
        if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
            png_set_gray_to_rgb(r.png);
    } else {
        if (color_type == PNG_COLOR_TYPE_RGB || color_type == PNG_COLOR_TYPE_RGB_ALPHA ||
            color_type == PNG_COLOR_TYPE_PALETTE)
            png_set_rgb_to_gray_fixed(r.png, 1, -1, -1);
    }
    png_read_update_info(r.png, r.info);

    const size_t rowbytes = png_get_rowbytes(r.png, r.info);
    if (rowbytes != static_cast<size_t>(w) * want_channels)
        throw ValidationError("unexpected PNG layout in " + path);

    out.assign(static_cast<size_t>(w) * h * want_channels, 0);
    std::vector<png_bytep> rows(h);
    for (png_uint_32 y = 0; y < h; ++y)
        rows[y] = out.data() + static_cast<size_t>(y) * rowbytes;
    png_read_image(r.png, rows.data());
    png_read_end(r.png, nullptr);

    width = static_cast<int>(w);
    height = static_cast<int>(h);
}

void write_png_common(const std::string& path, int width, int height,
                      int channels, const uint8_t* data) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw ValidationError("cannot open PNG for writing: " + path);

    PngWriter wtr;
    wtr.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!wtr.png) throw ValidationError("libpng init failed");
    wtr.info = png_create_info_struct(wtr.png);
    if (!wtr.info) throw ValidationError("libpng info init failed");
    if (setjmp(png_jmpbuf(wtr.png)))
        throw ValidationError("PNG write failed: " + path);

    png_init_io(wtr.png, f.get());
    png_set_IHDR(wtr.png, wtr.info, width, height, 8,
                 channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(wtr.png, wtr.info);

    const size_t rowbytes = static_cast<size_t>(width) * channels;
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y)
        rows[y] = const_cast<png_bytep>(data + static_cast<size_t>(y) * rowbytes);
    png_write_image(wtr.png, rows.data());
    png_write_end(wtr.png, nullptr);
}

}  // namespace

ImageRgb read_png_rgb(const std::string& path) {
    ImageRgb img;
    read_png_common(path, 3, img.width, img.height, img.pixels);
    return img;
}

ImageGray read_png_gray(const std::string& path) {
    ImageGray img;
    read_png_common(path, 1, img.width, img.height, img.pixels);
    return img;
}

void write_png(const std::string& path, const ImageRgb& img) {
    write_png_common(path, img.width, img.height, 3, img.pixels.data());
}

void write_png(const std::string& path, const ImageGray& img) {
    write_png_common(path, img.width, img.height, 1, img.pixels.data());
}

void sample_bilinear_rgb(const ImageRgb& img, double x, double y, uint8_t out[3]) {
    out[0] = out[1] = out[2] = 0;
    if (x < -1.0 || y < -1.0 || x > img.width || y > img.height) return;

    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const double fx = x - x0;
    const double fy = y - y0;

    for (int ch = 0; ch < 3; ++ch) {
        double acc = 0.0;
        // Neighbors outside the image contribute black.
        auto tap = [&](int xi, int yi, double wgt) {
            if (wgt == 0.0 || !img.inside(xi, yi)) return;
            acc += wgt * img.at(xi, yi)[ch];
        };
        tap(x0, y0, (1 - fx) * (1 - fy));
        tap(x0 + 1, y0, fx * (1 - fy));
        tap(x0, y0 + 1, (1 - fx) * fy);
        tap(x0 + 1, y0 + 1, fx * fy);
        double v = std::round(acc);
        out[ch] = static_cast<uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v));
    }
}

}  // namespace psv
