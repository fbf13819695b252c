#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace psv {

// 8-bit RGB image, row-major, interleaved channels.
struct ImageRgb {
    int width = 0, height = 0;
    std::vector<uint8_t> pixels;  // height*width*3

    ImageRgb() = default;
    ImageRgb(int w, int h, uint8_t fill = 0)
        : width(w), height(h), pixels(static_cast<size_t>(w) * h * 3, fill) {}

    size_t index(int x, int y) const { return (static_cast<size_t>(y) * width + x) * 3; }
    uint8_t* at(int x, int y) { return pixels.data() + index(x, y); }
    const uint8_t* at(int x, int y) const { return pixels.data() + index(x, y); }
    bool inside(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
};

// Single-channel 8-bit image. Doubles as the per-pixel category map
// (0 = background .. 5 = yellow-dashed) and as binary masks (0/1).
struct ImageGray {
    int width = 0, height = 0;
    std::vector<uint8_t> pixels;

    ImageGray() = default;
    ImageGray(int w, int h, uint8_t fill = 0)
        : width(w), height(h), pixels(static_cast<size_t>(w) * h, fill) {}

    size_t index(int x, int y) const { return static_cast<size_t>(y) * width + x; }
    uint8_t& at(int x, int y) { return pixels[index(x, y)]; }
    uint8_t at(int x, int y) const { return pixels[index(x, y)]; }
    bool inside(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
};

using LabelMask = ImageGray;

// PNG round trip (8-bit RGB / 8-bit gray, no palette).
ImageRgb read_png_rgb(const std::string& path);
ImageGray read_png_gray(const std::string& path);
void write_png(const std::string& path, const ImageRgb& img);
void write_png(const std::string& path, const ImageGray& img);

// Bilinear sample with out-of-bounds treated as black. Channel-interleaved RGB.
void sample_bilinear_rgb(const ImageRgb& img, double x, double y, uint8_t out[3]);

}  // namespace psv
