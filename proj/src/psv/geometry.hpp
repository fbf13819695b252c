#pragma once

#include <array>
#include <string>
#include <vector>

#include "psv/image.hpp"

namespace psv {

// Paper capture geometry: four 640x480 fisheye cameras, PSV canvas of
// 1000x1000 px at 1 cm per pixel, vehicle center at (500,500).
inline constexpr int kCameraWidth = 640;
inline constexpr int kCameraHeight = 480;
inline constexpr int kPsvSize = 1000;
inline constexpr double kPsvPxPerMeter = 100.0;  // 1 cm per pixel
inline constexpr double kPsvCenter = 500.0;

// Equidistant fisheye: the distorted radius of a ray at field angle theta is
// theta * (1 + k1 th^2 + k2 th^4 + k3 th^6 + k4 th^8) in normalized units.
// All-zero coefficients make undistortion the identity.
struct CameraIntrinsics {
    double focal_x = 0, focal_y = 0;
    double center_x = 0, center_y = 0;
    std::array<double, 4> distortion{0, 0, 0, 0};
    int image_width = kCameraWidth;
    int image_height = kCameraHeight;

    void validate() const;
    // theta -> distorted radius (normalized image plane).
    double distort_theta(double theta) const;
};

// 3x3 projective map, row-major, image plane -> ground plane.
struct Homography {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Homography identity() { return Homography{}; }
    double det() const;
    Homography inverse() const;       // throws on |det| <= 1e-9
    Homography normalized() const;    // bottom-right entry scaled to 1 when nonzero
    // Apply to (x, y); throws if the point maps to infinity.
    void apply(double x, double y, double& ox, double& oy) const;
    Homography operator*(const Homography& o) const;
};

// Per-pixel stitch weight in [0,1]; one per camera, same size as the canvas.
struct StitchMask {
    int width = 0, height = 0;
    std::vector<float> weights;

    StitchMask() = default;
    StitchMask(int w, int h) : width(w), height(h), weights(static_cast<size_t>(w) * h, 0.f) {}
    float at(int x, int y) const { return weights[static_cast<size_t>(y) * width + x]; }
    float& at(int x, int y) { return weights[static_cast<size_t>(y) * width + x]; }
};

ImageRgb undistort_fisheye(const ImageRgb& img, const CameraIntrinsics& k);

struct Correspondence {
    double image_x, image_y;
    double ground_x, ground_y;
};

// Direct linear transform over >= 4 correspondences (Hartley-normalized),
// minimizing the algebraic error. Throws on degenerate configurations.
Homography estimate_homography(const std::vector<Correspondence>& pairs);

ImageRgb warp_topdown(const ImageRgb& img, const Homography& h, int out_width, int out_height);

// Diagonal-seam quadrant masks in order front, right, back, left.
// feather_px = 0 yields hard indicator masks (ties broken by camera order);
// otherwise weights cross-fade linearly and are normalized so they sum to 1.
std::array<StitchMask, 4> make_quadrant_masks(int size, double feather_px);

// Per-pixel weighted sum of four same-size views. Masks must not sum above
// 1 + 1e-6 anywhere; pixels with zero total weight stay black.
ImageRgb stitch(const std::array<ImageRgb, 4>& views, const std::array<StitchMask, 4>& masks);

// Vehicle frame: x forward (meters), y left; PSV row 0 is the front edge.
void world_to_pixel(double x_m, double y_m, double& u, double& v);
void pixel_to_world(double u, double v, double& x_m, double& y_m);

// Calibration file: per camera a 3x3 K matrix (9 numbers), 4 distortion
// coefficients, the capture size, and a 3x3 homography (9 numbers).
struct CameraCalibration {
    CameraIntrinsics intrinsics;
    Homography h;
};

struct RigCalibration {
    std::array<CameraCalibration, 4> cameras;  // front, right, back, left
    double feather_px = 20.0;

    static RigCalibration load(const std::string& path);
    void save(const std::string& path) const;
};

}  // namespace psv
