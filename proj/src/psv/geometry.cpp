#include "psv/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "psv/error.hpp"

namespace psv {

void CameraIntrinsics::validate() const {
    if (focal_x <= 0 || focal_y <= 0)
        throw ValidationError("intrinsics: focal lengths must be positive");
    if (center_x < 0 || center_x >= image_width || center_y < 0 || center_y >= image_height)
        throw ValidationError("intrinsics: principal point outside image bounds");
    if (image_width <= 0 || image_height <= 0)
        throw ValidationError("intrinsics: bad image size");
}

double CameraIntrinsics::distort_theta(double theta) const {
    const double t2 = theta * theta;
    return theta * (1.0 + t2 * (distortion[0] + t2 * (distortion[1] + t2 * (distortion[2] + t2 * distortion[3]))));
}

double Homography::det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) -
           m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Homography Homography::inverse() const {
    const double d = det();
    if (std::abs(d) <= 1e-9)
        throw ValidationError("homography is singular (|det| <= 1e-9)");
    Homography r;
    r.m[0] = (m[4] * m[8] - m[5] * m[7]) / d;
    r.m[1] = (m[2] * m[7] - m[1] * m[8]) / d;
    r.m[2] = (m[1] * m[5] - m[2] * m[4]) / d;
    r.m[3] = (m[5] * m[6] - m[3] * m[8]) / d;
    r.m[4] = (m[0] * m[8] - m[2] * m[6]) / d;
    r.m[5] = (m[2] * m[3] - m[0] * m[5]) / d;
    r.m[6] = (m[3] * m[7] - m[4] * m[6]) / d;
    r.m[7] = (m[1] * m[6] - m[0] * m[7]) / d;
    r.m[8] = (m[0] * m[4] - m[1] * m[3]) / d;
    return r;
}

Homography Homography::normalized() const {
    Homography r = *this;
    if (std::abs(m[8]) > 1e-12) {
        for (auto& v : r.m) v /= m[8];
    }
    return r;
}

void Homography::apply(double x, double y, double& ox, double& oy) const {
    const double wz = m[6] * x + m[7] * y + m[8];
    if (std::abs(wz) < 1e-12)
        throw ValidationError("homography maps point to infinity");
    ox = (m[0] * x + m[1] * y + m[2]) / wz;
    oy = (m[3] * x + m[4] * y + m[5]) / wz;
}

Homography Homography::operator*(const Homography& o) const {
    Homography r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0;
            for (int k = 0; k < 3; ++k) s += m[i * 3 + k] * o.m[k * 3 + j];
            r.m[i * 3 + j] = s;
        }
    return r;
}

ImageRgb undistort_fisheye(const ImageRgb& img, const CameraIntrinsics& k) {
    k.validate();
    if (img.width != k.image_width || img.height != k.image_height)
        throw ValidationError("undistort_fisheye: image size does not match intrinsics");

    ImageRgb out(img.width, img.height);
    for (int v = 0; v < img.height; ++v) {
        for (int u = 0; u < img.width; ++u) {
            const double a = (u - k.center_x) / k.focal_x;
            const double b = (v - k.center_y) / k.focal_y;
            const double r = std::sqrt(a * a + b * b);
            double sx = static_cast<double>(u), sy = static_cast<double>(v);
            if (r > 1e-12) {
                // In the ideal image the normalized radius equals the field
                // angle; the source pixel sits at the distorted radius.
                const double theta = r;
                const double theta_d = k.distort_theta(theta);
                const double scale = theta_d / r;
                sx = k.focal_x * (a * scale) + k.center_x;
                sy = k.focal_y * (b * scale) + k.center_y;
            }
            sample_bilinear_rgb(img, sx, sy, out.at(u, v));
        }
    }
    return out;
}

namespace {

// Jacobi eigen-decomposition of a symmetric matrix; returns the eigenvector
// of the smallest eigenvalue. Dimensions stay tiny (9x9), robustness over speed.
std::vector<double> smallest_eigenvector(std::vector<double> a, int dim) {
    std::vector<double> v(static_cast<size_t>(dim) * dim, 0.0);
    for (int i = 0; i < dim; ++i) v[i * dim + i] = 1.0;

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0;
        for (int p = 0; p < dim; ++p)
            for (int q = p + 1; q < dim; ++q) off += a[p * dim + q] * a[p * dim + q];
        if (off < 1e-24) break;

        for (int p = 0; p < dim; ++p) {
            for (int q = p + 1; q < dim; ++q) {
                const double apq = a[p * dim + q];
                if (std::abs(apq) < 1e-30) continue;
                const double app = a[p * dim + p];
                const double aqq = a[q * dim + q];
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0 ? 1.0 : -1.0) /
                                 (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double cth = 1.0 / std::sqrt(1.0 + t * t);
                const double sth = t * cth;
                for (int i = 0; i < dim; ++i) {
                    const double aip = a[i * dim + p];
                    const double aiq = a[i * dim + q];
                    a[i * dim + p] = cth * aip - sth * aiq;
                    a[i * dim + q] = sth * aip + cth * aiq;
                }
                for (int i = 0; i < dim; ++i) {
                    const double api = a[p * dim + i];
                    const double aqi = a[q * dim + i];
                    a[p * dim + i] = cth * api - sth * aqi;
                    a[q * dim + i] = sth * api + cth * aqi;
                }
                for (int i = 0; i < dim; ++i) {
                    const double vip = v[i * dim + p];
                    const double viq = v[i * dim + q];
                    v[i * dim + p] = cth * vip - sth * viq;
                    v[i * dim + q] = sth * vip + cth * viq;
                }
            }
        }
    }

    int best = 0;
    for (int i = 1; i < dim; ++i)
        if (a[i * dim + i] < a[best * dim + best]) best = i;
    std::vector<double> out(dim);
    for (int i = 0; i < dim; ++i) out[i] = v[i * dim + best];
    return out;
}

struct NormXform {
    double scale, cx, cy;
};

NormXform normalizing_transform(const std::vector<Correspondence>& pairs, bool ground) {
    double cx = 0, cy = 0;
    for (const auto& p : pairs) {
        cx += ground ? p.ground_x : p.image_x;
        cy += ground ? p.ground_y : p.image_y;
    }
    cx /= pairs.size();
    cy /= pairs.size();
    double mean_dist = 0;
    for (const auto& p : pairs) {
        const double dx = (ground ? p.ground_x : p.image_x) - cx;
        const double dy = (ground ? p.ground_y : p.image_y) - cy;
        mean_dist += std::sqrt(dx * dx + dy * dy);
    }
    mean_dist /= pairs.size();
    const double scale = mean_dist > 1e-12 ? std::sqrt(2.0) / mean_dist : 1.0;
    return {scale, cx, cy};
}

bool three_collinear(const std::vector<Correspondence>& pairs) {
    const size_t n = pairs.size();
    for (size_t i = 0; i < n; ++i)
        for (size_t j = i + 1; j < n; ++j)
            for (size_t k = j + 1; k < n; ++k) {
                const double ax = pairs[j].ground_x - pairs[i].ground_x;
                const double ay = pairs[j].ground_y - pairs[i].ground_y;
                const double bx = pairs[k].ground_x - pairs[i].ground_x;
                const double by = pairs[k].ground_y - pairs[i].ground_y;
                const double cross = ax * by - ay * bx;
                const double scale = std::max({std::abs(ax), std::abs(ay),
                                               std::abs(bx), std::abs(by), 1.0});
                if (std::abs(cross) < 1e-9 * scale * scale) return true;
            }
    return false;
}

}  // namespace

Homography estimate_homography(const std::vector<Correspondence>& pairs) {
    if (pairs.size() < 4)
        throw ValidationError("estimate_homography: need at least 4 correspondences");
    if (three_collinear(pairs))
        throw ValidationError("estimate_homography: degenerate configuration (3 collinear ground points)");

    const NormXform ti = normalizing_transform(pairs, false);
    const NormXform tg = normalizing_transform(pairs, true);

    // Rows of the DLT design matrix on normalized coordinates; accumulate
    // A^T A and take the smallest eigenvector.
    std::vector<double> ata(81, 0.0);
    auto add_row = [&](const std::array<double, 9>& row) {
        for (int i = 0; i < 9; ++i)
            for (int j = 0; j < 9; ++j) ata[i * 9 + j] += row[i] * row[j];
    };
    for (const auto& p : pairs) {
        const double x = (p.image_x - ti.cx) * ti.scale;
        const double y = (p.image_y - ti.cy) * ti.scale;
        const double u = (p.ground_x - tg.cx) * tg.scale;
        const double v = (p.ground_y - tg.cy) * tg.scale;
        add_row({-x, -y, -1, 0, 0, 0, u * x, u * y, u});
        add_row({0, 0, 0, -x, -y, -1, v * x, v * y, v});
    }

    const std::vector<double> hv = smallest_eigenvector(std::move(ata), 9);
    Homography hn;
    for (int i = 0; i < 9; ++i) hn.m[i] = hv[i];

    // Undo normalization: H = Tg^-1 * Hn * Ti.
    Homography t_img;
    t_img.m = {ti.scale, 0, -ti.scale * ti.cx, 0, ti.scale, -ti.scale * ti.cy, 0, 0, 1};
    Homography t_gnd_inv;
    t_gnd_inv.m = {1.0 / tg.scale, 0, tg.cx, 0, 1.0 / tg.scale, tg.cy, 0, 0, 1};
    Homography h = (t_gnd_inv * hn) * t_img;

    if (std::abs(h.det()) <= 1e-9)
        throw ValidationError("estimate_homography: rank-deficient solution");
    return h.normalized();
}

ImageRgb warp_topdown(const ImageRgb& img, const Homography& h, int out_width, int out_height) {
    const Homography hinv = h.inverse();  // throws when singular
    ImageRgb out(out_width, out_height);
    for (int v = 0; v < out_height; ++v) {
        for (int u = 0; u < out_width; ++u) {
            double sx, sy;
            const double wz = hinv.m[6] * u + hinv.m[7] * v + hinv.m[8];
            if (std::abs(wz) < 1e-12) continue;  // stays black
            sx = (hinv.m[0] * u + hinv.m[1] * v + hinv.m[2]) / wz;
            sy = (hinv.m[3] * u + hinv.m[4] * v + hinv.m[5]) / wz;
            sample_bilinear_rgb(img, sx, sy, out.at(u, v));
        }
    }
    return out;
}

std::array<StitchMask, 4> make_quadrant_masks(int size, double feather_px) {
    if (size <= 0) throw ValidationError("make_quadrant_masks: size must be positive");
    if (feather_px < 0) throw ValidationError("make_quadrant_masks: negative feather");

    std::array<StitchMask, 4> masks{StitchMask(size, size), StitchMask(size, size),
                                    StitchMask(size, size), StitchMask(size, size)};
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            // Distance of the pixel to each canvas edge; a camera owns the
            // region nearest its edge, seams run along the diagonals.
            const double d[4] = {static_cast<double>(y),             // front = top edge
                                 static_cast<double>(size - 1 - x),  // right
                                 static_cast<double>(size - 1 - y),  // back
                                 static_cast<double>(x)};            // left
            double raw[4];
            if (feather_px <= 0.0) {
                int best = 0;
                for (int i = 1; i < 4; ++i)
                    if (d[i] < d[best]) best = i;
                raw[0] = raw[1] = raw[2] = raw[3] = 0.0;
                raw[best] = 1.0;
            } else {
                for (int i = 0; i < 4; ++i) {
                    double other = 1e30;
                    for (int j = 0; j < 4; ++j)
                        if (j != i) other = std::min(other, d[j]);
                    const double margin = other - d[i];  // >0 inside camera i's quadrant
                    raw[i] = std::clamp(margin / feather_px + 0.5, 0.0, 1.0);
                }
            }
            double total = raw[0] + raw[1] + raw[2] + raw[3];
            if (total <= 0) total = 1;
            for (int i = 0; i < 4; ++i)
                masks[i].at(x, y) = static_cast<float>(raw[i] / total);
        }
    }
    return masks;
}

ImageRgb stitch(const std::array<ImageRgb, 4>& views, const std::array<StitchMask, 4>& masks) {
    const int w = views[0].width, h = views[0].height;
    for (const auto& v : views)
        if (v.width != w || v.height != h)
            throw ValidationError("stitch: views have mismatched sizes");
    for (const auto& m : masks)
        if (m.width != w || m.height != h)
            throw ValidationError("stitch: mask size does not match views");

    ImageRgb out(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double sum = 0;
            for (int i = 0; i < 4; ++i) sum += masks[i].at(x, y);
            if (sum > 1.0 + 1e-6)
                throw ValidationError("stitch: mask weights sum above 1 at (" +
                                      std::to_string(x) + "," + std::to_string(y) + ")");
            double acc[3] = {0, 0, 0};
            for (int i = 0; i < 4; ++i) {
                const double wgt = masks[i].at(x, y);
                if (wgt == 0) continue;
                const uint8_t* px = views[i].at(x, y);
                for (int ch = 0; ch < 3; ++ch) acc[ch] += wgt * px[ch];
            }
            uint8_t* po = out.at(x, y);
            for (int ch = 0; ch < 3; ++ch) {
                double v = std::round(acc[ch]);
                po[ch] = static_cast<uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v));
            }
        }
    }
    return out;
}

void world_to_pixel(double x_m, double y_m, double& u, double& v) {
    u = kPsvCenter - y_m * kPsvPxPerMeter;
    v = kPsvCenter - x_m * kPsvPxPerMeter;
}

void pixel_to_world(double u, double v, double& x_m, double& y_m) {
    x_m = (kPsvCenter - v) / kPsvPxPerMeter;
    y_m = (kPsvCenter - u) / kPsvPxPerMeter;
}

namespace {
const char* kCameraNames[4] = {"front", "right", "back", "left"};
}

RigCalibration RigCalibration::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open calibration file: " + path);

    RigCalibration rig;
    bool seen[4] = {false, false, false, false};
    int cur = -1;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string key;
        if (!(ls >> key)) continue;
        auto fail = [&](const std::string& why) {
            throw ValidationError("calibration " + path + ":" + std::to_string(lineno) + ": " + why);
        };
        if (key == "psv_calib") {
            int version;
            if (!(ls >> version) || version != 1) fail("unsupported version");
        } else if (key == "feather_px") {
            if (!(ls >> rig.feather_px) || rig.feather_px < 0) fail("bad feather_px");
        } else if (key == "camera") {
            std::string name;
            if (!(ls >> name)) fail("camera needs a name");
            cur = -1;
            for (int i = 0; i < 4; ++i)
                if (name == kCameraNames[i]) cur = i;
            if (cur < 0) fail("unknown camera '" + name + "'");
            seen[cur] = true;
        } else if (key == "K") {
            if (cur < 0) fail("K before any camera line");
            double k[9];
            for (auto& v : k)
                if (!(ls >> v)) fail("K needs 9 numbers");
            auto& in_cam = rig.cameras[cur].intrinsics;
            in_cam.focal_x = k[0];
            in_cam.focal_y = k[4];
            in_cam.center_x = k[2];
            in_cam.center_y = k[5];
        } else if (key == "dist") {
            if (cur < 0) fail("dist before any camera line");
            for (auto& v : rig.cameras[cur].intrinsics.distortion)
                if (!(ls >> v)) fail("dist needs 4 numbers");
        } else if (key == "size") {
            if (cur < 0) fail("size before any camera line");
            auto& in_cam = rig.cameras[cur].intrinsics;
            if (!(ls >> in_cam.image_width >> in_cam.image_height)) fail("size needs 2 numbers");
        } else if (key == "H") {
            if (cur < 0) fail("H before any camera line");
            for (auto& v : rig.cameras[cur].h.m)
                if (!(ls >> v)) fail("H needs 9 numbers");
        } else {
            fail("unknown key '" + key + "'");
        }
    }
    for (int i = 0; i < 4; ++i) {
        if (!seen[i])
            throw ValidationError("calibration " + path + ": missing camera '" +
                                  kCameraNames[i] + "'");
        rig.cameras[i].intrinsics.validate();
        if (std::abs(rig.cameras[i].h.det()) <= 1e-9)
            throw ValidationError("calibration " + path + ": singular homography for '" +
                                  kCameraNames[i] + "'");
    }
    return rig;
}

void RigCalibration::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write calibration file: " + path);
    out << "psv_calib 1\n";
    out << "feather_px " << feather_px << "\n";
    out.precision(17);
    for (int i = 0; i < 4; ++i) {
        const auto& cam = cameras[i];
        const auto& k = cam.intrinsics;
        out << "camera " << kCameraNames[i] << "\n";
        out << "K " << k.focal_x << " 0 " << k.center_x << " 0 " << k.focal_y << " "
            << k.center_y << " 0 0 1\n";
        out << "dist " << k.distortion[0] << " " << k.distortion[1] << " "
            << k.distortion[2] << " " << k.distortion[3] << "\n";
        out << "size " << k.image_width << " " << k.image_height << "\n";
        out << "H";
        for (double v : cam.h.m) out << " " << v;
        out << "\n";
    }
}

}  // namespace psv
