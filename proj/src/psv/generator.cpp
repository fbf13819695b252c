#include "psv/generator.hpp"

#include <algorithm>
#include <cmath>

#include "psv/error.hpp"

namespace psv {

namespace {

constexpr double kDeg = M_PI / 180.0;

struct Capsule {
    double x1, y1, x2, y2;
    double half_width;

    double distance(double px, double py) const {
        const double dx = x2 - x1, dy = y2 - y1;
        const double len2 = dx * dx + dy * dy;
        double t = 0.0;
        if (len2 > 1e-12) t = std::clamp(((px - x1) * dx + (py - y1) * dy) / len2, 0.0, 1.0);
        const double cx = x1 + t * dx, cy = y1 + t * dy;
        return std::hypot(px - cx, py - cy);
    }
};

// One marking: painted capsules (dashes) plus the integral label capsule.
struct Stroke {
    std::vector<Capsule> paint;
    Capsule label;
    uint8_t category;
    std::array<double, 3> color;
};

std::array<double, 3> mark_color(MarkColor c, Rng& rng) {
    const double v = rng.uniform(-12.0, 12.0);
    if (c == MarkColor::White) return {228 + v, 228 + v, 228 + v};
    return {206 + v, 174 + v, 64 + v * 0.5};
}

std::array<double, 3> category_color(uint8_t cat, Rng& rng) {
    const bool yellow = (cat == kYellowSolid || cat == kYellowDashed);
    return mark_color(yellow ? MarkColor::Yellow : MarkColor::White, rng);
}

void add_solid(std::vector<Stroke>& strokes, double x1, double y1, double x2, double y2,
               double hw, uint8_t cat, const std::array<double, 3>& color) {
    Stroke s;
    s.label = {x1, y1, x2, y2, hw};
    s.paint.push_back(s.label);
    s.category = cat;
    s.color = color;
    strokes.push_back(std::move(s));
}

void add_dashed(std::vector<Stroke>& strokes, double x1, double y1, double x2, double y2,
                double hw, double dash_px, double gap_px, uint8_t cat,
                const std::array<double, 3>& color) {
    Stroke s;
    s.label = {x1, y1, x2, y2, hw};
    s.category = cat;
    s.color = color;
    const double len = std::hypot(x2 - x1, y2 - y1);
    const double ux = (x2 - x1) / len, uy = (y2 - y1) / len;
    for (double t = 0.0; t < len; t += dash_px + gap_px) {
        const double te = std::min(len, t + dash_px);
        s.paint.push_back({x1 + ux * t, y1 + uy * t, x1 + ux * te, y1 + uy * te, hw});
        if (te >= len) break;
    }
    strokes.push_back(std::move(s));
}

// Clip the line through (ax, ay) with direction angle deg to the canvas
// rectangle inset by margin. Returns false when the chord is too short.
bool clip_line_to_canvas(double ax, double ay, double angle_deg, int canvas, double margin,
                         double& x1, double& y1, double& x2, double& y2) {
    const double ux = std::cos(angle_deg * kDeg), uy = std::sin(angle_deg * kDeg);
    const double lo = margin, hi = canvas - 1 - margin;
    double tmin = -1e18, tmax = 1e18;
    auto cut = [&](double u, double a, double lo_, double hi_) {
        if (std::abs(u) < 1e-12) return a >= lo_ && a <= hi_;
        double t0 = (lo_ - a) / u, t1 = (hi_ - a) / u;
        if (t0 > t1) std::swap(t0, t1);
        tmin = std::max(tmin, t0);
        tmax = std::min(tmax, t1);
        return true;
    };
    if (!cut(ux, ax, lo, hi) || !cut(uy, ay, lo, hi)) return false;
    if (tmax - tmin < 20.0) return false;
    x1 = ax + ux * tmin;
    y1 = ay + uy * tmin;
    x2 = ax + ux * tmax;
    y2 = ay + uy * tmax;
    return true;
}

struct SlotFrame {
    double ex, ey;  // entrance direction (unit)
    double nx, ny;  // separator direction (unit), away from the driving lane
};

SlotFrame slot_frame(const SlotSpec& s) {
    SlotFrame f;
    switch (s.orientation) {
        case SlotOrientation::Vertical:
            f = {1, 0, 0, -1};  // entrance runs along x, separators point up
            break;
        case SlotOrientation::Horizontal:
            f = {0, 1, -1, 0};  // entrance runs along y, separators point left
            break;
        case SlotOrientation::Diagonal:
            f = {1, 0, std::cos(135.0 * kDeg), -std::sin(135.0 * kDeg)};
            break;
    }
    f.nx *= s.open_sign;
    f.ny *= s.open_sign;
    return f;
}

void build_slot_strokes(const SceneSpec& spec, std::vector<Stroke>& strokes,
                        std::vector<SlotTruth>& truth, Rng& rng) {
    const SlotSpec& s = spec.slot;
    const double ppm = spec.px_per_m();
    const double w_px = s.entrance_width_m * ppm;
    const double d_px = s.depth_m * ppm;
    const double hw = std::max(1.0, 0.5 * s.line_width_m * ppm);
    const SlotFrame f = slot_frame(s);
    const auto color = mark_color(s.color, rng);

    const double x0 = s.anchor_x, y0 = s.anchor_y;
    const double exx = x0 + f.ex * w_px * s.bays, exy = y0 + f.ey * w_px * s.bays;

    // Entrance line spanning all bays.
    add_solid(strokes, x0, y0, exx, exy, hw, kParkingSlot, color);
    // Separators.
    for (int i = 0; i <= s.bays; ++i) {
        const double bx = x0 + f.ex * w_px * i, by = y0 + f.ey * w_px * i;
        add_solid(strokes, bx, by, bx + f.nx * d_px, by + f.ny * d_px, hw, kParkingSlot, color);
    }
    if (s.closed) {
        add_solid(strokes, x0 + f.nx * d_px, y0 + f.ny * d_px, exx + f.nx * d_px,
                  exy + f.ny * d_px, hw, kParkingSlot, color);
    }

    for (int i = 0; i < s.bays; ++i) {
        SlotTruth t;
        const double ax = x0 + f.ex * w_px * i, ay = y0 + f.ey * w_px * i;
        const double bx = x0 + f.ex * w_px * (i + 1), by = y0 + f.ey * w_px * (i + 1);
        t.corners = {{{ax, ay}, {bx, by}, {bx + f.nx * d_px, by + f.ny * d_px},
                      {ax + f.nx * d_px, ay + f.ny * d_px}}};
        truth.push_back(t);
    }
}

}  // namespace

void SceneSpec::validate() const {
    if (canvas_px < 32) throw ValidationError("scene: canvas too small");
    if (cm_per_px <= 0) throw ValidationError("scene: cm_per_px must be positive");
    const double ppm = px_per_m();
    auto check_width = [&](double width_m, const char* what) {
        if (width_m * ppm < 2.0)
            throw ValidationError(std::string("scene: ") + what + " thinner than 2 px");
    };
    if (has_slot) {
        const SlotSpec& s = slot;
        if (s.bays < 1) throw ValidationError("scene: slot needs at least one bay");
        check_width(s.line_width_m, "slot line");
        const SlotFrame f = slot_frame(s);
        const double w_px = s.entrance_width_m * ppm, d_px = s.depth_m * ppm;
        const double margin = 2.0;
        for (int i = 0; i <= s.bays; ++i) {
            for (int side = 0; side < 2; ++side) {
                const double x = s.anchor_x + f.ex * w_px * i + side * f.nx * d_px;
                const double y = s.anchor_y + f.ey * w_px * i + side * f.ny * d_px;
                if (x < margin || y < margin || x > canvas_px - 1 - margin ||
                    y > canvas_px - 1 - margin)
                    throw ValidationError("scene: slot geometry leaves the canvas");
            }
        }
    }
    for (const auto& l : lanes) {
        if (l.category < 2 || l.category > 5)
            throw ValidationError("scene: lane category must be 2..5");
        check_width(l.width_m, "lane");
        if (l.anchor_x < 0 || l.anchor_y < 0 || l.anchor_x > canvas_px - 1 ||
            l.anchor_y > canvas_px - 1)
            throw ValidationError("scene: lane anchor outside canvas");
    }
}

Scene render_scene(const SceneSpec& spec, Rng& rng) {
    spec.validate();
    const int n = spec.canvas_px;
    const double ppm = spec.px_per_m();

    Scene scene;
    std::vector<Stroke> strokes;

    for (const auto& l : spec.lanes) {
        double x1, y1, x2, y2;
        if (!clip_line_to_canvas(l.anchor_x, l.anchor_y, l.angle_deg, n, 2.0, x1, y1, x2, y2))
            continue;
        const double hw = std::max(1.0, 0.5 * l.width_m * ppm);
        const auto color = category_color(l.category, rng);
        const bool dashed = (l.category == kWhiteDashed || l.category == kYellowDashed);
        if (dashed)
            add_dashed(strokes, x1, y1, x2, y2, hw, l.dash_len_m * ppm, l.dash_gap_m * ppm,
                       l.category, color);
        else
            add_solid(strokes, x1, y1, x2, y2, hw, l.category, color);
        scene.lanes.push_back({l.category, {x1, y1}, {x2, y2}});
    }
    if (spec.has_slot) build_slot_strokes(spec, strokes, scene.slots, rng);

    // Illumination field.
    const double gx = std::cos(spec.illum_angle_deg * kDeg);
    const double gy = std::sin(spec.illum_angle_deg * kDeg);
    const double shadow_dir = spec.shadow_offset;

    ImageRgb img(n, n);
    LabelMask label(n, n);
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            const double ramp = spec.illum_gradient * ((px * gx + py * gy) / n);
            double shade = 1.0;
            if (spec.shadow_strength > 0) {
                // Soft-edged half-plane shadow.
                const double d = (px * gy - py * gx) - shadow_dir;
                const double soft = std::clamp(d / 12.0 + 0.5, 0.0, 1.0);
                shade = 1.0 - spec.shadow_strength * soft;
            }
            double r = (spec.base_gray + ramp) * shade;
            double g = r, b = r;

            uint8_t cat = kBackground;
            for (const auto& s : strokes) {
                double coverage = 0.0;
                for (const auto& cap : s.paint) {
                    const double d = cap.distance(px, py);
                    coverage = std::max(coverage, std::clamp(cap.half_width + 0.5 - d, 0.0, 1.0));
                    if (coverage >= 1.0) break;
                }
                if (coverage > 0.0) {
                    r += (s.color[0] * shade - r) * coverage;
                    g += (s.color[1] * shade - g) * coverage;
                    b += (s.color[2] * shade - b) * coverage;
                }
                // The label band covers the whole capsule, gaps included.
                if (s.label.distance(px, py) <= s.label.half_width) cat = s.category;
            }

            r += rng.normal(0.0, spec.noise_sigma);
            g += rng.normal(0.0, spec.noise_sigma);
            b += rng.normal(0.0, spec.noise_sigma);
            uint8_t* out = img.at(x, y);
            out[0] = static_cast<uint8_t>(std::clamp(r, 0.0, 255.0));
            out[1] = static_cast<uint8_t>(std::clamp(g, 0.0, 255.0));
            out[2] = static_cast<uint8_t>(std::clamp(b, 0.0, 255.0));
            label.at(x, y) = cat;
        }
    }

    scene.sample.image = std::move(img);
    scene.sample.label = std::move(label);
    return scene;
}

Sample generate_scene(const SceneSpec& spec, Rng& rng) {
    return render_scene(spec, rng).sample;
}

SceneSpec random_scene_spec(int canvas_px, double cm_per_px, Rng& rng) {
    SceneSpec spec;
    spec.canvas_px = canvas_px;
    spec.cm_per_px = cm_per_px;
    const double ppm = spec.px_per_m();

    spec.base_gray = rng.uniform(70.0, 110.0);
    spec.illum_gradient = rng.uniform(0.0, 25.0);
    spec.illum_angle_deg = rng.uniform(0.0, 360.0);
    spec.shadow_strength = rng.bernoulli(0.4) ? rng.uniform(0.1, 0.35) : 0.0;
    spec.shadow_offset = rng.uniform(-0.3 * canvas_px, 0.3 * canvas_px);
    spec.noise_sigma = rng.uniform(1.0, 3.5);

    SlotSpec& s = spec.slot;
    const int orient = rng.uniform_int(0, 2);
    s.orientation = static_cast<SlotOrientation>(orient);
    s.color = rng.bernoulli(0.3) ? MarkColor::Yellow : MarkColor::White;
    s.entrance_width_m = rng.uniform(2.2, 3.0);
    s.depth_m = rng.uniform(4.5, 5.5);
    // Stroke widths are sampled in pixels so the 2 px floor holds at any
    // canvas scale.
    s.line_width_m = rng.uniform(2.2, 3.6) / ppm;
    s.closed = rng.bernoulli(0.3);
    s.open_sign = 1.0;

    // Fit the slot group in the canvas: clamp bays to the available span.
    const double w_px = s.entrance_width_m * ppm;
    const double d_px = s.depth_m * ppm;
    const double margin = 6.0;
    const int max_bays =
        std::max(1, static_cast<int>((canvas_px - 2 * margin - d_px) / w_px));
    s.bays = std::min(rng.uniform_int(1, 3), max_bays);

    const SlotFrame f = slot_frame(s);
    // Bounding extent of the group along x and y given the frame.
    const double span_ex = f.ex * w_px * s.bays, span_ey = f.ey * w_px * s.bays;
    const double span_nx = f.nx * d_px, span_ny = f.ny * d_px;
    double min_x = std::min({0.0, span_ex, span_nx, span_ex + span_nx});
    double max_x = std::max({0.0, span_ex, span_nx, span_ex + span_nx});
    double min_y = std::min({0.0, span_ey, span_ny, span_ey + span_ny});
    double max_y = std::max({0.0, span_ey, span_ny, span_ey + span_ny});
    const double free_x = (canvas_px - 1 - margin) - max_x - (margin - min_x);
    const double free_y = (canvas_px - 1 - margin) - max_y - (margin - min_y);
    if (free_x < 0 || free_y < 0) {
        spec.has_slot = false;
    } else {
        s.anchor_x = margin - min_x + rng.uniform(0.0, free_x);
        s.anchor_y = margin - min_y + rng.uniform(0.0, free_y);
    }

    // Lanes on the far side of the slot opening so they stay clear of it.
    const int lane_count = rng.uniform_int(0, 2);
    for (int i = 0; i < lane_count && spec.has_slot; ++i) {
        LaneSpec lane;
        const int cat_pick = rng.uniform_int(0, 3);
        lane.category = static_cast<uint8_t>(2 + cat_pick);
        lane.width_m = rng.uniform(2.2, 3.8) / ppm;
        lane.dash_len_m = std::max(rng.uniform(0.8, 1.6), 14.0 / ppm);
        lane.dash_gap_m = std::max(rng.uniform(0.6, 1.4), 8.0 / ppm);

        // The driving-lane side is opposite the separators.
        const double lane_off = d_px * 0.35 + rng.uniform(8.0, 20.0) + i * rng.uniform(10.0, 16.0);
        const double mid_e = 0.5;  // halfway along the entrance
        const double cx = s.anchor_x + f.ex * w_px * s.bays * mid_e - f.nx * lane_off;
        const double cy = s.anchor_y + f.ey * w_px * s.bays * mid_e - f.ny * lane_off;
        if (cx < 4 || cy < 4 || cx > canvas_px - 5 || cy > canvas_px - 5) continue;
        lane.anchor_x = cx;
        lane.anchor_y = cy;
        // Parallel to the entrance, with a small deflection.
        const double base_angle = std::atan2(f.ey, f.ex) / kDeg;
        lane.angle_deg = base_angle + rng.uniform(-4.0, 4.0);
        spec.lanes.push_back(lane);
    }
    return spec;
}

DatasetIndex generate_dataset(const std::string& root, int count, int canvas_px,
                              double cm_per_px, uint64_t seed) {
    if (count < 1) throw ValidationError("generate_dataset: count must be >= 1");
    Rng master(seed);
    std::vector<std::string> names;
    for (int i = 0; i < count; ++i) {
        Rng sample_rng = master.fork(static_cast<uint64_t>(i) + 1);
        const SceneSpec spec = random_scene_spec(canvas_px, cm_per_px, sample_rng);
        const Sample sample = generate_scene(spec, sample_rng);
        char name[32];
        std::snprintf(name, sizeof(name), "scene_%05d", i);
        save_sample(root, name, sample);
        names.emplace_back(name);
    }
    DatasetIndex idx = split(names, seed ^ 0x9e3779b97f4a7c15ULL);
    idx.root = root;
    save_split_file(root + "/split.txt", idx);
    return idx;
}

}  // namespace psv
