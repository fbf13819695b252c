#pragma once

#include <array>
#include <string>
#include <vector>

#include "psv/dataset.hpp"
#include "psv/metrics.hpp"
#include "psv/rng.hpp"

namespace psv {

enum class SlotOrientation { Horizontal, Vertical, Diagonal };
enum class MarkColor { White, Yellow };

struct LaneSpec {
    uint8_t category = kWhiteSolid;  // 2..5
    double angle_deg = 90.0;         // centerline direction
    double anchor_x = 0, anchor_y = 0;  // a point on the centerline (px)
    double width_m = 0.12;
    double dash_len_m = 1.0, dash_gap_m = 1.0;  // dashed categories only
};

struct SlotSpec {
    SlotOrientation orientation = SlotOrientation::Vertical;
    MarkColor color = MarkColor::White;
    int bays = 2;                    // separators = bays + 1
    double entrance_width_m = 2.5;   // separator spacing along the entrance line
    double depth_m = 5.0;
    double line_width_m = 0.12;
    bool closed = false;             // back line drawn
    double anchor_x = 0, anchor_y = 0;  // first entrance corner (px)
    double open_sign = 1.0;          // separators extend toward +normal or -normal
};

struct SceneSpec {
    int canvas_px = 256;
    double cm_per_px = 4.0;
    bool has_slot = true;
    SlotSpec slot;
    std::vector<LaneSpec> lanes;
    double base_gray = 90.0;
    double illum_gradient = 12.0;   // brightness ramp amplitude (levels)
    double illum_angle_deg = 0.0;
    double shadow_strength = 0.0;   // 0..1 darkening of a soft band
    double shadow_offset = 0.0;
    double noise_sigma = 2.5;

    double px_per_m() const { return 100.0 / cm_per_px; }
    void validate() const;
};

struct SlotTruth {
    std::array<std::array<double, 2>, 4> corners;  // px; edge 0-1 is the entrance
};

struct LaneTruth {
    uint8_t category;
    std::array<double, 2> p1, p2;  // centerline endpoints (px)
};

struct Scene {
    Sample sample;
    std::vector<SlotTruth> slots;
    std::vector<LaneTruth> lanes;
};

// Layout sampler: one slot group plus up to two lanes that avoid it,
// randomized illumination and noise.
SceneSpec random_scene_spec(int canvas_px, double cm_per_px, Rng& rng);

// Deterministic render of spec; rng drives only texture noise. Labels and
// painted strokes derive from the same geometry; dashed-lane labels span the
// gaps as one region.
Scene render_scene(const SceneSpec& spec, Rng& rng);

Sample generate_scene(const SceneSpec& spec, Rng& rng);

// count scenes into root/{images,labels} plus split.txt; byte-deterministic
// under a fixed seed.
DatasetIndex generate_dataset(const std::string& root, int count, int canvas_px,
                              double cm_per_px, uint64_t seed);

}  // namespace psv
