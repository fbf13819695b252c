#pragma once

#include <array>
#include <string>
#include <vector>

#include "psv/image.hpp"

namespace psv {

// Every tolerance of the line-arrangement stage is exposed here; the
// defaults are the documented operating envelope.
struct ExtractConfig {
    double rho_res = 1.0;       // accumulator resolution, px
    double theta_res_deg = 1.0;
    // Votes needed for a peak; 0 derives 0.4 * expected_line_len_px.
    int vote_threshold = 0;
    double expected_line_len_px = 0;  // 0 derives canvas/3
    double max_gap_px = 8.0;          // run splitting during endpoint recovery
    double min_run_px = 10.0;
    double merge_angle_tol_deg = 3.0;
    double merge_dist_tol_px = 6.0;
    double merge_gap_tol_px = 14.0;
    double lane_gap_tol_px = 40.0;    // chaining runs into lane polylines
    double perp_tol_deg = 8.0;
    std::vector<double> separator_angles_deg = {90.0, 45.0, 135.0};
    double entrance_min_m = 2.0, entrance_max_m = 3.5;
    double min_depth_m = 1.0;
    // Thinning erodes a few px at stroke corners, so separator feet may sit
    // slightly past the recovered entrance extent.
    double entrance_slack_px = 8.0;
    double px_per_m = 25.0;  // 4 cm per px desk default; 100 at PSV scale

    int effective_vote_threshold(int canvas_px) const;
};

struct LineSegment {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;  // sub-pixel endpoints
    double rho = 0, theta = 0;  // normal form, theta in [0, pi)
    int votes = 0;              // accumulator support of the (rho, theta) cell
    int category = 0;

    double length() const;
};

enum class SlotKind { Horizontal, Vertical, Diagonal };
const char* slot_kind_name(SlotKind k);

struct ParkingSlot {
    std::array<std::array<double, 2>, 4> corners_px;
    std::array<std::array<double, 2>, 4> corners_m;  // vehicle frame, meters
    int entrance_edge = 0;  // corners[0] -> corners[1]
    SlotKind orientation = SlotKind::Vertical;
};

struct Lane {
    std::vector<std::array<double, 2>> points_px;  // ordered polyline
    int category = 0;
};

ImageGray binarize(const LabelMask& mask, int category);

// Iterative thinning to a 1-px-wide skeleton. Deletions follow the classic
// two-subiteration rules but are committed against the current image, and a
// final pass removes leftover 2x2 blocks via simple-point deletion, so
// component count is preserved and no 2x2 all-set block survives.
ImageGray skeletonize(const ImageGray& bin);

std::vector<LineSegment> hough_lines(const ImageGray& skel, const ExtractConfig& cfg);

// Partition by (theta, rho) tolerance (with the 0/pi wrap), then chain runs
// whose endpoint gaps fit gap_tol; each chain becomes one support-weighted
// segment spanning the union extent.
std::vector<LineSegment> merge_lines(std::vector<LineSegment> lines, const ExtractConfig& cfg);

std::vector<ParkingSlot> build_slots(const std::vector<LineSegment>& lines,
                                     const ExtractConfig& cfg, int canvas_px);

std::vector<Lane> build_lanes(const std::vector<LineSegment>& lines, int category,
                              const ExtractConfig& cfg);

struct ExtractionResult {
    std::vector<ParkingSlot> slots;
    std::vector<Lane> lanes;
};

// Full per-category pipeline on a label mask.
ExtractionResult extract_all(const LabelMask& mask, const ExtractConfig& cfg);

// Text records: "SLOT x1 y1 ... x4 y4 entrance_idx orientation" and
// "LANE category n x1 y1 ... xn yn", coordinates in meters (vehicle frame).
void write_records(const std::string& path, const ExtractionResult& result,
                   const ExtractConfig& cfg, int canvas_px);

ImageRgb render_overlay(const LabelMask& mask, const ExtractionResult& result);

}  // namespace psv
