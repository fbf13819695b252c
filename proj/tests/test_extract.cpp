#include <cmath>
#include <set>

#include "doctest.h"
#include "psv/error.hpp"
#include "psv/extract.hpp"
#include "psv/generator.hpp"
#include "psv/rng.hpp"

using namespace psv;

namespace {

constexpr double kDeg = M_PI / 180.0;

int count_set(const ImageGray& img) {
    int n = 0;
    for (uint8_t v : img.pixels) n += v != 0;
    return n;
}

bool has_2x2_block(const ImageGray& img) {
    for (int y = 0; y + 1 < img.height; ++y)
        for (int x = 0; x + 1 < img.width; ++x)
            if (img.at(x, y) && img.at(x + 1, y) && img.at(x, y + 1) && img.at(x + 1, y + 1))
                return true;
    return false;
}

// 8-connected flood-fill component count (independent of the skeletonizer).
int components8(const ImageGray& img) {
    std::vector<char> seen(img.pixels.size(), 0);
    int n = 0;
    std::vector<std::pair<int, int>> stack;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            if (!img.at(x, y) || seen[img.index(x, y)]) continue;
            ++n;
            seen[img.index(x, y)] = 1;
            stack.push_back({x, y});
            while (!stack.empty()) {
                auto [cx, cy] = stack.back();
                stack.pop_back();
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = cx + dx, ny = cy + dy;
                        if (!img.inside(nx, ny) || seen[img.index(nx, ny)] || !img.at(nx, ny))
                            continue;
                        seen[img.index(nx, ny)] = 1;
                        stack.push_back({nx, ny});
                    }
            }
        }
    return n;
}

ImageGray random_blobs(int size, uint64_t seed) {
    Rng rng(seed);
    ImageGray img(size, size);
    const int blobs = rng.uniform_int(1, 5);
    for (int b = 0; b < blobs; ++b) {
        if (rng.bernoulli(0.5)) {
            // Disc.
            const double cx = rng.uniform(6, size - 6), cy = rng.uniform(6, size - 6);
            const double r = rng.uniform(2.0, 7.0);
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x)
                    if (std::hypot(x - cx, y - cy) <= r) img.at(x, y) = 1;
        } else {
            // Thick bar at a random angle.
            const double cx = rng.uniform(10, size - 10), cy = rng.uniform(10, size - 10);
            const double ang = rng.uniform(0, M_PI);
            const double len = rng.uniform(10, size * 0.4), hw = rng.uniform(1.5, 3.5);
            const double ux = std::cos(ang), uy = std::sin(ang);
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    const double dx = x - cx, dy = y - cy;
                    const double along = dx * ux + dy * uy;
                    const double across = std::abs(-dx * uy + dy * ux);
                    if (std::abs(along) <= len / 2 && across <= hw) img.at(x, y) = 1;
                }
        }
    }
    return img;
}

// Brute-force accumulator recount for one reported line (independent binning
// re-implementation).
int brute_force_votes(const ImageGray& skel, double rho, double theta, double rho_res,
                      double theta_res_deg) {
    const double diag = std::hypot(skel.width, skel.height);
    const double offset = std::ceil(diag / rho_res) * rho_res;
    const double theta_res = theta_res_deg * kDeg;
    const long ti = std::lround(theta / theta_res);
    const double t = ti * theta_res;
    const long target_ri = std::lround((rho + offset) / rho_res);
    int votes = 0;
    for (int y = 0; y < skel.height; ++y)
        for (int x = 0; x < skel.width; ++x) {
            if (!skel.at(x, y)) continue;
            const double r = x * std::cos(t) + y * std::sin(t);
            if (std::lround((r + offset) / rho_res) == target_ri) ++votes;
        }
    return votes;
}

}  // namespace

TEST_CASE("binarize selects exactly one category") {
    LabelMask mask(8, 8, 0);
    mask.at(2, 2) = 1;
    mask.at(3, 3) = 2;

    const ImageGray empty = binarize(mask, 5);
    CHECK(count_set(empty) == 0);

    const LabelMask full(4, 4, 3);
    const ImageGray ones = binarize(full, 3);
    CHECK(count_set(ones) == 16);

    Rng rng(1);
    LabelMask random(16, 16);
    for (auto& v : random.pixels) v = static_cast<uint8_t>(rng.uniform_int(0, 5));
    const ImageGray bin = binarize(random, 2);
    for (size_t i = 0; i < random.pixels.size(); ++i)
        CHECK(bin.pixels[i] == (random.pixels[i] == 2 ? 1 : 0));
}

TEST_CASE("a thick bar thins to its midline") {
    ImageGray bar(64, 16);
    for (int y = 5; y < 10; ++y)  // 5 px thick, rows 5..9, midline row 7
        for (int x = 5; x < 55; ++x) bar.at(x, y) = 1;

    const ImageGray skel = skeletonize(bar);
    const int n = count_set(skel);
    CHECK(n >= 44);
    CHECK(n <= 48);
    CHECK(components8(skel) == 1);
    CHECK(!has_2x2_block(skel));
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 64; ++x)
            if (skel.at(x, y)) {
                CHECK(std::abs(y - 7) <= 1);
                CHECK(bar.at(x, y) == 1);  // skeleton stays inside the input
            }
}

TEST_CASE("an isolated pixel survives thinning") {
    ImageGray dot(9, 9);
    dot.at(4, 4) = 1;
    const ImageGray skel = skeletonize(dot);
    CHECK(count_set(skel) == 1);
    CHECK(skel.at(4, 4) == 1);
}

TEST_CASE("thinning preserves component count and 1-px thinness on random blobs") {
    for (uint64_t seed = 0; seed < 50; ++seed) {
        const ImageGray blobs = random_blobs(64, seed);
        const ImageGray skel = skeletonize(blobs);
        CHECK(components8(skel) == components8(blobs));
        CHECK(!has_2x2_block(skel));
        // Subset of the input foreground.
        for (size_t i = 0; i < skel.pixels.size(); ++i)
            if (skel.pixels[i]) CHECK(blobs.pixels[i] != 0);
    }
}

TEST_CASE("hough finds the diagonal y = x") {
    ImageGray skel(128, 128);
    for (int i = 10; i < 110; ++i) skel.at(i, i) = 1;

    ExtractConfig cfg;
    cfg.vote_threshold = 50;
    const auto lines = hough_lines(skel, cfg);
    REQUIRE(lines.size() == 1);
    CHECK(std::abs(lines[0].theta - 135.0 * kDeg) <= 1.0 * kDeg + 1e-9);
    CHECK(std::abs(lines[0].rho) <= cfg.rho_res + 1e-9);
    CHECK(lines[0].votes == 100);
    CHECK(lines[0].length() > 120.0);  // ~100 px along the diagonal
}

TEST_CASE("hough on a blank image is empty") {
    ImageGray blank(64, 64);
    ExtractConfig cfg;
    CHECK(hough_lines(blank, cfg).empty());
}

TEST_CASE("two perpendicular lines come out 90 degrees apart") {
    ImageGray skel(128, 128);
    for (int x = 10; x < 100; ++x) skel.at(x, 30) = 1;  // horizontal
    for (int y = 40; y < 120; ++y) skel.at(80, y) = 1;  // vertical

    ExtractConfig cfg;
    cfg.vote_threshold = 40;
    const auto lines = hough_lines(skel, cfg);
    REQUIRE(lines.size() == 2);
    double d = std::abs(lines[0].theta - lines[1].theta);
    d = std::min(d, M_PI - d);
    CHECK(std::abs(d - M_PI / 2) <= 2.0 * cfg.theta_res_deg * kDeg + 1e-9);
}

TEST_CASE("reported votes equal the brute-force accumulator cell") {
    ExtractConfig cfg;
    cfg.vote_threshold = 12;
    cfg.min_run_px = 5.0;
    for (uint64_t seed = 100; seed < 110; ++seed) {
        const ImageGray blobs = random_blobs(96, seed);
        const ImageGray skel = skeletonize(blobs);
        const auto lines = hough_lines(skel, cfg);
        for (const auto& l : lines)
            CHECK(l.votes == brute_force_votes(skel, l.rho, l.theta, cfg.rho_res,
                                               cfg.theta_res_deg));
    }
}

TEST_CASE("merging joins touching collinear segments") {
    LineSegment a, b;
    a.x1 = 10;
    a.y1 = 20;
    a.x2 = 50;
    a.y2 = 20;
    a.rho = 20;
    a.theta = M_PI / 2;
    a.votes = 40;
    b.x1 = 52;
    b.y1 = 20;
    b.x2 = 90;
    b.y2 = 20;
    b.rho = 20;
    b.theta = M_PI / 2;
    b.votes = 38;

    ExtractConfig cfg;
    const auto merged = merge_lines({a, b}, cfg);
    REQUIRE(merged.size() == 1);
    CHECK(merged[0].length() == doctest::Approx(80.0).epsilon(0.05));
    CHECK(std::min(merged[0].x1, merged[0].x2) == doctest::Approx(10.0).epsilon(0.05));
    CHECK(std::max(merged[0].x1, merged[0].x2) == doctest::Approx(90.0).epsilon(0.05));
}

TEST_CASE("parallel lines far apart stay separate") {
    LineSegment a, b;
    a.x1 = 0;
    a.y1 = 20;
    a.x2 = 60;
    a.y2 = 20;
    a.rho = 20;
    a.theta = M_PI / 2;
    b.x1 = 0;
    b.y1 = 70;
    b.x2 = 60;
    b.y2 = 70;
    b.rho = 70;
    b.theta = M_PI / 2;

    ExtractConfig cfg;
    cfg.merge_dist_tol_px = 5.0;
    CHECK(merge_lines({a, b}, cfg).size() == 2);
}

TEST_CASE("perturbed copies of one line merge back to it") {
    Rng rng(55);
    const double rho_true = 40.0, theta_true = 60.0 * kDeg;
    const double c = std::cos(theta_true), s = std::sin(theta_true);

    std::vector<LineSegment> lines;
    for (int i = 0; i < 20; ++i) {
        LineSegment l;
        l.rho = rho_true + rng.uniform(-1.5, 1.5);
        l.theta = theta_true + rng.uniform(-1.0, 1.0) * kDeg;
        l.votes = rng.uniform_int(20, 60);
        const double t0 = rng.uniform(-40.0, 0.0), t1 = rng.uniform(5.0, 45.0);
        l.x1 = l.rho * std::cos(l.theta) - t0 * std::sin(l.theta);
        l.y1 = l.rho * std::sin(l.theta) + t0 * std::cos(l.theta);
        l.x2 = l.rho * std::cos(l.theta) - t1 * std::sin(l.theta);
        l.y2 = l.rho * std::sin(l.theta) + t1 * std::cos(l.theta);
        lines.push_back(l);
    }
    (void)c;
    (void)s;

    ExtractConfig cfg;
    cfg.merge_angle_tol_deg = 3.0;
    cfg.merge_dist_tol_px = 4.0;
    cfg.merge_gap_tol_px = 100.0;
    const auto merged = merge_lines(lines, cfg);
    REQUIRE(merged.size() == 1);
    CHECK(std::abs(merged[0].rho - rho_true) < 1.5);
    CHECK(std::abs(merged[0].theta - theta_true) < 1.0 * kDeg);
}

TEST_CASE("build_slots assembles corners from entrance and separators") {
    // Vertical slot group: horizontal entrance at y=200, three separators
    // going up, spacing 62 px (2.48 m at 25 px/m), depth 125 px.
    std::vector<LineSegment> lines;
    auto add_line = [&](double x1, double y1, double x2, double y2, double rho, double theta) {
        LineSegment l;
        l.x1 = x1;
        l.y1 = y1;
        l.x2 = x2;
        l.y2 = y2;
        l.rho = rho;
        l.theta = theta;
        l.votes = 60;
        lines.push_back(l);
    };
    add_line(40, 200, 175, 200, 200, M_PI / 2);  // entrance
    add_line(50, 200, 50, 75, 50, 0);            // separators
    add_line(112, 200, 112, 75, 112, 0);
    add_line(174, 200, 174, 75, 174, 0);

    ExtractConfig cfg;
    const auto slots = build_slots(lines, cfg, 256);
    REQUIRE(slots.size() == 2);  // three separators bound two bays
    for (const auto& s : slots) CHECK(s.orientation == SlotKind::Vertical);

    // Expected bays as corner point sets (order-independent).
    auto has_slot_with_corners = [&](std::array<std::array<double, 2>, 4> want) {
        for (const auto& s : slots) {
            int matched = 0;
            for (const auto& w : want)
                for (const auto& c : s.corners_px)
                    if (std::hypot(w[0] - c[0], w[1] - c[1]) < 0.5) {
                        ++matched;
                        break;
                    }
            if (matched == 4) return true;
        }
        return false;
    };
    CHECK(has_slot_with_corners({{{50, 200}, {112, 200}, {112, 75}, {50, 75}}}));
    CHECK(has_slot_with_corners({{{112, 200}, {174, 200}, {174, 75}, {112, 75}}}));

    // Without perpendicular partners nothing is emitted.
    std::vector<LineSegment> only_parallel(lines.begin() + 1, lines.end());
    CHECK(build_slots(only_parallel, cfg, 256).empty());
}

TEST_CASE("slot corners on a rendered scene match the generator geometry") {
    SceneSpec spec;
    spec.canvas_px = 256;
    spec.cm_per_px = 4.0;
    spec.noise_sigma = 0.0;
    spec.slot.orientation = SlotOrientation::Vertical;
    spec.slot.bays = 2;
    spec.slot.entrance_width_m = 2.5;
    spec.slot.depth_m = 5.0;
    spec.slot.line_width_m = 0.12;
    spec.slot.anchor_x = 60;
    spec.slot.anchor_y = 200;

    Rng rng(77);
    const Scene scene = render_scene(spec, rng);
    REQUIRE(scene.slots.size() == 2);

    ExtractConfig cfg;
    const ExtractionResult result = extract_all(scene.sample.label, cfg);
    REQUIRE(result.slots.size() >= 2);

    for (const auto& truth : scene.slots) {
        double best = 1e18;
        for (const auto& got : result.slots) {
            // Point-set corner matching.
            double worst_corner = 0;
            for (const auto& tc : truth.corners) {
                double nearest = 1e18;
                for (const auto& gc : got.corners_px)
                    nearest = std::min(nearest, std::hypot(tc[0] - gc[0], tc[1] - gc[1]));
                worst_corner = std::max(worst_corner, nearest);
            }
            best = std::min(best, worst_corner);
        }
        CHECK(best <= 3.0);
    }

    // Emitted quadrilaterals are sane: opposite sides of similar length.
    for (const auto& s : result.slots) {
        auto side = [&](int i) {
            const auto& a = s.corners_px[i];
            const auto& b = s.corners_px[(i + 1) % 4];
            return std::hypot(a[0] - b[0], a[1] - b[1]);
        };
        CHECK(side(0) / side(2) > 0.8);
        CHECK(side(0) / side(2) < 1.25);
        CHECK(side(1) / side(3) > 0.8);
        CHECK(side(1) / side(3) < 1.25);
    }
}

TEST_CASE("build_lanes turns merged lines into polylines") {
    SceneSpec spec;
    spec.canvas_px = 256;
    spec.cm_per_px = 4.0;
    spec.has_slot = false;
    spec.noise_sigma = 0.0;
    LaneSpec lane;
    lane.category = kWhiteSolid;
    lane.angle_deg = 88.0;
    lane.anchor_x = 120;
    lane.anchor_y = 128;
    lane.width_m = 0.12;
    spec.lanes.push_back(lane);

    Rng rng(78);
    const Scene scene = render_scene(spec, rng);
    REQUIRE(scene.lanes.size() == 1);

    ExtractConfig cfg;
    const ExtractionResult result = extract_all(scene.sample.label, cfg);
    REQUIRE(result.lanes.size() == 1);
    CHECK(result.lanes[0].category == kWhiteSolid);

    // The polyline spans the truth segment end to end within 5 px.
    const auto& pts = result.lanes[0].points_px;
    REQUIRE(pts.size() >= 2);
    const auto& t1 = scene.lanes[0].p1;
    const auto& t2 = scene.lanes[0].p2;
    auto dist = [](const std::array<double, 2>& a, const std::array<double, 2>& b) {
        return std::hypot(a[0] - b[0], a[1] - b[1]);
    };
    const double span_err = std::min(
        std::max(dist(pts.front(), t1), dist(pts.back(), t2)),
        std::max(dist(pts.front(), t2), dist(pts.back(), t1)));
    CHECK(span_err <= 5.0);
}

TEST_CASE("a dashed lane extracts as one lane, not one per dash") {
    SceneSpec spec;
    spec.canvas_px = 256;
    spec.cm_per_px = 4.0;
    spec.has_slot = false;
    spec.noise_sigma = 0.0;
    LaneSpec lane;
    lane.category = kWhiteDashed;
    lane.angle_deg = 90.0;
    lane.anchor_x = 100;
    lane.anchor_y = 128;
    lane.width_m = 0.12;
    lane.dash_len_m = 1.0;
    lane.dash_gap_m = 1.0;
    spec.lanes.push_back(lane);

    Rng rng(79);
    const Scene scene = render_scene(spec, rng);
    ExtractConfig cfg;
    const ExtractionResult result = extract_all(scene.sample.label, cfg);
    REQUIRE(result.lanes.size() == 1);
    CHECK(result.lanes[0].category == kWhiteDashed);
}

TEST_CASE("empty masks extract nothing") {
    const LabelMask empty(64, 64, 0);
    ExtractConfig cfg;
    const ExtractionResult result = extract_all(empty, cfg);
    CHECK(result.slots.empty());
    CHECK(result.lanes.empty());
}
