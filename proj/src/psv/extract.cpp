#include "psv/extract.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "psv/error.hpp"
#include "psv/metrics.hpp"

namespace psv {

namespace {

constexpr double kDeg = M_PI / 180.0;

}  // namespace

int ExtractConfig::effective_vote_threshold(int canvas_px) const {
    if (vote_threshold > 0) return vote_threshold;
    const double expected =
        expected_line_len_px > 0 ? expected_line_len_px : canvas_px / 3.0;
    return std::max(3, static_cast<int>(std::lround(0.4 * expected)));
}

double LineSegment::length() const { return std::hypot(x2 - x1, y2 - y1); }

const char* slot_kind_name(SlotKind k) {
    switch (k) {
        case SlotKind::Horizontal: return "horizontal";
        case SlotKind::Vertical: return "vertical";
        case SlotKind::Diagonal: return "diagonal";
    }
    return "vertical";
}

ImageGray binarize(const LabelMask& mask, int category) {
    if (category < 0 || category > 5) throw ValidationError("binarize: category out of range");
    ImageGray out(mask.width, mask.height);
    for (size_t i = 0; i < mask.pixels.size(); ++i)
        out.pixels[i] = mask.pixels[i] == category ? 1 : 0;
    return out;
}

namespace {

// 8-neighborhood in the P2..P9 clockwise order used by the thinning rules:
// P2 = north, P3 = NE, ... P9 = NW.
inline void neighbors(const ImageGray& img, int x, int y, int p[8]) {
    auto get = [&](int xx, int yy) -> int {
        return img.inside(xx, yy) ? (img.at(xx, yy) != 0) : 0;
    };
    p[0] = get(x, y - 1);
    p[1] = get(x + 1, y - 1);
    p[2] = get(x + 1, y);
    p[3] = get(x + 1, y + 1);
    p[4] = get(x, y + 1);
    p[5] = get(x - 1, y + 1);
    p[6] = get(x - 1, y);
    p[7] = get(x - 1, y - 1);
}

inline int count_b(const int p[8]) {
    return p[0] + p[1] + p[2] + p[3] + p[4] + p[5] + p[6] + p[7];
}

inline int transitions_a(const int p[8]) {
    int a = 0;
    for (int i = 0; i < 8; ++i)
        if (p[i] == 0 && p[(i + 1) % 8] == 1) ++a;
    return a;
}

// Two-subiteration parallel thinning deletability (Guo-Hall rules). The
// classic N*E*S / E*S*W rule set erodes 2-px diagonal strokes to nothing,
// which slot separators at desk scale regularly are; these conditions keep
// diagonals while still thinning to unit width.
bool deletable(const ImageGray& img, int x, int y, int sub) {
    int p[8];
    neighbors(img, x, y, p);
    const int c = (!p[0] && (p[1] || p[2])) + (!p[2] && (p[3] || p[4])) +
                  (!p[4] && (p[5] || p[6])) + (!p[6] && (p[7] || p[0]));
    if (c != 1) return false;
    const int n1 = (p[7] || p[0]) + (p[1] || p[2]) + (p[3] || p[4]) + (p[5] || p[6]);
    const int n2 = (p[0] || p[1]) + (p[2] || p[3]) + (p[4] || p[5]) + (p[6] || p[7]);
    const int n = std::min(n1, n2);
    if (n < 2 || n > 3) return false;
    const int m = sub == 0 ? ((p[4] || p[5] || !p[7]) && p[6])
                           : ((p[0] || p[1] || !p[3]) && p[2]);
    return m == 0;
}

}  // namespace

namespace {

// 8-connected component labels of the foreground; -1 for background.
std::vector<int> label_components(const ImageGray& img) {
    std::vector<int> labels(img.pixels.size(), -1);
    std::vector<std::pair<int, int>> stack;
    int next = 0;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            if (!img.at(x, y) || labels[img.index(x, y)] >= 0) continue;
            labels[img.index(x, y)] = next;
            stack.push_back({x, y});
            while (!stack.empty()) {
                auto [cx, cy] = stack.back();
                stack.pop_back();
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = cx + dx, ny = cy + dy;
                        if (!img.inside(nx, ny) || !img.at(nx, ny)) continue;
                        if (labels[img.index(nx, ny)] >= 0) continue;
                        labels[img.index(nx, ny)] = next;
                        stack.push_back({nx, ny});
                    }
            }
            ++next;
        }
    }
    return labels;
}

}  // namespace

ImageGray skeletonize(const ImageGray& bin) {
    ImageGray img = bin;
    for (auto& v : img.pixels) v = v ? 1 : 0;

    std::vector<std::pair<int, int>> candidates;
    bool changed = true;
    while (changed) {
        changed = false;
        for (int sub = 0; sub < 2; ++sub) {
            // Parallel semantics: conditions read the frozen image, the
            // whole batch commits afterwards.
            candidates.clear();
            for (int y = 0; y < img.height; ++y)
                for (int x = 0; x < img.width; ++x)
                    if (img.at(x, y) && deletable(img, x, y, sub))
                        candidates.emplace_back(x, y);
            if (candidates.empty()) continue;

            // A batch may flag an entire small component (an isolated 2x2
            // block flags all four pixels); keep its scan-first pixel so no
            // component ever vanishes.
            const std::vector<int> labels = label_components(img);
            std::vector<int> comp_pixels, comp_flagged;
            for (int l : labels)
                if (l >= 0 && l >= static_cast<int>(comp_pixels.size()))
                    comp_pixels.resize(l + 1, 0);
            comp_flagged.assign(comp_pixels.size(), 0);
            for (int l : labels)
                if (l >= 0) ++comp_pixels[l];
            for (const auto& [x, y] : candidates) ++comp_flagged[labels[img.index(x, y)]];

            std::vector<char> spared(comp_pixels.size(), 0);
            for (const auto& [x, y] : candidates) {
                const int comp = labels[img.index(x, y)];
                if (comp_flagged[comp] == comp_pixels[comp] && !spared[comp]) {
                    spared[comp] = 1;
                    continue;
                }
                img.at(x, y) = 0;
                changed = true;
            }
        }
    }

    // Clear any surviving 2x2 blocks by deleting simple points.
    bool progress = true;
    while (progress) {
        progress = false;
        for (int y = 0; y + 1 < img.height && !progress; ++y) {
            for (int x = 0; x + 1 < img.width && !progress; ++x) {
                if (!(img.at(x, y) && img.at(x + 1, y) && img.at(x, y + 1) &&
                      img.at(x + 1, y + 1)))
                    continue;
                const std::array<std::pair<int, int>, 4> block = {
                    {{x, y}, {x + 1, y}, {x, y + 1}, {x + 1, y + 1}}};
                for (const auto& [bx, by] : block) {
                    int p[8];
                    neighbors(img, bx, by, p);
                    if (transitions_a(p) == 1 && count_b(p) >= 2) {
                        img.at(bx, by) = 0;
                        progress = true;
                        break;
                    }
                }
            }
        }
    }
    return img;
}

namespace {

struct HoughGrid {
    int n_theta = 0, n_rho = 0;
    double theta_res = 0, rho_res = 0;
    double rho_offset = 0;  // rho index 0 corresponds to -rho_offset

    double theta_of(int ti) const { return ti * theta_res; }
    double rho_of(int ri) const { return ri * rho_res - rho_offset; }
    int rho_index(double rho) const {
        return static_cast<int>(std::lround((rho + rho_offset) / rho_res));
    }
};

HoughGrid make_grid(int width, int height, const ExtractConfig& cfg) {
    HoughGrid g;
    g.theta_res = cfg.theta_res_deg * kDeg;
    g.rho_res = cfg.rho_res;
    g.n_theta = std::max(1, static_cast<int>(std::lround(M_PI / g.theta_res)));
    const double diag = std::hypot(width, height);
    g.rho_offset = std::ceil(diag / g.rho_res) * g.rho_res;
    g.n_rho = 2 * static_cast<int>(std::lround(g.rho_offset / g.rho_res)) + 1;
    return g;
}

}  // namespace

std::vector<LineSegment> hough_lines(const ImageGray& skel, const ExtractConfig& cfg) {
    const HoughGrid grid = make_grid(skel.width, skel.height, cfg);
    std::vector<int> acc(static_cast<size_t>(grid.n_theta) * grid.n_rho, 0);
    std::vector<std::pair<int, int>> points;
    for (int y = 0; y < skel.height; ++y)
        for (int x = 0; x < skel.width; ++x)
            if (skel.at(x, y)) points.emplace_back(x, y);

    if (points.empty()) return {};

    std::vector<double> cos_t(grid.n_theta), sin_t(grid.n_theta);
    for (int t = 0; t < grid.n_theta; ++t) {
        cos_t[t] = std::cos(grid.theta_of(t));
        sin_t[t] = std::sin(grid.theta_of(t));
    }
    for (const auto& [x, y] : points) {
        for (int t = 0; t < grid.n_theta; ++t) {
            const int ri = grid.rho_index(x * cos_t[t] + y * sin_t[t]);
            ++acc[static_cast<size_t>(t) * grid.n_rho + ri];
        }
    }

    const int threshold = cfg.effective_vote_threshold(std::max(skel.width, skel.height));
    auto at = [&](int t, int r) -> int {
        if (t < 0 || t >= grid.n_theta || r < 0 || r >= grid.n_rho) return -1;
        return acc[static_cast<size_t>(t) * grid.n_rho + r];
    };
    // The theta axis wraps with a rho sign flip: (theta - pi, rho) and
    // (theta, -rho) are the same line.
    auto neighbor = [&](int t, int r, int dt, int dr, int& nt, int& nr) {
        nt = t + dt;
        nr = r;
        if (nt < 0) {
            nt += grid.n_theta;
            nr = grid.n_rho - 1 - r;
        } else if (nt >= grid.n_theta) {
            nt -= grid.n_theta;
            nr = grid.n_rho - 1 - r;
        }
        nr += dr;
    };

    std::vector<LineSegment> out;
    for (int t = 0; t < grid.n_theta; ++t) {
        for (int r = 0; r < grid.n_rho; ++r) {
            const int v = at(t, r);
            if (v < threshold) continue;
            // 3x3 non-maximum suppression; ties go to the first cell in scan
            // order.
            bool is_peak = true;
            for (int dt = -1; dt <= 1 && is_peak; ++dt) {
                for (int dr = -1; dr <= 1; ++dr) {
                    if (dt == 0 && dr == 0) continue;
                    int nt, nr;
                    neighbor(t, r, dt, dr, nt, nr);
                    const int nv = at(nt, nr);
                    const bool earlier = nt < t || (nt == t && nr < r);
                    if (nv > v || (nv == v && earlier)) {
                        is_peak = false;
                        break;
                    }
                }
            }
            if (!is_peak) continue;

            const double theta = grid.theta_of(t);
            const double rho = grid.rho_of(r);
            const double c = cos_t[t], s = sin_t[t];

            // Supporting pixels of this exact cell, projected on the line
            // direction; split runs at gaps.
            std::vector<double> ts;
            for (const auto& [x, y] : points)
                if (grid.rho_index(x * c + y * s) == r) ts.push_back(-x * s + y * c);
            std::sort(ts.begin(), ts.end());

            size_t run_start = 0;
            for (size_t i = 1; i <= ts.size(); ++i) {
                if (i == ts.size() || ts[i] - ts[i - 1] > cfg.max_gap_px) {
                    const double t0 = ts[run_start], t1 = ts[i - 1];
                    if (t1 - t0 >= cfg.min_run_px) {
                        LineSegment seg;
                        seg.rho = rho;
                        seg.theta = theta;
                        seg.votes = v;
                        seg.x1 = rho * c - t0 * s;
                        seg.y1 = rho * s + t0 * c;
                        seg.x2 = rho * c - t1 * s;
                        seg.y2 = rho * s + t1 * c;
                        out.push_back(seg);
                    }
                    run_start = i;
                }
            }
        }
    }
    return out;
}

namespace {

// Angular distance on the line-direction circle (period pi).
double theta_dist(double a, double b) {
    double d = std::abs(a - b);
    return std::min(d, M_PI - d);
}

// Whether two normal forms describe nearby lines; "flip" reports that b is
// expressed in the wrapped frame (theta + pi, -rho).
bool lines_close(const LineSegment& a, const LineSegment& b, double angle_tol,
                 double dist_tol, bool& flip) {
    if (std::abs(a.theta - b.theta) <= angle_tol) {
        flip = false;
        return std::abs(a.rho - b.rho) <= dist_tol;
    }
    if (M_PI - std::abs(a.theta - b.theta) <= angle_tol) {
        flip = true;
        return std::abs(a.rho + b.rho) <= dist_tol;
    }
    return false;
}

struct DsuNode {
    int parent;
};

int dsu_find(std::vector<DsuNode>& d, int i) {
    while (d[i].parent != i) {
        d[i].parent = d[d[i].parent].parent;
        i = d[i].parent;
    }
    return i;
}

void dsu_union(std::vector<DsuNode>& d, int a, int b) {
    a = dsu_find(d, a);
    b = dsu_find(d, b);
    if (a != b) d[std::max(a, b)].parent = std::min(a, b);
}

LineSegment fit_group(const std::vector<const LineSegment*>& group) {
    // Support-weighted mean of (rho, theta) in the frame of the first member.
    const LineSegment& ref = *group[0];
    double wsum = 0, rho_acc = 0, theta_acc = 0;
    for (const LineSegment* l : group) {
        double theta = l->theta, rho = l->rho;
        if (std::abs(theta - ref.theta) > M_PI / 2) {
            theta += theta < ref.theta ? M_PI : -M_PI;
            rho = -rho;
        }
        const double w = std::max(1, l->votes);
        wsum += w;
        rho_acc += w * rho;
        theta_acc += w * theta;
    }
    double theta = theta_acc / wsum;
    double rho = rho_acc / wsum;
    if (theta < 0) {
        theta += M_PI;
        rho = -rho;
    } else if (theta >= M_PI) {
        theta -= M_PI;
        rho = -rho;
    }

    const double c = std::cos(theta), s = std::sin(theta);
    double tmin = 1e18, tmax = -1e18;
    int votes = 0;
    for (const LineSegment* l : group) {
        for (const auto& [px, py] : {std::pair{l->x1, l->y1}, std::pair{l->x2, l->y2}}) {
            const double t = -px * s + py * c;
            tmin = std::min(tmin, t);
            tmax = std::max(tmax, t);
        }
        votes = std::max(votes, l->votes);
    }
    LineSegment out;
    out.rho = rho;
    out.theta = theta;
    out.votes = votes;
    out.category = ref.category;
    out.x1 = rho * c - tmin * s;
    out.y1 = rho * s + tmin * c;
    out.x2 = rho * c - tmax * s;
    out.y2 = rho * s + tmax * c;
    return out;
}

// Interval [t1, t2] of a segment along direction (-sin, cos) of theta.
std::pair<double, double> extent_along(const LineSegment& l, double theta) {
    const double c = std::cos(theta), s = std::sin(theta);
    double ta = -l.x1 * s + l.y1 * c;
    double tb = -l.x2 * s + l.y2 * c;
    if (ta > tb) std::swap(ta, tb);
    return {ta, tb};
}

}  // namespace

std::vector<LineSegment> merge_lines(std::vector<LineSegment> lines, const ExtractConfig& cfg) {
    if (lines.empty()) return lines;
    const double angle_tol = cfg.merge_angle_tol_deg * kDeg;

    // Group by (theta, rho) equivalence.
    std::vector<DsuNode> dsu(lines.size());
    for (size_t i = 0; i < lines.size(); ++i) dsu[i].parent = static_cast<int>(i);
    for (size_t i = 0; i < lines.size(); ++i)
        for (size_t j = i + 1; j < lines.size(); ++j) {
            bool flip;
            if (lines_close(lines[i], lines[j], angle_tol, cfg.merge_dist_tol_px, flip))
                dsu_union(dsu, static_cast<int>(i), static_cast<int>(j));
        }

    std::vector<std::vector<const LineSegment*>> groups(lines.size());
    for (size_t i = 0; i < lines.size(); ++i)
        groups[dsu_find(dsu, static_cast<int>(i))].push_back(&lines[i]);

    std::vector<LineSegment> out;
    for (auto& group : groups) {
        if (group.empty()) continue;
        // Chain members along the common direction; a chain breaks where the
        // extent gap exceeds gap_tol.
        const double theta_ref = group[0]->theta;
        std::sort(group.begin(), group.end(), [&](const LineSegment* a, const LineSegment* b) {
            return extent_along(*a, theta_ref).first < extent_along(*b, theta_ref).first;
        });
        std::vector<const LineSegment*> chain;
        double chain_end = 0;
        for (const LineSegment* l : group) {
            const auto [ta, tb] = extent_along(*l, theta_ref);
            if (chain.empty()) {
                chain.push_back(l);
                chain_end = tb;
            } else if (ta - chain_end <= cfg.merge_gap_tol_px) {
                chain.push_back(l);
                chain_end = std::max(chain_end, tb);
            } else {
                out.push_back(fit_group(chain));
                chain = {l};
                chain_end = tb;
            }
        }
        if (!chain.empty()) out.push_back(fit_group(chain));
    }
    return out;
}

namespace {

bool intersect_lines(const LineSegment& a, const LineSegment& b, double& x, double& y) {
    // Solve [cos sin; cos sin] [x y]^T = [rho_a rho_b].
    const double ca = std::cos(a.theta), sa = std::sin(a.theta);
    const double cb = std::cos(b.theta), sb = std::sin(b.theta);
    const double det = ca * sb - sa * cb;
    if (std::abs(det) < 1e-9) return false;
    x = (a.rho * sb - sa * b.rho) / det;
    y = (ca * b.rho - a.rho * cb) / det;
    return true;
}

struct SeparatorHit {
    const LineSegment* line;
    double t_on_entrance;  // projection of the foot point along the entrance
    double ix, iy;         // intersection with the entrance line
    double far_x, far_y;   // far endpoint (away from the entrance)
    double depth;
};

void pixel_to_vehicle(double px, double py, double px_per_m, int canvas_px, double& x_m,
                      double& y_m) {
    const double c = canvas_px / 2.0;
    x_m = (c - py) / px_per_m;
    y_m = (c - px) / px_per_m;
}

SlotKind classify_orientation(double sep_theta) {
    // Separator direction angle (mod pi): theta is the normal.
    double dir = sep_theta + M_PI / 2;
    if (dir >= M_PI) dir -= M_PI;
    const double tol = 20.0 * kDeg;
    if (theta_dist(dir, M_PI / 2) <= tol) return SlotKind::Vertical;
    if (theta_dist(dir, 0.0) <= tol) return SlotKind::Horizontal;
    return SlotKind::Diagonal;
}

}  // namespace

std::vector<ParkingSlot> build_slots(const std::vector<LineSegment>& lines,
                                     const ExtractConfig& cfg, int canvas_px) {
    const double perp_tol = cfg.perp_tol_deg * kDeg;
    const double min_w = cfg.entrance_min_m * cfg.px_per_m;
    const double max_w = cfg.entrance_max_m * cfg.px_per_m;
    const double min_depth = cfg.min_depth_m * cfg.px_per_m;

    std::vector<ParkingSlot> slots;
    for (const LineSegment& entrance : lines) {
        const auto [e_lo, e_hi] = extent_along(entrance, entrance.theta);
        const double slack = cfg.entrance_slack_px;

        std::vector<SeparatorHit> seps;
        for (const LineSegment& cand : lines) {
            if (&cand == &entrance) continue;
            // Angle between the two lines must match a configured separator
            // angle (90 for rectangular, 45/135 for oblique bays).
            const double between = theta_dist(entrance.theta, cand.theta);
            bool angle_ok = false;
            for (double want : cfg.separator_angles_deg) {
                double w = want * kDeg;
                if (w > M_PI / 2) w = M_PI - w;  // line angles live in [0, pi/2]
                if (std::abs(between - w) <= perp_tol) angle_ok = true;
            }
            if (!angle_ok) continue;
            if (cand.length() < min_depth) continue;

            double ix, iy;
            if (!intersect_lines(entrance, cand, ix, iy)) continue;
            const double c = std::cos(entrance.theta), s = std::sin(entrance.theta);
            const double t = -ix * s + iy * c;
            if (t < e_lo - slack || t > e_hi + slack) continue;

            // The separator must emanate from the entrance: the intersection
            // sits near one end of it.
            const double d1 = std::hypot(cand.x1 - ix, cand.y1 - iy);
            const double d2 = std::hypot(cand.x2 - ix, cand.y2 - iy);
            const double len = cand.length();
            const double near_d = std::min(d1, d2);
            if (near_d > std::max(6.0, 0.3 * len)) continue;

            SeparatorHit hit;
            hit.line = &cand;
            hit.t_on_entrance = t;
            hit.ix = ix;
            hit.iy = iy;
            if (d1 >= d2) {
                hit.far_x = cand.x1;
                hit.far_y = cand.y1;
            } else {
                hit.far_x = cand.x2;
                hit.far_y = cand.y2;
            }
            hit.depth = std::max(d1, d2);
            if (hit.depth < min_depth) continue;
            seps.push_back(hit);
        }
        if (seps.size() < 2) continue;
        std::sort(seps.begin(), seps.end(),
                  [](const SeparatorHit& a, const SeparatorHit& b) {
                      return a.t_on_entrance < b.t_on_entrance;
                  });

        // Hough fragments of one physical line land as near-duplicate feet;
        // keep the deepest line per foot cluster.
        std::vector<SeparatorHit> dedup;
        for (const SeparatorHit& hit : seps) {
            if (!dedup.empty() &&
                hit.t_on_entrance - dedup.back().t_on_entrance < 0.3 * min_w) {
                if (hit.depth > dedup.back().depth) dedup.back() = hit;
            } else {
                dedup.push_back(hit);
            }
        }
        seps = std::move(dedup);
        if (seps.size() < 2) continue;

        for (size_t i = 0; i + 1 < seps.size(); ++i) {
            const SeparatorHit& a = seps[i];
            const SeparatorHit& b = seps[i + 1];
            const double spacing = b.t_on_entrance - a.t_on_entrance;
            if (spacing < min_w || spacing > max_w) continue;
            // Far corners must lie on the same side of the entrance.
            const double ca = std::cos(entrance.theta), sa = std::sin(entrance.theta);
            const double side_a = (a.far_x * ca + a.far_y * sa) - entrance.rho;
            const double side_b = (b.far_x * ca + b.far_y * sa) - entrance.rho;
            if (side_a * side_b <= 0) continue;

            ParkingSlot slot;
            slot.corners_px = {{{a.ix, a.iy}, {b.ix, b.iy}, {b.far_x, b.far_y},
                                {a.far_x, a.far_y}}};
            slot.entrance_edge = 0;
            slot.orientation = classify_orientation(a.line->theta);
            for (int k = 0; k < 4; ++k)
                pixel_to_vehicle(slot.corners_px[k][0], slot.corners_px[k][1], cfg.px_per_m,
                                 canvas_px, slot.corners_m[k][0], slot.corners_m[k][1]);
            slots.push_back(slot);
        }
    }

    // A closed bay is found from both its entrance and its back line; keep
    // one representative per corner set.
    std::vector<ParkingSlot> unique;
    for (const auto& s : slots) {
        bool dup = false;
        for (const auto& u : unique) {
            // Compare as point sets (corner order may differ).
            int matched = 0;
            for (const auto& cs : s.corners_px) {
                for (const auto& cu : u.corners_px) {
                    if (std::hypot(cs[0] - cu[0], cs[1] - cu[1]) <= 3.0) {
                        ++matched;
                        break;
                    }
                }
            }
            if (matched == 4) {
                dup = true;
                break;
            }
        }
        if (!dup) unique.push_back(s);
    }
    return unique;
}

std::vector<Lane> build_lanes(const std::vector<LineSegment>& lines, int category,
                              const ExtractConfig& cfg) {
    // Chain near-collinear merged lines into polylines.
    std::vector<const LineSegment*> pool;
    for (const auto& l : lines)
        if (l.category == category) pool.push_back(&l);
    if (pool.empty()) return {};

    const double angle_tol = 2.0 * cfg.merge_angle_tol_deg * kDeg;
    std::vector<DsuNode> dsu(pool.size());
    for (size_t i = 0; i < pool.size(); ++i) dsu[i].parent = static_cast<int>(i);
    for (size_t i = 0; i < pool.size(); ++i) {
        for (size_t j = i + 1; j < pool.size(); ++j) {
            if (theta_dist(pool[i]->theta, pool[j]->theta) > angle_tol) continue;
            // End-to-end proximity.
            double best = 1e18;
            for (const auto& [ax, ay] : {std::pair{pool[i]->x1, pool[i]->y1},
                                         std::pair{pool[i]->x2, pool[i]->y2}})
                for (const auto& [bx, by] : {std::pair{pool[j]->x1, pool[j]->y1},
                                             std::pair{pool[j]->x2, pool[j]->y2}})
                    best = std::min(best, std::hypot(ax - bx, ay - by));
            if (best <= cfg.lane_gap_tol_px) dsu_union(dsu, static_cast<int>(i),
                                                       static_cast<int>(j));
        }
    }

    std::vector<std::vector<const LineSegment*>> groups(pool.size());
    for (size_t i = 0; i < pool.size(); ++i)
        groups[dsu_find(dsu, static_cast<int>(i))].push_back(pool[i]);

    std::vector<Lane> lanes;
    for (auto& group : groups) {
        if (group.empty()) continue;
        const double theta_ref = group[0]->theta;
        std::sort(group.begin(), group.end(), [&](const LineSegment* a, const LineSegment* b) {
            return extent_along(*a, theta_ref).first < extent_along(*b, theta_ref).first;
        });
        Lane lane;
        lane.category = category;
        for (size_t i = 0; i < group.size(); ++i) {
            // Orient each segment along the common direction.
            const double s = std::sin(theta_ref), c = std::cos(theta_ref);
            double t1 = -group[i]->x1 * s + group[i]->y1 * c;
            double t2 = -group[i]->x2 * s + group[i]->y2 * c;
            std::array<double, 2> p1{group[i]->x1, group[i]->y1};
            std::array<double, 2> p2{group[i]->x2, group[i]->y2};
            if (t1 > t2) std::swap(p1, p2);
            if (i == 0) {
                lane.points_px.push_back(p1);
            } else {
                // Join at the midpoint of the junction gap.
                auto& prev = lane.points_px.back();
                prev = {(prev[0] + p1[0]) / 2, (prev[1] + p1[1]) / 2};
            }
            lane.points_px.push_back(p2);
        }
        lanes.push_back(std::move(lane));
    }
    return lanes;
}

ExtractionResult extract_all(const LabelMask& mask, const ExtractConfig& cfg) {
    ExtractionResult result;
    for (int category = 1; category <= 5; ++category) {
        const ImageGray bin = binarize(mask, category);
        bool any = false;
        for (uint8_t v : bin.pixels)
            if (v) {
                any = true;
                break;
            }
        if (!any) continue;
        const ImageGray skel = skeletonize(bin);
        std::vector<LineSegment> segs = hough_lines(skel, cfg);
        for (auto& s : segs) s.category = category;
        std::vector<LineSegment> merged = merge_lines(std::move(segs), cfg);
        if (category == kParkingSlot) {
            auto slots = build_slots(merged, cfg, mask.width);
            result.slots.insert(result.slots.end(), slots.begin(), slots.end());
        } else {
            auto lanes = build_lanes(merged, category, cfg);
            result.lanes.insert(result.lanes.end(), lanes.begin(), lanes.end());
        }
    }
    return result;
}

void write_records(const std::string& path, const ExtractionResult& result,
                   const ExtractConfig& cfg, int canvas_px) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write records file: " + path);
    out.precision(4);
    out << std::fixed;
    for (const auto& s : result.slots) {
        out << "SLOT";
        for (int k = 0; k < 4; ++k) out << " " << s.corners_m[k][0] << " " << s.corners_m[k][1];
        out << " " << s.entrance_edge << " " << slot_kind_name(s.orientation) << "\n";
    }
    for (const auto& l : result.lanes) {
        out << "LANE " << class_name(l.category) << " " << l.points_px.size();
        for (const auto& p : l.points_px) {
            double xm, ym;
            pixel_to_vehicle(p[0], p[1], cfg.px_per_m, canvas_px, xm, ym);
            out << " " << xm << " " << ym;
        }
        out << "\n";
    }
}

namespace {

void draw_line(ImageRgb& img, double x1, double y1, double x2, double y2,
               const std::array<uint8_t, 3>& color) {
    const double len = std::hypot(x2 - x1, y2 - y1);
    const int steps = std::max(1, static_cast<int>(len * 2));
    for (int i = 0; i <= steps; ++i) {
        const double t = static_cast<double>(i) / steps;
        const int x = static_cast<int>(std::lround(x1 + (x2 - x1) * t));
        const int y = static_cast<int>(std::lround(y1 + (y2 - y1) * t));
        if (!img.inside(x, y)) continue;
        uint8_t* px = img.at(x, y);
        px[0] = color[0];
        px[1] = color[1];
        px[2] = color[2];
    }
}

}  // namespace

ImageRgb render_overlay(const LabelMask& mask, const ExtractionResult& result) {
    static const std::array<std::array<uint8_t, 3>, 6> palette = {{{30, 30, 30},
                                                                   {90, 90, 200},
                                                                   {200, 200, 200},
                                                                   {150, 150, 150},
                                                                   {190, 170, 60},
                                                                   {150, 130, 40}}};
    ImageRgb img(mask.width, mask.height);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            const auto& c = palette[std::min<uint8_t>(mask.at(x, y), 5)];
            uint8_t* px = img.at(x, y);
            px[0] = c[0];
            px[1] = c[1];
            px[2] = c[2];
        }
    for (const auto& s : result.slots) {
        for (int k = 0; k < 4; ++k) {
            const auto& a = s.corners_px[k];
            const auto& b = s.corners_px[(k + 1) % 4];
            const bool entrance = k == s.entrance_edge;
            draw_line(img, a[0], a[1], b[0], b[1],
                      entrance ? std::array<uint8_t, 3>{255, 80, 80}
                               : std::array<uint8_t, 3>{80, 255, 80});
        }
    }
    for (const auto& l : result.lanes)
        for (size_t i = 0; i + 1 < l.points_px.size(); ++i)
            draw_line(img, l.points_px[i][0], l.points_px[i][1], l.points_px[i + 1][0],
                      l.points_px[i + 1][1], {80, 160, 255});
    return img;
}

}  // namespace psv
