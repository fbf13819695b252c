#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace psv {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    double tol = 0.0;
    size_t checked = 0;
    bool pass = false;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;

    bool all_pass() const;
    std::string to_string() const;
};

// Central finite differences of the scalar loss_fn against an analytic
// gradient, perturbing values[i] in place. Arithmetic is 64-bit throughout.
// max_samples < 0 checks every element; otherwise a seeded subset.
double finite_difference_max_rel_err(const std::function<double()>& loss_fn,
                                     std::vector<double>& values,
                                     const std::vector<double>& analytic, double eps,
                                     int max_samples, uint64_t sample_seed,
                                     size_t* checked_out = nullptr);

// Every layer the network uses (conv incl. 9x1/1x9, ReLU, maxpool, both
// up-sampling ops, sum, concat), the per-pixel weighted loss, and the full
// loss through a tiny network. Layer tolerance 1e-3; through-network 1e-2.
GradCheckReport run_gradient_suite(uint64_t seed);

}  // namespace psv
