#pragma once

#include <cstdint>
#include <vector>

namespace psv {

// Deterministic xoshiro256** generator. Every randomized stage of the
// pipeline (init, shuffling, scene sampling) goes through this so seeded
// runs are byte-identical regardless of the standard library.
class Rng {
public:
    explicit Rng(uint64_t seed);

    uint64_t next_u64();
    // Uniform in [0, n), n > 0.
    uint64_t next_below(uint64_t n);
    // Uniform in [0, 1).
    double next_double();
    // Uniform in [lo, hi).
    double uniform(double lo, double hi);
    int uniform_int(int lo, int hi);  // inclusive bounds
    // Standard normal via Box-Muller (cached pair).
    double normal();
    double normal(double mean, double stddev);
    bool bernoulli(double p);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Derive an independent stream (for per-sample generation etc.).
    Rng fork(uint64_t stream_id);

private:
    uint64_t state_[4];
    bool have_cached_ = false;
    double cached_ = 0.0;
};

}  // namespace psv
