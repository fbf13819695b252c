#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "psv/error.hpp"
#include "psv/rng.hpp"

namespace psv {

// Dense rank-4 array (batch, channels, height, width) with an optional
// same-shape gradient. The currency of the whole network stack. float is the
// production scalar; the double instantiation backs the gradient checker.
template <typename T>
struct TensorT {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<T> data;
    std::vector<T> grad;  // empty unless requested

    TensorT() = default;
    TensorT(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_) {
        if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0)
            throw ValidationError("Tensor: negative dimension");
        data.assign(static_cast<size_t>(n_) * c_ * h_ * w_, T(0));
    }

    size_t size() const { return data.size(); }
    bool same_shape(const TensorT& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }
    std::string shape_str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }

    size_t index(int in, int ic, int iy, int ix) const {
        return ((static_cast<size_t>(in) * c + ic) * h + iy) * w + ix;
    }
    T& at(int in, int ic, int iy, int ix) { return data[index(in, ic, iy, ix)]; }
    T at(int in, int ic, int iy, int ix) const { return data[index(in, ic, iy, ix)]; }

    void ensure_grad() { grad.assign(data.size(), T(0)); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    void fill_normal(Rng& rng, double mean, double stddev) {
        for (auto& x : data) x = static_cast<T>(rng.normal(mean, stddev));
    }
    void fill_uniform(Rng& rng, double lo, double hi) {
        for (auto& x : data) x = static_cast<T>(rng.uniform(lo, hi));
    }

    TensorT like_zeros() const { return TensorT(n, c, h, w); }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out(n, c, h, w);
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

// Integer label plane (batch, height, width), values 0..num_classes-1.
struct LabelBatch {
    int n = 0, h = 0, w = 0;
    std::vector<uint8_t> data;

    LabelBatch() = default;
    LabelBatch(int n_, int h_, int w_)
        : n(n_), h(h_), w(w_), data(static_cast<size_t>(n_) * h_ * w_, 0) {}

    size_t index(int in, int iy, int ix) const {
        return (static_cast<size_t>(in) * h + iy) * w + ix;
    }
    uint8_t& at(int in, int iy, int ix) { return data[index(in, iy, ix)]; }
    uint8_t at(int in, int iy, int ix) const { return data[index(in, iy, ix)]; }
};

}  // namespace psv
