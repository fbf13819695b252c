#include "psv/layers.hpp"

#include <algorithm>
#include <cmath>

#include "psv/error.hpp"

namespace psv {

namespace {

// C = A * B, A is (m x k) row-major, B is (k x n) row-major, C is (m x n).
// The n-contiguous inner loop vectorizes.
template <typename T>
void matmul(const T* a, const T* b, T* c, int m, int k, int n) {
    std::fill(c, c + static_cast<size_t>(m) * n, T(0));
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<size_t>(i) * k;
        T* crow = c + static_cast<size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            if (av == T(0)) continue;
            const T* brow = b + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C += A^T * B, A is (k x m), B is (k x n), C is (m x n).
template <typename T>
void matmul_at_b(const T* a, const T* b, T* c, int m, int k, int n) {
    for (int kk = 0; kk < k; ++kk) {
        const T* arow = a + static_cast<size_t>(kk) * m;
        const T* brow = b + static_cast<size_t>(kk) * n;
        for (int i = 0; i < m; ++i) {
            const T av = arow[i];
            if (av == T(0)) continue;
            T* crow = c + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// Unfold one sample into an (in_c*kh*kw) x (out_h*out_w) column matrix.
template <typename T>
void im2col(const T* x, int in_c, int in_h, int in_w, const ConvSpec& s, int out_h,
            int out_w, T* col) {
    const int patch = s.kernel_h * s.kernel_w;
    for (int ic = 0; ic < in_c; ++ic) {
        for (int kh = 0; kh < s.kernel_h; ++kh) {
            for (int kw = 0; kw < s.kernel_w; ++kw) {
                T* crow = col + (static_cast<size_t>(ic) * patch + kh * s.kernel_w + kw) *
                                    (static_cast<size_t>(out_h) * out_w);
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * s.stride - s.pad_h + kh;
                    if (iy < 0 || iy >= in_h) {
                        std::fill(crow + static_cast<size_t>(oy) * out_w,
                                  crow + static_cast<size_t>(oy + 1) * out_w, T(0));
                        continue;
                    }
                    const T* xrow = x + (static_cast<size_t>(ic) * in_h + iy) * in_w;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * s.stride - s.pad_w + kw;
                        crow[static_cast<size_t>(oy) * out_w + ox] =
                            (ix >= 0 && ix < in_w) ? xrow[ix] : T(0);
                    }
                }
            }
        }
    }
}

// Scatter a column matrix back onto the input plane (adds).
template <typename T>
void col2im(const T* col, int in_c, int in_h, int in_w, const ConvSpec& s, int out_h,
            int out_w, T* x) {
    const int patch = s.kernel_h * s.kernel_w;
    for (int ic = 0; ic < in_c; ++ic) {
        for (int kh = 0; kh < s.kernel_h; ++kh) {
            for (int kw = 0; kw < s.kernel_w; ++kw) {
                const T* crow = col + (static_cast<size_t>(ic) * patch + kh * s.kernel_w + kw) *
                                          (static_cast<size_t>(out_h) * out_w);
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * s.stride - s.pad_h + kh;
                    if (iy < 0 || iy >= in_h) continue;
                    T* xrow = x + (static_cast<size_t>(ic) * in_h + iy) * in_w;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * s.stride - s.pad_w + kw;
                        if (ix >= 0 && ix < in_w)
                            xrow[ix] += crow[static_cast<size_t>(oy) * out_w + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

void ConvSpec::validate() const {
    if (kernel_h < 1 || kernel_w < 1) throw ValidationError("conv: kernel dims must be >= 1");
    if (in_channels < 1 || out_channels < 1)
        throw ValidationError("conv: channel counts must be >= 1");
    if (stride < 1) throw ValidationError("conv: stride must be >= 1");
    if (pad_h < 0 || pad_w < 0) throw ValidationError("conv: negative padding");
}

void TconvSpec::validate() const {
    if (kernel_h < 1 || kernel_w < 1) throw ValidationError("tconv: kernel dims must be >= 1");
    if (in_channels < 1 || out_channels < 1)
        throw ValidationError("tconv: channel counts must be >= 1");
    if (stride < 1) throw ValidationError("tconv: stride must be >= 1");
    if (pad < 0) throw ValidationError("tconv: negative padding");
}

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                          const ConvSpec& spec) {
    spec.validate();
    if (x.c != spec.in_channels)
        throw ValidationError("conv2d: input channels " + std::to_string(x.c) +
                              " do not match spec " + std::to_string(spec.in_channels));
    if (w.n != spec.out_channels || w.c != spec.in_channels || w.h != spec.kernel_h ||
        w.w != spec.kernel_w)
        throw ValidationError("conv2d: weight shape " + w.shape_str() + " does not match spec");
    if (b.size() != static_cast<size_t>(spec.out_channels))
        throw ValidationError("conv2d: bias size does not match out_channels");

    const int oh = spec.out_h(x.h), ow = spec.out_w(x.w);
    if (oh < 1 || ow < 1) throw ValidationError("conv2d: kernel larger than padded input");

    TensorT<T> y(x.n, spec.out_channels, oh, ow);
    const int k = spec.in_channels * spec.kernel_h * spec.kernel_w;
    const size_t plane = static_cast<size_t>(oh) * ow;
    std::vector<T> col(static_cast<size_t>(k) * plane);

    for (int in = 0; in < x.n; ++in) {
        im2col(x.data.data() + x.index(in, 0, 0, 0), x.c, x.h, x.w, spec, oh, ow, col.data());
        T* out = y.data.data() + y.index(in, 0, 0, 0);
        matmul(w.data.data(), col.data(), out, spec.out_channels, k, static_cast<int>(plane));
        for (int oc = 0; oc < spec.out_channels; ++oc) {
            const T bv = b.data[oc];
            if (bv == T(0)) continue;
            T* orow = out + static_cast<size_t>(oc) * plane;
            for (size_t i = 0; i < plane; ++i) orow[i] += bv;
        }
    }
    return y;
}

template <typename T>
ConvGradsT<T> conv2d_backward(const TensorT<T>& x, const TensorT<T>& w, const ConvSpec& spec,
                              const TensorT<T>& grad_out) {
    spec.validate();
    const int oh = spec.out_h(x.h), ow = spec.out_w(x.w);
    if (grad_out.n != x.n || grad_out.c != spec.out_channels || grad_out.h != oh ||
        grad_out.w != ow)
        throw ValidationError("conv2d_backward: grad_out shape " + grad_out.shape_str() +
                              " does not match forward output");

    ConvGradsT<T> g;
    g.input = TensorT<T>(x.n, x.c, x.h, x.w);
    g.weight = TensorT<T>(w.n, w.c, w.h, w.w);
    g.bias = TensorT<T>(spec.out_channels, 1, 1, 1);

    const int k = spec.in_channels * spec.kernel_h * spec.kernel_w;
    const size_t plane = static_cast<size_t>(oh) * ow;
    std::vector<T> col(static_cast<size_t>(k) * plane);
    std::vector<T> gcol(static_cast<size_t>(k) * plane);

    for (int in = 0; in < x.n; ++in) {
        const T* go = grad_out.data.data() + grad_out.index(in, 0, 0, 0);

        im2col(x.data.data() + x.index(in, 0, 0, 0), x.c, x.h, x.w, spec, oh, ow, col.data());
        for (int oc = 0; oc < spec.out_channels; ++oc) {
            const T* grow = go + static_cast<size_t>(oc) * plane;
            T* wrow = g.weight.data.data() + static_cast<size_t>(oc) * k;
            for (int kk = 0; kk < k; ++kk) {
                const T* crow = col.data() + static_cast<size_t>(kk) * plane;
                T acc = T(0);
                for (size_t i = 0; i < plane; ++i) acc += grow[i] * crow[i];
                wrow[kk] += acc;
            }
            T bacc = T(0);
            for (size_t i = 0; i < plane; ++i) bacc += grow[i];
            g.bias.data[oc] += bacc;
        }

        std::fill(gcol.begin(), gcol.end(), T(0));
        matmul_at_b(w.data.data(), go, gcol.data(), k, spec.out_channels,
                    static_cast<int>(plane));
        col2im(gcol.data(), x.c, x.h, x.w, spec, oh, ow,
               g.input.data.data() + g.input.index(in, 0, 0, 0));
    }
    return g;
}

template <typename T>
TensorT<T> relu_forward(const TensorT<T>& x) {
    TensorT<T> y = x;
    for (auto& v : y.data) v = v > T(0) ? v : T(0);
    y.grad.clear();
    return y;
}

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& x, const TensorT<T>& grad_out) {
    if (!x.same_shape(grad_out)) throw ValidationError("relu_backward: shape mismatch");
    TensorT<T> g(x.n, x.c, x.h, x.w);
    for (size_t i = 0; i < x.size(); ++i)
        g.data[i] = x.data[i] > T(0) ? grad_out.data[i] : T(0);
    return g;
}

template <typename T>
MaxPoolResultT<T> maxpool2x2_forward(const TensorT<T>& x) {
    if (x.h % 2 != 0 || x.w % 2 != 0)
        throw ValidationError("maxpool2x2: spatial dims must be even, got " + x.shape_str());

    MaxPoolResultT<T> r;
    r.output = TensorT<T>(x.n, x.c, x.h / 2, x.w / 2);
    r.argmax.assign(r.output.size(), 0);

    size_t o = 0;
    for (int in = 0; in < x.n; ++in) {
        for (int ic = 0; ic < x.c; ++ic) {
            for (int oy = 0; oy < x.h / 2; ++oy) {
                for (int ox = 0; ox < x.w / 2; ++ox, ++o) {
                    int64_t best_idx = -1;
                    T best = T(0);
                    for (int dy = 0; dy < 2; ++dy) {
                        for (int dx = 0; dx < 2; ++dx) {
                            const size_t idx = x.index(in, ic, oy * 2 + dy, ox * 2 + dx);
                            const T v = x.data[idx];
                            if (best_idx < 0 || v > best) {  // strict >: first max wins ties
                                best = v;
                                best_idx = static_cast<int64_t>(idx);
                            }
                        }
                    }
                    r.output.data[o] = best;
                    r.argmax[o] = static_cast<int32_t>(best_idx);
                }
            }
        }
    }
    return r;
}

template <typename T>
TensorT<T> maxpool2x2_backward(const MaxPoolResultT<T>& fwd, const TensorT<T>& x_shape_ref,
                               const TensorT<T>& grad_out) {
    if (!fwd.output.same_shape(grad_out))
        throw ValidationError("maxpool2x2_backward: grad shape mismatch");
    TensorT<T> g(x_shape_ref.n, x_shape_ref.c, x_shape_ref.h, x_shape_ref.w);
    for (size_t i = 0; i < fwd.argmax.size(); ++i)
        g.data[fwd.argmax[i]] += grad_out.data[i];
    return g;
}

template <typename T>
TensorT<T> tconv2d_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                           const TconvSpec& spec) {
    spec.validate();
    if (x.c != spec.in_channels)
        throw ValidationError("tconv2d: input channels do not match spec");
    if (w.n != spec.in_channels || w.c != spec.out_channels || w.h != spec.kernel_h ||
        w.w != spec.kernel_w)
        throw ValidationError("tconv2d: weight shape " + w.shape_str() + " does not match spec");
    if (b.size() != static_cast<size_t>(spec.out_channels))
        throw ValidationError("tconv2d: bias size does not match out_channels");

    const int oh = spec.out_h(x.h), ow = spec.out_w(x.w);
    if (oh < 1 || ow < 1) throw ValidationError("tconv2d: empty output");

    TensorT<T> y(x.n, spec.out_channels, oh, ow);
    for (int in = 0; in < x.n; ++in) {
        for (int oc = 0; oc < spec.out_channels; ++oc) {
            T* yplane = y.data.data() + y.index(in, oc, 0, 0);
            const T bv = b.data[oc];
            for (size_t i = 0; i < static_cast<size_t>(oh) * ow; ++i) yplane[i] = bv;
        }
        for (int ic = 0; ic < spec.in_channels; ++ic) {
            const T* xplane = x.data.data() + x.index(in, ic, 0, 0);
            for (int iy = 0; iy < x.h; ++iy) {
                for (int ix = 0; ix < x.w; ++ix) {
                    const T xv = xplane[static_cast<size_t>(iy) * x.w + ix];
                    if (xv == T(0)) continue;
                    for (int oc = 0; oc < spec.out_channels; ++oc) {
                        const T* wk = w.data.data() + w.index(ic, oc, 0, 0);
                        T* yplane = y.data.data() + y.index(in, oc, 0, 0);
                        for (int kh = 0; kh < spec.kernel_h; ++kh) {
                            const int oy = iy * spec.stride + kh - spec.pad;
                            if (oy < 0 || oy >= oh) continue;
                            for (int kw = 0; kw < spec.kernel_w; ++kw) {
                                const int ox = ix * spec.stride + kw - spec.pad;
                                if (ox < 0 || ox >= ow) continue;
                                yplane[static_cast<size_t>(oy) * ow + ox] +=
                                    xv * wk[static_cast<size_t>(kh) * spec.kernel_w + kw];
                            }
                        }
                    }
                }
            }
        }
    }
    return y;
}

template <typename T>
ConvGradsT<T> tconv2d_backward(const TensorT<T>& x, const TensorT<T>& w, const TconvSpec& spec,
                               const TensorT<T>& grad_out) {
    spec.validate();
    const int oh = spec.out_h(x.h), ow = spec.out_w(x.w);
    if (grad_out.n != x.n || grad_out.c != spec.out_channels || grad_out.h != oh ||
        grad_out.w != ow)
        throw ValidationError("tconv2d_backward: grad_out shape mismatch");

    ConvGradsT<T> g;
    g.input = TensorT<T>(x.n, x.c, x.h, x.w);
    g.weight = TensorT<T>(w.n, w.c, w.h, w.w);
    g.bias = TensorT<T>(spec.out_channels, 1, 1, 1);

    for (int in = 0; in < x.n; ++in) {
        for (int oc = 0; oc < spec.out_channels; ++oc) {
            const T* gplane = grad_out.data.data() + grad_out.index(in, oc, 0, 0);
            T acc = T(0);
            for (size_t i = 0; i < static_cast<size_t>(oh) * ow; ++i) acc += gplane[i];
            g.bias.data[oc] += acc;
        }
        for (int ic = 0; ic < spec.in_channels; ++ic) {
            const T* xplane = x.data.data() + x.index(in, ic, 0, 0);
            T* gxplane = g.input.data.data() + g.input.index(in, ic, 0, 0);
            for (int iy = 0; iy < x.h; ++iy) {
                for (int ix = 0; ix < x.w; ++ix) {
                    const T xv = xplane[static_cast<size_t>(iy) * x.w + ix];
                    T gx = T(0);
                    for (int oc = 0; oc < spec.out_channels; ++oc) {
                        const T* wk = w.data.data() + w.index(ic, oc, 0, 0);
                        T* gwk = g.weight.data.data() + g.weight.index(ic, oc, 0, 0);
                        const T* gplane = grad_out.data.data() + grad_out.index(in, oc, 0, 0);
                        for (int kh = 0; kh < spec.kernel_h; ++kh) {
                            const int oy = iy * spec.stride + kh - spec.pad;
                            if (oy < 0 || oy >= oh) continue;
                            for (int kw = 0; kw < spec.kernel_w; ++kw) {
                                const int ox = ix * spec.stride + kw - spec.pad;
                                if (ox < 0 || ox >= ow) continue;
                                const T gov = gplane[static_cast<size_t>(oy) * ow + ox];
                                gx += gov * wk[static_cast<size_t>(kh) * spec.kernel_w + kw];
                                gwk[static_cast<size_t>(kh) * spec.kernel_w + kw] += gov * xv;
                            }
                        }
                    }
                    gxplane[static_cast<size_t>(iy) * x.w + ix] = gx;
                }
            }
        }
    }
    return g;
}

int upsample_to_scale(int in_h, int in_w, int target_h, int target_w) {
    if (in_h <= 0 || in_w <= 0) throw ValidationError("upsample_to: empty input");
    if (target_h % in_h != 0 || target_w % in_w != 0)
        throw ValidationError("upsample_to: target dims are not integer multiples of input");
    const int sh = target_h / in_h, sw = target_w / in_w;
    if (sh != sw) throw ValidationError("upsample_to: anisotropic scale not supported");
    if ((sh & (sh - 1)) != 0)
        throw ValidationError("upsample_to: scale must be a power of two, got " +
                              std::to_string(sh));
    return sh;
}

template <typename T>
TensorT<T> concat_channels(const std::vector<const TensorT<T>*>& xs) {
    if (xs.empty()) throw ValidationError("concat_channels: empty operand list");
    const TensorT<T>& first = *xs[0];
    int total_c = 0;
    for (const TensorT<T>* t : xs) {
        if (t->n != first.n || t->h != first.h || t->w != first.w)
            throw ValidationError("concat_channels: spatial/batch dims mismatch");
        total_c += t->c;
    }
    TensorT<T> y(first.n, total_c, first.h, first.w);
    const size_t plane = static_cast<size_t>(first.h) * first.w;
    for (int in = 0; in < first.n; ++in) {
        int oc = 0;
        for (const TensorT<T>* t : xs) {
            std::copy_n(t->data.data() + t->index(in, 0, 0, 0),
                        static_cast<size_t>(t->c) * plane, y.data.data() + y.index(in, oc, 0, 0));
            oc += t->c;
        }
    }
    return y;
}

template <typename T>
std::vector<TensorT<T>> concat_channels_backward(const std::vector<const TensorT<T>*>& xs,
                                                 const TensorT<T>& grad_out) {
    std::vector<TensorT<T>> grads;
    grads.reserve(xs.size());
    const size_t plane = static_cast<size_t>(grad_out.h) * grad_out.w;
    for (const TensorT<T>* t : xs) grads.emplace_back(t->n, t->c, t->h, t->w);
    for (int in = 0; in < grad_out.n; ++in) {
        int oc = 0;
        for (size_t s = 0; s < xs.size(); ++s) {
            TensorT<T>& g = grads[s];
            std::copy_n(grad_out.data.data() + grad_out.index(in, oc, 0, 0),
                        static_cast<size_t>(g.c) * plane, g.data.data() + g.index(in, 0, 0, 0));
            oc += g.c;
        }
    }
    return grads;
}

template <typename T>
TensorT<T> sum_elementwise(const std::vector<const TensorT<T>*>& xs) {
    if (xs.empty()) throw ValidationError("sum_elementwise: empty operand list");
    TensorT<T> y = *xs[0];
    y.grad.clear();
    for (size_t s = 1; s < xs.size(); ++s) {
        if (!xs[s]->same_shape(y))
            throw ValidationError("sum_elementwise: shape mismatch " + xs[s]->shape_str() +
                                  " vs " + y.shape_str());
        for (size_t i = 0; i < y.size(); ++i) y.data[i] += xs[s]->data[i];
    }
    return y;
}

#define PSV_INSTANTIATE_LAYERS(T)                                                           \
    template TensorT<T> conv2d_forward<T>(const TensorT<T>&, const TensorT<T>&,             \
                                          const TensorT<T>&, const ConvSpec&);              \
    template ConvGradsT<T> conv2d_backward<T>(const TensorT<T>&, const TensorT<T>&,         \
                                              const ConvSpec&, const TensorT<T>&);          \
    template TensorT<T> relu_forward<T>(const TensorT<T>&);                                 \
    template TensorT<T> relu_backward<T>(const TensorT<T>&, const TensorT<T>&);             \
    template MaxPoolResultT<T> maxpool2x2_forward<T>(const TensorT<T>&);                    \
    template TensorT<T> maxpool2x2_backward<T>(const MaxPoolResultT<T>&, const TensorT<T>&, \
                                               const TensorT<T>&);                          \
    template TensorT<T> tconv2d_forward<T>(const TensorT<T>&, const TensorT<T>&,            \
                                           const TensorT<T>&, const TconvSpec&);            \
    template ConvGradsT<T> tconv2d_backward<T>(const TensorT<T>&, const TensorT<T>&,        \
                                               const TconvSpec&, const TensorT<T>&);        \
    template TensorT<T> concat_channels<T>(const std::vector<const TensorT<T>*>&);          \
    template std::vector<TensorT<T>> concat_channels_backward<T>(                           \
        const std::vector<const TensorT<T>*>&, const TensorT<T>&);                          \
    template TensorT<T> sum_elementwise<T>(const std::vector<const TensorT<T>*>&);

PSV_INSTANTIATE_LAYERS(float)
PSV_INSTANTIATE_LAYERS(double)

#undef PSV_INSTANTIATE_LAYERS

}  // namespace psv
