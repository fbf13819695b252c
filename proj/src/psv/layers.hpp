#pragma once

#include <vector>

#include "psv/tensor.hpp"

namespace psv {

// Cross-correlation geometry. "Same" spatial size at stride 1 needs
// pad = (k-1)/2 per axis, so odd kernels only for that use.
struct ConvSpec {
    int kernel_h = 3, kernel_w = 3;
    int in_channels = 0, out_channels = 0;
    int stride = 1;
    int pad_h = 1, pad_w = 1;

    static ConvSpec same(int kh, int kw, int in_c, int out_c) {
        return ConvSpec{kh, kw, in_c, out_c, 1, (kh - 1) / 2, (kw - 1) / 2};
    }
    void validate() const;
    int out_h(int in_h) const { return (in_h + 2 * pad_h - kernel_h) / stride + 1; }
    int out_w(int in_w) const { return (in_w + 2 * pad_w - kernel_w) / stride + 1; }
};

// Transposed convolution, weight layout (in_c, out_c, kh, kw).
// out = (in - 1) * stride + kernel - 2 * pad. The network uses kernel == stride
// (pad 0), which doubles / scales the spatial dims exactly.
struct TconvSpec {
    int kernel_h = 2, kernel_w = 2;
    int in_channels = 0, out_channels = 0;
    int stride = 2;
    int pad = 0;

    static TconvSpec upscale(int factor, int in_c, int out_c) {
        return TconvSpec{factor, factor, in_c, out_c, factor, 0};
    }
    void validate() const;
    int out_h(int in_h) const { return (in_h - 1) * stride + kernel_h - 2 * pad; }
    int out_w(int in_w) const { return (in_w - 1) * stride + kernel_w - 2 * pad; }
};

template <typename T>
struct ConvGradsT {
    TensorT<T> input;   // dL/dx
    TensorT<T> weight;  // dL/dw
    TensorT<T> bias;    // dL/db
};
using ConvGrads = ConvGradsT<float>;

// weight layout (out_c, in_c, kh, kw); bias (out_c,1,1,1).
template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                          const ConvSpec& spec);
template <typename T>
ConvGradsT<T> conv2d_backward(const TensorT<T>& x, const TensorT<T>& w, const ConvSpec& spec,
                              const TensorT<T>& grad_out);

template <typename T>
TensorT<T> relu_forward(const TensorT<T>& x);
template <typename T>
TensorT<T> relu_backward(const TensorT<T>& x, const TensorT<T>& grad_out);

template <typename T>
struct MaxPoolResultT {
    TensorT<T> output;
    std::vector<int32_t> argmax;  // flat input index per output element
};
using MaxPoolResult = MaxPoolResultT<float>;

// 2x2 stride-2 max pooling; even dims required. Ties route the gradient to
// the first maximal position in row-major window order.
template <typename T>
MaxPoolResultT<T> maxpool2x2_forward(const TensorT<T>& x);
template <typename T>
TensorT<T> maxpool2x2_backward(const MaxPoolResultT<T>& fwd, const TensorT<T>& x_shape_ref,
                               const TensorT<T>& grad_out);

template <typename T>
TensorT<T> tconv2d_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                           const TconvSpec& spec);
template <typename T>
ConvGradsT<T> tconv2d_backward(const TensorT<T>& x, const TensorT<T>& w, const TconvSpec& spec,
                               const TensorT<T>& grad_out);

// One-step learned up-sampling factor for a target size; the scale must be
// an integer power-of-two, identical on both axes. scale 1 degenerates to a
// 1x1 convolution.
int upsample_to_scale(int in_h, int in_w, int target_h, int target_w);

template <typename T>
TensorT<T> concat_channels(const std::vector<const TensorT<T>*>& xs);
template <typename T>
std::vector<TensorT<T>> concat_channels_backward(const std::vector<const TensorT<T>*>& xs,
                                                 const TensorT<T>& grad_out);

// Backward of the elementwise sum copies the gradient to every operand;
// callers reuse grad_out directly.
template <typename T>
TensorT<T> sum_elementwise(const std::vector<const TensorT<T>*>& xs);

}  // namespace psv
