#pragma once

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

#include "psv/layers.hpp"
#include "psv/tensor.hpp"

namespace psv {

// Feature-map combination after the two VH paths.
enum class Combine { Sum, Concat, ConvPlus };

Combine combine_from_string(const std::string& s);
std::string combine_to_string(Combine c);

struct NetworkConfig {
    int vh_kernel = 9;  // 3, 5, 7, 9 or 11
    Combine combine = Combine::Sum;
    bool vh_enabled = true;
    int num_classes = 6;
    std::array<int, 5> encoder_channels{16, 32, 64, 128, 256};
    int input_h = 128, input_w = 128;

    void validate() const;

    static NetworkConfig load(const std::string& path);
    void save(const std::string& path) const;
};

// Insertion-ordered named tensor collection; the order is the manifest and
// serialization order.
template <typename T>
struct NamedTensorsT {
    std::vector<std::string> names;
    std::unordered_map<std::string, TensorT<T>> tensors;

    TensorT<T>& add(const std::string& name, TensorT<T> t) {
        if (has(name)) throw ValidationError("duplicate tensor name '" + name + "'");
        names.push_back(name);
        return tensors.emplace(name, std::move(t)).first->second;
    }
    bool has(const std::string& name) const { return tensors.count(name) != 0; }
    TensorT<T>& get(const std::string& name) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw ValidationError("missing tensor '" + name + "'");
        return it->second;
    }
    const TensorT<T>& get(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw ValidationError("missing tensor '" + name + "'");
        return it->second;
    }
    size_t total_values() const {
        size_t n = 0;
        for (const auto& name : names) n += tensors.at(name).size();
        return n;
    }
};
using NamedTensors = NamedTensorsT<float>;

template <typename T>
struct ModelParamsT {
    NetworkConfig config;
    NamedTensorsT<T> store;
};
using ModelParams = ModelParamsT<float>;

template <typename T>
struct ForwardOutputsT {
    TensorT<T> final;                       // (N, num_classes, H, W)
    std::array<TensorT<T>, 5> pre_outputs;  // five full-resolution pre-outputs
    std::vector<TensorT<T>> encoder_feats;  // pre-pool features, shallowest first
};
using ForwardOutputs = ForwardOutputsT<float>;

template <typename T>
struct EncoderStageTraceT {
    TensorT<T> in, c1_pre, c1_post, c2_pre, c2_post;
    MaxPoolResultT<T> pool;
};

template <typename T>
struct VhPathTraceT {
    std::array<TensorT<T>, 5> in;   // input of each conv layer
    std::array<TensorT<T>, 5> pre;  // pre-ReLU response of each conv layer
    TensorT<T> out;                 // post-ReLU output of the last layer
};

template <typename T>
struct DecoderStageTraceT {
    TensorT<T> up_in, up_out, fuse_out, sum_pre, stage_out, score_out;
};

// Every intermediate the backward pass needs.
template <typename T>
struct ForwardTraceT {
    TensorT<T> input;
    std::array<EncoderStageTraceT<T>, 5> enc;
    VhPathTraceT<T> vh_v, vh_h, vh_p;
    TensorT<T> vh_concat;   // Concat combine: input of the reduce conv
    TensorT<T> bottleneck;  // decoder input
    std::array<DecoderStageTraceT<T>, 5> dec;
    TensorT<T> concat_pre;  // concatenated pre-outputs, input of the final conv
};
using ForwardTrace = ForwardTraceT<float>;

// Fresh parameters: He-style fan-in Gaussian weights, zero biases, seeded.
ModelParams build(const NetworkConfig& config, uint64_t seed);

ModelParamsT<double> to_double(const ModelParams& params);

// Just the VH-stage on the deepest encoder feature map.
template <typename T>
TensorT<T> vh_stage(const TensorT<T>& x, const ModelParamsT<T>& params);

template <typename T>
ForwardOutputsT<T> forward(const ModelParamsT<T>& params, const TensorT<T>& x,
                           ForwardTraceT<T>* trace = nullptr);

// Gradients of the parameters given per-head output gradients.
template <typename T>
NamedTensorsT<T> backward(const ModelParamsT<T>& params, const ForwardTraceT<T>& trace,
                          const TensorT<T>& grad_final,
                          const std::array<TensorT<T>, 5>& grad_pre);

// Per-pixel argmax over the class channels; ties resolve to the lower index.
template <typename T>
LabelBatch predict(const TensorT<T>& final_output);

// Model file: text manifest (config + tensor names/shapes), then "data" and
// the raw 32-bit little-endian values in manifest order.
void save_model(const std::string& path, const ModelParams& params);
ModelParams load_model(const std::string& path);

}  // namespace psv
