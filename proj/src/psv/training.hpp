#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "psv/dataset.hpp"
#include "psv/metrics.hpp"
#include "psv/network.hpp"
#include "psv/tensor.hpp"

namespace psv {

// Per-image inverse-proportion category weights. A category covering
// proportion p of the image weighs min(1/p, w_max); absent categories keep
// weight 0 (no pixel carries them anyway).
struct ClassWeights {
    std::array<double, kNumClasses> w{};
    std::array<uint64_t, kNumClasses> pixel_count{};
    uint64_t total_pixels = 0;

    double proportion(int category) const {
        return static_cast<double>(pixel_count[category]) / static_cast<double>(total_pixels);
    }
};

ClassWeights compute_class_weights(const LabelMask& label, double w_max);
ClassWeights compute_class_weights(const LabelBatch& labels, int sample, double w_max);

struct TrainConfig {
    int batch_size = 10;
    double learning_rate = 1e-4;
    int epochs = 50;
    std::array<double, 5> lambda{1.0, 1.0, 1.0, 1.0, 1.0};
    double w_max = 1000.0;
    uint64_t seed = 0;
    std::string checkpoint_dir;  // per-epoch model files when nonempty
    std::string log_path;        // one text line per epoch when nonempty
    // Stop early once training mIoU reaches this value (checked every
    // eval_every epochs); <= 0 disables.
    double target_train_miou = 0.0;
    int eval_every = 10;

    void validate() const;
};

struct LossReport {
    double total = 0.0;
    double final_term = 0.0;
    std::array<double, 5> pre_terms{};
};

// Per-pixel squared-error regression on one-hot targets with the per-image
// class weights, normalized by the pixel count of the batch. Gradient wrt
// pred comes back through grad_out (same shape as pred) when non-null.
template <typename T>
double weighted_sq_loss(const TensorT<T>& pred, const LabelBatch& labels,
                        const std::vector<ClassWeights>& weights, TensorT<T>* grad_out);

template <typename T>
struct HeadGradsT {
    TensorT<T> final;
    std::array<TensorT<T>, 5> pre;
};
using HeadGrads = HeadGradsT<float>;

// Total loss over the final output and the five pre-outputs with the
// lambda blending; per-head gradients carry the lambda factors.
template <typename T>
LossReport total_loss(const ForwardOutputsT<T>& outputs, const LabelBatch& labels,
                      const std::array<double, 5>& lambda, double w_max,
                      HeadGradsT<T>* grads);

// Plain SGD: p <- p - lr * g. Throws NumericError on non-finite gradients.
void sgd_step(NamedTensors& params, const NamedTensors& grads, double lr);

struct EpochLog {
    int epoch = 0;
    LossReport loss;     // mean over batches
    double val_miou = 0; // NaN when there is no validation split
};

struct TrainResult {
    std::vector<EpochLog> log;
    double final_train_miou = 0.0;
    int epochs_run = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Epoch loop with seeded shuffling; samples are (image, label) pairs already
// in memory. val may be empty.
TrainResult train(ModelParams& model, const std::vector<Sample>& train_samples,
                  const std::vector<Sample>& val_samples, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = nullptr);

// Dataset-level confusion of the model over samples.
ConfusionMatrix evaluate_samples(const ModelParams& model, const std::vector<Sample>& samples);

}  // namespace psv
