#include "psv/training.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "psv/error.hpp"
#include "psv/rng.hpp"

namespace psv {

namespace {

ClassWeights weights_from_counts(const std::array<uint64_t, kNumClasses>& counts,
                                 uint64_t total, double w_max) {
    if (w_max <= 0) throw ValidationError("class weights: w_max must be positive");
    ClassWeights cw;
    cw.pixel_count = counts;
    cw.total_pixels = total;
    for (int c = 0; c < kNumClasses; ++c) {
        if (counts[c] == 0) continue;  // absent category contributes nothing
        // w = total/count is the exact inverse of the proportion count/total.
        const double w = static_cast<double>(total) / static_cast<double>(counts[c]);
        cw.w[c] = std::min(w, w_max);
    }
    return cw;
}

}  // namespace

ClassWeights compute_class_weights(const LabelMask& label, double w_max) {
    if (label.pixels.empty()) throw ValidationError("class weights: empty label");
    std::array<uint64_t, kNumClasses> counts{};
    for (uint8_t v : label.pixels) {
        if (v >= kNumClasses) throw ValidationError("class weights: label value out of range");
        ++counts[v];
    }
    return weights_from_counts(counts, label.pixels.size(), w_max);
}

ClassWeights compute_class_weights(const LabelBatch& labels, int sample, double w_max) {
    std::array<uint64_t, kNumClasses> counts{};
    const size_t plane = static_cast<size_t>(labels.h) * labels.w;
    const uint8_t* base = labels.data.data() + static_cast<size_t>(sample) * plane;
    for (size_t i = 0; i < plane; ++i) {
        if (base[i] >= kNumClasses)
            throw ValidationError("class weights: label value out of range");
        ++counts[base[i]];
    }
    return weights_from_counts(counts, plane, w_max);
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw ValidationError("train config: batch_size must be >= 1");
    if (learning_rate < 0) throw ValidationError("train config: negative learning rate");
    if (epochs < 1) throw ValidationError("train config: epochs must be >= 1");
    if (w_max <= 0) throw ValidationError("train config: w_max must be positive");
    for (double l : lambda)
        if (l < 0) throw ValidationError("train config: negative lambda");
}

template <typename T>
double weighted_sq_loss(const TensorT<T>& pred, const LabelBatch& labels,
                        const std::vector<ClassWeights>& weights, TensorT<T>* grad_out) {
    if (pred.c != kNumClasses)
        throw ValidationError("weighted_sq_loss: prediction needs 6 channels, got " +
                              pred.shape_str());
    if (pred.n != labels.n || pred.h != labels.h || pred.w != labels.w)
        throw ValidationError("weighted_sq_loss: prediction/label shape mismatch");
    if (weights.size() != static_cast<size_t>(pred.n))
        throw ValidationError("weighted_sq_loss: one ClassWeights per sample required");

    const size_t plane = static_cast<size_t>(pred.h) * pred.w;
    const double norm = 1.0 / (static_cast<double>(pred.n) * plane);
    if (grad_out) {
        *grad_out = TensorT<T>(pred.n, pred.c, pred.h, pred.w);
    }

    double loss = 0.0;
    for (int in = 0; in < pred.n; ++in) {
        const ClassWeights& cw = weights[in];
        for (int y = 0; y < pred.h; ++y) {
            for (int x = 0; x < pred.w; ++x) {
                const uint8_t lbl = labels.at(in, y, x);
                const double wpx = cw.w[lbl];
                if (wpx == 0.0) continue;
                for (int c = 0; c < kNumClasses; ++c) {
                    const double target = (c == lbl) ? 1.0 : 0.0;
                    const double diff = static_cast<double>(pred.at(in, c, y, x)) - target;
                    loss += wpx * diff * diff;
                    if (grad_out)
                        grad_out->at(in, c, y, x) = static_cast<T>(2.0 * wpx * diff * norm);
                }
            }
        }
    }
    return loss * norm;
}

template <typename T>
LossReport total_loss(const ForwardOutputsT<T>& outputs, const LabelBatch& labels,
                      const std::array<double, 5>& lambda, double w_max,
                      HeadGradsT<T>* grads) {
    std::vector<ClassWeights> weights;
    weights.reserve(labels.n);
    for (int in = 0; in < labels.n; ++in)
        weights.push_back(compute_class_weights(labels, in, w_max));

    LossReport report;
    report.final_term =
        weighted_sq_loss(outputs.final, labels, weights, grads ? &grads->final : nullptr);
    report.total = report.final_term;
    for (int i = 0; i < 5; ++i) {
        TensorT<T>* g = grads ? &grads->pre[i] : nullptr;
        report.pre_terms[i] = weighted_sq_loss(outputs.pre_outputs[i], labels, weights, g);
        report.total += lambda[i] * report.pre_terms[i];
        if (g) {
            // The head gradient carries the lambda factor.
            for (auto& v : g->data) v = static_cast<T>(v * lambda[i]);
        }
    }
    return report;
}

template double weighted_sq_loss<float>(const TensorT<float>&, const LabelBatch&,
                                        const std::vector<ClassWeights>&, TensorT<float>*);
template double weighted_sq_loss<double>(const TensorT<double>&, const LabelBatch&,
                                         const std::vector<ClassWeights>&, TensorT<double>*);
template LossReport total_loss<float>(const ForwardOutputsT<float>&, const LabelBatch&,
                                      const std::array<double, 5>&, double,
                                      HeadGradsT<float>*);
template LossReport total_loss<double>(const ForwardOutputsT<double>&, const LabelBatch&,
                                       const std::array<double, 5>&, double,
                                       HeadGradsT<double>*);

void sgd_step(NamedTensors& params, const NamedTensors& grads, double lr) {
    for (const auto& name : params.names) {
        Tensor& p = params.get(name);
        const Tensor& g = grads.get(name);
        if (!p.same_shape(g))
            throw ValidationError("sgd_step: gradient shape mismatch for '" + name + "'");
        for (size_t i = 0; i < p.size(); ++i) {
            const float gv = g.data[i];
            if (!std::isfinite(gv))
                throw NumericError("sgd_step: non-finite gradient in '" + name + "'");
            p.data[i] -= static_cast<float>(lr * gv);
        }
    }
}

ConfusionMatrix evaluate_samples(const ModelParams& model, const std::vector<Sample>& samples) {
    ConfusionMatrix cm;
    for (const auto& s : samples) {
        const Tensor x = images_to_tensor({&s.image});
        const ForwardOutputs out = forward(model, x);
        const LabelBatch pred = predict(out.final);
        LabelMask pred_mask(s.label.width, s.label.height);
        std::copy(pred.data.begin(), pred.data.end(), pred_mask.pixels.begin());
        accumulate(cm, pred_mask, s.label);
    }
    return cm;
}

TrainResult train(ModelParams& model, const std::vector<Sample>& train_samples,
                  const std::vector<Sample>& val_samples, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
    cfg.validate();
    if (train_samples.empty()) throw ValidationError("train: empty training split");

    std::ofstream log_file;
    if (!cfg.log_path.empty()) {
        log_file.open(cfg.log_path);
        if (!log_file) throw ValidationError("train: cannot write log file " + cfg.log_path);
    }

    Rng rng(cfg.seed);
    std::vector<size_t> order(train_samples.size());
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(order);

        LossReport epoch_loss;
        int batches = 0;
        for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<const ImageRgb*> imgs;
            std::vector<const LabelMask*> lbls;
            for (size_t i = start; i < end; ++i) {
                imgs.push_back(&train_samples[order[i]].image);
                lbls.push_back(&train_samples[order[i]].label);
            }
            const Tensor x = images_to_tensor(imgs);
            const LabelBatch y = labels_to_batch(lbls);

            ForwardTrace trace;
            const ForwardOutputs out = forward(model, x, &trace);
            HeadGrads hg;
            const LossReport report = total_loss(out, y, cfg.lambda, cfg.w_max, &hg);
            const NamedTensors grads = backward(model, trace, hg.final, hg.pre);
            sgd_step(model.store, grads, cfg.learning_rate);

            epoch_loss.total += report.total;
            epoch_loss.final_term += report.final_term;
            for (int i = 0; i < 5; ++i) epoch_loss.pre_terms[i] += report.pre_terms[i];
            ++batches;
        }
        epoch_loss.total /= batches;
        epoch_loss.final_term /= batches;
        for (auto& t : epoch_loss.pre_terms) t /= batches;

        EpochLog entry;
        entry.epoch = epoch;
        entry.loss = epoch_loss;
        entry.val_miou = std::nan("");
        if (!val_samples.empty())
            entry.val_miou = mean_iou(evaluate_samples(model, val_samples));
        result.log.push_back(entry);
        result.epochs_run = epoch;

        if (log_file) {
            log_file << "epoch " << epoch << " total " << epoch_loss.total << " final "
                     << epoch_loss.final_term;
            for (int i = 0; i < 5; ++i)
                log_file << " pre" << (i + 1) << " " << epoch_loss.pre_terms[i];
            log_file << " val_miou " << entry.val_miou << "\n";
            log_file.flush();
        }
        if (!cfg.checkpoint_dir.empty()) {
            std::filesystem::create_directories(cfg.checkpoint_dir);
            save_model(cfg.checkpoint_dir + "/epoch_" + std::to_string(epoch) + ".psvm", model);
        }
        if (on_epoch) on_epoch(entry);

        if (cfg.target_train_miou > 0.0 &&
            (epoch % cfg.eval_every == 0 || epoch == cfg.epochs)) {
            result.final_train_miou = mean_iou(evaluate_samples(model, train_samples));
            if (result.final_train_miou >= cfg.target_train_miou) break;
        }
    }
    if (result.final_train_miou == 0.0)
        result.final_train_miou = mean_iou(evaluate_samples(model, train_samples));
    return result;
}

}  // namespace psv
