#include "psv/psv.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <string>

#include "psv/dataset.hpp"
#include "psv/error.hpp"
#include "psv/extract.hpp"
#include "psv/generator.hpp"
#include "psv/geometry.hpp"
#include "psv/gradcheck.hpp"
#include "psv/metrics.hpp"
#include "psv/network.hpp"
#include "psv/training.hpp"

struct psv_model {
    psv::ModelParams params;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
psv_status guarded(F&& body) {
    try {
        body();
        g_last_error.clear();
        return PSV_OK;
    } catch (const psv::NumericError& e) {
        g_last_error = e.what();
        return PSV_ERR_NUMERIC;
    } catch (const psv::ValidationError& e) {
        g_last_error = e.what();
        return PSV_ERR_VALIDATION;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return PSV_ERR_INTERNAL;
    }
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out) std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

psv_status require(bool ok, const char* what) {
    if (ok) return PSV_OK;
    g_last_error = what;
    return PSV_ERR_VALIDATION;
}

psv::NetworkConfig to_config(const psv_net_options& o) {
    psv::NetworkConfig cfg;
    cfg.vh_kernel = o.vh_kernel;
    switch (o.combine) {
        case PSV_COMBINE_SUM: cfg.combine = psv::Combine::Sum; break;
        case PSV_COMBINE_CONCAT: cfg.combine = psv::Combine::Concat; break;
        case PSV_COMBINE_CONVPLUS: cfg.combine = psv::Combine::ConvPlus; break;
        default: throw psv::ValidationError("unknown combine code");
    }
    cfg.vh_enabled = o.vh_enabled != 0;
    cfg.num_classes = o.num_classes;
    for (int i = 0; i < 5; ++i) cfg.encoder_channels[i] = o.encoder_channels[i];
    cfg.input_h = o.input_h;
    cfg.input_w = o.input_w;
    cfg.validate();
    return cfg;
}

std::vector<psv::Sample> load_split_samples(const psv::DatasetIndex& index,
                                            const std::string& split) {
    std::vector<psv::Sample> out;
    for (const auto& name : index.split_names(split)) out.push_back(load_sample(index, name));
    return out;
}

}  // namespace

extern "C" {

const char* psv_version(void) { return "1.0.0"; }

const char* psv_status_name(psv_status status) {
    switch (status) {
        case PSV_OK: return "ok";
        case PSV_ERR_VALIDATION: return "validation error";
        case PSV_ERR_NUMERIC: return "numeric error";
        case PSV_ERR_INTERNAL: return "internal error";
    }
    return "unknown";
}

const char* psv_last_error(void) { return g_last_error.c_str(); }

void psv_string_free(char* s) { std::free(s); }

void psv_net_options_defaults(psv_net_options* opts) {
    if (!opts) return;
    const psv::NetworkConfig cfg;
    opts->vh_kernel = cfg.vh_kernel;
    opts->combine = PSV_COMBINE_SUM;
    opts->vh_enabled = cfg.vh_enabled ? 1 : 0;
    opts->num_classes = cfg.num_classes;
    for (int i = 0; i < 5; ++i) opts->encoder_channels[i] = cfg.encoder_channels[i];
    opts->input_h = cfg.input_h;
    opts->input_w = cfg.input_w;
}

psv_status psv_net_options_from_file(const char* path, psv_net_options* opts) {
    if (auto s = require(path && opts, "psv_net_options_from_file: null argument")) return s;
    return guarded([&] {
        const psv::NetworkConfig cfg = psv::NetworkConfig::load(path);
        opts->vh_kernel = cfg.vh_kernel;
        switch (cfg.combine) {
            case psv::Combine::Sum: opts->combine = PSV_COMBINE_SUM; break;
            case psv::Combine::Concat: opts->combine = PSV_COMBINE_CONCAT; break;
            case psv::Combine::ConvPlus: opts->combine = PSV_COMBINE_CONVPLUS; break;
        }
        opts->vh_enabled = cfg.vh_enabled ? 1 : 0;
        opts->num_classes = cfg.num_classes;
        for (int i = 0; i < 5; ++i) opts->encoder_channels[i] = cfg.encoder_channels[i];
        opts->input_h = cfg.input_h;
        opts->input_w = cfg.input_w;
    });
}

psv_status psv_model_build(const psv_net_options* opts, uint64_t seed, psv_model** out) {
    if (auto s = require(opts && out, "psv_model_build: null argument")) return s;
    return guarded([&] {
        auto model = std::make_unique<psv_model>();
        model->params = psv::build(to_config(*opts), seed);
        *out = model.release();
    });
}

psv_status psv_model_load(const char* path, psv_model** out) {
    if (auto s = require(path && out, "psv_model_load: null argument")) return s;
    return guarded([&] {
        auto model = std::make_unique<psv_model>();
        model->params = psv::load_model(path);
        *out = model.release();
    });
}

psv_status psv_model_save(const psv_model* model, const char* path) {
    if (auto s = require(model && path, "psv_model_save: null argument")) return s;
    return guarded([&] { psv::save_model(path, model->params); });
}

void psv_model_free(psv_model* model) { delete model; }

psv_status psv_model_describe(const psv_model* model, char** out) {
    if (auto s = require(model && out, "psv_model_describe: null argument")) return s;
    return guarded([&] {
        const psv::NetworkConfig& cfg = model->params.config;
        std::string text;
        text += "vh_kernel " + std::to_string(cfg.vh_kernel) + "\n";
        text += "combine " + psv::combine_to_string(cfg.combine) + "\n";
        text += "vh_enabled " + std::to_string(cfg.vh_enabled ? 1 : 0) + "\n";
        text += "num_classes " + std::to_string(cfg.num_classes) + "\n";
        text += "encoder_channels";
        for (int c : cfg.encoder_channels) text += " " + std::to_string(c);
        text += "\n";
        text += "input " + std::to_string(cfg.input_h) + " " + std::to_string(cfg.input_w) + "\n";
        text += "tensors " + std::to_string(model->params.store.names.size()) + "\n";
        text += "values " + std::to_string(model->params.store.total_values()) + "\n";
        *out = dup_string(text);
    });
}

void psv_train_options_defaults(psv_train_options* opts) {
    if (!opts) return;
    const psv::TrainConfig cfg;
    opts->batch_size = cfg.batch_size;
    opts->learning_rate = cfg.learning_rate;
    opts->epochs = cfg.epochs;
    for (int i = 0; i < 5; ++i) opts->lambda[i] = cfg.lambda[i];
    opts->weight_max = cfg.w_max;
    opts->seed = cfg.seed;
    opts->checkpoint_dir = nullptr;
    opts->log_path = nullptr;
}

psv_status psv_train(psv_model* model, const char* dataset_root,
                     const psv_train_options* opts) {
    if (auto s = require(model && dataset_root && opts, "psv_train: null argument")) return s;
    return guarded([&] {
        const psv::DatasetIndex index = psv::load_dataset(dataset_root);
        const std::vector<psv::Sample> train_samples = load_split_samples(index, "train");
        const std::vector<psv::Sample> val_samples = load_split_samples(index, "val");

        psv::TrainConfig cfg;
        cfg.batch_size = opts->batch_size;
        cfg.learning_rate = opts->learning_rate;
        cfg.epochs = opts->epochs;
        for (int i = 0; i < 5; ++i) cfg.lambda[i] = opts->lambda[i];
        cfg.w_max = opts->weight_max;
        cfg.seed = opts->seed;
        if (opts->checkpoint_dir) cfg.checkpoint_dir = opts->checkpoint_dir;
        if (opts->log_path) cfg.log_path = opts->log_path;
        psv::train(model->params, train_samples, val_samples, cfg);
    });
}

psv_status psv_evaluate(const psv_model* model, const char* dataset_root, const char* split,
                        char** report_out) {
    if (auto s = require(model && dataset_root && split && report_out,
                         "psv_evaluate: null argument"))
        return s;
    return guarded([&] {
        const psv::DatasetIndex index = psv::load_dataset(dataset_root);
        const std::vector<psv::Sample> samples = load_split_samples(index, split);
        if (samples.empty())
            throw psv::ValidationError(std::string("split '") + split + "' is empty");
        const psv::ConfusionMatrix cm = psv::evaluate_samples(model->params, samples);
        *report_out = dup_string(psv::format_report(cm, "ours"));
    });
}

psv_status psv_segment(const psv_model* model, const char* image_png, const char* mask_png) {
    if (auto s = require(model && image_png && mask_png, "psv_segment: null argument"))
        return s;
    return guarded([&] {
        const psv::ImageRgb img = psv::read_png_rgb(image_png);
        const psv::Tensor x = psv::images_to_tensor({&img});
        const psv::ForwardOutputs out = psv::forward(model->params, x);
        const psv::LabelBatch pred = psv::predict(out.final);
        psv::LabelMask mask(img.width, img.height);
        std::copy(pred.data.begin(), pred.data.end(), mask.pixels.begin());
        psv::write_png(mask_png, mask);
    });
}

void psv_extract_options_defaults(psv_extract_options* opts) {
    if (!opts) return;
    const psv::ExtractConfig cfg;
    opts->rho_res_px = cfg.rho_res;
    opts->theta_res_deg = cfg.theta_res_deg;
    opts->vote_threshold = cfg.vote_threshold;
    opts->expected_line_len_px = cfg.expected_line_len_px;
    opts->merge_angle_tol_deg = cfg.merge_angle_tol_deg;
    opts->merge_dist_tol_px = cfg.merge_dist_tol_px;
    opts->merge_gap_tol_px = cfg.merge_gap_tol_px;
    opts->perp_tol_deg = cfg.perp_tol_deg;
    opts->entrance_min_m = cfg.entrance_min_m;
    opts->entrance_max_m = cfg.entrance_max_m;
    opts->px_per_m = cfg.px_per_m;
}

psv_status psv_extract(const char* mask_png, const psv_extract_options* opts,
                       const char* records_path, const char* overlay_png) {
    if (auto s = require(mask_png && opts && records_path, "psv_extract: null argument"))
        return s;
    return guarded([&] {
        const psv::LabelMask mask = psv::read_png_gray(mask_png);
        for (uint8_t v : mask.pixels)
            if (v > 5)
                throw psv::ValidationError("mask holds values outside 0..5: " +
                                           std::string(mask_png));
        psv::ExtractConfig cfg;
        cfg.rho_res = opts->rho_res_px;
        cfg.theta_res_deg = opts->theta_res_deg;
        cfg.vote_threshold = opts->vote_threshold;
        cfg.expected_line_len_px = opts->expected_line_len_px;
        cfg.merge_angle_tol_deg = opts->merge_angle_tol_deg;
        cfg.merge_dist_tol_px = opts->merge_dist_tol_px;
        cfg.merge_gap_tol_px = opts->merge_gap_tol_px;
        cfg.perp_tol_deg = opts->perp_tol_deg;
        cfg.entrance_min_m = opts->entrance_min_m;
        cfg.entrance_max_m = opts->entrance_max_m;
        cfg.px_per_m = opts->px_per_m;

        const psv::ExtractionResult result = psv::extract_all(mask, cfg);
        psv::write_records(records_path, result, cfg, mask.width);
        if (overlay_png) psv::write_png(overlay_png, psv::render_overlay(mask, result));
    });
}

psv_status psv_stitch(const char* calib_path, const char* front_png, const char* right_png,
                      const char* back_png, const char* left_png, const char* out_png) {
    if (auto s = require(calib_path && front_png && right_png && back_png && left_png &&
                             out_png,
                         "psv_stitch: null argument"))
        return s;
    return guarded([&] {
        const psv::RigCalibration rig = psv::RigCalibration::load(calib_path);
        const std::array<std::string, 4> paths = {front_png, right_png, back_png, left_png};
        std::array<psv::ImageRgb, 4> views;
        for (int i = 0; i < 4; ++i) {
            const psv::ImageRgb raw = psv::read_png_rgb(paths[i]);
            const psv::ImageRgb undist = psv::undistort_fisheye(raw, rig.cameras[i].intrinsics);
            views[i] = psv::warp_topdown(undist, rig.cameras[i].h, psv::kPsvSize, psv::kPsvSize);
        }
        const auto masks = psv::make_quadrant_masks(psv::kPsvSize, rig.feather_px);
        psv::write_png(out_png, psv::stitch(views, masks));
    });
}

void psv_generate_options_defaults(psv_generate_options* opts) {
    if (!opts) return;
    opts->count = 50;
    opts->canvas_px = 256;
    opts->cm_per_px = 4.0;
    opts->seed = 1;
}

psv_status psv_generate(const char* out_dir, const psv_generate_options* opts) {
    if (auto s = require(out_dir && opts, "psv_generate: null argument")) return s;
    return guarded([&] {
        psv::generate_dataset(out_dir, opts->count, opts->canvas_px, opts->cm_per_px,
                              opts->seed);
    });
}

psv_status psv_grad_check(uint64_t seed, char** report_out) {
    if (auto s = require(report_out != nullptr, "psv_grad_check: null argument")) return s;
    const psv_status st = guarded([&] {
        const psv::GradCheckReport report = psv::run_gradient_suite(seed);
        *report_out = dup_string(report.to_string());
        if (!report.all_pass())
            throw psv::NumericError("gradient checks failed");
    });
    return st;
}

}  // extern "C"
