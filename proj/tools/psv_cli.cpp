// Command-line front end; everything goes through the C API in psv/psv.h.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "psv/psv.h"

namespace {

int exit_code(psv_status status) {
    switch (status) {
        case PSV_OK: return 0;
        case PSV_ERR_NUMERIC: return 2;
        default: return 1;
    }
}

int fail(psv_status status) {
    std::fprintf(stderr, "error (%s): %s\n", psv_status_name(status), psv_last_error());
    return exit_code(status);
}

// Every effective setting of a run lands next to its main output.
void write_manifest(const std::string& out_path,
                    const std::vector<std::pair<std::string, std::string>>& kv) {
    std::ofstream out(out_path + ".manifest");
    if (!out) return;
    for (const auto& [k, v] : kv) out << k << " " << v << "\n";
}

struct NetFlags {
    std::string config_path;
    int vh_kernel = 0;  // 0 = keep config/default
    std::string combine;
    bool no_vh = false;
    std::vector<int> channels;
    int input_h = 0, input_w = 0;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "network config file");
        cmd->add_option("--vh-kernel", vh_kernel, "VH kernel size")
            ->check(CLI::IsMember({3, 5, 7, 9, 11}));
        cmd->add_option("--combine", combine, "VH combine strategy")
            ->check(CLI::IsMember({"sum", "concat", "convplus"}));
        cmd->add_flag("--no-vh", no_vh, "disable the VH-stage");
        cmd->add_option("--channels", channels, "encoder channel widths (5 values)")
            ->expected(5);
        cmd->add_option("--input-h", input_h, "input height (multiple of 32)");
        cmd->add_option("--input-w", input_w, "input width (multiple of 32)");
    }

    psv_status resolve(psv_net_options& opts) const {
        psv_net_options_defaults(&opts);
        if (!config_path.empty()) {
            const psv_status st = psv_net_options_from_file(config_path.c_str(), &opts);
            if (st != PSV_OK) return st;
        }
        if (vh_kernel) opts.vh_kernel = vh_kernel;
        if (combine == "sum") opts.combine = PSV_COMBINE_SUM;
        else if (combine == "concat") opts.combine = PSV_COMBINE_CONCAT;
        else if (combine == "convplus") opts.combine = PSV_COMBINE_CONVPLUS;
        if (no_vh) opts.vh_enabled = 0;
        for (size_t i = 0; i < channels.size() && i < 5; ++i)
            opts.encoder_channels[i] = channels[i];
        if (input_h) opts.input_h = input_h;
        if (input_w) opts.input_w = input_w;
        return PSV_OK;
    }

    std::vector<std::pair<std::string, std::string>> manifest(const psv_net_options& o) const {
        std::string chans;
        for (int i = 0; i < 5; ++i) chans += (i ? " " : "") + std::to_string(o.encoder_channels[i]);
        const char* comb = o.combine == PSV_COMBINE_SUM      ? "sum"
                           : o.combine == PSV_COMBINE_CONCAT ? "concat"
                                                             : "convplus";
        return {{"vh_kernel", std::to_string(o.vh_kernel)},
                {"combine", comb},
                {"vh_enabled", std::to_string(o.vh_enabled)},
                {"encoder_channels", chans},
                {"input", std::to_string(o.input_h) + " " + std::to_string(o.input_w)}};
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"surround-view parking-slot and lane-marking pipeline"};
    app.require_subcommand(1);

    // ---- stitch ----
    auto* stitch = app.add_subcommand("stitch", "undistort, warp and stitch four views");
    std::string calib, front, right, back, left, stitch_out;
    stitch->add_option("--calib", calib, "calibration file")->required();
    stitch->add_option("--front", front)->required();
    stitch->add_option("--right", right)->required();
    stitch->add_option("--back", back)->required();
    stitch->add_option("--left", left)->required();
    stitch->add_option("--out", stitch_out, "output PSV PNG")->required();

    // ---- generate ----
    auto* generate = app.add_subcommand("generate", "synthesize a labeled scene dataset");
    psv_generate_options gen_opts;
    psv_generate_options_defaults(&gen_opts);
    std::string gen_out;
    uint64_t gen_seed = gen_opts.seed;
    generate->add_option("--out", gen_out, "dataset directory")->required();
    generate->add_option("--count", gen_opts.count, "number of scenes");
    generate->add_option("--canvas", gen_opts.canvas_px, "canvas size in px");
    generate->add_option("--cm-per-px", gen_opts.cm_per_px, "metric scale");
    generate->add_option("--seed", gen_seed, "generator seed");

    // ---- train ----
    auto* train = app.add_subcommand("train", "train a model on a dataset");
    NetFlags train_net;
    train_net.attach(train);
    psv_train_options train_opts;
    psv_train_options_defaults(&train_opts);
    std::string train_dataset, train_out, train_checkpoints, train_log;
    uint64_t train_seed = 0;
    train->add_option("--dataset", train_dataset, "dataset root")->required();
    train->add_option("--out", train_out, "output model file")->required();
    train->add_option("--epochs", train_opts.epochs, "training epochs");
    train->add_option("--lr", train_opts.learning_rate, "learning rate");
    train->add_option("--batch", train_opts.batch_size, "batch size");
    train->add_option("--w-max", train_opts.weight_max, "class weight clamp");
    std::vector<double> lambdas;
    train->add_option("--lambda", lambdas, "pre-output loss weights (5 values)")->expected(5);
    train->add_option("--seed", train_seed, "training + init seed");
    train->add_option("--checkpoints", train_checkpoints, "per-epoch checkpoint directory");
    train->add_option("--log", train_log, "training log file");

    // ---- eval ----
    auto* eval = app.add_subcommand("eval", "evaluate a model on a dataset split");
    std::string eval_model, eval_dataset, eval_split = "test";
    eval->add_option("--model", eval_model)->required();
    eval->add_option("--dataset", eval_dataset)->required();
    eval->add_option("--split", eval_split)->check(CLI::IsMember({"train", "val", "test"}));

    // ---- segment ----
    auto* segment = app.add_subcommand("segment", "run the network on one image");
    std::string seg_model, seg_in, seg_out;
    segment->add_option("--model", seg_model)->required();
    segment->add_option("--in", seg_in, "input RGB PNG")->required();
    segment->add_option("--out", seg_out, "output label mask PNG")->required();

    // ---- extract ----
    auto* extract = app.add_subcommand("extract", "slots and lanes from a label mask");
    psv_extract_options ext_opts;
    psv_extract_options_defaults(&ext_opts);
    std::string ext_in, ext_out, ext_overlay;
    extract->add_option("--in", ext_in, "label mask PNG")->required();
    extract->add_option("--out", ext_out, "records file")->required();
    extract->add_option("--overlay", ext_overlay, "overlay PNG");
    extract->add_option("--px-per-m", ext_opts.px_per_m, "pixels per meter");
    extract->add_option("--vote-threshold", ext_opts.vote_threshold, "hough vote threshold");

    // ---- gradcheck ----
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    uint64_t gc_seed = 1;
    gradcheck->add_option("--seed", gc_seed, "random seed");

    CLI11_PARSE(app, argc, argv);

    if (stitch->parsed()) {
        const psv_status st = psv_stitch(calib.c_str(), front.c_str(), right.c_str(),
                                         back.c_str(), left.c_str(), stitch_out.c_str());
        if (st != PSV_OK) return fail(st);
        write_manifest(stitch_out, {{"command", "stitch"}, {"calib", calib}});
        std::printf("wrote %s\n", stitch_out.c_str());
        return 0;
    }

    if (generate->parsed()) {
        gen_opts.seed = gen_seed;
        const psv_status st = psv_generate(gen_out.c_str(), &gen_opts);
        if (st != PSV_OK) return fail(st);
        write_manifest(gen_out + "/dataset",
                       {{"command", "generate"},
                        {"count", std::to_string(gen_opts.count)},
                        {"canvas", std::to_string(gen_opts.canvas_px)},
                        {"cm_per_px", std::to_string(gen_opts.cm_per_px)},
                        {"seed", std::to_string(gen_opts.seed)}});
        std::printf("generated %d scenes under %s\n", gen_opts.count, gen_out.c_str());
        return 0;
    }

    if (train->parsed()) {
        psv_net_options net;
        psv_status st = train_net.resolve(net);
        if (st != PSV_OK) return fail(st);

        psv_model* model = nullptr;
        st = psv_model_build(&net, train_seed, &model);
        if (st != PSV_OK) return fail(st);

        for (size_t i = 0; i < lambdas.size() && i < 5; ++i) train_opts.lambda[i] = lambdas[i];
        train_opts.seed = train_seed;
        if (!train_checkpoints.empty()) train_opts.checkpoint_dir = train_checkpoints.c_str();
        if (!train_log.empty()) train_opts.log_path = train_log.c_str();

        st = psv_train(model, train_dataset.c_str(), &train_opts);
        if (st == PSV_OK) st = psv_model_save(model, train_out.c_str());
        psv_model_free(model);
        if (st != PSV_OK) return fail(st);

        auto kv = train_net.manifest(net);
        kv.insert(kv.begin(), {"command", "train"});
        kv.push_back({"dataset", train_dataset});
        kv.push_back({"epochs", std::to_string(train_opts.epochs)});
        kv.push_back({"lr", std::to_string(train_opts.learning_rate)});
        kv.push_back({"batch", std::to_string(train_opts.batch_size)});
        kv.push_back({"w_max", std::to_string(train_opts.weight_max)});
        kv.push_back({"seed", std::to_string(train_seed)});
        write_manifest(train_out, kv);
        std::printf("trained model written to %s\n", train_out.c_str());
        return 0;
    }

    if (eval->parsed()) {
        psv_model* model = nullptr;
        psv_status st = psv_model_load(eval_model.c_str(), &model);
        if (st != PSV_OK) return fail(st);
        char* report = nullptr;
        st = psv_evaluate(model, eval_dataset.c_str(), eval_split.c_str(), &report);
        psv_model_free(model);
        if (st != PSV_OK) return fail(st);
        std::fputs(report, stdout);
        psv_string_free(report);
        return 0;
    }

    if (segment->parsed()) {
        psv_model* model = nullptr;
        psv_status st = psv_model_load(seg_model.c_str(), &model);
        if (st != PSV_OK) return fail(st);
        st = psv_segment(model, seg_in.c_str(), seg_out.c_str());
        psv_model_free(model);
        if (st != PSV_OK) return fail(st);
        write_manifest(seg_out, {{"command", "segment"}, {"model", seg_model}, {"in", seg_in}});
        std::printf("wrote %s\n", seg_out.c_str());
        return 0;
    }

    if (extract->parsed()) {
        const psv_status st =
            psv_extract(ext_in.c_str(), &ext_opts, ext_out.c_str(),
                        ext_overlay.empty() ? nullptr : ext_overlay.c_str());
        if (st != PSV_OK) return fail(st);
        write_manifest(ext_out, {{"command", "extract"},
                                 {"in", ext_in},
                                 {"px_per_m", std::to_string(ext_opts.px_per_m)}});
        std::printf("wrote %s\n", ext_out.c_str());
        return 0;
    }

    if (gradcheck->parsed()) {
        char* report = nullptr;
        const psv_status st = psv_grad_check(gc_seed, &report);
        if (report) {
            std::fputs(report, stdout);
            psv_string_free(report);
        }
        if (st != PSV_OK) {
            std::fprintf(stderr, "error (%s): %s\n", psv_status_name(st), psv_last_error());
            return exit_code(st);
        }
        return 0;
    }

    return 1;
}
