#include "psv/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "psv/error.hpp"
#include "psv/rng.hpp"

namespace psv {

Combine combine_from_string(const std::string& s) {
    if (s == "sum") return Combine::Sum;
    if (s == "concat") return Combine::Concat;
    if (s == "convplus" || s == "conv+") return Combine::ConvPlus;
    throw ValidationError("unknown combine strategy '" + s + "' (want sum|concat|convplus)");
}

std::string combine_to_string(Combine c) {
    switch (c) {
        case Combine::Sum: return "sum";
        case Combine::Concat: return "concat";
        case Combine::ConvPlus: return "convplus";
    }
    return "sum";
}

void NetworkConfig::validate() const {
    if (vh_kernel != 3 && vh_kernel != 5 && vh_kernel != 7 && vh_kernel != 9 && vh_kernel != 11)
        throw ValidationError("vh_kernel must be one of 3,5,7,9,11");
    if (num_classes != 6) throw ValidationError("num_classes must be 6");
    for (int c : encoder_channels)
        if (c < 1) throw ValidationError("encoder channels must be positive");
    if (input_h < 32 || input_w < 32 || input_h % 32 != 0 || input_w % 32 != 0)
        throw ValidationError("input dims must be positive multiples of 32");
}

NetworkConfig NetworkConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open network config: " + path);
    NetworkConfig cfg;
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string key;
        if (!(ls >> key)) continue;
        if (key == "vh_kernel") ls >> cfg.vh_kernel;
        else if (key == "combine") {
            std::string v;
            ls >> v;
            cfg.combine = combine_from_string(v);
        } else if (key == "vh_enabled") {
            int v;
            ls >> v;
            cfg.vh_enabled = v != 0;
        } else if (key == "num_classes") ls >> cfg.num_classes;
        else if (key == "encoder_channels") {
            for (auto& c : cfg.encoder_channels) ls >> c;
        } else if (key == "input") ls >> cfg.input_h >> cfg.input_w;
        else throw ValidationError("network config " + path + ": unknown key '" + key + "'");
        if (ls.fail())
            throw ValidationError("network config " + path + ": bad value for '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

void NetworkConfig::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write network config: " + path);
    out << "vh_kernel " << vh_kernel << "\n";
    out << "combine " << combine_to_string(combine) << "\n";
    out << "vh_enabled " << (vh_enabled ? 1 : 0) << "\n";
    out << "num_classes " << num_classes << "\n";
    out << "encoder_channels";
    for (int c : encoder_channels) out << " " << c;
    out << "\n";
    out << "input " << input_h << " " << input_w << "\n";
}

namespace {

// Layer geometry helpers. Encoder stage s and decoder stage d are 0-based.

int enc_in_channels(const NetworkConfig& cfg, int s, int which) {
    if (which == 0) return s == 0 ? 3 : cfg.encoder_channels[s - 1];
    return cfg.encoder_channels[s];
}

ConvSpec enc_spec(const NetworkConfig& cfg, int s, int which) {
    return ConvSpec::same(3, 3, enc_in_channels(cfg, s, which), cfg.encoder_channels[s]);
}

ConvSpec vh_v_spec(const NetworkConfig& cfg) {
    const int c = cfg.encoder_channels[4];
    return ConvSpec::same(cfg.vh_kernel, 1, c, c);
}

ConvSpec vh_h_spec(const NetworkConfig& cfg) {
    const int c = cfg.encoder_channels[4];
    return ConvSpec::same(1, cfg.vh_kernel, c, c);
}

ConvSpec vh_p_spec(const NetworkConfig& cfg) {
    const int c = cfg.encoder_channels[4];
    return ConvSpec::same(3, 3, c, c);
}

ConvSpec vh_reduce_spec(const NetworkConfig& cfg) {
    const int c = cfg.encoder_channels[4];
    return ConvSpec::same(1, 1, 2 * c, c);
}

int dec_in_channels(const NetworkConfig& cfg, int d) {
    return d == 0 ? cfg.encoder_channels[4] : cfg.encoder_channels[5 - d];
}

int dec_out_channels(const NetworkConfig& cfg, int d) {
    return cfg.encoder_channels[4 - d];
}

TconvSpec dec_up_spec(const NetworkConfig& cfg, int d) {
    return TconvSpec::upscale(2, dec_in_channels(cfg, d), dec_out_channels(cfg, d));
}

ConvSpec dec_fuse_spec(const NetworkConfig& cfg, int d) {
    const int c = dec_out_channels(cfg, d);
    return ConvSpec::same(1, 1, c, c);
}

ConvSpec dec_score_spec(const NetworkConfig& cfg, int d) {
    return ConvSpec::same(1, 1, dec_out_channels(cfg, d), cfg.num_classes);
}

// Full-resolution one-step up-sampling factor for decoder stage d.
int dec_upfull_scale(int d) { return 1 << (4 - d); }

TconvSpec dec_upfull_spec(const NetworkConfig& cfg, int d) {
    return TconvSpec::upscale(dec_upfull_scale(d), cfg.num_classes, cfg.num_classes);
}

ConvSpec final_spec(const NetworkConfig& cfg) {
    return ConvSpec::same(1, 1, 5 * cfg.num_classes, cfg.num_classes);
}

void init_conv(NamedTensors& store, const std::string& name, int out_c, int in_c, int kh,
               int kw, Rng& rng, bool transposed) {
    // He fan-in scaling; weight layout is (out,in,kh,kw) for conv and
    // (in,out,kh,kw) for transposed conv.
    const double stddev = std::sqrt(2.0 / (static_cast<double>(in_c) * kh * kw));
    Tensor w = transposed ? Tensor(in_c, out_c, kh, kw) : Tensor(out_c, in_c, kh, kw);
    w.fill_normal(rng, 0.0, stddev);
    store.add(name + ".w", std::move(w));
    store.add(name + ".b", Tensor(out_c, 1, 1, 1));
}

}  // namespace

ModelParams build(const NetworkConfig& config, uint64_t seed) {
    config.validate();
    Rng rng(seed);
    ModelParams model;
    model.config = config;
    NamedTensors& st = model.store;

    for (int s = 0; s < 5; ++s) {
        for (int which = 0; which < 2; ++which) {
            const ConvSpec cs = enc_spec(config, s, which);
            init_conv(st, "enc" + std::to_string(s + 1) + ".conv" + std::to_string(which + 1),
                      cs.out_channels, cs.in_channels, cs.kernel_h, cs.kernel_w, rng, false);
        }
    }

    if (config.vh_enabled) {
        for (int i = 0; i < 5; ++i) {
            const ConvSpec vs = vh_v_spec(config);
            init_conv(st, "vh.v" + std::to_string(i + 1), vs.out_channels, vs.in_channels,
                      vs.kernel_h, vs.kernel_w, rng, false);
        }
        for (int i = 0; i < 5; ++i) {
            const ConvSpec hs = vh_h_spec(config);
            init_conv(st, "vh.h" + std::to_string(i + 1), hs.out_channels, hs.in_channels,
                      hs.kernel_h, hs.kernel_w, rng, false);
        }
        if (config.combine == Combine::ConvPlus) {
            for (int i = 0; i < 5; ++i) {
                const ConvSpec ps = vh_p_spec(config);
                init_conv(st, "vh.p" + std::to_string(i + 1), ps.out_channels, ps.in_channels,
                          ps.kernel_h, ps.kernel_w, rng, false);
            }
        }
        if (config.combine == Combine::Concat) {
            const ConvSpec rs = vh_reduce_spec(config);
            init_conv(st, "vh.reduce", rs.out_channels, rs.in_channels, rs.kernel_h,
                      rs.kernel_w, rng, false);
        }
    }

    for (int d = 0; d < 5; ++d) {
        const std::string p = "dec" + std::to_string(d + 1);
        const TconvSpec us = dec_up_spec(config, d);
        init_conv(st, p + ".up", us.out_channels, us.in_channels, us.kernel_h, us.kernel_w,
                  rng, true);
        const ConvSpec fs = dec_fuse_spec(config, d);
        init_conv(st, p + ".fuse", fs.out_channels, fs.in_channels, 1, 1, rng, false);
        const ConvSpec ss = dec_score_spec(config, d);
        init_conv(st, p + ".score", ss.out_channels, ss.in_channels, 1, 1, rng, false);
        const int scale = dec_upfull_scale(d);
        if (scale > 1) {
            const TconvSpec fs2 = dec_upfull_spec(config, d);
            init_conv(st, p + ".upfull", fs2.out_channels, fs2.in_channels, fs2.kernel_h,
                      fs2.kernel_w, rng, true);
        } else {
            init_conv(st, p + ".upfull", config.num_classes, config.num_classes, 1, 1, rng,
                      false);
        }
    }

    const ConvSpec fin = final_spec(config);
    init_conv(st, "final", fin.out_channels, fin.in_channels, 1, 1, rng, false);
    return model;
}

ModelParamsT<double> to_double(const ModelParams& params) {
    ModelParamsT<double> out;
    out.config = params.config;
    for (const auto& name : params.store.names)
        out.store.add(name, params.store.tensors.at(name).template cast<double>());
    return out;
}

namespace {

// One VH path: five (conv + ReLU) layers with identical specs.
template <typename T>
TensorT<T> run_vh_path(const TensorT<T>& x, const NamedTensorsT<T>& st,
                       const std::string& prefix, const ConvSpec& spec,
                       VhPathTraceT<T>* trace) {
    TensorT<T> cur = x;
    for (int i = 0; i < 5; ++i) {
        const std::string name = prefix + std::to_string(i + 1);
        TensorT<T> pre = conv2d_forward(cur, st.get(name + ".w"), st.get(name + ".b"), spec);
        TensorT<T> post = relu_forward(pre);
        if (trace) {
            trace->in[i] = cur;
            trace->pre[i] = std::move(pre);
        }
        cur = std::move(post);
    }
    if (trace) trace->out = cur;
    return cur;
}

template <typename T>
TensorT<T> vh_combine(const NetworkConfig& cfg, const NamedTensorsT<T>& st, const TensorT<T>& v,
                      const TensorT<T>& h, const TensorT<T>* p, TensorT<T>* concat_trace) {
    switch (cfg.combine) {
        case Combine::Sum:
            return sum_elementwise<T>({&v, &h});
        case Combine::Concat: {
            TensorT<T> cat = concat_channels<T>({&v, &h});
            TensorT<T> out = conv2d_forward(cat, st.get("vh.reduce.w"), st.get("vh.reduce.b"),
                                            vh_reduce_spec(cfg));
            if (concat_trace) *concat_trace = std::move(cat);
            return out;
        }
        case Combine::ConvPlus:
            return sum_elementwise<T>({&v, &h, p});
    }
    throw ValidationError("unreachable combine");
}

// Adds src into grads[name], creating it on first touch.
template <typename T>
void add_into(NamedTensorsT<T>& grads, const std::string& name, const TensorT<T>& src) {
    if (!grads.has(name)) {
        grads.add(name, src);
        return;
    }
    TensorT<T>& dst = grads.get(name);
    for (size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
}

// Reverse of run_vh_path; returns the gradient wrt the path input and
// accumulates parameter gradients.
template <typename T>
TensorT<T> vh_path_backward(const NamedTensorsT<T>& st, const std::string& prefix,
                            const ConvSpec& spec, const VhPathTraceT<T>& tr,
                            TensorT<T> grad_out, NamedTensorsT<T>& grads) {
    for (int i = 4; i >= 0; --i) {
        const std::string name = prefix + std::to_string(i + 1);
        TensorT<T> d_pre = relu_backward(tr.pre[i], grad_out);
        ConvGradsT<T> g = conv2d_backward(tr.in[i], st.get(name + ".w"), spec, d_pre);
        add_into(grads, name + ".w", g.weight);
        add_into(grads, name + ".b", g.bias);
        grad_out = std::move(g.input);
    }
    return grad_out;
}

}  // namespace

template <typename T>
TensorT<T> vh_stage(const TensorT<T>& x, const ModelParamsT<T>& params) {
    const NetworkConfig& cfg = params.config;
    if (!cfg.vh_enabled) throw ValidationError("vh_stage: VH-stage disabled in this config");
    TensorT<T> v = run_vh_path<T>(x, params.store, "vh.v", vh_v_spec(cfg), nullptr);
    TensorT<T> h = run_vh_path<T>(x, params.store, "vh.h", vh_h_spec(cfg), nullptr);
    if (cfg.combine == Combine::ConvPlus) {
        TensorT<T> p = run_vh_path<T>(x, params.store, "vh.p", vh_p_spec(cfg), nullptr);
        return vh_combine<T>(cfg, params.store, v, h, &p, nullptr);
    }
    return vh_combine<T>(cfg, params.store, v, h, nullptr, nullptr);
}

template <typename T>
ForwardOutputsT<T> forward(const ModelParamsT<T>& params, const TensorT<T>& x,
                           ForwardTraceT<T>* trace) {
    const NetworkConfig& cfg = params.config;
    const NamedTensorsT<T>& st = params.store;
    if (x.c != 3)
        throw ValidationError("forward: input must have 3 channels, got " + x.shape_str());
    if (x.n < 1 || x.h < 32 || x.w < 32 || x.h % 32 != 0 || x.w % 32 != 0)
        throw ValidationError("forward: input dims must be positive multiples of 32, got " +
                              x.shape_str());

    ForwardOutputsT<T> out;
    if (trace) trace->input = x;

    // Encoder: five stages of (conv3x3+ReLU)x2 + maxpool2x2.
    TensorT<T> cur = x;
    for (int s = 0; s < 5; ++s) {
        const std::string p = "enc" + std::to_string(s + 1);
        TensorT<T> c1_pre = conv2d_forward(cur, st.get(p + ".conv1.w"), st.get(p + ".conv1.b"),
                                           enc_spec(cfg, s, 0));
        TensorT<T> c1_post = relu_forward(c1_pre);
        TensorT<T> c2_pre = conv2d_forward(c1_post, st.get(p + ".conv2.w"),
                                           st.get(p + ".conv2.b"), enc_spec(cfg, s, 1));
        TensorT<T> c2_post = relu_forward(c2_pre);
        MaxPoolResultT<T> pool = maxpool2x2_forward(c2_post);
        out.encoder_feats.push_back(c2_post);
        if (trace) {
            EncoderStageTraceT<T>& et = trace->enc[s];
            et.in = cur;
            et.c1_pre = std::move(c1_pre);
            et.c1_post = std::move(c1_post);
            et.c2_pre = std::move(c2_pre);
            et.c2_post = std::move(c2_post);
            et.pool = pool;
        }
        cur = std::move(pool.output);
    }

    // VH-stage on the deepest feature map.
    TensorT<T> bottleneck;
    if (cfg.vh_enabled) {
        VhPathTraceT<T>*tv = nullptr, *th = nullptr, *tp = nullptr;
        if (trace) {
            tv = &trace->vh_v;
            th = &trace->vh_h;
            tp = &trace->vh_p;
        }
        TensorT<T> v = run_vh_path<T>(cur, st, "vh.v", vh_v_spec(cfg), tv);
        TensorT<T> h = run_vh_path<T>(cur, st, "vh.h", vh_h_spec(cfg), th);
        if (cfg.combine == Combine::ConvPlus) {
            TensorT<T> p = run_vh_path<T>(cur, st, "vh.p", vh_p_spec(cfg), tp);
            bottleneck = vh_combine<T>(cfg, st, v, h, &p, trace ? &trace->vh_concat : nullptr);
        } else {
            bottleneck =
                vh_combine<T>(cfg, st, v, h, nullptr, trace ? &trace->vh_concat : nullptr);
        }
    } else {
        bottleneck = cur;
    }
    if (trace) trace->bottleneck = bottleneck;

    // Decoder: five 2x steps, each fused with the matching encoder feature,
    // each emitting a one-step full-resolution pre-output.
    cur = bottleneck;
    std::array<TensorT<T>, 5> pre;
    for (int d = 0; d < 5; ++d) {
        const std::string p = "dec" + std::to_string(d + 1);
        TensorT<T> up_out = tconv2d_forward(cur, st.get(p + ".up.w"), st.get(p + ".up.b"),
                                            dec_up_spec(cfg, d));
        const TensorT<T>& enc_feat = out.encoder_feats[4 - d];
        TensorT<T> fuse_out = conv2d_forward(enc_feat, st.get(p + ".fuse.w"),
                                             st.get(p + ".fuse.b"), dec_fuse_spec(cfg, d));
        TensorT<T> sum_pre = sum_elementwise<T>({&up_out, &fuse_out});
        TensorT<T> stage_out = relu_forward(sum_pre);
        TensorT<T> score_out = conv2d_forward(stage_out, st.get(p + ".score.w"),
                                              st.get(p + ".score.b"), dec_score_spec(cfg, d));
        const int scale = dec_upfull_scale(d);
        TensorT<T> pre_out;
        if (scale > 1) {
            pre_out = tconv2d_forward(score_out, st.get(p + ".upfull.w"),
                                      st.get(p + ".upfull.b"), dec_upfull_spec(cfg, d));
        } else {
            pre_out = conv2d_forward(score_out, st.get(p + ".upfull.w"),
                                     st.get(p + ".upfull.b"),
                                     ConvSpec::same(1, 1, cfg.num_classes, cfg.num_classes));
        }
        if (trace) {
            DecoderStageTraceT<T>& dt = trace->dec[d];
            dt.up_in = cur;
            dt.up_out = std::move(up_out);
            dt.fuse_out = std::move(fuse_out);
            dt.sum_pre = std::move(sum_pre);
            dt.stage_out = stage_out;
            dt.score_out = std::move(score_out);
        }
        pre[d] = std::move(pre_out);
        cur = std::move(stage_out);
    }

    TensorT<T> cat = concat_channels<T>({&pre[0], &pre[1], &pre[2], &pre[3], &pre[4]});
    out.final = conv2d_forward(cat, st.get("final.w"), st.get("final.b"), final_spec(cfg));
    if (trace) trace->concat_pre = std::move(cat);
    out.pre_outputs = std::move(pre);
    return out;
}

template <typename T>
NamedTensorsT<T> backward(const ModelParamsT<T>& params, const ForwardTraceT<T>& trace,
                          const TensorT<T>& grad_final,
                          const std::array<TensorT<T>, 5>& grad_pre) {
    const NetworkConfig& cfg = params.config;
    const NamedTensorsT<T>& st = params.store;
    NamedTensorsT<T> grads;

    // Final conv and the concat split.
    ConvGradsT<T> gf =
        conv2d_backward(trace.concat_pre, st.get("final.w"), final_spec(cfg), grad_final);
    add_into(grads, "final.w", gf.weight);
    add_into(grads, "final.b", gf.bias);

    std::array<TensorT<T>, 5> d_pre;
    {
        // Split the concat gradient into the five pre-output chunks and add
        // the per-head loss gradients.
        const TensorT<T>& gcat = gf.input;
        const size_t plane = static_cast<size_t>(gcat.h) * gcat.w;
        for (int d = 0; d < 5; ++d) {
            TensorT<T> chunk(gcat.n, cfg.num_classes, gcat.h, gcat.w);
            for (int in = 0; in < gcat.n; ++in)
                std::copy_n(gcat.data.data() + gcat.index(in, d * cfg.num_classes, 0, 0),
                            static_cast<size_t>(cfg.num_classes) * plane,
                            chunk.data.data() + chunk.index(in, 0, 0, 0));
            if (!grad_pre[d].same_shape(chunk))
                throw ValidationError("backward: pre-output gradient shape mismatch");
            for (size_t i = 0; i < chunk.size(); ++i) chunk.data[i] += grad_pre[d].data[i];
            d_pre[d] = std::move(chunk);
        }
    }

    // Decoder stages in reverse.
    std::array<TensorT<T>, 5> d_enc_feat;  // gradient into encoder pre-pool features
    TensorT<T> d_next_up_in;               // gradient into up_in of the stage being processed
    for (int d = 4; d >= 0; --d) {
        const std::string p = "dec" + std::to_string(d + 1);
        const DecoderStageTraceT<T>& dt = trace.dec[d];
        const int scale = dec_upfull_scale(d);

        // Pre-output branch.
        TensorT<T> d_score;
        if (scale > 1) {
            ConvGradsT<T> g = tconv2d_backward(dt.score_out, st.get(p + ".upfull.w"),
                                               dec_upfull_spec(cfg, d), d_pre[d]);
            add_into(grads, p + ".upfull.w", g.weight);
            add_into(grads, p + ".upfull.b", g.bias);
            d_score = std::move(g.input);
        } else {
            ConvGradsT<T> g = conv2d_backward(
                dt.score_out, st.get(p + ".upfull.w"),
                ConvSpec::same(1, 1, cfg.num_classes, cfg.num_classes), d_pre[d]);
            add_into(grads, p + ".upfull.w", g.weight);
            add_into(grads, p + ".upfull.b", g.bias);
            d_score = std::move(g.input);
        }
        ConvGradsT<T> gs =
            conv2d_backward(dt.stage_out, st.get(p + ".score.w"), dec_score_spec(cfg, d), d_score);
        add_into(grads, p + ".score.w", gs.weight);
        add_into(grads, p + ".score.b", gs.bias);

        TensorT<T> d_stage_out = std::move(gs.input);
        if (d < 4) {
            // The stage output also fed the next stage's transposed conv.
            for (size_t i = 0; i < d_stage_out.size(); ++i)
                d_stage_out.data[i] += d_next_up_in.data[i];
        }

        TensorT<T> d_sum = relu_backward(dt.sum_pre, d_stage_out);

        // Fuse branch into the encoder feature.
        ConvGradsT<T> gfuse = conv2d_backward(trace.enc[4 - d].c2_post, st.get(p + ".fuse.w"),
                                              dec_fuse_spec(cfg, d), d_sum);
        add_into(grads, p + ".fuse.w", gfuse.weight);
        add_into(grads, p + ".fuse.b", gfuse.bias);
        d_enc_feat[4 - d] = std::move(gfuse.input);

        // Up branch into the previous stage (or the bottleneck).
        ConvGradsT<T> gup =
            tconv2d_backward(dt.up_in, st.get(p + ".up.w"), dec_up_spec(cfg, d), d_sum);
        add_into(grads, p + ".up.w", gup.weight);
        add_into(grads, p + ".up.b", gup.bias);
        d_next_up_in = std::move(gup.input);
    }
    TensorT<T> d_bottleneck = std::move(d_next_up_in);

    // VH-stage backward into the deepest pooled feature.
    TensorT<T> d_pool5;
    if (cfg.vh_enabled) {
        TensorT<T> d_v, d_h, d_p;
        if (cfg.combine == Combine::Sum) {
            d_v = d_bottleneck;
            d_h = std::move(d_bottleneck);
        } else if (cfg.combine == Combine::Concat) {
            ConvGradsT<T> g = conv2d_backward(trace.vh_concat, st.get("vh.reduce.w"),
                                              vh_reduce_spec(cfg), d_bottleneck);
            add_into(grads, "vh.reduce.w", g.weight);
            add_into(grads, "vh.reduce.b", g.bias);
            auto split =
                concat_channels_backward<T>({&trace.vh_v.out, &trace.vh_h.out}, g.input);
            d_v = std::move(split[0]);
            d_h = std::move(split[1]);
        } else {
            d_v = d_bottleneck;
            d_h = d_bottleneck;
            d_p = std::move(d_bottleneck);
        }
        TensorT<T> dx_v =
            vh_path_backward(st, "vh.v", vh_v_spec(cfg), trace.vh_v, std::move(d_v), grads);
        TensorT<T> dx_h =
            vh_path_backward(st, "vh.h", vh_h_spec(cfg), trace.vh_h, std::move(d_h), grads);
        d_pool5 = TensorT<T>(dx_v.n, dx_v.c, dx_v.h, dx_v.w);
        for (size_t i = 0; i < d_pool5.size(); ++i)
            d_pool5.data[i] = dx_v.data[i] + dx_h.data[i];
        if (cfg.combine == Combine::ConvPlus) {
            TensorT<T> dx_p =
                vh_path_backward(st, "vh.p", vh_p_spec(cfg), trace.vh_p, std::move(d_p), grads);
            for (size_t i = 0; i < d_pool5.size(); ++i) d_pool5.data[i] += dx_p.data[i];
        }
    } else {
        d_pool5 = std::move(d_bottleneck);
    }

    // Encoder stages in reverse.
    TensorT<T> d_pool_out = std::move(d_pool5);
    for (int s = 4; s >= 0; --s) {
        const std::string p = "enc" + std::to_string(s + 1);
        const EncoderStageTraceT<T>& et = trace.enc[s];

        TensorT<T> d_c2_post = maxpool2x2_backward(et.pool, et.c2_post, d_pool_out);
        // The decoder fuse conv also consumed this feature map.
        for (size_t i = 0; i < d_c2_post.size(); ++i)
            d_c2_post.data[i] += d_enc_feat[s].data[i];

        TensorT<T> d_c2_pre = relu_backward(et.c2_pre, d_c2_post);
        ConvGradsT<T> g2 =
            conv2d_backward(et.c1_post, st.get(p + ".conv2.w"), enc_spec(cfg, s, 1), d_c2_pre);
        add_into(grads, p + ".conv2.w", g2.weight);
        add_into(grads, p + ".conv2.b", g2.bias);

        TensorT<T> d_c1_pre = relu_backward(et.c1_pre, g2.input);
        ConvGradsT<T> g1 =
            conv2d_backward(et.in, st.get(p + ".conv1.w"), enc_spec(cfg, s, 0), d_c1_pre);
        add_into(grads, p + ".conv1.w", g1.weight);
        add_into(grads, p + ".conv1.b", g1.bias);

        d_pool_out = std::move(g1.input);
    }

    // Keep the gradient store aligned with the parameter manifest order.
    NamedTensorsT<T> ordered;
    for (const auto& name : st.names) {
        if (grads.has(name))
            ordered.add(name, std::move(grads.get(name)));
        else
            ordered.add(name, st.get(name).like_zeros());
    }
    return ordered;
}

template <typename T>
LabelBatch predict(const TensorT<T>& final_output) {
    if (final_output.c < 1) throw ValidationError("predict: empty class dimension");
    LabelBatch out(final_output.n, final_output.h, final_output.w);
    for (int in = 0; in < final_output.n; ++in) {
        for (int y = 0; y < final_output.h; ++y) {
            for (int x = 0; x < final_output.w; ++x) {
                int best = 0;
                T best_v = final_output.at(in, 0, y, x);
                for (int c = 1; c < final_output.c; ++c) {
                    const T v = final_output.at(in, c, y, x);
                    if (v > best_v) {  // strict: ties keep the lower class
                        best_v = v;
                        best = c;
                    }
                }
                out.at(in, y, x) = static_cast<uint8_t>(best);
            }
        }
    }
    return out;
}

void save_model(const std::string& path, const ModelParams& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write model file: " + path);
    const NetworkConfig& cfg = params.config;
    out << "psv_model 1\n";
    out << "vh_kernel " << cfg.vh_kernel << "\n";
    out << "combine " << combine_to_string(cfg.combine) << "\n";
    out << "vh_enabled " << (cfg.vh_enabled ? 1 : 0) << "\n";
    out << "num_classes " << cfg.num_classes << "\n";
    out << "encoder_channels";
    for (int c : cfg.encoder_channels) out << " " << c;
    out << "\n";
    out << "input " << cfg.input_h << " " << cfg.input_w << "\n";
    for (const auto& name : params.store.names) {
        const Tensor& t = params.store.tensors.at(name);
        out << "tensor " << name << " " << t.n << " " << t.c << " " << t.h << " " << t.w << "\n";
    }
    out << "data\n";
    for (const auto& name : params.store.names) {
        const Tensor& t = params.store.tensors.at(name);
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
    if (!out) throw ValidationError("short write on model file: " + path);
}

ModelParams load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open model file: " + path);

    std::string line;
    if (!std::getline(in, line) || line.rfind("psv_model 1", 0) != 0)
        throw ValidationError("not a psv model file: " + path);

    ModelParams model;
    NetworkConfig& cfg = model.config;
    struct Entry {
        std::string name;
        int n, c, h, w;
    };
    std::vector<Entry> entries;
    while (std::getline(in, line)) {
        if (line == "data") break;
        std::istringstream ls(line);
        std::string key;
        if (!(ls >> key)) continue;
        if (key == "vh_kernel") ls >> cfg.vh_kernel;
        else if (key == "combine") {
            std::string v;
            ls >> v;
            cfg.combine = combine_from_string(v);
        } else if (key == "vh_enabled") {
            int v;
            ls >> v;
            cfg.vh_enabled = v != 0;
        } else if (key == "num_classes") ls >> cfg.num_classes;
        else if (key == "encoder_channels") {
            for (auto& c : cfg.encoder_channels) ls >> c;
        } else if (key == "input") ls >> cfg.input_h >> cfg.input_w;
        else if (key == "tensor") {
            Entry e;
            if (!(ls >> e.name >> e.n >> e.c >> e.h >> e.w))
                throw ValidationError("model " + path + ": malformed tensor line");
            entries.push_back(e);
        } else {
            throw ValidationError("model " + path + ": unknown manifest key '" + key + "'");
        }
        if (ls.fail())
            throw ValidationError("model " + path + ": bad manifest value for '" + key + "'");
    }
    cfg.validate();

    for (const auto& e : entries) {
        Tensor t(e.n, e.c, e.h, e.w);
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.size() * sizeof(float)));
        if (!in) throw ValidationError("model " + path + ": truncated data for '" + e.name + "'");
        model.store.add(e.name, std::move(t));
    }

    // Shape audit against a freshly built manifest for the same config.
    ModelParams ref = build(cfg, 0);
    if (ref.store.names != model.store.names)
        throw ValidationError("model " + path + ": manifest does not match the configuration");
    for (const auto& name : ref.store.names) {
        if (!ref.store.get(name).same_shape(model.store.get(name)))
            throw ValidationError("model " + path + ": tensor '" + name + "' has wrong shape");
    }
    return model;
}

#define PSV_INSTANTIATE_NETWORK(T)                                                       \
    template TensorT<T> vh_stage<T>(const TensorT<T>&, const ModelParamsT<T>&);          \
    template ForwardOutputsT<T> forward<T>(const ModelParamsT<T>&, const TensorT<T>&,    \
                                           ForwardTraceT<T>*);                           \
    template NamedTensorsT<T> backward<T>(const ModelParamsT<T>&, const ForwardTraceT<T>&, \
                                          const TensorT<T>&,                             \
                                          const std::array<TensorT<T>, 5>&);             \
    template LabelBatch predict<T>(const TensorT<T>&);

PSV_INSTANTIATE_NETWORK(float)
PSV_INSTANTIATE_NETWORK(double)

#undef PSV_INSTANTIATE_NETWORK

}  // namespace psv
