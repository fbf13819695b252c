#include "psv/gradcheck.hpp"

#include <cmath>
#include <sstream>

#include "psv/error.hpp"
#include "psv/network.hpp"
#include "psv/rng.hpp"
#include "psv/training.hpp"

namespace psv {

bool GradCheckReport::all_pass() const {
    for (const auto& e : entries)
        if (!e.pass) return false;
    return !entries.empty();
}

std::string GradCheckReport::to_string() const {
    std::ostringstream os;
    for (const auto& e : entries) {
        os << (e.pass ? "pass" : "FAIL") << "  " << e.name << "  max_rel_err "
           << e.max_rel_err << "  tol " << e.tol << "  (" << e.checked << " values)\n";
    }
    return os.str();
}

double finite_difference_max_rel_err(const std::function<double()>& loss_fn,
                                     std::vector<double>& values,
                                     const std::vector<double>& analytic, double eps,
                                     int max_samples, uint64_t sample_seed,
                                     size_t* checked_out) {
    if (values.size() != analytic.size())
        throw ValidationError("finite_difference: analytic gradient size mismatch");

    std::vector<size_t> indices;
    if (max_samples < 0 || static_cast<size_t>(max_samples) >= values.size()) {
        indices.resize(values.size());
        for (size_t i = 0; i < values.size(); ++i) indices[i] = i;
    } else {
        Rng rng(sample_seed);
        std::vector<size_t> all(values.size());
        for (size_t i = 0; i < all.size(); ++i) all[i] = i;
        rng.shuffle(all);
        indices.assign(all.begin(), all.begin() + max_samples);
    }

    double max_rel = 0.0;
    for (size_t i : indices) {
        const double saved = values[i];
        values[i] = saved + eps;
        const double up = loss_fn();
        values[i] = saved - eps;
        const double down = loss_fn();
        values[i] = saved;
        const double fd = (up - down) / (2.0 * eps);
        const double a = analytic[i];
        const double mag = std::max(std::abs(a), std::abs(fd));
        if (mag < 1e-10) continue;  // both effectively zero
        const double rel = std::abs(a - fd) / std::max(mag, 1e-8);
        if (rel > max_rel) max_rel = rel;
    }
    if (checked_out) *checked_out = indices.size();
    return max_rel;
}

namespace {

constexpr double kLayerTol = 1e-3;
constexpr double kNetworkTol = 1e-2;
constexpr double kEps = 1e-3;

double dot(const TensorD& y, const TensorD& proj) {
    double s = 0.0;
    for (size_t i = 0; i < y.size(); ++i) s += y.data[i] * proj.data[i];
    return s;
}

// Checks one input buffer of an op against the analytic gradient, where the
// scalar objective is sum(op_output * proj).
void check_buffer(GradCheckReport& report, const std::string& name,
                  const std::function<double()>& loss_fn, TensorD& buffer,
                  const TensorD& analytic, double tol) {
    GradCheckEntry e;
    e.name = name;
    e.tol = tol;
    e.max_rel_err = finite_difference_max_rel_err(loss_fn, buffer.data, analytic.data, kEps,
                                                  -1, 0, &e.checked);
    e.pass = e.max_rel_err < tol;
    report.entries.push_back(e);
}

void check_conv(GradCheckReport& report, const std::string& name, Rng& rng, int kh, int kw,
                int in_h, int in_w) {
    const ConvSpec spec = ConvSpec::same(kh, kw, 3, 4);
    TensorD x(2, 3, in_h, in_w);
    x.fill_uniform(rng, -1.0, 1.0);
    TensorD w(4, 3, kh, kw);
    w.fill_normal(rng, 0.0, 0.3);
    TensorD b(4, 1, 1, 1);
    b.fill_uniform(rng, -0.2, 0.2);
    TensorD proj(2, 4, spec.out_h(in_h), spec.out_w(in_w));
    proj.fill_uniform(rng, -1.0, 1.0);

    auto loss = [&]() { return dot(conv2d_forward(x, w, b, spec), proj); };
    const ConvGradsT<double> g = conv2d_backward(x, w, spec, proj);
    check_buffer(report, name + "/input", loss, x, g.input, kLayerTol);
    check_buffer(report, name + "/weight", loss, w, g.weight, kLayerTol);
    check_buffer(report, name + "/bias", loss, b, g.bias, kLayerTol);
}

void check_relu(GradCheckReport& report, Rng& rng) {
    TensorD x(2, 4, 8, 8);
    // Keep every value away from the kink: |x| > 1e-2 >> eps.
    for (auto& v : x.data) {
        const double mag = rng.uniform(0.05, 1.0);
        v = rng.bernoulli(0.5) ? mag : -mag;
    }
    TensorD proj(2, 4, 8, 8);
    proj.fill_uniform(rng, -1.0, 1.0);

    auto loss = [&]() { return dot(relu_forward(x), proj); };
    const TensorD g = relu_backward(x, proj);
    check_buffer(report, "relu/input", loss, x, g, kLayerTol);
}

void check_maxpool(GradCheckReport& report, Rng& rng) {
    TensorD x(2, 3, 8, 8);
    // Separate the four values of every window so no tie or argmax flip can
    // happen within the eps perturbation.
    for (int in = 0; in < x.n; ++in)
        for (int c = 0; c < x.c; ++c)
            for (int oy = 0; oy < 4; ++oy)
                for (int ox = 0; ox < 4; ++ox) {
                    const double base = rng.uniform(-1.0, 1.0);
                    int rank[4] = {0, 1, 2, 3};
                    for (int i = 3; i > 0; --i)
                        std::swap(rank[i], rank[rng.uniform_int(0, i)]);
                    for (int k = 0; k < 4; ++k)
                        x.at(in, c, oy * 2 + k / 2, ox * 2 + k % 2) =
                            base + 0.05 * rank[k];
                }
    TensorD proj(2, 3, 4, 4);
    proj.fill_uniform(rng, -1.0, 1.0);

    auto loss = [&]() { return dot(maxpool2x2_forward(x).output, proj); };
    const MaxPoolResultT<double> fwd = maxpool2x2_forward(x);
    const TensorD g = maxpool2x2_backward(fwd, x, proj);
    check_buffer(report, "maxpool2x2/input", loss, x, g, kLayerTol);
}

void check_tconv(GradCheckReport& report, const std::string& name, Rng& rng, int factor) {
    const TconvSpec spec = TconvSpec::upscale(factor, 3, 2);
    TensorD x(2, 3, 4, 4);
    x.fill_uniform(rng, -1.0, 1.0);
    TensorD w(3, 2, factor, factor);
    w.fill_normal(rng, 0.0, 0.3);
    TensorD b(2, 1, 1, 1);
    b.fill_uniform(rng, -0.2, 0.2);
    TensorD proj(2, 2, 4 * factor, 4 * factor);
    proj.fill_uniform(rng, -1.0, 1.0);

    auto loss = [&]() { return dot(tconv2d_forward(x, w, b, spec), proj); };
    const ConvGradsT<double> g = tconv2d_backward(x, w, spec, proj);
    check_buffer(report, name + "/input", loss, x, g.input, kLayerTol);
    check_buffer(report, name + "/weight", loss, w, g.weight, kLayerTol);
    check_buffer(report, name + "/bias", loss, b, g.bias, kLayerTol);
}

void check_sum_concat(GradCheckReport& report, Rng& rng) {
    TensorD a(2, 3, 6, 6), b(2, 3, 6, 6);
    a.fill_uniform(rng, -1.0, 1.0);
    b.fill_uniform(rng, -1.0, 1.0);

    TensorD proj_sum(2, 3, 6, 6);
    proj_sum.fill_uniform(rng, -1.0, 1.0);
    auto loss_sum = [&]() { return dot(sum_elementwise<double>({&a, &b}), proj_sum); };
    // Backward of the sum is the gradient itself for every operand.
    check_buffer(report, "sum/lhs", loss_sum, a, proj_sum, kLayerTol);
    check_buffer(report, "sum/rhs", loss_sum, b, proj_sum, kLayerTol);

    TensorD proj_cat(2, 6, 6, 6);
    proj_cat.fill_uniform(rng, -1.0, 1.0);
    auto loss_cat = [&]() { return dot(concat_channels<double>({&a, &b}), proj_cat); };
    const auto split = concat_channels_backward<double>({&a, &b}, proj_cat);
    check_buffer(report, "concat/lhs", loss_cat, a, split[0], kLayerTol);
    check_buffer(report, "concat/rhs", loss_cat, b, split[1], kLayerTol);
}

void check_loss(GradCheckReport& report, Rng& rng) {
    TensorD pred(2, 6, 8, 8);
    pred.fill_uniform(rng, -0.5, 1.5);
    LabelBatch labels(2, 8, 8);
    for (auto& v : labels.data) v = static_cast<uint8_t>(rng.uniform_int(0, 5));
    std::vector<ClassWeights> weights;
    for (int i = 0; i < 2; ++i) weights.push_back(compute_class_weights(labels, i, 1000.0));

    auto loss = [&]() { return weighted_sq_loss<double>(pred, labels, weights, nullptr); };
    TensorD grad;
    weighted_sq_loss<double>(pred, labels, weights, &grad);
    check_buffer(report, "weighted_sq_loss/pred", loss, pred, grad, kLayerTol);
}

void check_through_network(GradCheckReport& report, Rng& rng, uint64_t seed) {
    NetworkConfig cfg;
    cfg.vh_kernel = 9;
    cfg.combine = Combine::Sum;
    cfg.encoder_channels = {2, 3, 4, 5, 6};
    cfg.input_h = 32;
    cfg.input_w = 32;
    ModelParamsT<double> model = to_double(build(cfg, seed));

    TensorD x(1, 3, 32, 32);
    x.fill_uniform(rng, 0.0, 1.0);
    LabelBatch labels(1, 32, 32);
    for (auto& v : labels.data) v = static_cast<uint8_t>(rng.uniform_int(0, 5));
    const std::array<double, 5> lambda{1.0, 1.0, 1.0, 1.0, 1.0};

    auto loss = [&]() {
        const ForwardOutputsT<double> out = forward(model, x);
        return total_loss<double>(out, labels, lambda, 1000.0, nullptr).total;
    };

    ForwardTraceT<double> trace;
    const ForwardOutputsT<double> out = forward(model, x, &trace);
    HeadGradsT<double> hg;
    total_loss<double>(out, labels, lambda, 1000.0, &hg);
    const NamedTensorsT<double> grads = backward(model, trace, hg.final, hg.pre);

    // Flatten parameters and analytic gradients, then sample 100 of them.
    std::vector<double*> slots;
    std::vector<double> analytic;
    for (const auto& name : model.store.names) {
        TensorT<double>& p = model.store.get(name);
        const TensorT<double>& g = grads.get(name);
        for (size_t i = 0; i < p.size(); ++i) {
            slots.push_back(&p.data[i]);
            analytic.push_back(g.data[i]);
        }
    }
    std::vector<size_t> order(slots.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    GradCheckEntry e;
    e.name = "loss_through_network";
    e.tol = kNetworkTol;
    e.checked = std::min<size_t>(100, order.size());
    for (size_t s = 0; s < e.checked; ++s) {
        double* slot = slots[order[s]];
        const double saved = *slot;
        *slot = saved + kEps;
        const double up = loss();
        *slot = saved - kEps;
        const double down = loss();
        *slot = saved;
        const double fd = (up - down) / (2.0 * kEps);
        const double a = analytic[order[s]];
        const double mag = std::max(std::abs(a), std::abs(fd));
        if (mag < 1e-10) continue;
        const double rel = std::abs(a - fd) / std::max(mag, 1e-8);
        if (rel > e.max_rel_err) e.max_rel_err = rel;
    }
    e.pass = e.max_rel_err < e.tol;
    report.entries.push_back(e);
}

}  // namespace

GradCheckReport run_gradient_suite(uint64_t seed) {
    Rng rng(seed);
    GradCheckReport report;
    check_conv(report, "conv3x3", rng, 3, 3, 8, 8);
    check_conv(report, "conv9x1", rng, 9, 1, 12, 8);
    check_conv(report, "conv1x9", rng, 1, 9, 8, 12);
    check_relu(report, rng);
    check_maxpool(report, rng);
    check_tconv(report, "upsample2x", rng, 2);
    check_tconv(report, "upsample_to_x4", rng, 4);
    check_sum_concat(report, rng);
    check_loss(report, rng);
    check_through_network(report, rng, seed ^ 0x5eedf00dULL);
    return report;
}

}  // namespace psv
