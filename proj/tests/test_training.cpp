#include <cmath>
#include <cstring>

#include "doctest.h"
#include "psv/error.hpp"
#include "psv/generator.hpp"
#include "psv/gradcheck.hpp"
#include "psv/rng.hpp"
#include "psv/training.hpp"

using namespace psv;

namespace {

LabelMask mask_of(int w, int h, uint8_t fill) { return LabelMask(w, h, fill); }

NetworkConfig micro_config() {
    NetworkConfig cfg;
    cfg.encoder_channels = {2, 2, 3, 3, 4};
    cfg.input_h = 32;
    cfg.input_w = 32;
    return cfg;
}

Sample random_sample(int size, uint64_t seed) {
    Rng rng(seed);
    Sample s;
    s.image = ImageRgb(size, size);
    for (auto& v : s.image.pixels) v = static_cast<uint8_t>(rng.uniform_int(0, 255));
    s.label = LabelMask(size, size);
    for (auto& v : s.label.pixels) v = static_cast<uint8_t>(rng.uniform_int(0, 5));
    return s;
}

}  // namespace

TEST_CASE("class weights invert proportions") {
    // All background: proportion 1 -> weight 1.
    const ClassWeights all_bg = compute_class_weights(mask_of(16, 16, 0), 1000.0);
    CHECK(all_bg.w[0] == 1.0);
    for (int c = 1; c < 6; ++c) CHECK(all_bg.w[c] == 0.0);

    // Two categories at 50/50 -> both weigh 2.
    LabelMask half(16, 16, 0);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 16; ++x) half.at(x, y) = 2;
    const ClassWeights fifty = compute_class_weights(half, 1000.0);
    CHECK(fifty.w[0] == 2.0);
    CHECK(fifty.w[2] == 2.0);

    // A category at 2.49% of pixels weighs ~40.16 below the clamp.
    LabelMask sparse(100, 100, 0);
    for (int i = 0; i < 249; ++i) sparse.pixels[i] = 1;
    const ClassWeights cw = compute_class_weights(sparse, 1000.0);
    CHECK(cw.w[1] == doctest::Approx(40.1606425).epsilon(1e-6));
    CHECK(cw.w[1] == 10000.0 / 249.0);

    // The clamp caps a one-pixel category.
    LabelMask lone(100, 100, 0);
    lone.pixels[0] = 3;
    const ClassWeights clamped = compute_class_weights(lone, 1000.0);
    CHECK(clamped.w[3] == 1000.0);
}

TEST_CASE("weight inversion is the exact rational inverse below the clamp") {
    Rng rng(101);
    for (int trial = 0; trial < 50; ++trial) {
        LabelMask mask(32, 32);
        for (auto& v : mask.pixels) v = static_cast<uint8_t>(rng.uniform_int(0, 5));
        const ClassWeights cw = compute_class_weights(mask, 1e9);
        for (int c = 0; c < 6; ++c) {
            if (cw.pixel_count[c] == 0) {
                CHECK(cw.w[c] == 0.0);
                continue;
            }
            // Definition check: w is the correctly rounded total/count, the
            // rational inverse of proportion count/total.
            CHECK(cw.w[c] ==
                  static_cast<double>(cw.total_pixels) / static_cast<double>(cw.pixel_count[c]));
            CHECK(std::abs(cw.w[c] * cw.proportion(c) - 1.0) <= std::ldexp(1.0, -50));
        }
    }
}

TEST_CASE("weighted squared loss on exact predictions is zero") {
    LabelBatch labels(1, 4, 4);
    Rng rng(3);
    for (auto& v : labels.data) v = static_cast<uint8_t>(rng.uniform_int(0, 5));
    Tensor pred(1, 6, 4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) pred.at(0, labels.at(0, y, x), y, x) = 1.f;

    const std::vector<ClassWeights> weights = {compute_class_weights(labels, 0, 1000.0)};
    Tensor grad;
    const double loss = weighted_sq_loss<float>(pred, labels, weights, &grad);
    CHECK(loss == 0.0);
    for (float g : grad.data) CHECK(g == 0.f);
}

TEST_CASE("a single swapped pixel costs exactly 2") {
    LabelBatch labels(1, 1, 1);
    labels.at(0, 0, 0) = 1;
    Tensor pred(1, 6, 1, 1);
    pred.at(0, 0, 0, 0) = 1.f;  // predicts class 0, truth is class 1

    const std::vector<ClassWeights> weights = {compute_class_weights(labels, 0, 1000.0)};
    const double loss = weighted_sq_loss<float>(pred, labels, weights, nullptr);
    CHECK(loss == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("loss gradient matches finite differences") {
    Rng rng(7);
    TensorD pred(2, 6, 6, 6);
    pred.fill_uniform(rng, -0.5, 1.5);
    LabelBatch labels(2, 6, 6);
    for (auto& v : labels.data) v = static_cast<uint8_t>(rng.uniform_int(0, 5));
    std::vector<ClassWeights> weights;
    for (int i = 0; i < 2; ++i) weights.push_back(compute_class_weights(labels, i, 1000.0));

    auto loss = [&] { return weighted_sq_loss<double>(pred, labels, weights, nullptr); };
    TensorD grad;
    weighted_sq_loss<double>(pred, labels, weights, &grad);
    CHECK(finite_difference_max_rel_err(loss, pred.data, grad.data, 1e-3, -1, 0) < 1e-3);
}

TEST_CASE("scaling the weights scales loss and gradient linearly") {
    Rng rng(8);
    TensorD pred(1, 6, 5, 5);
    pred.fill_uniform(rng, -1, 1);
    LabelBatch labels(1, 5, 5);
    for (auto& v : labels.data) v = static_cast<uint8_t>(rng.uniform_int(0, 5));
    std::vector<ClassWeights> weights = {compute_class_weights(labels, 0, 1000.0)};

    TensorD g1;
    const double l1 = weighted_sq_loss<double>(pred, labels, weights, &g1);

    const double kappa = 3.7;
    std::vector<ClassWeights> scaled = weights;
    for (auto& w : scaled[0].w) w *= kappa;
    TensorD g2;
    const double l2 = weighted_sq_loss<double>(pred, labels, scaled, &g2);

    CHECK(l2 == doctest::Approx(kappa * l1).epsilon(1e-6));
    for (size_t i = 0; i < g1.size(); ++i)
        CHECK(g2.data[i] == doctest::Approx(kappa * g1.data[i]).epsilon(1e-6));
}

TEST_CASE("total loss composes the six heads per the lambda weights") {
    Rng rng(9);
    ForwardOutputs outputs;
    outputs.final = Tensor(2, 6, 8, 8);
    outputs.final.fill_uniform(rng, -1, 1);
    for (auto& pre : outputs.pre_outputs) {
        pre = Tensor(2, 6, 8, 8);
        pre.fill_uniform(rng, -1, 1);
    }
    LabelBatch labels(2, 8, 8);
    for (auto& v : labels.data) v = static_cast<uint8_t>(rng.uniform_int(0, 5));

    // All lambdas zero: total is the final term alone.
    const LossReport rz = total_loss<float>(outputs, labels, {0, 0, 0, 0, 0}, 1000.0, nullptr);
    CHECK(rz.total == doctest::Approx(rz.final_term).epsilon(1e-12));

    // Identical heads with unit lambdas: total is six times one head.
    ForwardOutputs same;
    same.final = outputs.final;
    for (auto& pre : same.pre_outputs) pre = outputs.final;
    const LossReport rs = total_loss<float>(same, labels, {1, 1, 1, 1, 1}, 1000.0, nullptr);
    CHECK(rs.total == doctest::Approx(6.0 * rs.final_term).epsilon(1e-9));

    // Random lambdas: recomposition from independently computed terms.
    const std::array<double, 5> lambda{0.3, 1.7, 0.0, 2.2, 1.0};
    const LossReport r = total_loss<float>(outputs, labels, lambda, 1000.0, nullptr);
    std::vector<ClassWeights> weights;
    for (int i = 0; i < 2; ++i) weights.push_back(compute_class_weights(labels, i, 1000.0));
    double expect = weighted_sq_loss<float>(outputs.final, labels, weights, nullptr);
    for (int i = 0; i < 5; ++i)
        expect += lambda[i] * weighted_sq_loss<float>(outputs.pre_outputs[i], labels, weights,
                                                      nullptr);
    CHECK(r.total == doctest::Approx(expect).epsilon(1e-6));
    CHECK(r.total ==
          doctest::Approx(r.final_term + lambda[0] * r.pre_terms[0] + lambda[1] * r.pre_terms[1] +
                          lambda[2] * r.pre_terms[2] + lambda[3] * r.pre_terms[3] +
                          lambda[4] * r.pre_terms[4])
              .epsilon(1e-9));
}

TEST_CASE("sgd applies plain updates and rejects NaN") {
    NamedTensors params;
    Tensor p(1, 1, 1, 1);
    p.data[0] = 1.f;
    params.add("p", p);

    NamedTensors zero_g;
    zero_g.add("p", Tensor(1, 1, 1, 1));
    sgd_step(params, zero_g, 0.5);
    CHECK(params.get("p").data[0] == 1.f);

    NamedTensors g;
    Tensor gv(1, 1, 1, 1);
    gv.data[0] = 2.f;
    g.add("p", gv);
    sgd_step(params, g, 0.1);
    CHECK(params.get("p").data[0] == doctest::Approx(0.8f));

    NamedTensors bad;
    Tensor nanv(1, 1, 1, 1);
    nanv.data[0] = std::nanf("");
    bad.add("p", nanv);
    CHECK_THROWS_AS(sgd_step(params, bad, 0.1), NumericError);
}

TEST_CASE("loss decreases when overfitting one sample") {
    ModelParams model = build(micro_config(), 33);
    Rng srng(34);
    const SceneSpec spec = random_scene_spec(32, 32.0, srng);
    const Sample s = generate_scene(spec, srng);

    TrainConfig cfg;
    cfg.batch_size = 1;
    cfg.learning_rate = 0.005;
    cfg.epochs = 20;
    cfg.seed = 35;
    const TrainResult result = train(model, {s}, {}, cfg);

    REQUIRE(result.log.size() == 20);
    const double first = result.log.front().loss.total;
    const double last = result.log.back().loss.total;
    CHECK(last < first);
    // Decreasing trend after warmup: every 5-epoch average improves.
    double prev = 1e18;
    for (size_t i = 0; i + 5 <= result.log.size(); i += 5) {
        double avg = 0;
        for (size_t j = i; j < i + 5; ++j) avg += result.log[j].loss.total;
        avg /= 5;
        CHECK(avg < prev);
        prev = avg;
    }
}

TEST_CASE("training is deterministic and lr 0 is a no-op") {
    const Sample a = random_sample(32, 40);
    const Sample b = random_sample(32, 41);

    TrainConfig cfg;
    cfg.batch_size = 2;
    cfg.learning_rate = 0.01;
    cfg.epochs = 3;
    cfg.seed = 42;

    ModelParams m1 = build(micro_config(), 50);
    ModelParams m2 = build(micro_config(), 50);
    const TrainResult r1 = train(m1, {a, b}, {}, cfg);
    const TrainResult r2 = train(m2, {a, b}, {}, cfg);
    REQUIRE(r1.log.size() == r2.log.size());
    for (size_t i = 0; i < r1.log.size(); ++i)
        CHECK(r1.log[i].loss.total == r2.log[i].loss.total);
    for (const auto& name : m1.store.names)
        CHECK(std::memcmp(m1.store.get(name).data.data(), m2.store.get(name).data.data(),
                          m1.store.get(name).size() * sizeof(float)) == 0);

    ModelParams frozen = build(micro_config(), 60);
    const ModelParams reference = build(micro_config(), 60);
    cfg.learning_rate = 0.0;
    train(frozen, {a}, {}, cfg);
    for (const auto& name : frozen.store.names)
        CHECK(std::memcmp(frozen.store.get(name).data.data(),
                          reference.store.get(name).data.data(),
                          frozen.store.get(name).size() * sizeof(float)) == 0);
}

TEST_CASE("train rejects an empty dataset") {
    ModelParams model = build(micro_config(), 1);
    TrainConfig cfg;
    CHECK_THROWS_AS(train(model, {}, {}, cfg), ValidationError);
}
