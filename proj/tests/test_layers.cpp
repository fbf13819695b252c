#include <cmath>
#include <cstring>

#include "doctest.h"
#include "psv/error.hpp"
#include "psv/gradcheck.hpp"
#include "psv/layers.hpp"
#include "psv/rng.hpp"

using namespace psv;

namespace {

double projection_loss(const TensorD& y, const TensorD& proj) {
    double s = 0;
    for (size_t i = 0; i < y.size(); ++i) s += y.data[i] * proj.data[i];
    return s;
}

}  // namespace

TEST_CASE("1x1 conv with identity weights is the identity map") {
    Rng rng(1);
    Tensor x(2, 3, 5, 7);
    x.fill_uniform(rng, -2.f, 2.f);
    Tensor w(3, 3, 1, 1);
    for (int oc = 0; oc < 3; ++oc) w.at(oc, oc, 0, 0) = 1.f;
    Tensor b(3, 1, 1, 1);

    const Tensor y = conv2d_forward(x, w, b, ConvSpec::same(1, 1, 3, 3));
    REQUIRE(y.same_shape(x));
    for (size_t i = 0; i < x.size(); ++i) CHECK(y.data[i] == x.data[i]);
}

TEST_CASE("3x3 all-ones kernel turns an impulse into a 3x3 block") {
    Tensor x(1, 1, 5, 5);
    x.at(0, 0, 2, 2) = 1.f;
    Tensor w(1, 1, 3, 3);
    w.fill(1.f);
    Tensor b(1, 1, 1, 1);

    const Tensor y = conv2d_forward(x, w, b, ConvSpec::same(3, 3, 1, 1));
    for (int iy = 0; iy < 5; ++iy)
        for (int ix = 0; ix < 5; ++ix) {
            const float want = (std::abs(iy - 2) <= 1 && std::abs(ix - 2) <= 1) ? 1.f : 0.f;
            CHECK(y.at(0, 0, iy, ix) == want);
        }
}

TEST_CASE("conv rejects mismatched shapes") {
    Tensor x(1, 2, 4, 4), w(3, 3, 3, 3), b(3, 1, 1, 1);
    CHECK_THROWS_AS(conv2d_forward(x, w, b, ConvSpec::same(3, 3, 3, 3)), ValidationError);
}

TEST_CASE("9x1 conv gradients match finite differences") {
    Rng rng(21);
    const ConvSpec spec = ConvSpec::same(9, 1, 3, 4);
    TensorD x(2, 3, 8, 8);
    x.fill_uniform(rng, -1, 1);
    TensorD w(4, 3, 9, 1);
    w.fill_normal(rng, 0, 0.3);
    TensorD b(4, 1, 1, 1);
    b.fill_uniform(rng, -0.2, 0.2);
    TensorD proj(2, 4, 8, 8);
    proj.fill_uniform(rng, -1, 1);

    auto loss = [&] { return projection_loss(conv2d_forward(x, w, b, spec), proj); };
    const ConvGradsT<double> g = conv2d_backward(x, w, spec, proj);

    CHECK(finite_difference_max_rel_err(loss, x.data, g.input.data, 1e-3, -1, 0) < 1e-3);
    CHECK(finite_difference_max_rel_err(loss, w.data, g.weight.data, 1e-3, -1, 0) < 1e-3);
    CHECK(finite_difference_max_rel_err(loss, b.data, g.bias.data, 1e-3, -1, 0) < 1e-3);
}

TEST_CASE("relu basics and gradient flow") {
    Tensor x(1, 1, 2, 2);
    x.data = {-1.f, -0.5f, -2.f, -0.1f};
    const Tensor y = relu_forward(x);
    for (float v : y.data) CHECK(v == 0.f);

    Tensor pos(1, 1, 2, 2);
    pos.data = {1.f, 0.5f, 2.f, 0.1f};
    const Tensor y2 = relu_forward(pos);
    for (size_t i = 0; i < pos.size(); ++i) CHECK(y2.data[i] == pos.data[i]);

    Tensor grad(1, 1, 2, 2);
    grad.data = {3.f, -4.f, 5.f, -6.f};
    const Tensor gpos = relu_backward(pos, grad);
    for (size_t i = 0; i < grad.size(); ++i) CHECK(gpos.data[i] == grad.data[i]);
    const Tensor gneg = relu_backward(x, grad);
    for (float v : gneg.data) CHECK(v == 0.f);
}

TEST_CASE("maxpool handles constants, tiles, and parity errors") {
    Tensor c(1, 2, 4, 4);
    c.fill(3.5f);
    const MaxPoolResult rc = maxpool2x2_forward(c);
    for (float v : rc.output.data) CHECK(v == 3.5f);

    Tensor tiles(1, 1, 4, 4);
    for (int y = 0; y < 4; y += 2)
        for (int x = 0; x < 4; x += 2) {
            tiles.at(0, 0, y, x) = 1;
            tiles.at(0, 0, y, x + 1) = 2;
            tiles.at(0, 0, y + 1, x) = 3;
            tiles.at(0, 0, y + 1, x + 1) = 4;
        }
    const MaxPoolResult rt = maxpool2x2_forward(tiles);
    for (float v : rt.output.data) CHECK(v == 4.f);

    Tensor odd(1, 1, 5, 4);
    CHECK_THROWS_AS(maxpool2x2_forward(odd), ValidationError);
}

TEST_CASE("maxpool gradients match finite differences away from ties") {
    Rng rng(31);
    TensorD x(2, 3, 8, 8);
    for (int in = 0; in < 2; ++in)
        for (int c = 0; c < 3; ++c)
            for (int oy = 0; oy < 4; ++oy)
                for (int ox = 0; ox < 4; ++ox) {
                    const double base = rng.uniform(-1, 1);
                    for (int k = 0; k < 4; ++k)
                        x.at(in, c, oy * 2 + k / 2, ox * 2 + k % 2) = base + 0.1 * k;
                }
    TensorD proj(2, 3, 4, 4);
    proj.fill_uniform(rng, -1, 1);

    auto loss = [&] { return projection_loss(maxpool2x2_forward(x).output, proj); };
    const auto fwd = maxpool2x2_forward(x);
    const TensorD g = maxpool2x2_backward(fwd, x, proj);
    CHECK(finite_difference_max_rel_err(loss, x.data, g.data, 1e-3, -1, 0) < 1e-3);
}

TEST_CASE("transposed conv with a duplication kernel doubles every pixel") {
    Rng rng(4);
    Tensor x(1, 2, 3, 3);
    x.fill_uniform(rng, -1, 1);
    Tensor w(2, 2, 2, 2);
    for (int c = 0; c < 2; ++c)
        for (int kh = 0; kh < 2; ++kh)
            for (int kw = 0; kw < 2; ++kw) w.at(c, c, kh, kw) = 1.f;
    Tensor b(2, 1, 1, 1);

    const Tensor y = tconv2d_forward(x, w, b, TconvSpec::upscale(2, 2, 2));
    REQUIRE(y.h == 6);
    REQUIRE(y.w == 6);
    for (int c = 0; c < 2; ++c)
        for (int iy = 0; iy < 6; ++iy)
            for (int ix = 0; ix < 6; ++ix)
                CHECK(y.at(0, c, iy, ix) == x.at(0, c, iy / 2, ix / 2));

    // 2x2 average pooling of the duplicated output reproduces the input.
    for (int c = 0; c < 2; ++c)
        for (int iy = 0; iy < 3; ++iy)
            for (int ix = 0; ix < 3; ++ix) {
                const float avg = (y.at(0, c, 2 * iy, 2 * ix) + y.at(0, c, 2 * iy, 2 * ix + 1) +
                                   y.at(0, c, 2 * iy + 1, 2 * ix) +
                                   y.at(0, c, 2 * iy + 1, 2 * ix + 1)) /
                                  4.f;
                CHECK(avg == doctest::Approx(x.at(0, c, iy, ix)).epsilon(1e-6));
            }
}

TEST_CASE("transposed conv gradients match finite differences") {
    Rng rng(41);
    for (int factor : {2, 4}) {
        const TconvSpec spec = TconvSpec::upscale(factor, 3, 2);
        TensorD x(2, 3, 4, 4);
        x.fill_uniform(rng, -1, 1);
        TensorD w(3, 2, factor, factor);
        w.fill_normal(rng, 0, 0.3);
        TensorD b(2, 1, 1, 1);
        b.fill_uniform(rng, -0.2, 0.2);
        TensorD proj(2, 2, 4 * factor, 4 * factor);
        proj.fill_uniform(rng, -1, 1);

        auto loss = [&] { return projection_loss(tconv2d_forward(x, w, b, spec), proj); };
        const ConvGradsT<double> g = tconv2d_backward(x, w, spec, proj);
        CHECK(finite_difference_max_rel_err(loss, x.data, g.input.data, 1e-3, -1, 0) < 1e-3);
        CHECK(finite_difference_max_rel_err(loss, w.data, g.weight.data, 1e-3, -1, 0) < 1e-3);
        CHECK(finite_difference_max_rel_err(loss, b.data, g.bias.data, 1e-3, -1, 0) < 1e-3);
    }
}

TEST_CASE("upsample_to accepts power-of-two scales only") {
    CHECK(upsample_to_scale(8, 8, 32, 32) == 4);
    CHECK(upsample_to_scale(8, 8, 8, 8) == 1);
    CHECK_THROWS_AS(upsample_to_scale(8, 8, 20, 20), ValidationError);  // 2.5x
    CHECK_THROWS_AS(upsample_to_scale(8, 8, 24, 24), ValidationError);  // 3x
    CHECK_THROWS_AS(upsample_to_scale(8, 8, 16, 32), ValidationError);  // anisotropic
}

TEST_CASE("sum and concat behave and round trip") {
    Rng rng(6);
    Tensor a(2, 3, 4, 4), zero(2, 3, 4, 4), b(2, 2, 4, 4);
    a.fill_uniform(rng, -1, 1);
    b.fill_uniform(rng, -1, 1);

    const Tensor s = sum_elementwise<float>({&a, &zero});
    for (size_t i = 0; i < a.size(); ++i) CHECK(s.data[i] == a.data[i]);

    const Tensor cat = concat_channels<float>({&a, &b});
    REQUIRE(cat.c == 5);
    // Slicing the concat recovers the operands exactly.
    for (int in = 0; in < 2; ++in)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) {
                for (int c = 0; c < 3; ++c) CHECK(cat.at(in, c, y, x) == a.at(in, c, y, x));
                for (int c = 0; c < 2; ++c) CHECK(cat.at(in, 3 + c, y, x) == b.at(in, c, y, x));
            }

    Tensor mismatched(2, 3, 5, 4);
    CHECK_THROWS_AS(sum_elementwise<float>({&a, &mismatched}), ValidationError);
}

TEST_CASE("sum and concat gradients match finite differences") {
    Rng rng(61);
    TensorD a(1, 2, 4, 4), b(1, 2, 4, 4);
    a.fill_uniform(rng, -1, 1);
    b.fill_uniform(rng, -1, 1);

    TensorD proj_sum(1, 2, 4, 4);
    proj_sum.fill_uniform(rng, -1, 1);
    auto loss_sum = [&] { return projection_loss(sum_elementwise<double>({&a, &b}), proj_sum); };
    CHECK(finite_difference_max_rel_err(loss_sum, a.data, proj_sum.data, 1e-3, -1, 0) < 1e-3);

    TensorD proj_cat(1, 4, 4, 4);
    proj_cat.fill_uniform(rng, -1, 1);
    auto loss_cat = [&] { return projection_loss(concat_channels<double>({&a, &b}), proj_cat); };
    const auto split = concat_channels_backward<double>({&a, &b}, proj_cat);
    CHECK(finite_difference_max_rel_err(loss_cat, a.data, split[0].data, 1e-3, -1, 0) < 1e-3);
    CHECK(finite_difference_max_rel_err(loss_cat, b.data, split[1].data, 1e-3, -1, 0) < 1e-3);
}

TEST_CASE("same padding preserves spatial dims for every VH kernel shape") {
    Rng rng(8);
    Tensor x(1, 2, 13, 11);
    x.fill_uniform(rng, -1, 1);
    std::vector<std::pair<int, int>> shapes = {{3, 3}};
    for (int k : {3, 5, 7, 9, 11}) {
        shapes.push_back({k, 1});
        shapes.push_back({1, k});
    }
    for (const auto& [kh, kw] : shapes) {
        Tensor w(2, 2, kh, kw);
        w.fill_normal(rng, 0, 0.2f);
        Tensor b(2, 1, 1, 1);
        const Tensor y = conv2d_forward(x, w, b, ConvSpec::same(kh, kw, 2, 2));
        CHECK(y.h == x.h);
        CHECK(y.w == x.w);
    }
}

TEST_CASE("conv is linear for bias-free kernels") {
    Rng rng(9);
    const ConvSpec spec = ConvSpec::same(3, 3, 2, 3);
    Tensor x(1, 2, 8, 8), y(1, 2, 8, 8), w(3, 2, 3, 3), b(3, 1, 1, 1);
    x.fill_uniform(rng, -1, 1);
    y.fill_uniform(rng, -1, 1);
    w.fill_normal(rng, 0, 0.3f);
    const float alpha = 0.7f, beta = -1.3f;

    Tensor mix(1, 2, 8, 8);
    for (size_t i = 0; i < mix.size(); ++i) mix.data[i] = alpha * x.data[i] + beta * y.data[i];

    const Tensor lhs = conv2d_forward(mix, w, b, spec);
    const Tensor cx = conv2d_forward(x, w, b, spec);
    const Tensor cy = conv2d_forward(y, w, b, spec);
    for (size_t i = 0; i < lhs.size(); ++i) {
        const double rhs = alpha * double(cx.data[i]) + beta * double(cy.data[i]);
        CHECK(std::abs(lhs.data[i] - rhs) < 1e-5 * std::max(1.0, std::abs(rhs)));
    }
}

TEST_CASE("seeded forward passes are bit-identical") {
    Rng rng_a(123), rng_b(123);
    Tensor xa(2, 3, 16, 16), xb(2, 3, 16, 16);
    xa.fill_uniform(rng_a, -1, 1);
    xb.fill_uniform(rng_b, -1, 1);
    CHECK(std::memcmp(xa.data.data(), xb.data.data(), xa.size() * sizeof(float)) == 0);

    Tensor w(4, 3, 3, 3), b(4, 1, 1, 1);
    w.fill_normal(rng_a, 0, 0.3f);
    const Tensor y1 = conv2d_forward(xa, w, b, ConvSpec::same(3, 3, 3, 4));
    const Tensor y2 = conv2d_forward(xa, w, b, ConvSpec::same(3, 3, 3, 4));
    CHECK(std::memcmp(y1.data.data(), y2.data.data(), y1.size() * sizeof(float)) == 0);
}

TEST_CASE("the packaged gradient suite passes") {
    const GradCheckReport report = run_gradient_suite(1);
    for (const auto& e : report.entries) {
        INFO(e.name, " max_rel_err=", e.max_rel_err);
        CHECK(e.pass);
    }
    CHECK(report.all_pass());
}
