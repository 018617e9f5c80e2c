#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "fedsim/layers.hpp"
#include "fedsim/rng.hpp"
#include "helpers.hpp"

using namespace fedsim;
using fedsim::testing::central_diff;
using fedsim::testing::naive_conv2d;
using fedsim::testing::naive_maxpool;
using fedsim::testing::rel_err;

namespace {

ConvParams make_conv(Tensor weight, Tensor bias, std::size_t stride = 1,
                     std::size_t padding = 0) {
    ConvParams p;
    p.weight = std::move(weight);
    p.bias = std::move(bias);
    p.stride = stride;
    p.padding = padding;
    return p;
}

NormParams make_norm(NormKind kind, std::size_t ch, std::size_t groups = 1) {
    NormParams p;
    p.kind = kind;
    p.groups = groups;
    p.gamma = Tensor::full({ch}, 1.0);
    p.beta = Tensor({ch});
    if (kind == NormKind::BatchNorm) {
        p.running_mean = Tensor({ch});
        p.running_var = Tensor::full({ch}, 1.0);
    }
    return p;
}

}  // namespace

// ---- conv2d ----------------------------------------------------------------

TEST_CASE("conv2d identity kernel reproduces the input") {
    RngStream rng(1);
    Tensor x = rng.normal({1, 1, 3, 3});
    ConvParams p = make_conv(Tensor({1, 1, 1, 1}, {1.0}), Tensor({1}));
    Tensor y = conv2d_forward(x, p);
    REQUIRE(y.same_shape(x));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("conv2d all-ones kernel sums the window") {
    Tensor x = Tensor::full({1, 1, 3, 3}, 1.0);
    ConvParams p = make_conv(Tensor::full({1, 1, 3, 3}, 1.0), Tensor({1}));
    Tensor y = conv2d_forward(x, p);
    REQUIRE(y.shape() == std::vector<std::size_t>{1, 1, 1, 1});
    CHECK(y[0] == 9.0);
}

TEST_CASE("conv2d matches the naive oracle") {
    RngStream rng(7);
    struct Case {
        std::size_t b, c, h, w, oc, k, stride, pad;
    };
    for (const Case& cs : {Case{2, 3, 7, 6, 4, 3, 1, 1}, Case{1, 2, 9, 9, 3, 3, 2, 0},
                           Case{2, 1, 8, 8, 2, 5, 1, 2}, Case{1, 4, 6, 6, 2, 2, 2, 1}}) {
        Tensor x = rng.normal({cs.b, cs.c, cs.h, cs.w});
        Tensor w = rng.normal({cs.oc, cs.c, cs.k, cs.k});
        Tensor bias = rng.normal({cs.oc});
        ConvParams p = make_conv(w, bias, cs.stride, cs.pad);
        Tensor fast = conv2d_forward(x, p);
        Tensor slow = naive_conv2d(x, w, bias, cs.stride, cs.pad);
        REQUIRE(fast.same_shape(slow));
        for (std::size_t i = 0; i < fast.size(); ++i) {
            CHECK(std::abs(fast[i] - slow[i]) < 1e-12);
        }
    }
}

TEST_CASE("conv2d rejects bad geometry") {
    RngStream rng(3);
    Tensor x = rng.normal({1, 2, 5, 5});
    CHECK_THROWS_AS(
        conv2d_forward(x, make_conv(rng.normal({1, 3, 3, 3}), Tensor({1}))),
        ShapeMismatch);
    // (5 - 2) % 2 != 0 -> non-integral output
    CHECK_THROWS_AS(
        conv2d_forward(x, make_conv(rng.normal({1, 2, 2, 2}), Tensor({1}), 2, 0)),
        NonIntegralOutputSize);
}

TEST_CASE("conv2d gradients match finite differences") {
    RngStream rng(11);
    Tensor x = rng.normal({2, 2, 5, 5});
    ConvParams p = make_conv(rng.normal({3, 2, 3, 3}), rng.normal({3}), 1, 1);
    Tensor seed = rng.normal({2, 3, 5, 5});  // random loss weights

    auto loss = [&]() {
        Tensor y = conv2d_forward(x, p);
        double acc = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * seed[i];
        return acc;
    };
    ConvGrads grads = conv2d_backward(x, p, seed);

    for (std::size_t i = 0; i < x.size(); i += 7) {
        CHECK(rel_err(grads.grad_x[i], central_diff(loss, x[i])) < 1e-5);
    }
    for (std::size_t i = 0; i < p.weight.size(); i += 5) {
        CHECK(rel_err(grads.grad_weight[i], central_diff(loss, p.weight[i])) < 1e-5);
    }
    for (std::size_t i = 0; i < p.bias.size(); ++i) {
        CHECK(rel_err(grads.grad_bias[i], central_diff(loss, p.bias[i])) < 1e-5);
    }
}

// ---- weight standardization --------------------------------------------------

TEST_CASE("ws_standardize zeroes constant rows") {
    ConvParams p = make_conv(Tensor::full({2, 1, 2, 2}, 3.7), Tensor({2}));
    p.gain = Tensor::full({2}, 1.0);
    Tensor what = ws_standardize(p);
    for (std::size_t i = 0; i < what.size(); ++i) CHECK(what[i] == 0.0);
}

TEST_CASE("ws_standardize direct evaluation on [1,-1]") {
    // mu = 0, sigma^2 = 1, N = 2 -> [1/sqrt(2), -1/sqrt(2)]
    ConvParams p = make_conv(Tensor({1, 1, 1, 2}, {1.0, -1.0}), Tensor({1}));
    p.gain = Tensor::full({1}, 1.0);
    Tensor what = ws_standardize(p);
    CHECK(what[0] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
    CHECK(what[1] == doctest::Approx(-1.0 / std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("ws_standardize is exactly homogeneous in the gain") {
    RngStream rng(5);
    ConvParams p = make_conv(rng.normal({3, 2, 3, 3}), Tensor({3}));
    p.gain = Tensor::full({3}, 1.0);
    Tensor base = ws_standardize(p);
    (*p.gain)[1] = 2.0;
    Tensor doubled = ws_standardize(p);
    const std::size_t n = p.fan_in();
    for (std::size_t j = 0; j < n; ++j) {
        CHECK(doubled[n + j] == 2.0 * base[n + j]);
        CHECK(doubled[j] == base[j]);
    }
}

TEST_CASE("ws rows have zero mean and unit l2 norm at gain 1") {
    RngStream rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        ConvParams p = make_conv(rng.normal({4, 3, 3, 3}), Tensor({4}));
        p.gain = Tensor::full({4}, 1.0);
        const std::size_t n = p.fan_in();
        Tensor what = ws_standardize(p);
        for (std::size_t i = 0; i < 4; ++i) {
            double mean = 0.0, sq = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                mean += what[i * n + j];
                sq += what[i * n + j] * what[i * n + j];
            }
            mean /= static_cast<double>(n);
            CHECK(std::abs(mean) < 1e-12);
            CHECK(std::abs(std::sqrt(sq) - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("ws_standardize is shift invariant") {
    RngStream rng(23);
    ConvParams p = make_conv(rng.normal({2, 2, 3, 3}), Tensor({2}));
    p.gain = Tensor({2}, {1.3, 0.7});
    Tensor base = ws_standardize(p);
    const std::size_t n = p.fan_in();
    for (std::size_t j = 0; j < n; ++j) p.weight[j] += 42.0;  // shift row 0
    Tensor shifted = ws_standardize(p);
    for (std::size_t i = 0; i < base.size(); ++i) {
        CHECK(std::abs(shifted[i] - base[i]) < 1e-12);
    }
}

TEST_CASE("wsconv with zero gain is bias-only and kills the weight gradient") {
    RngStream rng(29);
    Tensor x = rng.normal({1, 1, 4, 4});
    ConvParams p = make_conv(rng.normal({2, 1, 3, 3}), Tensor({2}, {0.5, -0.25}), 1, 1);
    p.gain = Tensor({2}, {0.0, 1.0});
    Tensor y = wsconv_forward(x, p);
    for (std::size_t i = 0; i < 16; ++i) CHECK(y[i] == 0.5);  // channel 0: bias only

    Tensor seed = rng.normal(y.shape());
    WsConvGrads grads = wsconv_backward(x, p, seed);
    const std::size_t n = p.fan_in();
    for (std::size_t j = 0; j < n; ++j) CHECK(grads.grad_weight[j] == 0.0);
    // gain gradient stays live so a zeroed gain can recover
    CHECK(grads.grad_gain.size() == 2);
}

TEST_CASE("wsconv gradients match finite differences") {
    RngStream rng(31);
    Tensor x = rng.normal({2, 1, 4, 4});
    ConvParams p = make_conv(rng.normal({2, 1, 3, 3}), rng.normal({2}), 1, 1);
    p.gain = Tensor({2}, {1.1, 0.9});
    Tensor seed = rng.normal({2, 2, 4, 4});

    auto loss = [&]() {
        Tensor y = wsconv_forward(x, p);
        double acc = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * seed[i];
        return acc;
    };
    WsConvGrads grads = wsconv_backward(x, p, seed);

    for (std::size_t i = 0; i < p.weight.size(); ++i) {
        CHECK(rel_err(grads.grad_weight[i], central_diff(loss, p.weight[i])) < 1e-5);
    }
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(rel_err(grads.grad_gain[i], central_diff(loss, (*p.gain)[i])) < 1e-5);
        CHECK(rel_err(grads.grad_bias[i], central_diff(loss, p.bias[i])) < 1e-5);
    }
    for (std::size_t i = 0; i < x.size(); i += 3) {
        CHECK(rel_err(grads.grad_x[i], central_diff(loss, x[i])) < 1e-5);
    }
}

TEST_CASE("wsconv gradient stays correct in the clamped branch") {
    RngStream rng(37);
    Tensor x = rng.normal({1, 1, 3, 3});
    // Tiny weight spread: var * N stays below ws_eps.
    Tensor w({1, 1, 2, 2}, {1e-4, 1.2e-4, 0.9e-4, 1.05e-4});
    ConvParams p = make_conv(w, Tensor({1}), 1, 1);
    p.gain = Tensor::full({1}, 1.0);
    Tensor seed = rng.normal({1, 1, 4, 4});

    auto loss = [&]() {
        Tensor y = wsconv_forward(x, p);
        double acc = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * seed[i];
        return acc;
    };
    WsConvGrads grads = wsconv_backward(x, p, seed);
    for (std::size_t i = 0; i < p.weight.size(); ++i) {
        CHECK(rel_err(grads.grad_weight[i], central_diff(loss, p.weight[i], 1e-7)) < 1e-4);
    }
}

// ---- batch norm --------------------------------------------------------------

TEST_CASE("batchnorm constant channel collapses to beta") {
    NormParams p = make_norm(NormKind::BatchNorm, 2);
    p.beta = Tensor({2}, {0.5, -1.0});
    Tensor x({2, 2, 1, 2});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = 3.0;
    auto res = batchnorm_forward(x, p, Mode::Train);
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t c = 0; c < 2; ++c) {
            for (std::size_t i = 0; i < 2; ++i) {
                CHECK(res.y[(b * 2 + c) * 2 + i] == doctest::Approx(p.beta[c]));
            }
        }
    }
}

TEST_CASE("batchnorm direct evaluation on {0,2}") {
    NormParams p = make_norm(NormKind::BatchNorm, 1);
    Tensor x({2, 1, 1, 1}, {0.0, 2.0});
    auto res = batchnorm_forward(x, p, Mode::Train);
    const double expected = 1.0 / std::sqrt(1.0 + 1e-5);
    CHECK(res.y[0] == doctest::Approx(-expected).epsilon(1e-12));
    CHECK(res.y[1] == doctest::Approx(expected).epsilon(1e-12));
    // running stats move toward the batch stats with momentum 0.1
    CHECK(res.new_running_mean[0] == doctest::Approx(0.1 * 1.0));
    CHECK(res.new_running_var[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 1.0));
}

TEST_CASE("batchnorm eval uses running statistics") {
    NormParams p = make_norm(NormKind::BatchNorm, 1);
    Tensor x({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    auto res = batchnorm_forward(x, p, Mode::Eval);
    const double k = 1.0 / std::sqrt(1.0 + 1e-5);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(res.y[i] == doctest::Approx(x[i] * k).epsilon(1e-12));
    }
    // no update in eval mode
    CHECK(res.new_running_mean[0] == 0.0);
    CHECK(res.new_running_var[0] == 1.0);
}

TEST_CASE("batchnorm degenerate batch is an error") {
    NormParams p = make_norm(NormKind::BatchNorm, 1);
    Tensor x({1, 1, 1, 1}, {5.0});
    CHECK_THROWS_AS(batchnorm_forward(x, p, Mode::Train), DegenerateBatch);
    CHECK_NOTHROW(batchnorm_forward(x, p, Mode::Eval));
}

TEST_CASE("batchnorm train output is standardized when gamma=1 beta=0") {
    RngStream rng(41);
    NormParams p = make_norm(NormKind::BatchNorm, 3);
    Tensor x = rng.normal({4, 3, 5, 5}, 2.0, 3.0);
    auto res = batchnorm_forward(x, p, Mode::Train);
    const std::size_t m = 4 * 5 * 5;
    for (std::size_t c = 0; c < 3; ++c) {
        double mean = 0.0, sq = 0.0;
        for (std::size_t b = 0; b < 4; ++b) {
            for (std::size_t i = 0; i < 25; ++i) {
                const double v = res.y[(b * 3 + c) * 25 + i];
                mean += v;
                sq += v * v;
            }
        }
        mean /= m;
        const double var = sq / m - mean * mean;
        CHECK(std::abs(mean) < 1e-9);
        // population variance of y is sigma^2/(sigma^2+eps), just below 1
        double xs = 0.0, xq = 0.0;
        for (std::size_t b = 0; b < 4; ++b) {
            for (std::size_t i = 0; i < 25; ++i) {
                const double v = x[(b * 3 + c) * 25 + i];
                xs += v;
                xq += v * v;
            }
        }
        xs /= m;
        const double sigma2 = xq / m - xs * xs;
        CHECK(std::abs(var - sigma2 / (sigma2 + 1e-5)) < 1e-9);
    }
}

// ---- group / layer norm -------------------------------------------------------

TEST_CASE("groupnorm constant input per group collapses to beta") {
    NormParams p = make_norm(NormKind::GroupNorm, 4, 2);
    p.beta = Tensor({4}, {1, 2, 3, 4});
    Tensor x({1, 4, 2, 2});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = -2.5;
    auto res = groupnorm_forward(x, p);
    for (std::size_t c = 0; c < 4; ++c) {
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(res.y[c * 4 + i] == doctest::Approx(p.beta[c]));
        }
    }
}

TEST_CASE("groupnorm works at batch size 1") {
    RngStream rng(43);
    NormParams p = make_norm(NormKind::GroupNorm, 4, 2);
    Tensor x = rng.normal({1, 4, 3, 3});
    CHECK_NOTHROW(groupnorm_forward(x, p));
}

TEST_CASE("groupnorm with groups=C matches per-channel instance statistics") {
    NormParams p = make_norm(NormKind::GroupNorm, 2, 2);
    Tensor x({1, 2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
    auto res = groupnorm_forward(x, p);
    // hand oracle: channel 0 has mean 2.5, var 1.25
    const double inv0 = 1.0 / std::sqrt(1.25 + 1e-5);
    CHECK(res.y[0] == doctest::Approx((1 - 2.5) * inv0).epsilon(1e-12));
    CHECK(res.y[3] == doctest::Approx((4 - 2.5) * inv0).epsilon(1e-12));
    // channel 1: mean 25, var 125
    const double inv1 = 1.0 / std::sqrt(125.0 + 1e-5);
    CHECK(res.y[4] == doctest::Approx((10 - 25.0) * inv1).epsilon(1e-12));
    CHECK(res.y[7] == doctest::Approx((40 - 25.0) * inv1).epsilon(1e-12));
}

TEST_CASE("groupnorm rejects group counts that do not divide channels") {
    NormParams p = make_norm(NormKind::GroupNorm, 4, 3);
    Tensor x({1, 4, 2, 2});
    CHECK_THROWS_AS(groupnorm_forward(x, p), InvalidGroupCount);
}

TEST_CASE("group/layer norm output is invariant to batch composition") {
    RngStream rng(47);
    for (NormKind kind : {NormKind::GroupNorm, NormKind::LayerNorm}) {
        NormParams p = make_norm(kind, 4, 2);
        p.gamma = rng.normal({4});
        p.beta = rng.normal({4});
        Tensor batch = rng.normal({3, 4, 2, 2});
        auto batched = groupnorm_forward(batch, p);
        for (std::size_t b = 0; b < 3; ++b) {
            Tensor single({1, 4, 2, 2});
            for (std::size_t i = 0; i < 16; ++i) single[i] = batch[b * 16 + i];
            auto alone = groupnorm_forward(single, p);
            for (std::size_t i = 0; i < 16; ++i) {
                CHECK(alone.y[i] == doctest::Approx(batched.y[b * 16 + i]).epsilon(1e-12));
            }
        }
    }
}

// ---- norm backward ------------------------------------------------------------

TEST_CASE("norm backward matches finite differences") {
    RngStream rng(53);
    Tensor x = rng.normal({2, 2, 2, 2});
    Tensor seed = rng.normal({2, 2, 2, 2});

    SUBCASE("batchnorm") {
        NormParams p = make_norm(NormKind::BatchNorm, 2);
        p.gamma = rng.normal({2});
        p.beta = rng.normal({2});
        auto loss = [&]() {
            auto res = batchnorm_forward(x, p, Mode::Train);
            double acc = 0.0;
            for (std::size_t i = 0; i < res.y.size(); ++i) acc += res.y[i] * seed[i];
            return acc;
        };
        auto fwd = batchnorm_forward(x, p, Mode::Train);
        auto grads = norm_backward(fwd.cache, seed);
        for (std::size_t i = 0; i < x.size(); ++i) {
            CHECK(rel_err(grads.grad_x[i], central_diff(loss, x[i])) < 1e-5);
        }
        for (std::size_t c = 0; c < 2; ++c) {
            CHECK(rel_err(grads.grad_gamma[c], central_diff(loss, p.gamma[c])) < 1e-5);
            CHECK(rel_err(grads.grad_beta[c], central_diff(loss, p.beta[c])) < 1e-5);
        }
    }

    SUBCASE("groupnorm") {
        NormParams p = make_norm(NormKind::GroupNorm, 2, 2);
        p.gamma = rng.normal({2});
        p.beta = rng.normal({2});
        auto loss = [&]() {
            auto res = groupnorm_forward(x, p);
            double acc = 0.0;
            for (std::size_t i = 0; i < res.y.size(); ++i) acc += res.y[i] * seed[i];
            return acc;
        };
        auto fwd = groupnorm_forward(x, p);
        auto grads = norm_backward(fwd.cache, seed);
        for (std::size_t i = 0; i < x.size(); ++i) {
            CHECK(rel_err(grads.grad_x[i], central_diff(loss, x[i])) < 1e-5);
        }
        for (std::size_t c = 0; c < 2; ++c) {
            CHECK(rel_err(grads.grad_gamma[c], central_diff(loss, p.gamma[c])) < 1e-5);
            CHECK(rel_err(grads.grad_beta[c], central_diff(loss, p.beta[c])) < 1e-5);
        }
    }

    SUBCASE("layernorm") {
        NormParams p = make_norm(NormKind::LayerNorm, 2);
        auto loss = [&]() {
            auto res = groupnorm_forward(x, p);
            double acc = 0.0;
            for (std::size_t i = 0; i < res.y.size(); ++i) acc += res.y[i] * seed[i];
            return acc;
        };
        auto fwd = groupnorm_forward(x, p);
        auto grads = norm_backward(fwd.cache, seed);
        for (std::size_t i = 0; i < x.size(); ++i) {
            CHECK(rel_err(grads.grad_x[i], central_diff(loss, x[i])) < 1e-5);
        }
    }

    SUBCASE("frozen-stats batchnorm") {
        NormParams p = make_norm(NormKind::BatchNorm, 2);
        p.running_mean = rng.normal({2});
        p.running_var = Tensor({2}, {0.5, 2.0});
        p.gamma = rng.normal({2});
        auto loss = [&]() {
            auto res = batchnorm_forward(x, p, Mode::Train, BnStatsMode::Frozen);
            double acc = 0.0;
            for (std::size_t i = 0; i < res.y.size(); ++i) acc += res.y[i] * seed[i];
            return acc;
        };
        auto fwd = batchnorm_forward(x, p, Mode::Train, BnStatsMode::Frozen);
        auto grads = norm_backward(fwd.cache, seed);
        for (std::size_t i = 0; i < x.size(); ++i) {
            CHECK(rel_err(grads.grad_x[i], central_diff(loss, x[i])) < 1e-5);
        }
        for (std::size_t c = 0; c < 2; ++c) {
            CHECK(rel_err(grads.grad_gamma[c], central_diff(loss, p.gamma[c])) < 1e-5);
        }
    }
}

TEST_CASE("norm backward structural identities") {
    RngStream rng(59);
    NormParams p = make_norm(NormKind::BatchNorm, 2);
    Tensor x = rng.normal({2, 2, 2, 2});
    Tensor seed = rng.normal({2, 2, 2, 2});
    auto fwd = batchnorm_forward(x, p, Mode::Train);
    auto grads = norm_backward(fwd.cache, seed);

    // grad_beta is the plain sum of grad_out over the normalization axes
    for (std::size_t c = 0; c < 2; ++c) {
        double sum = 0.0;
        for (std::size_t b = 0; b < 2; ++b) {
            for (std::size_t i = 0; i < 4; ++i) sum += seed[(b * 2 + c) * 4 + i];
        }
        CHECK(grads.grad_beta[c] == doctest::Approx(sum).epsilon(1e-12));
    }

    // gamma = 0 kills grad_x for any grad_out
    NormParams pz = make_norm(NormKind::BatchNorm, 2);
    pz.gamma = Tensor({2});
    auto fz = batchnorm_forward(x, pz, Mode::Train);
    auto gz = norm_backward(fz.cache, Tensor::full({2, 2, 2, 2}, 1.0));
    for (std::size_t i = 0; i < gz.grad_x.size(); ++i) CHECK(gz.grad_x[i] == 0.0);

    // eval-mode cache cannot back-propagate
    auto fe = batchnorm_forward(x, p, Mode::Eval);
    CHECK_THROWS_AS(norm_backward(fe.cache, seed), StaleCache);
}

// ---- pooling -------------------------------------------------------------------

TEST_CASE("maxpool single window and backward routing") {
    Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
    auto res = maxpool2d_forward(x, 2, 2);
    REQUIRE(res.y.size() == 1);
    CHECK(res.y[0] == 4.0);
    Tensor grad = maxpool2d_backward(res, Tensor({1, 1, 1, 1}, {10.0}));
    CHECK(grad[0] == 0.0);
    CHECK(grad[1] == 0.0);
    CHECK(grad[2] == 0.0);
    CHECK(grad[3] == 10.0);
}

TEST_CASE("maxpool ties route the gradient to the first element") {
    Tensor x = Tensor::full({1, 1, 2, 2}, 5.0);
    auto res = maxpool2d_forward(x, 2, 2);
    Tensor grad = maxpool2d_backward(res, Tensor({1, 1, 1, 1}, {1.0}));
    CHECK(grad[0] == 1.0);
    CHECK(grad[1] == 0.0);
    CHECK(grad[2] == 0.0);
    CHECK(grad[3] == 0.0);
}

TEST_CASE("maxpool matches the naive oracle") {
    RngStream rng(61);
    Tensor x = rng.normal({2, 3, 6, 8});
    auto res = maxpool2d_forward(x, 2, 2);
    Tensor slow = naive_maxpool(x, 2, 2);
    REQUIRE(res.y.same_shape(slow));
    for (std::size_t i = 0; i < slow.size(); ++i) CHECK(res.y[i] == slow[i]);

    CHECK_THROWS_AS(maxpool2d_forward(rng.normal({1, 1, 5, 5}), 2, 2),
                    NonIntegralOutputSize);
}

// ---- dropout --------------------------------------------------------------------

TEST_CASE("dropout rate 0 is the identity with an all-ones mask") {
    RngStream rng(67);
    Tensor x = rng.normal({3, 4});
    RngStream d = rng.split("drop");
    auto res = dropout(x, 0.0, d, Mode::Train);
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(res.y[i] == x[i]);
        CHECK(res.mask[i] == 1.0);
    }
}

TEST_CASE("dropout eval mode is the identity regardless of rate") {
    RngStream rng(71);
    Tensor x = rng.normal({3, 4});
    RngStream d = rng.split("drop");
    auto res = dropout(x, 0.9, d, Mode::Eval);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(res.y[i] == x[i]);
}

TEST_CASE("dropout keep fraction approaches 1 - rate") {
    RngStream rng(73);
    Tensor x = Tensor::full({100000}, 1.0);
    RngStream d = rng.split("drop");
    const double rate = 0.3;
    auto res = dropout(x, rate, d, Mode::Train);
    std::size_t kept = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (res.mask[i] != 0.0) {
            CHECK(res.mask[i] == doctest::Approx(1.0 / 0.7));
            ++kept;
        }
    }
    const double frac = static_cast<double>(kept) / 100000.0;
    CHECK(std::abs(frac - 0.7) < 0.01);
}

TEST_CASE("dropout rejects invalid rates") {
    RngStream rng(79);
    Tensor x({2}, {1, 2});
    RngStream d = rng.split("drop");
    CHECK_THROWS_AS(dropout(x, 1.0, d, Mode::Train), InvalidRate);
    CHECK_THROWS_AS(dropout(x, -0.1, d, Mode::Train), InvalidRate);
}

// ---- fully connected ---------------------------------------------------------------

TEST_CASE("fc forward and gradients") {
    RngStream rng(83);
    Tensor x = rng.normal({3, 4});
    Tensor w = rng.normal({2, 4});
    Tensor b = rng.normal({2});
    Tensor seed = rng.normal({3, 2});

    Tensor y = fc_forward(x, w, b);
    // oracle via matmul with the transpose
    Tensor oracle = matmul(x, transpose2d(w));
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t o = 0; o < 2; ++o) {
            CHECK(y[i * 2 + o] == doctest::Approx(oracle[i * 2 + o] + b[o]).epsilon(1e-12));
        }
    }

    auto loss = [&]() {
        Tensor out = fc_forward(x, w, b);
        double acc = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) acc += out[i] * seed[i];
        return acc;
    };
    FcGrads grads = fc_backward(x, w, seed);
    for (std::size_t i = 0; i < w.size(); ++i) {
        CHECK(rel_err(grads.grad_weight[i], central_diff(loss, w[i])) < 1e-5);
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(rel_err(grads.grad_x[i], central_diff(loss, x[i])) < 1e-5);
    }
    for (std::size_t i = 0; i < b.size(); ++i) {
        CHECK(rel_err(grads.grad_bias[i], central_diff(loss, b[i])) < 1e-5);
    }
}

// ---- softmax cross entropy -----------------------------------------------------------

TEST_CASE("softmax ce on uniform logits gives ln K") {
    Tensor logits = Tensor::full({2, 10}, 0.3);
    auto res = softmax_cross_entropy(logits, {0, 7});
    CHECK(res.loss == doctest::Approx(std::log(10.0)).epsilon(1e-12));
}

TEST_CASE("softmax ce saturates cleanly") {
    Tensor logits({1, 3}, {1000.0, 0.0, 0.0});
    auto res = softmax_cross_entropy(logits, {0});
    CHECK(res.loss == doctest::Approx(0.0).epsilon(1e-9));
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(std::abs(res.grad_logits[i]) < 1e-9);
    }
    // and the losing direction stays finite
    auto res2 = softmax_cross_entropy(logits, {1});
    CHECK(res2.loss == doctest::Approx(1000.0).epsilon(1e-6));
}

TEST_CASE("softmax ce gradient matches finite differences") {
    RngStream rng(89);
    Tensor logits = rng.normal({2, 3});
    const std::vector<std::size_t> labels{2, 0};
    auto loss = [&]() { return softmax_cross_entropy(logits, labels).loss; };
    auto res = softmax_cross_entropy(logits, labels);
    for (std::size_t i = 0; i < logits.size(); ++i) {
        CHECK(rel_err(res.grad_logits[i], central_diff(loss, logits[i]), 1e-3) < 1e-6);
    }
}

TEST_CASE("softmax ce rejects out-of-range labels") {
    Tensor logits({1, 3}, {0, 0, 0});
    CHECK_THROWS_AS(softmax_cross_entropy(logits, {3}), LabelOutOfRange);
}
