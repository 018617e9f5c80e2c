#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "fedsim/model.hpp"
#include "fedsim/optim.hpp"
#include "helpers.hpp"

using namespace fedsim;
using fedsim::testing::central_diff;
using fedsim::testing::rel_err;

namespace {

ModelSpec tiny_spec(Variant v, std::size_t channels = 1, double dropout = 0.0) {
    ModelSpec spec;
    spec.in_channels = channels;
    spec.height = 16;
    spec.width = 16;
    spec.num_classes = 10;
    spec.width_scale = 0.125;
    spec.dropout_rate = dropout;
    spec.variant = v;
    return spec;
}

Batch random_batch(RngStream& rng, std::size_t b, std::size_t c, std::size_t h,
                   std::size_t w, std::size_t k) {
    Batch batch;
    batch.x = rng.uniform({b, c, h, w});
    batch.labels.resize(b);
    for (std::size_t i = 0; i < b; ++i) batch.labels[i] = i % k;
    return batch;
}

}  // namespace

TEST_CASE("full-width architecture matches the reference table") {
    ModelSpec spec;
    spec.variant = Variant::BN;
    Cnn6 model(spec);
    CHECK(model.conv_channels() == std::vector<std::size_t>{64, 64, 128});
    CHECK(model.flat_dim() == 6272);  // 128 * 7 * 7
    CHECK(model.fc_dims() == std::vector<std::size_t>{2048, 512, 10});

    ModelState state = model.init_state(RngStream(1));
    CHECK(state.value("fc1.weight").shape() == std::vector<std::size_t>{2048, 6272});

    spec.variant = Variant::GN;
    Cnn6 gn(spec);
    CHECK(gn.gn_groups() == std::vector<std::size_t>{32, 32, 64});
}

TEST_CASE("gn groups shrink with width") {
    ModelSpec spec = tiny_spec(Variant::GN);
    Cnn6 model(spec);
    CHECK(model.gn_groups() == std::vector<std::size_t>{8, 8, 16});
}

TEST_CASE("wsconv variant carries no norm entries and a gain per conv") {
    Cnn6 model(tiny_spec(Variant::WSConv));
    ModelState state = model.init_state(RngStream(2));
    for (const auto& [name, entry] : state.entries) {
        CHECK(entry.role != ParamRole::NormGamma);
        CHECK(entry.role != ParamRole::NormBeta);
        CHECK(entry.role != ParamRole::NormRunningStat);
    }
    CHECK(state.has("conv1.gain"));
    CHECK(state.has("conv2.gain"));
    CHECK(state.has("conv3.gain"));
    CHECK(state.value("conv1.gain")[0] == 1.0);
}

TEST_CASE("parameter counts match the closed form") {
    // Width 1/8, input 1x16x16, 10 classes, written out by hand:
    // conv1 8*1*25+8, conv2 8*8*25+8, conv3 16*8*25+16, affine 2*(8+8+16),
    // flat 16*4*4=256, fc1 256*256+256, fc2 64*256+64, fc3 10*64+10.
    const std::size_t convs = (8 * 1 * 25 + 8) + (8 * 8 * 25 + 8) + (16 * 8 * 25 + 16);
    const std::size_t fcs = (256 * 256 + 256) + (64 * 256 + 64) + (10 * 64 + 10);
    const std::size_t affines = 2 * (8 + 8 + 16);
    const std::size_t gains = 8 + 8 + 16;

    Cnn6 bn(tiny_spec(Variant::BN));
    Cnn6 gn(tiny_spec(Variant::GN));
    Cnn6 ln(tiny_spec(Variant::LN));
    Cnn6 ws(tiny_spec(Variant::WSConv));
    Cnn6 plain(tiny_spec(Variant::Plain));

    CHECK(bn.trainable_count() == convs + fcs + affines);
    CHECK(gn.trainable_count() == bn.trainable_count());
    CHECK(ln.trainable_count() == bn.trainable_count());
    CHECK(ws.trainable_count() == convs + fcs + gains);
    CHECK(plain.trainable_count() == convs + fcs);

    // the state actually carries that many trainable scalars
    for (const Cnn6* m : {&bn, &gn, &ln, &ws, &plain}) {
        ModelState state = m->init_state(RngStream(3));
        std::size_t total = 0;
        for (const auto& [name, entry] : state.entries) {
            if (is_trainable(entry.role)) total += entry.value.size();
        }
        CHECK(total == m->trainable_count());
    }
}

TEST_CASE("untrained model sits near ln K on a balanced batch") {
    for (Variant v : {Variant::BN, Variant::GN, Variant::LN, Variant::WSConv}) {
        Cnn6 model(tiny_spec(v));
        ModelState state = model.init_state(RngStream(4));
        RngStream rng(5);
        Batch batch = random_batch(rng, 20, 1, 16, 16, 10);
        auto res = model.forward_loss(state, batch, Mode::Eval, RngStream(6));
        CHECK(std::abs(res.loss - std::log(10.0)) < 0.2);
        CHECK(res.logits.shape() == std::vector<std::size_t>{20, 10});
    }
}

TEST_CASE("eval forward is bitwise deterministic") {
    Cnn6 model(tiny_spec(Variant::BN, 1, 0.5));
    ModelState state = model.init_state(RngStream(7));
    RngStream rng(8);
    Batch batch = random_batch(rng, 4, 1, 16, 16, 10);
    auto a = model.forward_loss(state, batch, Mode::Eval, RngStream(9));
    auto b = model.forward_loss(state, batch, Mode::Eval, RngStream(10));
    CHECK(a.loss == b.loss);
    for (std::size_t i = 0; i < a.logits.size(); ++i) CHECK(a.logits[i] == b.logits[i]);
}

TEST_CASE("train forward replay with equal streams is bitwise identical") {
    Cnn6 model(tiny_spec(Variant::WSConv, 1, 0.5));
    ModelState state = model.init_state(RngStream(11));
    RngStream rng(12);
    Batch batch = random_batch(rng, 4, 1, 16, 16, 10);
    auto a = model.forward_loss(state, batch, Mode::Train, RngStream(13));
    auto b = model.forward_loss(state, batch, Mode::Train, RngStream(13));
    CHECK(a.loss == b.loss);
    GradientMap ga = model.backward(state, a.cache);
    GradientMap gb = model.backward(state, b.cache);
    for (const auto& [name, grad] : ga) {
        const Tensor& other = gb.at(name);
        for (std::size_t i = 0; i < grad.size(); ++i) CHECK(grad[i] == other[i]);
    }
}

TEST_CASE("gradient keys equal trainable keys; buffers carry no gradient") {
    for (Variant v : {Variant::BN, Variant::GN, Variant::WSConv, Variant::Plain}) {
        Cnn6 model(tiny_spec(v));
        ModelState state = model.init_state(RngStream(14));
        RngStream rng(15);
        Batch batch = random_batch(rng, 4, 1, 16, 16, 10);
        auto res = model.forward_loss(state, batch, Mode::Train, RngStream(16));
        GradientMap grads = model.backward(state, res.cache);

        std::set<std::string> grad_keys;
        for (const auto& [name, g] : grads) grad_keys.insert(name);
        std::set<std::string> expect;
        for (const auto& name : model.trainable_keys(state)) expect.insert(name);
        CHECK(grad_keys == expect);
    }
}

TEST_CASE("zero loss gradient zeroes every gradient") {
    Cnn6 model(tiny_spec(Variant::BN));
    ModelState state = model.init_state(RngStream(17));
    RngStream rng(18);
    Batch batch = random_batch(rng, 4, 1, 16, 16, 10);
    auto res = model.forward_loss(state, batch, Mode::Train, RngStream(19));
    GradientMap grads = model.backward(state, res.cache, 0.0);
    for (const auto& [name, g] : grads) {
        for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == 0.0);
    }
}

TEST_CASE("backward demands a train-mode cache") {
    Cnn6 model(tiny_spec(Variant::BN));
    ModelState state = model.init_state(RngStream(20));
    RngStream rng(21);
    Batch batch = random_batch(rng, 4, 1, 16, 16, 10);
    auto res = model.forward_loss(state, batch, Mode::Eval, RngStream(22));
    CHECK_THROWS_AS(model.backward(state, res.cache), StaleCache);
}

TEST_CASE("whole-model gradients match finite differences") {
    for (Variant v : {Variant::BN, Variant::GN, Variant::WSConv}) {
        CAPTURE(variant_name(v));
        Cnn6 model(tiny_spec(v));
        ModelState state = model.init_state(RngStream(23));
        RngStream rng(24);
        Batch batch = random_batch(rng, 3, 1, 16, 16, 10);
        RngStream fwd_stream(25);

        auto loss = [&]() {
            return model.forward_loss(state, batch, Mode::Train, fwd_stream).loss;
        };
        auto res = model.forward_loss(state, batch, Mode::Train, fwd_stream);
        GradientMap grads = model.backward(state, res.cache);

        RngStream pick(26);
        for (auto& [name, entry] : state.entries) {
            if (!is_trainable(entry.role)) continue;
            const Tensor& g = grads.at(name);
            // spot-check a handful of coordinates per tensor
            for (int t = 0; t < 6; ++t) {
                const std::size_t i = pick.uniform_below(entry.value.size());
                const double fd = central_diff(loss, entry.value[i]);
                CHECK_MESSAGE(rel_err(g[i], fd) < 1e-4,
                              name << "[" << i << "] analytic " << g[i] << " vs fd " << fd);
            }
        }
    }
}

TEST_CASE("loss decreases over 50 steps on a 32-sample memorization task") {
    // Normalization-free training wants a larger step size, matching the
    // per-method tuning the comparison protocol uses.
    const std::vector<std::pair<Variant, double>> runs = {{Variant::BN, 0.05},
                                                          {Variant::GN, 0.05},
                                                          {Variant::LN, 0.05},
                                                          {Variant::WSConv, 0.2},
                                                          {Variant::Plain, 0.1}};
    for (const auto& [v, lr] : runs) {
        CAPTURE(variant_name(v));
        Cnn6 model(tiny_spec(v));
        ModelState state = model.init_state(RngStream(27));
        RngStream rng(28);
        Batch batch = random_batch(rng, 32, 1, 16, 16, 10);

        OptimSpec optim;
        optim.lr = lr;
        double first = 0.0, last = 0.0;
        for (int step = 0; step < 50; ++step) {
            auto res =
                model.forward_loss(state, batch, Mode::Train, RngStream(29).split(step));
            for (auto& [name, value] : res.stat_updates) state.value(name) = value;
            GradientMap grads = model.backward(state, res.cache);
            state = sgd_step(state, grads, optim);
            if (step == 0) first = res.loss;
            last = res.loss;
        }
        CHECK(last < first);
        if (v != Variant::Plain) CHECK(last < 1.0);  // clearly below ln 10
    }
}

TEST_CASE("invalid specs are rejected") {
    ModelSpec spec = tiny_spec(Variant::BN);
    spec.height = 15;  // not divisible by 4
    CHECK_THROWS_AS(Cnn6{spec}, InvalidSpec);

    ModelSpec bad_width = tiny_spec(Variant::BN);
    bad_width.width_scale = 0.01;  // 64 * 0.01 is not integral
    CHECK_THROWS_AS(Cnn6{bad_width}, InvalidSpec);

    ModelSpec one_class = tiny_spec(Variant::BN);
    one_class.num_classes = 1;
    CHECK_THROWS_AS(Cnn6{one_class}, InvalidSpec);
}

TEST_CASE("bn variant at batch 1 propagates DegenerateBatch") {
    Cnn6 model(tiny_spec(Variant::BN));
    ModelState state = model.init_state(RngStream(30));
    RngStream rng(31);
    // B=1 with 16x16 spatial still normalizes fine (B*H*W >= 2): only the
    // 1x1-spatial degenerate case errors at the kernel level.
    Batch batch = random_batch(rng, 1, 1, 16, 16, 10);
    CHECK_NOTHROW(model.forward_loss(state, batch, Mode::Train, RngStream(32)));
}
