#include "helpers.hpp"
#include "swinrdm/error.hpp"
#include "swinrdm/forecaster.hpp"
#include "swinrdm/metrics.hpp"

using namespace swinrdm;
using namespace swinrdm::forecast;

namespace {

ForecasterConfig micro(Variant variant = Variant::SingleScale, bool agg = true) {
    ForecasterConfig c;
    c.channels = 3;
    c.constant_channels = {2};
    c.history = 2;
    c.lat = 8;
    c.lon = 16;
    c.dec_dim = 8;
    c.enc_dim = 8;
    c.depth = 2;
    c.window = 4;
    c.heads = 2;
    c.mlp_ratio = 2.0;
    c.aggregation = agg;
    c.variant = variant;
    c.scales = 2;
    return c;
}

ForecasterConfig desk_shapes(int64_t dim) {
    ForecasterConfig c;
    c.channels = 8;
    c.constant_channels = {6, 7};
    c.history = 6;
    c.lat = 16;
    c.lon = 32;
    c.depth = 6;
    c.window = 8;
    return make_variant_config(c, Variant::SingleScale, dim, true);
}

void zero_biases(torch::nn::Module& m) {
    torch::NoGradGuard ng;
    for (auto& item : m.named_parameters()) {
        const auto& name = item.key();
        if (name.size() >= 4 && name.substr(name.size() - 4) == "bias") item.value().zero_();
    }
}

} // namespace

TEST_SUITE("forecaster") {

TEST_CASE("encoder shapes, determinism and zero input") {
    torch::manual_seed(0);
    auto c = micro();
    c.enc_dim = 12;
    Forecaster f(c);
    auto hist = torch::randn({2, 2, 3, 8, 16});
    const auto h1 = f->encode(hist);
    const auto h2 = f->encode(hist);
    REQUIRE(h1.levels.size() == 1);
    CHECK(h1.levels[0].sizes() == torch::IntArrayRef({2, 8, 4, 8}));
    CHECK(torch::equal(h1.levels[0], h2.levels[0]));
    zero_biases(*f);
    CHECK(f->encode(torch::zeros({1, 2, 3, 8, 16})).levels[0].abs().max().item<double>() == 0.0);
    CHECK_THROWS_AS(f->encode(torch::zeros({1, 3, 3, 8, 16})), ShapeError);
    CHECK_THROWS_AS(f->encode(torch::zeros({1, 2, 4, 8, 16})), ShapeError);
}

TEST_CASE("decoder step") {
    torch::manual_seed(1);
    SUBCASE("shapes") {
        Forecaster f(micro());
        auto h = f->encode(torch::randn({1, 2, 3, 8, 16}));
        const auto out = f->step(h, torch::randn({1, 3, 8, 16}));
        CHECK(out.hidden.levels[0].sizes() == h.levels[0].sizes());
        CHECK(out.frame.sizes() == torch::IntArrayRef({1, 3, 8, 16}));
        CHECK(out.block_outputs.size() == 2);
        CHECK(out.hidden.step == 1);
    }
    SUBCASE("zero head makes the step a persistence step") {
        Forecaster f(micro(Variant::SingleScale, false));
        f->zero_head();
        auto hist = torch::randn({1, 2, 3, 8, 16});
        auto x = torch::randn({1, 3, 8, 16});
        CHECK(torch::equal(f->step(f->encode(hist), x).frame, x));
        const auto roll = f->rollout(hist, 4);
        for (int64_t t = 0; t < 4; ++t) CHECK(torch::equal(roll.select(1, t), hist.select(1, 1)));
    }
    SUBCASE("aggregation changes the output") {
        torch::manual_seed(2);
        Forecaster on(micro(Variant::SingleScale, true));
        Forecaster off(micro(Variant::SingleScale, false));
        {
            torch::NoGradGuard ng;
            auto src = on->named_parameters();
            for (auto& item : off->named_parameters()) item.value().copy_(src[item.key()]);
        }
        auto hist = torch::randn({1, 2, 3, 8, 16});
        CHECK_FALSE(torch::allclose(on->rollout(hist, 1), off->rollout(hist, 1)));
    }
    SUBCASE("multi-scale carries one hidden state per scale") {
        auto c = micro(Variant::MultiScale);
        c.lat = 32;
        c.lon = 64;
        c.scales = 4;
        Forecaster f(c);
        auto h = f->encode(torch::randn({1, 2, 3, 32, 64}));
        CHECK(h.levels.size() == 4);
        const auto out = f->step(h, torch::randn({1, 3, 32, 64}));
        REQUIRE(out.hidden.levels.size() == 4);
        for (int64_t s = 0; s < 4; ++s) {
            CHECK(out.hidden.levels[static_cast<size_t>(s)].sizes() ==
                  torch::IntArrayRef({1, 8 << s, 16 >> s, 32 >> s}));
        }
    }
}

TEST_CASE("rollout") {
    torch::manual_seed(3);
    Forecaster f(micro(Variant::MultiScale));
    auto hist = torch::randn({2, 2, 3, 8, 16});
    SUBCASE("one step equals a single decoder step") {
        const auto one = f->rollout(hist, 1);
        const auto direct = f->step(f->encode(hist), hist.select(1, 1)).frame;
        CHECK(torch::equal(one.select(1, 0), direct));
    }
    SUBCASE("constant channels are re-injected") {
        const auto r = f->rollout(hist, 3);
        for (int64_t t = 0; t < 3; ++t) CHECK(torch::equal(r.select(1, t).select(1, 2), hist.select(1, 1).select(1, 2)));
    }
    SUBCASE("teacher frames replace the model's own output") {
        auto teacher = torch::randn({2, 2, 3, 8, 16});
        const auto r = f->rollout(hist, 3, teacher);
        auto h = f->encode(hist);
        auto o1 = f->step(h, hist.select(1, 1));
        auto fed = teacher.select(1, 0).clone();
        fed.select(1, 2).copy_(hist.select(1, 1).select(1, 2));
        auto o2 = f->step(o1.hidden, fed);
        CHECK((r.select(1, 1) - o2.frame).abs().max().item<double>() <= 1e-6);
        CHECK_THROWS_AS(f->rollout(hist, 0), ConfigError);
    }
}

TEST_CASE("training loss") {
    torch::manual_seed(4);
    const std::vector<double> lats = {60.0, 20.0, -20.0, -60.0};
    const auto w = metrics::lat_weights(lats);
    auto pred = torch::randn({2, 3, 3, 4, 6}, torch::kFloat64);
    auto target = torch::randn({2, 3, 3, 4, 6}, torch::kFloat64);
    CHECK(training_loss(pred, pred, w.tensor(), {0, 1}).item<double>() == 0.0);
    const auto uniform = torch::ones({4}, torch::kFloat64);
    CHECK(training_loss(target + 1.0, target, uniform, {1}).item<double>() == doctest::Approx(1.0).epsilon(1e-12));

    // cross-module oracle: mean over batch, steps and channels of the squared weighted RMSE
    const std::vector<int64_t> chans = {0, 2};
    auto idx = torch::tensor(chans, torch::kLong);
    const auto rmse = metrics::weighted_rmse(pred.index_select(2, idx), target.index_select(2, idx), w);
    CHECK(training_loss(pred, target, w.tensor(), chans).item<double>() ==
          doctest::Approx(rmse.pow(2).mean().item<double>()).epsilon(1e-12));
    CHECK_THROWS_AS(training_loss(pred, target.narrow(1, 0, 2), w.tensor(), chans), ShapeError);
}

TEST_CASE("parameter counts") {
    SUBCASE("closed form matches built modules") {
        for (auto variant : {Variant::SingleScale, Variant::MultiScale}) {
            for (bool agg : {true, false}) {
                const auto c = micro(variant, agg);
                CHECK(parameter_count(c) == nn::count_parameters(*Forecaster(c)));
            }
        }
    }
    SUBCASE("single-scale dim 128 at desk shapes against a per-layer tally") {
        // 8 channels, 6 history frames, 16x32 grid -> 8x16 tokens, window 8, depth 6,
        // encoder 192 with 6 heads, decoder 128 with 4 heads, MLP ratio 4.
        auto block = [](int64_t C, int64_t heads) {
            const int64_t layer_norms = 2 * (2 * C);
            const int64_t attention = (C * 3 * C + 3 * C) + (C * C + C) + 15 * 15 * heads;
            const int64_t mlp = (C * 4 * C + 4 * C) + (4 * C * C + C);
            return layer_norms + attention + mlp;
        };
        const int64_t encoder = 6 * block(192, 6);
        const int64_t decoder = 6 * block(128, 4);
        const int64_t cube = 192 * 8 * 6 * 2 * 2 + 192;
        const int64_t frame_embed = 128 * 8 * 2 * 2 + 128;
        const int64_t head = 128 * 8 * 2 * 2 + 8;
        const int64_t bridge = 192 * 128 + 128;
        const int64_t fuse = 128 * 128 + 128;
        const int64_t aggregate = 6 * 128 * 128 + 128;
        const int64_t tally = encoder + decoder + cube + frame_embed + head + bridge + fuse + aggregate;
        CHECK(tally == 4057348);
        const auto c = desk_shapes(128);
        CHECK(parameter_count(c) == tally);
        CHECK(nn::count_parameters(*Forecaster(c)) == tally);
    }
    SUBCASE("full-scale dimension ordering") {
        ForecasterConfig base;
        base.channels = 71;
        base.constant_channels = {69, 70};
        base.lat = 128;
        base.lon = 256;
        const auto multi256 = parameter_count(make_variant_config(base, Variant::MultiScale, 256, true));
        const auto single512 = parameter_count(make_variant_config(base, Variant::SingleScale, 512, true));
        const auto single384 = parameter_count(make_variant_config(base, Variant::SingleScale, 384, true));
        CHECK(multi256 > single512);
        CHECK(single512 > single384);
    }
    SUBCASE("invalid combinations") {
        auto c = micro(Variant::MultiScale);
        c.scales = 5;
        CHECK_THROWS_AS(parameter_count(c), ConfigError);
        c = micro();
        c.heads = 3;
        CHECK_THROWS_AS(Forecaster{c}, ConfigError);
    }
}

TEST_CASE("gradients match central differences in float64") {
    torch::manual_seed(5);
    for (auto variant : {Variant::SingleScale, Variant::MultiScale}) {
        CAPTURE(to_string(variant));
        Forecaster f(micro(variant, true));
        f->to(torch::kFloat64);
        auto hist = torch::randn({1, 2, 3, 8, 16}, torch::kFloat64);
        auto target = torch::randn({1, 2, 3, 8, 16}, torch::kFloat64);
        const auto w = torch::ones({8}, torch::kFloat64);
        const auto r = testing::check_gradients(
            f->parameters(), [&] { return training_loss(f->rollout(hist, 2), target, w, {0, 1}); }, 1e-4, 3);
        CHECK(r.checked > 0);
        CHECK(r.max_rel < 1e-3);
    }
}

}
