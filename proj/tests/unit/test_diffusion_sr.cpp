#include <cmath>
#include <set>

#include "helpers.hpp"
#include "swinrdm/diffusion_sr.hpp"
#include "swinrdm/error.hpp"

using namespace swinrdm;
using namespace swinrdm::diffusion;

namespace {

/// Returns the stored clean target whatever the inputs.
struct OracleX0 : Denoiser {
    torch::Tensor y0;
    torch::Tensor predict(const torch::Tensor&, const torch::Tensor&, const torch::Tensor&,
                          const torch::Tensor&) override {
        return y0;
    }
};

/// Recovers eps from y_t and the known clean target via the q_sample identity.
struct OracleEps : Denoiser {
    torch::Tensor y0;
    const DiffusionSchedule* schedule = nullptr;
    torch::Tensor predict(const torch::Tensor& y_t, const torch::Tensor&, const torch::Tensor& t,
                          const torch::Tensor&) override {
        auto ab = torch::tensor(schedule->alpha_bars(), torch::kFloat64).index_select(0, t - 1);
        ab = ab.view({-1, 1, 1, 1}).to(y_t.scalar_type());
        return (y_t - ab.sqrt() * y0) / (1 - ab).sqrt();
    }
};

struct Zero : Denoiser {
    torch::Tensor predict(const torch::Tensor& y_t, const torch::Tensor&, const torch::Tensor&,
                          const torch::Tensor&) override {
        return torch::zeros_like(y_t);
    }
};

DenoiserConfig micro_denoiser() {
    DenoiserConfig c;
    c.target_channels = 2;
    c.cond_channels = 3;
    c.base_width = 4;
    c.multipliers = {1, 2};
    c.max_k = 4;
    c.max_t = 20;
    return c;
}

void randomize(torch::nn::Module& m, double scale, uint64_t seed) {
    torch::NoGradGuard ng;
    auto gen = at::detail::createCPUGenerator(seed);
    for (auto& p : m.parameters()) p.copy_(torch::randn(p.sizes(), gen, p.options()) * scale);
}

} // namespace

TEST_SUITE("diffusion_sr") {

TEST_CASE("schedules") {
    const auto one = DiffusionSchedule::from_betas({0.5});
    CHECK(one.alpha_bar(1) == 0.5);
    const auto two = DiffusionSchedule::from_betas({0.5, 0.5});
    CHECK(two.alpha_bars() == std::vector<double>{0.5, 0.25});
    CHECK(two.alpha_bar(0) == 1.0);

    const auto lin = DiffusionSchedule::make(1000, ScheduleKind::Linear);
    CHECK(lin.alpha_bar(1000) < 1e-4);
    CHECK(lin.beta(1) == doctest::Approx(1e-4));
    CHECK(lin.beta(1000) == doctest::Approx(0.02));
    const auto cos = DiffusionSchedule::make(1000, ScheduleKind::Cosine);
    for (int64_t t = 1; t <= 1000; ++t) CHECK(cos.alpha_bar(t) < cos.alpha_bar(t - 1));

    CHECK_THROWS_AS(DiffusionSchedule::make(0, ScheduleKind::Linear), ConfigError);
    CHECK_THROWS_AS(schedule_kind_from_string("sigmoid"), ConfigError);
    CHECK_THROWS_AS(DiffusionSchedule::from_betas({0.5, 1.0}), ConfigError);
}

TEST_CASE("forward process") {
    const auto s = DiffusionSchedule::make(100, ScheduleKind::Linear);
    torch::manual_seed(0);
    auto y0 = torch::randn({3, 4}, torch::kFloat64);
    auto eps = torch::randn({3, 4}, torch::kFloat64);
    const int64_t t = 37;
    const double ab = s.alpha_bar(t);

    CHECK(torch::allclose(q_sample(y0, t, torch::zeros_like(y0), s), std::sqrt(ab) * y0, 0, 1e-15));
    CHECK(torch::allclose(q_sample(torch::zeros_like(y0), t, eps, s), std::sqrt(1 - ab) * eps, 0, 1e-15));
    CHECK(torch::equal(forward_step(y0, 0.0, eps), y0));
    CHECK(torch::allclose(forward_step(y0, 0.3, torch::zeros_like(y0)), std::sqrt(0.7) * y0, 0, 1e-15));

    SUBCASE("zero-noise composition equals the closed form") {
        auto y = y0.clone();
        for (int64_t i = 1; i <= t; ++i) y = forward_step(y, s.beta(i), torch::zeros_like(y));
        CHECK((y - q_sample(y0, t, torch::zeros_like(y0), s)).abs().max().item<double>() <= 1e-12);
    }
    SUBCASE("Monte-Carlo moments over 1e5 trials") {
        const int64_t n = 100000;
        const double start = 1.5;
        auto gen = at::detail::createCPUGenerator(11);
        auto y = torch::full({n}, start, torch::kFloat64);
        for (int64_t i = 1; i <= t; ++i) y = forward_step(y, s.beta(i), torch::randn({n}, gen, torch::kFloat64));
        const double mean = y.mean().item<double>();
        const double var = y.var().item<double>();
        const double mu = std::sqrt(ab) * start, v = 1 - ab;
        CHECK(std::abs(mean - mu) <= 3 * std::sqrt(v / n));
        CHECK(std::abs(var - v) <= 3 * v * std::sqrt(2.0 / (n - 1)));
    }
    SUBCASE("per-sample timesteps") {
        auto ts = torch::tensor({1, 50, 100}, torch::kLong);
        const auto y = q_sample(y0, ts, eps, s);
        for (int64_t i = 0; i < 3; ++i) {
            const auto ti = ts[i].item<int64_t>();
            CHECK(torch::allclose(y[i], q_sample(y0[i], ti, eps[i], s), 0, 1e-15));
        }
    }
    CHECK_THROWS_AS(q_sample(y0, 0, eps, s), RangeError);
    CHECK_THROWS_AS(q_sample(y0, 101, eps, s), RangeError);
    CHECK_THROWS_AS(q_sample(y0, 3, eps.narrow(0, 0, 2), s), ShapeError);
}

TEST_CASE("posterior") {
    const auto two = DiffusionSchedule::from_betas({0.5, 0.5});
    const auto p = two.posterior(2);
    CHECK(std::abs(p.mean_x0 - std::sqrt(0.5) * 0.5 / 0.75) <= 1e-12);
    CHECK(std::abs(p.mean_xt - std::sqrt(0.5) * 0.5 / 0.75) <= 1e-12);
    CHECK(std::abs(p.variance - 0.5 / 0.75 * 0.5) <= 1e-12);

    torch::manual_seed(1);
    auto y0 = torch::randn({2, 3}, torch::kFloat64);
    auto yt = torch::randn({2, 3}, torch::kFloat64);
    const auto single = DiffusionSchedule::from_betas({0.4});
    CHECK(torch::equal(posterior_step(yt, y0, 1, single, torch::randn({2, 3}, torch::kFloat64)), y0));
    CHECK_THROWS_AS(posterior_step(yt, y0, 0, single, yt), RangeError);

    SUBCASE("oracle reverse chain reconstructs y0") {
        for (const auto& s : {DiffusionSchedule::make(1000, ScheduleKind::Linear),
                              respace(DiffusionSchedule::make(1000, ScheduleKind::Cosine), 10)}) {
            auto y = q_sample(y0, s.steps(), torch::randn({2, 3}, torch::kFloat64), s);
            for (int64_t t = s.steps(); t >= 1; --t) y = posterior_step(y, y0, t, s, torch::zeros_like(y));
            CHECK((y - y0).abs().max().item<double>() <= 1e-6);
        }
    }
}

TEST_CASE("respacing") {
    const auto s = DiffusionSchedule::make(1000, ScheduleKind::Linear);
    const auto same = respace(s, 1000);
    for (int64_t t = 1; t <= 1000; ++t) {
        CHECK(same.timestep(t) == t);
        CHECK(std::abs(same.beta(t) - s.beta(t)) <= 1e-12);
    }
    const auto single = respace(s, 1);
    CHECK(single.steps() == 1);
    CHECK(single.alpha_bar(1) == s.alpha_bar(1000));

    const auto ten = respace(DiffusionSchedule::make(1000, ScheduleKind::Cosine), 10);
    double prod = 1.0;
    for (double b : ten.betas()) prod *= 1 - b;
    CHECK(std::abs(prod - DiffusionSchedule::make(1000, ScheduleKind::Cosine).alpha_bar(1000)) <= 1e-10);
    CHECK(ten.timestep(10) == 1000);
    for (int64_t i = 1; i <= 10; ++i) CHECK(ten.alpha_bar(i) == DiffusionSchedule::make(1000, ScheduleKind::Cosine).alpha_bar(ten.timestep(i)));
    CHECK_THROWS_AS(respace(s, 1001), ConfigError);
    CHECK_THROWS_AS(respace(s, 0), ConfigError);
}

TEST_CASE("training objectives") {
    const auto s = DiffusionSchedule::make(20, ScheduleKind::Linear);
    torch::manual_seed(2);
    SrBatch batch{torch::randn({4, 2, 4, 8}, torch::kFloat64), torch::zeros({4, 3, 4, 8}, torch::kFloat64),
                  torch::ones({4}, torch::kLong)};
    auto gen = at::detail::createCPUGenerator(3);

    OracleX0 ox;
    ox.y0 = batch.y0;
    CHECK(loss_x0(batch, s, ox, gen).item<double>() == 0.0);
    Zero zero;
    CHECK(loss_x0(batch, s, zero, gen).item<double>() == doctest::Approx(batch.y0.pow(2).mean().item<double>()).epsilon(1e-12));

    OracleEps oe;
    oe.y0 = batch.y0;
    oe.schedule = &s;
    CHECK(loss_eps(batch, s, oe, gen).item<double>() <= 1e-20);

    SrBatch big{torch::zeros({4096, 1, 4, 4}, torch::kFloat64), torch::zeros({4096, 1, 4, 4}, torch::kFloat64),
                torch::ones({4096}, torch::kLong)};
    CHECK(loss_eps(big, s, zero, gen).item<double>() == doctest::Approx(1.0).epsilon(0.02));

    UNetDenoiser net(micro_denoiser());
    net->to(torch::kFloat64);
    randomize(*net, 0.2, 4);
    auto g1 = at::detail::createCPUGenerator(9);
    auto g2 = at::detail::createCPUGenerator(9);
    CHECK(loss_x0(batch, s, *net, g1).item<double>() == loss_x0(batch, s, *net, g2).item<double>());

    SrBatch empty{torch::zeros({0, 2, 4, 8}), torch::zeros({0, 3, 4, 8}), torch::zeros({0}, torch::kLong)};
    CHECK_THROWS_AS(loss_x0(empty, s, zero, gen), DataError);
}

TEST_CASE("U-Net denoiser") {
    torch::manual_seed(5);
    SUBCASE("shape contract at LR 32x64, factor 4") {
        auto catalog = testing::unit_catalog();
        DenoiserConfig c;
        c.base_width = 4;
        c.multipliers = {1, 2};
        UNetDenoiser net(c);
        auto lr = torch::randn({1, 8, 32, 64});
        auto cond = make_condition(lr, torch::zeros({2, 128, 256}), catalog, 4);
        CHECK(cond.sizes() == torch::IntArrayRef({1, 8, 128, 256}));
        torch::NoGradGuard ng;
        const auto y = net->forward(torch::randn({1, 6, 128, 256}), cond, torch::tensor({5}), torch::tensor({1}));
        CHECK(y.sizes() == torch::IntArrayRef({1, 6, 128, 256}));
    }
    SUBCASE("k conditioning is live and the output is deterministic") {
        UNetDenoiser net(micro_denoiser());
        randomize(*net, 0.2, 6);
        torch::NoGradGuard ng;
        auto y = torch::randn({1, 2, 8, 16});
        auto cond = torch::randn({1, 3, 8, 16});
        const auto a = net->forward(y, cond, torch::tensor({7}), torch::tensor({1}));
        const auto b = net->forward(y, cond, torch::tensor({7}), torch::tensor({3}));
        CAPTURE((a - b).abs().max().item<double>());
        CHECK_FALSE(torch::allclose(a, b));
        CHECK(torch::equal(a, net->forward(y, cond, torch::tensor({7}), torch::tensor({1}))));
        CHECK_THROWS_AS(net->forward(y, cond, torch::tensor({7}), torch::tensor({5})), RangeError);
        CHECK_THROWS_AS(net->forward(y, cond, torch::tensor({21}), torch::tensor({1})), RangeError);
        CHECK_THROWS_AS(net->forward(y, cond.narrow(1, 0, 2), torch::tensor({7}), torch::tensor({1})), ShapeError);
    }
    SUBCASE("zero-initialized output layer returns the conditioning skip") {
        UNetDenoiser net(micro_denoiser());
        torch::NoGradGuard ng;
        auto cond = torch::randn({2, 3, 8, 16});
        const auto out = net->forward(torch::randn({2, 2, 8, 16}), cond, torch::tensor({1, 2}), torch::tensor({0, 4}));
        CHECK(torch::allclose(out, cond.narrow(1, 0, 2)));
    }
    SUBCASE("timestep embedding") {
        const auto e = timestep_embedding(torch::tensor({0, 3}), 8);
        CHECK(e.sizes() == torch::IntArrayRef({2, 8}));
        CHECK(torch::allclose(e[0].narrow(0, 0, 4), torch::ones({4}).to(e.scalar_type())));
        CHECK(torch::allclose(e[0].narrow(0, 4, 4), torch::zeros({4}).to(e.scalar_type())));
    }
}

TEST_CASE("gradients match central differences in float64") {
    const auto s = DiffusionSchedule::make(20, ScheduleKind::Cosine);
    UNetDenoiser net(micro_denoiser());
    net->to(torch::kFloat64);
    randomize(*net, 0.3, 7);
    torch::manual_seed(8);
    SrBatch batch{torch::randn({2, 2, 8, 16}, torch::kFloat64), torch::randn({2, 3, 8, 16}, torch::kFloat64),
                  torch::tensor({1, 3})};
    const auto r = testing::check_gradients(net->parameters(), [&] {
        auto gen = at::detail::createCPUGenerator(10);
        return loss_x0(batch, s, *net, gen);
    }, 1e-5, 2);
    CHECK(r.checked > 0);
    CHECK(r.max_rel < 1e-3);

    RegressionSrConfig rc;
    rc.target_channels = 2;
    rc.cond_channels = 3;
    rc.width = 4;
    rc.dim = 8;
    rc.depth = 2;
    rc.window = 4;
    rc.patch = 2;
    rc.lat = 8;
    rc.lon = 16;
    RegressionSr reg(rc);
    reg->to(torch::kFloat64);
    const auto rr = testing::check_gradients(reg->parameters(), [&] {
        return (reg->forward(batch.cond) - batch.y0).pow(2).mean();
    }, 1e-5, 3);
    CHECK(rr.max_rel < 1e-3);
}

TEST_CASE("ensemble sampling") {
    auto catalog = testing::unit_catalog();
    DenoiserConfig c;
    c.base_width = 4;
    c.multipliers = {1, 2};
    c.max_t = 100;
    UNetDenoiser net(c);
    randomize(*net, 0.1, 12);
    const auto s = DiffusionSchedule::make(100, ScheduleKind::Linear);
    torch::manual_seed(13);
    data::FieldGrid lr{torch::randn({8, 4, 8}), data::make_latitudes(4), data::make_longitudes(8), {}};
    const auto constants = torch::randn({2, 16, 32});
    const auto lats = data::make_latitudes(16), lons = data::make_longitudes(32);
    auto run = [&](int64_t members, uint64_t seed, int64_t steps) {
        return sample(lr, 2, s, *net, {steps, members, seed, 4}, catalog, constants, lats, lons);
    };

    SUBCASE("single member is deterministic, seeds differ") {
        const auto a = run(1, 5, 10), b = run(1, 5, 10), d = run(1, 6, 10);
        CHECK(torch::equal(a.members[0].values, b.members[0].values));
        CHECK_FALSE(torch::equal(a.members[0].values, d.members[0].values));
        CHECK(a.members[0].height() == 16);
        CHECK(torch::equal(a.members[0].values.narrow(0, 6, 2), constants));
        CHECK(a.members[0].values[catalog.index("tp")].min().item<double>() >= 0.0);
    }
    SUBCASE("one member with steps = T reduces to the plain reverse chain") {
        const auto ens = run(1, 21, 100);
        auto gen = at::detail::createCPUGenerator(member_seed(21, 0));
        torch::NoGradGuard ng;
        auto cond = make_condition(lr.values.unsqueeze(0), constants, catalog, 4);
        auto y = torch::randn({1, 6, 16, 32}, gen);
        for (int64_t t = 100; t >= 1; --t) {
            auto y0 = net->forward(y, cond, torch::tensor({t}), torch::tensor({2}));
            auto noise = t > 1 ? torch::randn({1, 6, 16, 32}, gen) : torch::zeros_like(y);
            y = posterior_step(y, y0, t, s, noise);
        }
        auto full = torch::cat({y[0], constants}, 0);
        CHECK(torch::allclose(ens.members[0].values, data::denormalize_values(full, catalog), 1e-5, 1e-6));
    }
    SUBCASE("ensemble mean obeys Jensen and members have disjoint seeds") {
        const auto ens = run(6, 30, 10);
        CHECK(ens.members.size() == 6);
        std::set<uint64_t> seeds(ens.member_seeds.begin(), ens.member_seeds.end());
        CHECK(seeds.size() == 6);
        const auto truth = torch::randn({8, 16, 32});
        double mean_member = 0.0;
        for (const auto& m : ens.members) mean_member += (m.values - truth).pow(2).mean().item<double>() / 6.0;
        CHECK((ens.mean.values - truth).pow(2).mean().item<double>() <= mean_member);
    }
    CHECK_THROWS_AS(run(0, 1, 10), ConfigError);
    CHECK_THROWS_AS(run(1, 1, 101), ConfigError);
}

}
