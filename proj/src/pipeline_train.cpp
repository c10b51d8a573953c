#include <chrono>
#include <cmath>
#include <numbers>

#include "swinrdm/error.hpp"
#include "swinrdm/log.hpp"
#include "swinrdm/pipeline.hpp"

namespace swinrdm::pipeline {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

double scheduled_lr(const OptimizerSection& o, int64_t step, int64_t total) {
    if (o.schedule == "constant") return o.learning_rate;
    const double frac = static_cast<double>(step) / static_cast<double>(std::max<int64_t>(total, 1));
    return 0.5 * o.learning_rate * (1.0 + std::cos(std::numbers::pi * frac));
}

std::unique_ptr<torch::optim::AdamW> make_optimizer(torch::nn::Module& m, const OptimizerSection& o) {
    return std::make_unique<torch::optim::AdamW>(
        m.parameters(), torch::optim::AdamWOptions(o.learning_rate).weight_decay(o.weight_decay));
}

void set_lr(torch::optim::Optimizer& opt, double lr) {
    for (auto& group : opt.param_groups()) {
        static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
    }
}

void apply_step(torch::optim::Optimizer& opt, torch::nn::Module& m, const OptimizerSection& o) {
    if (o.clip_grad > 0.0) torch::nn::utils::clip_grad_norm_(m.parameters(), o.clip_grad);
    opt.step();
}

void check_finite(const torch::Tensor& loss, const std::string& what, int64_t epoch, int64_t step) {
    const double v = loss.item<double>();
    if (!std::isfinite(v)) {
        throw TrainingDiverged(what + " loss became non-finite (" + std::to_string(v) + ")",
                               static_cast<int>(epoch), static_cast<long>(step));
    }
}

/// Windows [B, history + horizon, C, h, w] from the normalized coarse series.
torch::Tensor gather_windows(const PreparedData& data, const std::vector<int64_t>& starts,
                             const torch::Tensor& picks, int64_t length) {
    std::vector<torch::Tensor> v;
    auto acc = picks.accessor<int64_t, 1>();
    for (int64_t i = 0; i < picks.size(0); ++i) {
        v.push_back(data.lr_norm.narrow(0, starts[static_cast<size_t>(acc[i])], length));
    }
    return torch::stack(v);
}

/// Up to n evenly spaced entries of xs.
std::vector<int64_t> spread(const std::vector<int64_t>& xs, int64_t n) {
    const auto size = static_cast<int64_t>(xs.size());
    if (n <= 0 || size <= n) return xs;
    std::vector<int64_t> out;
    for (int64_t i = 0; i < n; ++i) out.push_back(xs[static_cast<size_t>(i * size / n)]);
    return out;
}

} // namespace

double validation_loss(forecast::ForecasterImpl& model, const ExperimentConfig& config,
                       const PreparedData& data) {
    torch::NoGradGuard no_grad;
    const auto starts = spread(window_starts(config, data, data.val), config.forecaster.val_windows);
    if (starts.empty()) throw DataError("validation split holds no complete window");
    const int64_t H = config.forecaster.model.history, K = config.forecaster.horizon;
    const auto weights = metrics::lat_weights(data.lr_lats).tensor(torch::kFloat32);
    const auto predicted = data.catalog.predicted_channels();
    double total = 0.0;
    int64_t count = 0;
    for (size_t b = 0; b < starts.size(); b += 16) {
        const auto n = static_cast<int64_t>(std::min<size_t>(16, starts.size() - b));
        auto picks = torch::arange(static_cast<int64_t>(b), static_cast<int64_t>(b) + n, torch::kLong);
        auto w = gather_windows(data, starts, picks, H + K);
        auto pred = model.rollout(w.narrow(1, 0, H), K);
        total += forecast::training_loss(pred, w.narrow(1, H, K), weights, predicted).item<double>() *
                 static_cast<double>(n);
        count += n;
    }
    return total / static_cast<double>(count);
}

TrainResult train_forecaster(const ExperimentConfig& config, const PreparedData& data,
                             const fs::path& out_dir) {
    const auto t0 = Clock::now();
    const auto& opt_cfg = config.forecaster_optimizer;
    torch::manual_seed(config.seed);
    const auto model_cfg = resolve_forecaster_config(config, data);
    forecast::Forecaster model(model_cfg);
    auto opt = make_optimizer(*model, opt_cfg);

    const auto starts = window_starts(config, data, data.train);
    if (starts.empty()) throw DataError("training split holds no complete window");
    const int64_t H = model_cfg.history, K = config.forecaster.horizon;
    const auto weights = metrics::lat_weights(data.lr_lats).tensor(torch::kFloat32);
    const auto predicted = data.catalog.predicted_channels();
    auto gen = at::detail::createCPUGenerator(config.seed + 0x5eed);

    TrainResult result;
    result.record = RunRecord("forecaster", config.hash());
    result.checkpoint = out_dir / "forecaster.ckpt";
    result.best_val_loss = std::numeric_limits<double>::infinity();
    const int64_t total = opt_cfg.epochs * opt_cfg.iters_per_epoch;
    int64_t step = 0;
    for (int64_t epoch = 1; epoch <= opt_cfg.epochs; ++epoch) {
        const auto te = Clock::now();
        model->train();
        double sum = 0.0;
        double lr = 0.0;
        for (int64_t it = 0; it < opt_cfg.iters_per_epoch; ++it, ++step) {
            lr = scheduled_lr(opt_cfg, step, total);
            set_lr(*opt, lr);
            auto picks = torch::randint(0, static_cast<int64_t>(starts.size()), {opt_cfg.batch_size}, gen,
                                        torch::kLong);
            auto w = gather_windows(data, starts, picks, H + K);
            opt->zero_grad();
            auto pred = model->rollout(w.narrow(1, 0, H), K);
            auto loss = forecast::training_loss(pred, w.narrow(1, H, K), weights, predicted);
            check_finite(loss, "forecaster", epoch, step);
            loss.backward();
            apply_step(*opt, *model, opt_cfg);
            sum += loss.item<double>();
        }
        model->eval();
        const double val = validation_loss(*model, config, data);
        if (!std::isfinite(val)) {
            throw TrainingDiverged("forecaster validation loss became non-finite", static_cast<int>(epoch),
                                   static_cast<long>(step));
        }
        const double train_loss = sum / static_cast<double>(opt_cfg.iters_per_epoch);
        result.record.add_epoch({epoch, train_loss, val, lr, seconds_since(te)});
        log_info("forecaster epoch ", epoch, "/", opt_cfg.epochs, " train ", train_loss, " val ", val);
        if (val < result.best_val_loss) {
            result.best_val_loss = val;
            save_checkpoint(*model, "forecaster", model_cfg.to_json(), data.catalog, config.hash(),
                            result.checkpoint);
        }
    }
    result.checkpoint_id = read_checkpoint(result.checkpoint).id();
    result.record.add_checkpoint(result.checkpoint_id, result.checkpoint);
    result.record.add_timing("train", seconds_since(t0));
    result.record.save(out_dir / "forecaster_record.json");
    return result;
}

std::vector<int64_t> draw_forecast_steps(int64_t n, int64_t horizon, torch::Generator& gen) {
    if (horizon < 1) throw ConfigError("horizon must be positive");
    auto t = torch::randint(1, horizon + 1, {n}, gen, torch::kLong);
    return {t.data_ptr<int64_t>(), t.data_ptr<int64_t>() + n};
}

namespace {

/// Frozen-forecaster rollouts from each start: [N, horizon, C, h, w].
torch::Tensor cached_rollouts(forecast::ForecasterImpl& model, const PreparedData& data,
                              const std::vector<int64_t>& starts, int64_t H, int64_t K) {
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> chunks;
    for (size_t b = 0; b < starts.size(); b += 32) {
        const auto n = static_cast<int64_t>(std::min<size_t>(32, starts.size() - b));
        auto picks = torch::arange(static_cast<int64_t>(b), static_cast<int64_t>(b) + n, torch::kLong);
        auto w = gather_windows(data, starts, picks, H);
        chunks.push_back(model.rollout(w, K));
    }
    return torch::cat(chunks).contiguous();
}

struct SrSamples {
    torch::Tensor cond;  // [B, Cc, H, W]
    torch::Tensor y0;    // [B, C, H, W]
    torch::Tensor k;     // [B]
};

SrSamples make_sr_samples(const PreparedData& data, const torch::Tensor& rollouts,
                          const std::vector<int64_t>& starts, const std::vector<int64_t>& picks,
                          const std::vector<int64_t>& ks, int64_t H, int64_t sr_factor) {
    std::vector<torch::Tensor> xs;
    std::vector<int64_t> steps;
    for (size_t i = 0; i < picks.size(); ++i) {
        xs.push_back(rollouts[picks[i]][ks[i] - 1]);
        steps.push_back(starts[static_cast<size_t>(picks[i])] + H + ks[i] - 1);
    }
    SrSamples s;
    s.cond = diffusion::make_condition(torch::stack(xs), data.hr_constants, data.catalog, sr_factor);
    s.y0 = data.hr_norm(steps).index_select(1, torch::tensor(data.catalog.predicted_channels(), torch::kLong));
    s.k = torch::tensor(ks, torch::kLong);
    return s;
}

} // namespace

SrTrainResult train_sr(const ExperimentConfig& config, const PreparedData& data,
                       const fs::path& forecaster_checkpoint, const fs::path& out_dir, bool train_regression) {
    const auto t0 = Clock::now();
    const auto ckpt = read_checkpoint(forecaster_checkpoint);
    if (ckpt.catalog_hash != data.catalog.layout_hash()) {
        throw DataError("forecaster checkpoint was trained on a different catalog layout");
    }
    auto forecaster = load_forecaster(ckpt);
    const auto& fc = forecaster->config();
    const int64_t H = fc.history, K = config.forecaster.horizon;
    const auto f = config.data.sr_factor;
    const auto& opt_cfg = config.sr_optimizer;

    const auto train_starts = window_starts(config, data, data.train);
    const auto val_starts = spread(window_starts(config, data, data.val), 32);
    if (train_starts.empty() || val_starts.empty()) throw DataError("SR training needs train and val windows");
    const auto tc = Clock::now();
    const auto train_rollouts = cached_rollouts(*forecaster, data, train_starts, H, K);
    const auto val_rollouts = cached_rollouts(*forecaster, data, val_starts, H, K);
    const double cache_seconds = seconds_since(tc);

    const auto schedule = diffusion::DiffusionSchedule::make(config.diffusion.timesteps, config.diffusion.kind);
    const bool x0 = config.diffusion.objective == "x0";
    torch::manual_seed(config.seed + 1);
    diffusion::UNetDenoiser denoiser(resolve_denoiser_config(config, data));
    torch::manual_seed(config.seed + 2);
    diffusion::RegressionSr regression(resolve_regression_config(config, data));
    auto opt_d = make_optimizer(*denoiser, opt_cfg);
    auto opt_r = make_optimizer(*regression, opt_cfg);

    // Fixed validation set: every val window with k cycling through the horizon.
    std::vector<int64_t> val_picks, val_ks;
    for (size_t i = 0; i < val_starts.size(); ++i) {
        val_picks.push_back(static_cast<int64_t>(i));
        val_ks.push_back(static_cast<int64_t>(i) % K + 1);
    }
    const auto val = make_sr_samples(data, val_rollouts, val_starts, val_picks, val_ks, H, f);
    auto val_losses = [&]() {
        torch::NoGradGuard no_grad;
        denoiser->eval();
        regression->eval();
        torch::Generator vg = at::detail::createCPUGenerator(config.seed + 0xda1);
        diffusion::SrBatch b{val.y0, val.cond, val.k};
        const double d = (x0 ? diffusion::loss_x0(b, schedule, *denoiser, vg)
                             : diffusion::loss_eps(b, schedule, *denoiser, vg))
                             .item<double>();
        const double r = torch::mse_loss(regression->forward(val.cond), val.y0).item<double>();
        denoiser->train();
        regression->train();
        return std::pair{d, r};
    };

    SrTrainResult result;
    result.diffusion.record = RunRecord("denoiser", config.hash());
    result.regression.record = RunRecord("regression_sr", config.hash());
    result.diffusion.checkpoint = out_dir / "denoiser.ckpt";
    result.regression.checkpoint = out_dir / "regression_sr.ckpt";
    result.diffusion.best_val_loss = result.regression.best_val_loss = std::numeric_limits<double>::infinity();
    result.diffusion.record.add_timing("rollout_cache", cache_seconds);

    auto gen = at::detail::createCPUGenerator(config.seed + 0x5a5a);
    torch::Generator noise_gen = at::detail::createCPUGenerator(config.seed + 0x7e7e);
    const int64_t total = opt_cfg.epochs * opt_cfg.iters_per_epoch;
    const auto N = static_cast<int64_t>(train_starts.size());
    int64_t step = 0;
    for (int64_t epoch = 1; epoch <= opt_cfg.epochs; ++epoch) {
        const auto te = Clock::now();
        double sum_d = 0.0, sum_r = 0.0, lr = 0.0, sec_r = 0.0;
        for (int64_t it = 0; it < opt_cfg.iters_per_epoch; ++it, ++step) {
            lr = scheduled_lr(opt_cfg, step, total);
            auto picks_t = torch::randint(0, N, {opt_cfg.batch_size}, gen, torch::kLong);
            std::vector<int64_t> picks(picks_t.data_ptr<int64_t>(), picks_t.data_ptr<int64_t>() + picks_t.numel());
            const auto ks = draw_forecast_steps(opt_cfg.batch_size, K, gen);
            const auto s = make_sr_samples(data, train_rollouts, train_starts, picks, ks, H, f);

            set_lr(*opt_d, lr);
            opt_d->zero_grad();
            diffusion::SrBatch b{s.y0, s.cond, s.k};
            auto loss = x0 ? diffusion::loss_x0(b, schedule, *denoiser, noise_gen)
                           : diffusion::loss_eps(b, schedule, *denoiser, noise_gen);
            check_finite(loss, "denoiser", epoch, step);
            loss.backward();
            apply_step(*opt_d, *denoiser, opt_cfg);
            sum_d += loss.item<double>();

            if (train_regression) {
                const auto tr = Clock::now();
                set_lr(*opt_r, lr);
                opt_r->zero_grad();
                auto lr_loss = torch::mse_loss(regression->forward(s.cond), s.y0);
                check_finite(lr_loss, "regression SR", epoch, step);
                lr_loss.backward();
                apply_step(*opt_r, *regression, opt_cfg);
                sum_r += lr_loss.item<double>();
                sec_r += seconds_since(tr);
            }
        }
        const auto [vd, vr] = val_losses();
        const double n = static_cast<double>(opt_cfg.iters_per_epoch);
        const double total_sec = seconds_since(te);
        result.diffusion.record.add_epoch({epoch, sum_d / n, vd, lr, total_sec - sec_r});
        log_info("sr epoch ", epoch, "/", opt_cfg.epochs, " denoiser train ", sum_d / n, " val ", vd);
        if (vd < result.diffusion.best_val_loss) {
            result.diffusion.best_val_loss = vd;
            save_checkpoint(*denoiser, "denoiser", denoiser->config().to_json(), data.catalog, config.hash(),
                            result.diffusion.checkpoint);
        }
        if (train_regression) {
            result.regression.record.add_epoch({epoch, sum_r / n, vr, lr, sec_r});
            log_info("sr epoch ", epoch, "/", opt_cfg.epochs, " regression train ", sum_r / n, " val ", vr);
            if (vr < result.regression.best_val_loss) {
                result.regression.best_val_loss = vr;
                save_checkpoint(*regression, "regression_sr", regression->config().to_json(), data.catalog,
                                config.hash(), result.regression.checkpoint);
            }
        }
    }
    for (auto* r : {&result.diffusion, &result.regression}) {
        if (!fs::exists(r->checkpoint)) continue;
        r->checkpoint_id = read_checkpoint(r->checkpoint).id();
        r->record.add_checkpoint(r->checkpoint_id, r->checkpoint);
    }
    result.diffusion.record.add_table("forecaster", {{"checkpoint", ckpt.id()}});
    result.diffusion.record.add_timing("train", seconds_since(t0));
    result.diffusion.record.save(out_dir / "denoiser_record.json");
    if (train_regression) result.regression.record.save(out_dir / "regression_sr_record.json");
    return result;
}

} // namespace swinrdm::pipeline
