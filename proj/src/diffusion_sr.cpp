#include "swinrdm/diffusion_sr.hpp"

#include <cmath>
#include <numbers>

#include "swinrdm/error.hpp"

namespace swinrdm::diffusion {

namespace F = torch::nn::functional;

ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "linear") return ScheduleKind::Linear;
    if (s == "cosine") return ScheduleKind::Cosine;
    throw ConfigError("unknown schedule kind '" + s + "'");
}

std::string to_string(ScheduleKind k) { return k == ScheduleKind::Cosine ? "cosine" : "linear"; }

// ---------------------------------------------------------------------------
// Schedules

DiffusionSchedule DiffusionSchedule::make(int64_t T, ScheduleKind kind) {
    if (T < 1) throw ConfigError("diffusion schedule needs T >= 1");
    std::vector<double> betas(static_cast<size_t>(T));
    if (kind == ScheduleKind::Linear) {
        const double scale = 1000.0 / static_cast<double>(T);
        const double lo = scale * 1e-4, hi = scale * 0.02;
        for (int64_t i = 0; i < T; ++i) {
            const double frac = T == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(T - 1);
            betas[i] = std::min(lo + (hi - lo) * frac, 0.999);
        }
    } else {
        constexpr double s = 0.008;
        auto f = [T](double t) {
            const double x = (t / static_cast<double>(T) + s) / (1.0 + s) * std::numbers::pi / 2.0;
            return std::cos(x) * std::cos(x);
        };
        for (int64_t i = 0; i < T; ++i) {
            betas[i] = std::min(1.0 - f(static_cast<double>(i + 1)) / f(static_cast<double>(i)), 0.999);
        }
    }
    return from_betas(std::move(betas));
}

DiffusionSchedule DiffusionSchedule::from_betas(std::vector<double> betas,
                                                std::vector<int64_t> timesteps) {
    if (betas.empty()) throw ConfigError("diffusion schedule needs at least one beta");
    DiffusionSchedule s;
    double prod = 1.0;
    for (double b : betas) {
        if (!(b > 0.0 && b < 1.0)) throw ConfigError("every beta must lie in (0, 1)");
        prod *= 1.0 - b;
        s.alpha_bars_.push_back(prod);
    }
    if (timesteps.empty()) {
        for (size_t i = 0; i < betas.size(); ++i) timesteps.push_back(static_cast<int64_t>(i) + 1);
    }
    if (timesteps.size() != betas.size()) throw ConfigError("timesteps and betas differ in length");
    for (size_t i = 1; i < timesteps.size(); ++i) {
        if (timesteps[i] <= timesteps[i - 1]) throw ConfigError("timesteps must strictly increase");
    }
    s.betas_ = std::move(betas);
    s.timesteps_ = std::move(timesteps);
    return s;
}

double DiffusionSchedule::beta(int64_t t) const {
    if (t < 1 || t > steps()) throw RangeError("diffusion step " + std::to_string(t) + " out of range");
    return betas_[static_cast<size_t>(t - 1)];
}

double DiffusionSchedule::alpha_bar(int64_t t) const {
    if (t == 0) return 1.0;
    if (t < 0 || t > steps()) throw RangeError("diffusion step " + std::to_string(t) + " out of range");
    return alpha_bars_[static_cast<size_t>(t - 1)];
}

int64_t DiffusionSchedule::timestep(int64_t t) const {
    if (t < 1 || t > steps()) throw RangeError("diffusion step " + std::to_string(t) + " out of range");
    return timesteps_[static_cast<size_t>(t - 1)];
}

DiffusionSchedule::Posterior DiffusionSchedule::posterior(int64_t t) const {
    if (t < 1 || t > steps()) throw RangeError("posterior step must lie in [1, T]");
    const double ab = alpha_bar(t), ab_prev = alpha_bar(t - 1), b = beta(t);
    return {std::sqrt(ab_prev) * b / (1.0 - ab), std::sqrt(1.0 - b) * (1.0 - ab_prev) / (1.0 - ab),
            b * (1.0 - ab_prev) / (1.0 - ab)};
}

DiffusionSchedule respace(const DiffusionSchedule& schedule, int64_t n_steps) {
    const int64_t T = schedule.steps();
    if (n_steps < 1 || n_steps > T) {
        throw ConfigError("respacing to " + std::to_string(n_steps) + " steps needs 1 <= n <= " +
                          std::to_string(T));
    }
    std::vector<double> betas, alpha_bars;
    std::vector<int64_t> ts;
    double prev = 1.0;
    for (int64_t i = 1; i <= n_steps; ++i) {
        const auto t = static_cast<int64_t>(std::llround(static_cast<double>(i * T) / static_cast<double>(n_steps)));
        const double ab = schedule.alpha_bar(t);
        betas.push_back(1.0 - ab / prev);
        alpha_bars.push_back(ab);
        ts.push_back(schedule.timestep(t));
        prev = ab;
    }
    auto out = DiffusionSchedule::from_betas(std::move(betas), std::move(ts));
    // Keep the parent's values rather than the re-accumulated products.
    out.alpha_bars_ = std::move(alpha_bars);
    return out;
}

// ---------------------------------------------------------------------------
// Forward and reverse process

torch::Tensor q_sample(const torch::Tensor& y0, int64_t t, const torch::Tensor& eps,
                       const DiffusionSchedule& schedule) {
    if (y0.sizes() != eps.sizes()) throw ShapeError("q_sample: noise shape differs from y0");
    if (t < 1 || t > schedule.steps()) throw RangeError("q_sample: t out of range");
    const double ab = schedule.alpha_bar(t);
    return std::sqrt(ab) * y0 + std::sqrt(1.0 - ab) * eps;
}

torch::Tensor q_sample(const torch::Tensor& y0, const torch::Tensor& t, const torch::Tensor& eps,
                       const DiffusionSchedule& schedule) {
    if (y0.sizes() != eps.sizes()) throw ShapeError("q_sample: noise shape differs from y0");
    if (t.dim() != 1 || t.size(0) != y0.size(0)) throw ShapeError("q_sample: one t per sample");
    if (t.min().item<int64_t>() < 1 || t.max().item<int64_t>() > schedule.steps()) {
        throw RangeError("q_sample: t out of range");
    }
    auto table = torch::tensor(schedule.alpha_bars(), torch::kDouble);
    auto ab = table.index_select(0, t - 1).to(y0.scalar_type());
    std::vector<int64_t> shape(static_cast<size_t>(y0.dim()), 1);
    shape[0] = y0.size(0);
    ab = ab.view(shape);
    return torch::sqrt(ab) * y0 + torch::sqrt(1.0 - ab) * eps;
}

torch::Tensor forward_step(const torch::Tensor& y_prev, double beta, const torch::Tensor& eps) {
    if (y_prev.sizes() != eps.sizes()) throw ShapeError("forward_step: noise shape differs");
    if (beta < 0.0 || beta >= 1.0) throw RangeError("forward_step: beta must lie in [0, 1)");
    return std::sqrt(1.0 - beta) * y_prev + std::sqrt(beta) * eps;
}

torch::Tensor posterior_step(const torch::Tensor& y_t, const torch::Tensor& y0_hat, int64_t t,
                             const DiffusionSchedule& schedule, const torch::Tensor& noise) {
    if (t < 1) throw RangeError("posterior_step needs t >= 1");
    if (y_t.sizes() != y0_hat.sizes()) throw ShapeError("posterior_step: shape mismatch");
    const auto p = schedule.posterior(t);
    if (t == 1) return y0_hat.clone();
    if (noise.sizes() != y_t.sizes()) throw ShapeError("posterior_step: noise shape differs");
    return p.mean_x0 * y0_hat + p.mean_xt * y_t + std::sqrt(p.variance) * noise;
}

// ---------------------------------------------------------------------------
// Denoiser network

nlohmann::json DenoiserConfig::to_json() const {
    return {{"target_channels", target_channels}, {"cond_channels", cond_channels},
            {"base_width", base_width},           {"multipliers", multipliers},
            {"max_k", max_k},                     {"max_t", max_t},
            {"condition_skip", condition_skip}};
}

DenoiserConfig DenoiserConfig::from_json(const nlohmann::json& j) {
    DenoiserConfig c;
    c.target_channels = j.value("target_channels", c.target_channels);
    c.cond_channels = j.value("cond_channels", c.cond_channels);
    c.base_width = j.value("base_width", c.base_width);
    c.multipliers = j.value("multipliers", c.multipliers);
    c.max_k = j.value("max_k", c.max_k);
    c.max_t = j.value("max_t", c.max_t);
    c.condition_skip = j.value("condition_skip", c.condition_skip);
    return c;
}

torch::Tensor timestep_embedding(const torch::Tensor& t, int64_t dim) {
    const int64_t half = dim / 2;
    auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, torch::kDouble) /
                            static_cast<double>(half));
    auto args = t.to(torch::kDouble).unsqueeze(1) * freqs.unsqueeze(0);
    auto emb = torch::cat({torch::cos(args), torch::sin(args)}, 1);
    if (dim % 2 == 1) emb = F::pad(emb, F::PadFuncOptions({0, 1}));
    return emb;
}

namespace {

int64_t groups_for(int64_t channels) {
    int64_t g = std::min<int64_t>(8, channels);
    while (channels % g != 0) --g;
    return g;
}

class ResBlockImpl : public torch::nn::Module {
public:
    ResBlockImpl(int64_t in, int64_t out, int64_t emb_dim) {
        norm1 = register_module("norm1", torch::nn::GroupNorm(groups_for(in), in));
        conv1 = register_module("conv1", nn::PeriodicConv2d(in, out, 3));
        emb_proj = register_module("emb_proj", torch::nn::Linear(emb_dim, 2 * out));
        norm2 = register_module("norm2", torch::nn::GroupNorm(groups_for(out), out));
        conv2 = register_module("conv2", nn::PeriodicConv2d(out, out, 3));
        if (in != out) skip = register_module("skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1)));
    }

    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& emb) {
        auto h = conv1(F::silu(norm1(x)));
        // Scale and shift after the norm so the embedding survives normalization.
        auto ss = emb_proj(F::silu(emb)).unsqueeze(-1).unsqueeze(-1).chunk(2, 1);
        h = norm2(h) * (1 + ss[0]) + ss[1];
        h = conv2(F::silu(h));
        return h + (skip ? skip(x) : x);
    }

private:
    torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
    nn::PeriodicConv2d conv1{nullptr}, conv2{nullptr};
    torch::nn::Linear emb_proj{nullptr};
    torch::nn::Conv2d skip{nullptr};
};
TORCH_MODULE(ResBlock);

class UpsampleImpl : public torch::nn::Module {
public:
    UpsampleImpl(int64_t in, int64_t out) { conv = register_module("conv", nn::PeriodicConv2d(in, out, 3)); }
    torch::Tensor forward(const torch::Tensor& x) {
        return conv(F::interpolate(x, F::InterpolateFuncOptions()
                                          .scale_factor(std::vector<double>{2.0, 2.0})
                                          .mode(torch::kNearest)));
    }

private:
    nn::PeriodicConv2d conv{nullptr};
};
TORCH_MODULE(Upsample);

} // namespace

UNetDenoiserImpl::UNetDenoiserImpl(DenoiserConfig config) : config_(std::move(config)) {
    const auto& c = config_;
    if (c.multipliers.empty() || c.base_width < 1) throw ConfigError("invalid denoiser widths");
    const int64_t emb = 4 * c.base_width;
    t_mlp_ = register_module("t_mlp", torch::nn::Sequential(torch::nn::Linear(c.base_width, emb),
                                                            torch::nn::SiLU(),
                                                            torch::nn::Linear(emb, emb)));
    k_table_ = register_module("k_table", torch::nn::Embedding(c.max_k + 1, emb));
    input_conv_ = register_module("input_conv",
                                  nn::PeriodicConv2d(c.target_channels + c.cond_channels, c.base_width, 3));
    down_blocks_ = register_module("down_blocks", torch::nn::ModuleList());
    downsamplers_ = register_module("downsamplers", torch::nn::ModuleList());
    up_blocks_ = register_module("up_blocks", torch::nn::ModuleList());
    upsamplers_ = register_module("upsamplers", torch::nn::ModuleList());
    mid_ = register_module("mid", torch::nn::ModuleList());

    const auto L = static_cast<int64_t>(c.multipliers.size());
    int64_t prev = c.base_width;
    for (int64_t i = 0; i < L; ++i) {
        const int64_t ch = c.base_width * c.multipliers[i];
        down_blocks_->push_back(ResBlock(prev, ch, emb));
        if (i + 1 < L) downsamplers_->push_back(nn::PeriodicConv2d(ch, ch, 3, 2));
        prev = ch;
    }
    mid_->push_back(ResBlock(prev, prev, emb));
    for (int64_t i = L - 1; i >= 0; --i) {
        const int64_t ch = c.base_width * c.multipliers[i];
        up_blocks_->push_back(ResBlock(prev + ch, ch, emb));
        if (i > 0) upsamplers_->push_back(Upsample(ch, c.base_width * c.multipliers[i - 1]));
        prev = i > 0 ? c.base_width * c.multipliers[i - 1] : ch;
    }
    out_norm_ = register_module("out_norm", torch::nn::GroupNorm(groups_for(prev), prev));
    out_conv_ = register_module("out_conv", nn::PeriodicConv2d(prev, c.target_channels, 3));
    torch::NoGradGuard no_grad;
    out_conv_->conv()->weight.zero_();
    out_conv_->conv()->bias.zero_();
}

torch::Tensor UNetDenoiserImpl::forward(const torch::Tensor& y_t, const torch::Tensor& cond,
                                        const torch::Tensor& t, const torch::Tensor& k) {
    const auto& c = config_;
    if (y_t.dim() != 4 || y_t.size(1) != c.target_channels) {
        throw ShapeError("denoiser input must be [batch, " + std::to_string(c.target_channels) + ", H, W]");
    }
    if (cond.dim() != 4 || cond.size(1) != c.cond_channels || cond.size(0) != y_t.size(0) ||
        cond.size(2) != y_t.size(2) || cond.size(3) != y_t.size(3)) {
        throw ShapeError("conditioning must be [batch, " + std::to_string(c.cond_channels) +
                         "] on the target grid");
    }
    const int64_t factor = int64_t{1} << (c.multipliers.size() - 1);
    if (y_t.size(2) % factor != 0 || y_t.size(3) % factor != 0) {
        throw ShapeError("target grid must be divisible by " + std::to_string(factor));
    }
    if (t.dim() != 1 || k.dim() != 1 || t.size(0) != y_t.size(0) || k.size(0) != y_t.size(0)) {
        throw ShapeError("t and k must hold one entry per batch element");
    }
    if (k.min().item<int64_t>() < 0 || k.max().item<int64_t>() > c.max_k) {
        throw RangeError("forecast step k outside [0, " + std::to_string(c.max_k) + "]");
    }
    if (t.min().item<int64_t>() < 0 || t.max().item<int64_t>() > c.max_t) {
        throw RangeError("diffusion timestep outside [0, " + std::to_string(c.max_t) + "]");
    }

    auto emb = t_mlp_->forward(timestep_embedding(t, c.base_width).to(y_t.scalar_type())) +
               k_table_(k);
    auto h = input_conv_(torch::cat({y_t, cond}, 1));
    std::vector<torch::Tensor> skips;
    const auto L = c.multipliers.size();
    for (size_t i = 0; i < L; ++i) {
        h = down_blocks_[i]->as<ResBlockImpl>()->forward(h, emb);
        skips.push_back(h);
        if (i + 1 < L) h = downsamplers_[i]->as<nn::PeriodicConv2dImpl>()->forward(h);
    }
    h = mid_[0]->as<ResBlockImpl>()->forward(h, emb);
    for (size_t j = 0; j < L; ++j) {
        h = up_blocks_[j]->as<ResBlockImpl>()->forward(torch::cat({h, skips[L - 1 - j]}, 1), emb);
        if (j + 1 < L) h = upsamplers_[j]->as<UpsampleImpl>()->forward(h);
    }
    auto out = out_conv_(F::silu(out_norm_(h)));
    if (c.condition_skip) out = out + cond.narrow(1, 0, c.target_channels);
    return out;
}

// ---------------------------------------------------------------------------
// Objectives

namespace {

struct NoisedBatch {
    torch::Tensor y_t, eps, t;
};

NoisedBatch noise_batch(const SrBatch& batch, const DiffusionSchedule& schedule,
                        torch::Generator& gen) {
    if (!batch.y0.defined() || batch.y0.size(0) == 0) throw DataError("empty super-resolution batch");
    const int64_t B = batch.y0.size(0);
    auto idx = torch::randint(1, schedule.steps() + 1, {B}, gen, torch::kLong);
    auto eps = torch::randn(batch.y0.sizes(), gen, batch.y0.options());
    auto y_t = q_sample(batch.y0, idx, eps, schedule);
    auto parent = torch::tensor(schedule.timesteps(), torch::kLong).index_select(0, idx - 1);
    return {y_t, eps, parent};
}

} // namespace

torch::Tensor loss_x0(const SrBatch& batch, const DiffusionSchedule& schedule, Denoiser& model,
                      torch::Generator& gen) {
    auto n = noise_batch(batch, schedule, gen);
    return F::mse_loss(model.predict(n.y_t, batch.cond, n.t, batch.k), batch.y0);
}

torch::Tensor loss_eps(const SrBatch& batch, const DiffusionSchedule& schedule, Denoiser& model,
                       torch::Generator& gen) {
    auto n = noise_batch(batch, schedule, gen);
    return F::mse_loss(model.predict(n.y_t, batch.cond, n.t, batch.k), n.eps);
}

// ---------------------------------------------------------------------------
// Sampling

torch::Tensor make_condition(const torch::Tensor& lr, const torch::Tensor& hr_constants,
                             const data::VariableCatalog& catalog, int64_t sr_factor) {
    if (lr.dim() != 4 || lr.size(1) != catalog.size()) {
        throw ShapeError("low-resolution input must be [batch, " + std::to_string(catalog.size()) +
                         ", lat, lon]");
    }
    auto idx = torch::tensor(catalog.predicted_channels(), torch::kLong);
    auto up = data::upsample_bilinear(lr.index_select(1, idx), sr_factor);
    const int64_t B = lr.size(0);
    if (hr_constants.size(0) == 0) return up;
    if (hr_constants.dim() != 3 || hr_constants.size(1) != up.size(2) || hr_constants.size(2) != up.size(3)) {
        throw ShapeError("high-resolution constants do not match the upsampled grid");
    }
    return torch::cat({up, hr_constants.to(up.scalar_type()).unsqueeze(0).expand({B, -1, -1, -1})}, 1);
}

uint64_t member_seed(uint64_t seed, int64_t member) {
    // splitmix64 finalizer over (seed, member)
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * static_cast<uint64_t>(member + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

torch::Tensor sample_normalized(const torch::Tensor& cond, const torch::Tensor& k,
                                const DiffusionSchedule& respaced, Denoiser& model,
                                int64_t target_channels, std::vector<torch::Generator>& generators) {
    torch::NoGradGuard no_grad;
    const int64_t B = cond.size(0), H = cond.size(2), W = cond.size(3);
    if (static_cast<int64_t>(generators.size()) != B) {
        throw ConfigError("sampling needs one generator per batch element");
    }
    auto draw = [&] {
        std::vector<torch::Tensor> v;
        v.reserve(static_cast<size_t>(B));
        for (auto& g : generators) v.push_back(torch::randn({target_channels, H, W}, g, cond.options()));
        return torch::stack(v);
    };
    auto y = draw();
    for (int64_t i = respaced.steps(); i >= 1; --i) {
        auto t = torch::full({B}, respaced.timestep(i), torch::kLong);
        auto y0_hat = model.predict(y, cond, t, k);
        auto noise = i > 1 ? draw() : torch::zeros_like(y);
        y = posterior_step(y, y0_hat, i, respaced, noise);
    }
    return y;
}

EnsembleForecast sample(const data::FieldGrid& lr_normalized, int64_t k,
                        const DiffusionSchedule& schedule, Denoiser& model,
                        const SamplerOptions& options, const data::VariableCatalog& catalog,
                        const torch::Tensor& hr_constants, const std::vector<double>& hr_latitudes,
                        const std::vector<double>& hr_longitudes) {
    if (options.members < 1) throw ConfigError("an ensemble needs at least one member");
    const auto respaced = respace(schedule, options.steps);
    const int64_t M = options.members;
    auto lr = lr_normalized.values.unsqueeze(0).expand({M, -1, -1, -1});
    auto cond = make_condition(lr, hr_constants, catalog, options.sr_factor);
    std::vector<torch::Generator> gens;
    EnsembleForecast out;
    out.forecast_step = k;
    for (int64_t m = 0; m < M; ++m) {
        out.member_seeds.push_back(member_seed(options.seed, m));
        gens.push_back(at::detail::createCPUGenerator(out.member_seeds.back()));
    }
    const auto pred_idx = catalog.predicted_channels();
    auto y = sample_normalized(cond, torch::full({M}, k, torch::kLong), respaced, model,
                               static_cast<int64_t>(pred_idx.size()), gens);

    const int64_t H = y.size(2), W = y.size(3);
    auto full = torch::zeros({M, catalog.size(), H, W}, y.options());
    full.index_copy_(1, torch::tensor(pred_idx, torch::kLong), y);
    const auto const_idx = catalog.constant_channels();
    if (!const_idx.empty()) {
        full.index_copy_(1, torch::tensor(const_idx, torch::kLong),
                         hr_constants.to(y.scalar_type()).unsqueeze(0).expand({M, -1, -1, -1}));
    }
    auto physical = data::denormalize_values(full, catalog);
    for (int64_t m = 0; m < M; ++m) {
        out.members.push_back({physical[m].clone(), hr_latitudes, hr_longitudes, lr_normalized.valid_time});
    }
    out.mean = {physical.mean(0), hr_latitudes, hr_longitudes, lr_normalized.valid_time};
    return out;
}

// ---------------------------------------------------------------------------
// Regression baseline

nlohmann::json RegressionSrConfig::to_json() const {
    return {{"target_channels", target_channels}, {"cond_channels", cond_channels},
            {"width", width}, {"dim", dim}, {"depth", depth}, {"window", window},
            {"patch", patch}, {"lat", lat}, {"lon", lon}};
}

RegressionSrConfig RegressionSrConfig::from_json(const nlohmann::json& j) {
    RegressionSrConfig c;
    c.target_channels = j.value("target_channels", c.target_channels);
    c.cond_channels = j.value("cond_channels", c.cond_channels);
    c.width = j.value("width", c.width);
    c.dim = j.value("dim", c.dim);
    c.depth = j.value("depth", c.depth);
    c.window = j.value("window", c.window);
    c.patch = j.value("patch", c.patch);
    c.lat = j.value("lat", c.lat);
    c.lon = j.value("lon", c.lon);
    return c;
}

RegressionSrImpl::RegressionSrImpl(RegressionSrConfig config) : config_(std::move(config)) {
    const auto& c = config_;
    if (c.lat % c.patch != 0 || c.lon % c.patch != 0) {
        throw ConfigError("regression SR grid must be divisible by its patch size");
    }
    shallow_ = register_module("shallow", nn::PeriodicConv2d(c.cond_channels, c.width, 3));
    embed_ = register_module("embed", nn::PatchEmbed(c.width, c.dim, c.patch));
    trunk_ = register_module("trunk", nn::SwinStage(c.dim, nn::default_heads(c.dim), c.depth, c.window,
                                                    c.lat / c.patch, c.lon / c.patch));
    unembed_ = register_module("unembed", nn::PatchUnembed(c.dim, c.width, c.patch));
    tail_ = register_module("tail", nn::PeriodicConv2d(c.width, c.target_channels, 3));
}

torch::Tensor RegressionSrImpl::forward(const torch::Tensor& cond) {
    const auto& c = config_;
    if (cond.dim() != 4 || cond.size(1) != c.cond_channels) {
        throw ShapeError("regression SR expects [batch, " + std::to_string(c.cond_channels) + ", H, W]");
    }
    auto shallow = shallow_(cond);
    auto deep = trunk_->forward(embed_(shallow)).back();
    auto features = shallow + unembed_(deep);
    return cond.narrow(1, 0, c.target_channels) + tail_(F::gelu(features));
}

} // namespace swinrdm::diffusion
