#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "swinrdm/grid_data.hpp"
#include "swinrdm/swin_core.hpp"

namespace swinrdm::diffusion {

enum class ScheduleKind { Linear, Cosine };

ScheduleKind schedule_kind_from_string(const std::string& s);
std::string to_string(ScheduleKind k);

/// Variance schedule beta_1..beta_T with cumulative products held in double
/// precision. Indices are 1-based; alpha_bar(0) = 1. A respaced schedule also
/// remembers which timestep of its parent each entry corresponds to, which is
/// what the denoiser is conditioned on.
class DiffusionSchedule {
public:
    /// Linear: betas from 1e-4 to 0.02 scaled by 1000 / T.
    /// Cosine: alpha_bar(t) = f(t) / f(0), f(t) = cos^2(((t / T) + s) / (1 + s) * pi / 2),
    /// s = 0.008, betas capped at 0.999.
    static DiffusionSchedule make(int64_t T, ScheduleKind kind);
    static DiffusionSchedule from_betas(std::vector<double> betas,
                                        std::vector<int64_t> timesteps = {});

    int64_t steps() const { return static_cast<int64_t>(betas_.size()); }
    double beta(int64_t t) const;
    double alpha_bar(int64_t t) const;
    /// Parent timestep that entry t stands for (identity for a plain schedule).
    int64_t timestep(int64_t t) const;
    const std::vector<double>& betas() const { return betas_; }
    const std::vector<double>& alpha_bars() const { return alpha_bars_; }  // entries 1..T
    const std::vector<int64_t>& timesteps() const { return timesteps_; }

    /// Coefficients of q(y_{t-1} | y_t, y_0) = N(mean_x0 * y_0 + mean_xt * y_t, variance).
    struct Posterior {
        double mean_x0;
        double mean_xt;
        double variance;
    };
    Posterior posterior(int64_t t) const;

private:
    friend DiffusionSchedule respace(const DiffusionSchedule& schedule, int64_t n_steps);

    std::vector<double> betas_;
    std::vector<double> alpha_bars_;
    std::vector<int64_t> timesteps_;
};

/// Strided sub-schedule of n steps ending at T: entry i maps to parent timestep
/// round(i * T / n). Its alpha_bar values are the parent's at those timesteps and
/// its betas are recomputed from consecutive alpha_bar ratios.
DiffusionSchedule respace(const DiffusionSchedule& schedule, int64_t n_steps);

/// sqrt(alpha_bar_t) * y0 + sqrt(1 - alpha_bar_t) * eps.
torch::Tensor q_sample(const torch::Tensor& y0, int64_t t, const torch::Tensor& eps,
                       const DiffusionSchedule& schedule);
/// Per-sample timesteps t: [batch] long, one per leading entry of y0.
torch::Tensor q_sample(const torch::Tensor& y0, const torch::Tensor& t, const torch::Tensor& eps,
                       const DiffusionSchedule& schedule);

/// One Markov step of the forward process: sqrt(1 - beta) * y_prev + sqrt(beta) * eps.
torch::Tensor forward_step(const torch::Tensor& y_prev, double beta, const torch::Tensor& eps);

/// Sample from the Gaussian posterior with y_0 := y0_hat. The final step (t = 1)
/// has zero variance and ignores `noise`.
torch::Tensor posterior_step(const torch::Tensor& y_t, const torch::Tensor& y0_hat, int64_t t,
                             const DiffusionSchedule& schedule, const torch::Tensor& noise);

/// Anything that maps (y_t, conditioning, t, k) to a prediction. The network
/// output is read as y0 or as eps depending on the objective it was trained for.
class Denoiser {
public:
    virtual ~Denoiser() = default;
    /// y_t: [B, C, H, W]; cond: [B, Cc, H, W]; t, k: [B] long.
    virtual torch::Tensor predict(const torch::Tensor& y_t, const torch::Tensor& cond,
                                  const torch::Tensor& t, const torch::Tensor& k) = 0;
};

struct DenoiserConfig {
    int64_t target_channels = 6;
    int64_t cond_channels = 8;
    int64_t base_width = 32;
    std::vector<int64_t> multipliers = {1, 2, 4};
    int64_t max_k = 20;      // largest forecast step the k-embedding accepts
    int64_t max_t = 1000;    // largest diffusion timestep
    /// Adds the upsampled low-resolution field (the first target_channels of
    /// cond) to the network output, so the network models the residual detail.
    bool condition_skip = true;

    nlohmann::json to_json() const;
    static DenoiserConfig from_json(const nlohmann::json& j);
};

/// U-shaped convolutional network with skip connections. Diffusion step t goes
/// through a sinusoidal embedding and an MLP; forecast step k has a learned
/// table; the two embeddings are summed and injected into every residual block.
class UNetDenoiserImpl : public torch::nn::Module, public Denoiser {
public:
    explicit UNetDenoiserImpl(DenoiserConfig config);

    torch::Tensor forward(const torch::Tensor& y_t, const torch::Tensor& cond,
                          const torch::Tensor& t, const torch::Tensor& k);
    torch::Tensor predict(const torch::Tensor& y_t, const torch::Tensor& cond,
                          const torch::Tensor& t, const torch::Tensor& k) override {
        return forward(y_t, cond, t, k);
    }

    const DenoiserConfig& config() const { return config_; }

private:
    DenoiserConfig config_;
    torch::nn::Sequential t_mlp_{nullptr};
    torch::nn::Embedding k_table_{nullptr};
    nn::PeriodicConv2d input_conv_{nullptr};
    torch::nn::ModuleList down_blocks_{nullptr}, downsamplers_{nullptr};
    torch::nn::ModuleList up_blocks_{nullptr}, upsamplers_{nullptr};
    torch::nn::ModuleList mid_{nullptr};
    torch::nn::GroupNorm out_norm_{nullptr};
    nn::PeriodicConv2d out_conv_{nullptr};
};
TORCH_MODULE(UNetDenoiser);

/// Sinusoidal embedding of integer steps: [B] -> [B, dim].
torch::Tensor timestep_embedding(const torch::Tensor& t, int64_t dim);

/// One training element for the super-resolution objectives.
struct SrBatch {
    torch::Tensor y0;    // [B, C, H, W] normalized high-resolution target channels
    torch::Tensor cond;  // [B, Cc, H, W] conditioning stack
    torch::Tensor k;     // [B] long forecast step
};

/// t ~ U{1..T} per element, y_t = q_sample(y0, t, eps), MSE(y0, f(y_t, cond, t, k)).
torch::Tensor loss_x0(const SrBatch& batch, const DiffusionSchedule& schedule, Denoiser& model,
                      torch::Generator& gen);
/// Same sampling with eps as the regression target.
torch::Tensor loss_eps(const SrBatch& batch, const DiffusionSchedule& schedule, Denoiser& model,
                       torch::Generator& gen);

/// Conditioning stack for the denoiser: bilinear upsampling of the predicted
/// channels of the normalized low-resolution frame, followed by the
/// high-resolution constant fields. lr: [B, C, h, w]; hr_constants: [Cc, H, W].
torch::Tensor make_condition(const torch::Tensor& lr, const torch::Tensor& hr_constants,
                             const data::VariableCatalog& catalog, int64_t sr_factor);

struct SamplerOptions {
    int64_t steps = 10;
    int64_t members = 1;
    uint64_t seed = 0;
    int64_t sr_factor = 4;
};

/// Seed of ensemble member m; members draw from disjoint generator streams.
uint64_t member_seed(uint64_t seed, int64_t member);

struct EnsembleForecast {
    std::vector<data::FieldGrid> members;  // physical units, all catalog channels
    std::vector<uint64_t> member_seeds;
    data::FieldGrid mean;
    int64_t forecast_step = 0;
};

/// Ensemble super-resolution of one normalized low-resolution frame with the
/// respaced reverse chain. hr_constants holds the constant channels in catalog
/// order on the fine grid; latitudes/longitudes describe the fine grid.
EnsembleForecast sample(const data::FieldGrid& lr_normalized, int64_t k,
                        const DiffusionSchedule& schedule, Denoiser& model,
                        const SamplerOptions& options, const data::VariableCatalog& catalog,
                        const torch::Tensor& hr_constants, const std::vector<double>& hr_latitudes,
                        const std::vector<double>& hr_longitudes);

/// Normalized reverse chain for a batch of conditions; returns [B, C, H, W].
/// `generators` supplies one random stream per batch element.
torch::Tensor sample_normalized(const torch::Tensor& cond, const torch::Tensor& k,
                                const DiffusionSchedule& respaced, Denoiser& model,
                                int64_t target_channels, std::vector<torch::Generator>& generators);

/// Deterministic regression super-resolution baseline: full-resolution
/// convolutions around a windowed-attention trunk at 1/4 resolution, predicting
/// the residual over the bilinear upsample.
struct RegressionSrConfig {
    int64_t target_channels = 6;
    int64_t cond_channels = 8;
    int64_t width = 24;
    int64_t dim = 48;
    int64_t depth = 4;
    int64_t window = 8;
    int64_t patch = 4;
    int64_t lat = 64;  // fine grid
    int64_t lon = 128;

    nlohmann::json to_json() const;
    static RegressionSrConfig from_json(const nlohmann::json& j);
};

class RegressionSrImpl : public torch::nn::Module {
public:
    explicit RegressionSrImpl(RegressionSrConfig config);
    /// cond: [B, Cc, H, W] -> [B, target_channels, H, W] normalized.
    torch::Tensor forward(const torch::Tensor& cond);
    const RegressionSrConfig& config() const { return config_; }

private:
    RegressionSrConfig config_;
    nn::PeriodicConv2d shallow_{nullptr};
    nn::PatchEmbed embed_{nullptr};
    nn::SwinStage trunk_{nullptr};
    nn::PatchUnembed unembed_{nullptr};
    nn::PeriodicConv2d tail_{nullptr};
};
TORCH_MODULE(RegressionSr);

} // namespace swinrdm::diffusion
