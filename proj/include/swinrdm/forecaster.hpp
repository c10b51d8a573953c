#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "swinrdm/swin_core.hpp"

namespace swinrdm::forecast {

enum class Variant { SingleScale, MultiScale };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct ForecasterConfig {
    int64_t channels = 8;          // catalog channel count (inputs and outputs)
    std::vector<int64_t> constant_channels;
    int64_t history = 6;
    int64_t lat = 32;              // low-resolution grid
    int64_t lon = 64;
    int64_t enc_dim = 768;
    int64_t dec_dim = 512;
    int64_t depth = 6;             // blocks per scale
    int64_t window = 8;
    int64_t heads = 0;             // 0 selects default_heads(dim) per scale
    double mlp_ratio = 4.0;
    bool aggregation = true;
    Variant variant = Variant::SingleScale;
    int64_t scales = 4;            // multi-scale only

    /// Decoder feature dimension of scale s (0-based).
    int64_t dec_dim_at(int64_t s) const;
    int64_t enc_dim_at(int64_t s) const;
    int64_t heads_for(int64_t dim) const;
    int64_t num_scales() const { return variant == Variant::MultiScale ? scales : 1; }

    /// Throws ConfigError on inconsistent settings.
    void validate() const;

    nlohmann::json to_json() const;
    static ForecasterConfig from_json(const nlohmann::json& j);
};

/// Config for a named ablation cell. `dim` is the decoder dimension; the encoder
/// runs at 1.5x for the single-scale design and at the same width for multi-scale.
ForecasterConfig make_variant_config(const ForecasterConfig& base, Variant variant, int64_t dim,
                                     bool aggregation);

/// Closed-form parameter count for a configuration, without building it.
int64_t parameter_count(const ForecasterConfig& config);

/// Recurrent feature maps, one per scale, each [batch, dec_dim_at(s), h_s, w_s].
struct HiddenState {
    std::vector<torch::Tensor> levels;
    int64_t step = 0;
};

struct StepOutput {
    HiddenState hidden;
    torch::Tensor frame;                      // [batch, channels, lat, lon]
    std::vector<torch::Tensor> block_outputs;  // finest-scale decoder blocks
};

class ForecasterImpl : public torch::nn::Module {
public:
    explicit ForecasterImpl(ForecasterConfig config);

    /// history: [batch, history, channels, lat, lon] in normalized units.
    HiddenState encode(const torch::Tensor& history);

    /// One recurrent step: fuse the hidden state with the embedded frame x_k,
    /// run the decoder blocks and predict x_{k+1} = x_k + delta.
    StepOutput step(const HiddenState& hidden, const torch::Tensor& frame);

    /// Free-running rollout of `steps` frames: [batch, steps, channels, lat, lon].
    /// When `teacher` ([batch, >= steps - 1, channels, lat, lon]) is given, step t
    /// consumes teacher frame t - 1 instead of the model's own previous output.
    /// Constant channels of every output equal those of the last history frame.
    torch::Tensor rollout(const torch::Tensor& history, int64_t steps,
                          const std::optional<torch::Tensor>& teacher = std::nullopt);

    const ForecasterConfig& config() const { return config_; }

    /// Zeroes the output head so every step predicts no change.
    void zero_head();

private:
    torch::Tensor reinject_constants(const torch::Tensor& frame, const torch::Tensor& source) const;

    ForecasterConfig config_;
    torch::Tensor const_mask_;  // [1, channels, 1, 1], 1 on constant channels

    nn::CubeEmbed cube_{nullptr};
    std::vector<nn::SwinStage> enc_stages_;
    std::vector<torch::nn::Conv2d> enc_merges_;  // between encoder scales
    std::vector<torch::nn::Conv2d> bridges_;     // encoder -> decoder dims, 1x1

    nn::PatchEmbed frame_embed_{nullptr};
    std::vector<torch::nn::Conv2d> fuses_;       // hidden-state projection, 1x1
    std::vector<nn::SwinStage> dec_stages_;
    std::vector<torch::nn::Conv2d> aggregators_; // (depth * dim) -> dim, 1x1
    std::vector<torch::nn::Conv2d> dec_merges_;
    std::vector<torch::nn::ConvTranspose2d> dec_ups_;
    nn::PatchUnembed head_{nullptr};
};
TORCH_MODULE(Forecaster);

/// Mean over batch, steps and predicted channels of the latitude-weighted squared
/// error. pred/target: [batch, steps, channels, lat, lon]; weights: [lat].
torch::Tensor training_loss(const torch::Tensor& pred, const torch::Tensor& target,
                            const torch::Tensor& weights,
                            const std::vector<int64_t>& predicted_channels);

} // namespace swinrdm::forecast
