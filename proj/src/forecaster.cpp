#include "swinrdm/forecaster.hpp"

#include <string>

#include "swinrdm/error.hpp"

namespace swinrdm::forecast {

std::string to_string(Variant v) {
    return v == Variant::MultiScale ? "multi" : "single";
}

Variant variant_from_string(const std::string& s) {
    if (s == "single" || s == "single-scale") return Variant::SingleScale;
    if (s == "multi" || s == "multi-scale") return Variant::MultiScale;
    throw ConfigError("unknown forecaster variant '" + s + "'");
}

// ---------------------------------------------------------------------------
// Config

int64_t ForecasterConfig::dec_dim_at(int64_t s) const {
    return variant == Variant::MultiScale ? dec_dim << s : dec_dim;
}

int64_t ForecasterConfig::enc_dim_at(int64_t s) const {
    return variant == Variant::MultiScale ? enc_dim << s : enc_dim;
}

int64_t ForecasterConfig::heads_for(int64_t dim) const {
    return heads > 0 ? heads : nn::default_heads(dim);
}

void ForecasterConfig::validate() const {
    if (channels < 1) throw ConfigError("forecaster needs at least one channel");
    for (int64_t c : constant_channels) {
        if (c < 0 || c >= channels) throw ConfigError("constant channel index out of range");
    }
    if (history < 1 || depth < 1 || enc_dim < 1 || dec_dim < 1) {
        throw ConfigError("history, depth and feature dimensions must be positive");
    }
    if (lat % 2 != 0 || lon % 2 != 0) throw ConfigError("grid dimensions must be even");
    if (variant == Variant::MultiScale) {
        if (scales < 2) throw ConfigError("the multi-scale variant needs at least two scales");
        const int64_t f = int64_t{1} << scales;
        if (lat % f != 0 || lon % f != 0) {
            throw ConfigError("grid " + std::to_string(lat) + "x" + std::to_string(lon) +
                              " cannot be halved across " + std::to_string(scales) + " scales");
        }
    }
    for (int64_t s = 0; s < num_scales(); ++s) {
        for (int64_t dim : {enc_dim_at(s), dec_dim_at(s)}) {
            if (dim % heads_for(dim) != 0) {
                throw ConfigError("dim " + std::to_string(dim) + " not divisible by heads");
            }
        }
        // block_window throws when the window does not tile the longitude axis.
        nn::block_window(window, (lat / 2) >> s, (lon / 2) >> s, true);
    }
}

nlohmann::json ForecasterConfig::to_json() const {
    return {{"channels", channels},   {"constant_channels", constant_channels},
            {"history", history},     {"lat", lat},
            {"lon", lon},             {"enc_dim", enc_dim},
            {"dec_dim", dec_dim},     {"depth", depth},
            {"window", window},       {"heads", heads},
            {"mlp_ratio", mlp_ratio}, {"aggregation", aggregation},
            {"variant", to_string(variant)}, {"scales", scales}};
}

ForecasterConfig ForecasterConfig::from_json(const nlohmann::json& j) {
    ForecasterConfig c;
    c.channels = j.value("channels", c.channels);
    c.constant_channels = j.value("constant_channels", c.constant_channels);
    c.history = j.value("history", c.history);
    c.lat = j.value("lat", c.lat);
    c.lon = j.value("lon", c.lon);
    c.enc_dim = j.value("enc_dim", c.enc_dim);
    c.dec_dim = j.value("dec_dim", c.dec_dim);
    c.depth = j.value("depth", c.depth);
    c.window = j.value("window", c.window);
    c.heads = j.value("heads", c.heads);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.aggregation = j.value("aggregation", c.aggregation);
    c.variant = variant_from_string(j.value("variant", std::string("single")));
    c.scales = j.value("scales", c.scales);
    return c;
}

ForecasterConfig make_variant_config(const ForecasterConfig& base, Variant variant, int64_t dim,
                                     bool aggregation) {
    auto c = base;
    c.variant = variant;
    c.aggregation = aggregation;
    c.dec_dim = dim;
    c.enc_dim = variant == Variant::SingleScale ? dim * 3 / 2 : dim;
    return c;
}

int64_t parameter_count(const ForecasterConfig& c) {
    c.validate();
    const int64_t S = c.num_scales();
    const int64_t C = c.channels;
    auto conv = [](int64_t in, int64_t out, int64_t k) { return in * out * k * k + out; };
    auto stage = [&](int64_t dim, int64_t s) {
        return nn::SwinStageImpl::parameter_count(dim, c.heads_for(dim), c.depth, c.window,
                                                  (c.lat / 2) >> s, (c.lon / 2) >> s, c.mlp_ratio);
    };
    int64_t n = C * c.enc_dim_at(0) * c.history * 4 + c.enc_dim_at(0);  // cube embedding
    n += conv(C, c.dec_dim_at(0), 2);                                    // frame embedding
    n += c.dec_dim_at(0) * C * 4 + C;                                    // transposed head
    for (int64_t s = 0; s < S; ++s) {
        const int64_t e = c.enc_dim_at(s), d = c.dec_dim_at(s);
        n += stage(e, s) + stage(d, s);
        n += conv(e, d, 1);  // bridge
        n += conv(d, d, 1);  // hidden-state fusion
        if (c.aggregation) n += conv(c.depth * d, d, 1);
        if (s + 1 < S) {
            n += conv(e, c.enc_dim_at(s + 1), 2);     // encoder merge
            n += conv(d, c.dec_dim_at(s + 1), 2);     // decoder merge
            n += c.dec_dim_at(s + 1) * d * 4 + d;     // decoder upsampling
        }
    }
    return n;
}

// ---------------------------------------------------------------------------
// Model

namespace {

torch::nn::Conv2d conv1x1(int64_t in, int64_t out) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1));
}

torch::nn::Conv2d merge2x2(int64_t in, int64_t out) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 2).stride(2));
}

} // namespace

ForecasterImpl::ForecasterImpl(ForecasterConfig config) : config_(std::move(config)) {
    config_.validate();
    const auto& c = config_;
    const int64_t S = c.num_scales();

    auto mask = torch::zeros({1, c.channels, 1, 1}, torch::kBool);
    for (int64_t ch : c.constant_channels) mask[0][ch] = true;
    const_mask_ = mask;  // derived from the config, kept out of the dtype-converted buffers

    cube_ = register_module("cube_embed", nn::CubeEmbed(c.channels, c.history, c.enc_dim_at(0)));
    frame_embed_ = register_module("frame_embed", nn::PatchEmbed(c.channels, c.dec_dim_at(0)));
    for (int64_t s = 0; s < S; ++s) {
        const int64_t h = (c.lat / 2) >> s, w = (c.lon / 2) >> s;
        const int64_t e = c.enc_dim_at(s), d = c.dec_dim_at(s);
        const auto tag = std::to_string(s);
        enc_stages_.push_back(register_module(
            "encoder" + tag, nn::SwinStage(e, c.heads_for(e), c.depth, c.window, h, w, c.mlp_ratio)));
        bridges_.push_back(register_module("bridge" + tag, conv1x1(e, d)));
        fuses_.push_back(register_module("fuse" + tag, conv1x1(d, d)));
        dec_stages_.push_back(register_module(
            "decoder" + tag, nn::SwinStage(d, c.heads_for(d), c.depth, c.window, h, w, c.mlp_ratio)));
        if (c.aggregation) {
            aggregators_.push_back(register_module("aggregate" + tag, conv1x1(c.depth * d, d)));
        }
        if (s + 1 < S) {
            enc_merges_.push_back(register_module("encoder_merge" + tag, merge2x2(e, c.enc_dim_at(s + 1))));
            dec_merges_.push_back(register_module("decoder_merge" + tag, merge2x2(d, c.dec_dim_at(s + 1))));
            dec_ups_.push_back(register_module(
                "decoder_up" + tag,
                torch::nn::ConvTranspose2d(
                    torch::nn::ConvTranspose2dOptions(c.dec_dim_at(s + 1), d, 2).stride(2))));
        }
    }
    head_ = register_module("head", nn::PatchUnembed(c.dec_dim_at(0), c.channels));
}

HiddenState ForecasterImpl::encode(const torch::Tensor& history) {
    if (history.dim() != 5 || history.size(2) != config_.channels) {
        throw ShapeError("history must be [batch, " + std::to_string(config_.history) + ", " +
                         std::to_string(config_.channels) + ", lat, lon]");
    }
    HiddenState h;
    auto f = cube_(history);
    for (size_t s = 0; s < enc_stages_.size(); ++s) {
        if (s > 0) f = enc_merges_[s - 1](f);
        f = enc_stages_[s]->forward(f).back();
        h.levels.push_back(bridges_[s](f));
    }
    return h;
}

StepOutput ForecasterImpl::step(const HiddenState& hidden, const torch::Tensor& frame) {
    const size_t S = dec_stages_.size();
    if (hidden.levels.size() != S) throw ShapeError("hidden state has the wrong number of scales");
    if (frame.dim() != 4 || frame.size(1) != config_.channels) {
        throw ShapeError("frame must be [batch, " + std::to_string(config_.channels) + ", lat, lon]");
    }
    StepOutput out;
    out.hidden.step = hidden.step + 1;
    torch::Tensor below;
    for (size_t s = 0; s < S; ++s) {
        auto input = s == 0 ? frame_embed_(frame) : dec_merges_[s - 1](below);
        if (input.sizes() != hidden.levels[s].sizes()) {
            throw ShapeError("hidden state and embedded frame shapes differ at scale " +
                             std::to_string(s));
        }
        auto blocks = dec_stages_[s]->forward(input + fuses_[s](hidden.levels[s]));
        auto next = config_.aggregation ? aggregators_[s](torch::cat(blocks, 1)) : blocks.back();
        if (s == 0) out.block_outputs = blocks;
        out.hidden.levels.push_back(next);
        below = next;
    }
    auto up = out.hidden.levels.back();
    for (size_t s = S - 1; s-- > 0;) up = out.hidden.levels[s] + dec_ups_[s](up);
    out.frame = reinject_constants(frame + head_(up), frame);
    return out;
}

torch::Tensor ForecasterImpl::rollout(const torch::Tensor& history, int64_t steps,
                                      const std::optional<torch::Tensor>& teacher) {
    if (steps < 1) throw ConfigError("rollout needs at least one step");
    if (teacher && teacher->size(1) < steps - 1) {
        throw ShapeError("teacher sequence is shorter than the rollout");
    }
    auto h = encode(history);
    const auto last = history.select(1, history.size(1) - 1);
    auto x = last;
    std::vector<torch::Tensor> frames;
    frames.reserve(static_cast<size_t>(steps));
    for (int64_t t = 0; t < steps; ++t) {
        auto input = (t > 0 && teacher) ? reinject_constants(teacher->select(1, t - 1), last) : x;
        auto out = step(h, input);
        h = std::move(out.hidden);
        x = reinject_constants(out.frame, last);
        frames.push_back(x);
    }
    return torch::stack(frames, 1);
}

torch::Tensor ForecasterImpl::reinject_constants(const torch::Tensor& frame,
                                                 const torch::Tensor& source) const {
    if (config_.constant_channels.empty()) return frame;
    return torch::where(const_mask_, source, frame);
}

void ForecasterImpl::zero_head() { head_->zero_(); }

// ---------------------------------------------------------------------------

torch::Tensor training_loss(const torch::Tensor& pred, const torch::Tensor& target,
                            const torch::Tensor& weights,
                            const std::vector<int64_t>& predicted_channels) {
    if (pred.sizes() != target.sizes()) throw ShapeError("prediction and target shapes differ");
    if (pred.dim() != 5) throw ShapeError("loss expects [batch, steps, channels, lat, lon]");
    if (weights.dim() != 1 || weights.size(0) != pred.size(3)) {
        throw ShapeError("latitude weights must have one entry per row");
    }
    if (predicted_channels.empty()) throw ConfigError("no predicted channels to score");
    auto idx = torch::tensor(predicted_channels, torch::kLong);
    auto err = (pred.index_select(2, idx) - target.index_select(2, idx)).pow(2);
    return (err * weights.to(pred.scalar_type()).view({1, 1, 1, -1, 1})).mean();
}

} // namespace swinrdm::forecast
