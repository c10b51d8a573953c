#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

// Windowed-attention building blocks. Feature maps are [batch, dim, lat, lon]
// tensors; longitude is periodic, latitude is not.
namespace swinrdm::nn {

/// Window geometry for one partitioning pass. Shifts move the window grid by
/// (shift_lat, shift_lon) cells: cyclically in longitude, by zero padding with
/// masked tokens in latitude.
struct WindowSpec {
    int64_t height = 8;
    int64_t width = 8;
    int64_t shift_lat = 0;
    int64_t shift_lon = 0;
};

struct WindowLayout {
    int64_t batch = 0, channels = 0, height = 0, width = 0;
    int64_t pad_top = 0, pad_bottom = 0;
    int64_t windows_lat = 0, windows_lon = 0;
    WindowSpec spec;

    int64_t windows_per_image() const { return windows_lat * windows_lon; }
    int64_t tokens_per_window() const { return spec.height * spec.width; }
};

struct Windows {
    torch::Tensor tokens;  // [batch * windows, tokens_per_window, channels]
    torch::Tensor valid;   // [windows, tokens_per_window] bool, false on latitude padding
    WindowLayout layout;
};

Windows window_partition(const torch::Tensor& features, const WindowSpec& spec);
/// Exact inverse of window_partition.
torch::Tensor window_merge(const torch::Tensor& tokens, const WindowLayout& layout);

/// Clamps a square window to the feature grid and picks the half-window shift
/// for odd blocks; an axis covered by a single window is never shifted.
WindowSpec block_window(int64_t window, int64_t height, int64_t width, bool shifted);

struct SwinBlockOptions {
    int64_t dim = 64;
    int64_t heads = 2;
    WindowSpec window;
    double mlp_ratio = 4.0;
};

/// Pre-norm windowed self-attention followed by a GELU MLP, each with a
/// residual connection. Attention carries a learned relative position bias.
class SwinBlockImpl : public torch::nn::Module {
public:
    explicit SwinBlockImpl(const SwinBlockOptions& options);

    torch::Tensor forward(const torch::Tensor& x);
    /// Same as forward; also returns the attention probabilities
    /// [batch * windows, heads, tokens, tokens].
    torch::Tensor forward(const torch::Tensor& x, torch::Tensor* attention);

    /// Zeroes the output projections of both residual branches so the block is the identity.
    void zero_residual_branches();

    const SwinBlockOptions& options() const { return options_; }

    static int64_t parameter_count(const SwinBlockOptions& options);

private:
    SwinBlockOptions options_;
    torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
    torch::nn::Linear qkv{nullptr}, proj{nullptr}, fc1{nullptr}, fc2{nullptr};
    torch::Tensor bias_table;      // [(2h-1)(2w-1), heads]
    torch::Tensor relative_index;  // [tokens, tokens] long
};
TORCH_MODULE(SwinBlock);

/// `depth` blocks at one scale with alternating shifts. forward() returns every
/// block output in order.
class SwinStageImpl : public torch::nn::Module {
public:
    SwinStageImpl(int64_t dim, int64_t heads, int64_t depth, int64_t window, int64_t height,
                  int64_t width, double mlp_ratio = 4.0);

    std::vector<torch::Tensor> forward(const torch::Tensor& x);
    SwinBlock block(size_t i) const { return blocks_.at(i); }
    size_t depth() const { return blocks_.size(); }

    static int64_t parameter_count(int64_t dim, int64_t heads, int64_t depth, int64_t window,
                                   int64_t height, int64_t width, double mlp_ratio = 4.0);

private:
    std::vector<SwinBlock> blocks_;
};
TORCH_MODULE(SwinStage);

/// 3-D convolution consuming the whole history window with a 2x2 spatial patch.
/// Input [batch, history, channels, lat, lon]; output [batch, dim, lat/2, lon/2].
class CubeEmbedImpl : public torch::nn::Module {
public:
    CubeEmbedImpl(int64_t in_channels, int64_t history, int64_t dim);
    torch::Tensor forward(const torch::Tensor& history);
    int64_t history() const { return history_; }

private:
    int64_t history_;
    torch::nn::Conv3d conv{nullptr};
};
TORCH_MODULE(CubeEmbed);

/// Stride-2 2x2 patch embedding [B, C, H, W] -> [B, dim, H/2, W/2].
class PatchEmbedImpl : public torch::nn::Module {
public:
    PatchEmbedImpl(int64_t in_channels, int64_t dim, int64_t patch = 2);
    torch::Tensor forward(const torch::Tensor& x);

private:
    int64_t patch_;
    torch::nn::Conv2d conv{nullptr};
};
TORCH_MODULE(PatchEmbed);

/// Transposed-convolution inverse of PatchEmbed: [B, dim, h, w] -> [B, C, h*2, w*2].
class PatchUnembedImpl : public torch::nn::Module {
public:
    PatchUnembedImpl(int64_t dim, int64_t out_channels, int64_t patch = 2);
    torch::Tensor forward(const torch::Tensor& f);
    void zero_();

private:
    torch::nn::ConvTranspose2d conv{nullptr};
};
TORCH_MODULE(PatchUnembed);

/// 2-D convolution with circular padding in longitude and zero padding in latitude.
class PeriodicConv2dImpl : public torch::nn::Module {
public:
    PeriodicConv2dImpl(int64_t in_channels, int64_t out_channels, int64_t kernel,
                       int64_t stride = 1, bool bias = true);
    torch::Tensor forward(const torch::Tensor& x);
    torch::nn::Conv2d& conv() { return conv_; }

private:
    int64_t pad_;
    torch::nn::Conv2d conv_{nullptr};
};
TORCH_MODULE(PeriodicConv2d);

/// Heads used for a feature dimension: dim / 32, at least one, and a divisor of dim.
int64_t default_heads(int64_t dim);

int64_t count_parameters(const torch::nn::Module& module);

} // namespace swinrdm::nn
