#include "swinrdm/swin_core.hpp"

#include <cmath>
#include <string>

#include "swinrdm/error.hpp"

namespace swinrdm::nn {

namespace F = torch::nn::functional;

namespace {

constexpr double kMaskedLogit = -1e9;

void require(bool cond, const std::string& message) {
    if (!cond) throw ShapeError(message);
}

std::string dims_str(int64_t h, int64_t w) { return std::to_string(h) + "x" + std::to_string(w); }

torch::Tensor relative_position_index(int64_t wh, int64_t ww) {
    const int64_t n = wh * ww;
    auto idx = torch::empty({n, n}, torch::kLong);
    auto a = idx.accessor<int64_t, 2>();
    for (int64_t p = 0; p < n; ++p) {
        for (int64_t q = 0; q < n; ++q) {
            const int64_t di = p / ww - q / ww + wh - 1;
            const int64_t dj = p % ww - q % ww + ww - 1;
            a[p][q] = di * (2 * ww - 1) + dj;
        }
    }
    return idx;
}

} // namespace

// ---------------------------------------------------------------------------
// Window partitioning

Windows window_partition(const torch::Tensor& features, const WindowSpec& spec) {
    require(features.dim() == 4, "window_partition expects [batch, dim, lat, lon]");
    const int64_t B = features.size(0), C = features.size(1), H = features.size(2),
                  W = features.size(3);
    const int64_t wh = spec.height, ww = spec.width;
    if (wh < 1 || ww < 1 || wh > H || ww > W) {
        throw ShapeError("window " + dims_str(wh, ww) + " does not fit the " + dims_str(H, W) +
                         " feature map");
    }
    require(W % ww == 0, "window width " + std::to_string(ww) + " must divide longitude size " +
                             std::to_string(W));
    require(spec.shift_lat >= 0 && spec.shift_lat < wh && spec.shift_lon >= 0 &&
                spec.shift_lon < ww,
            "window shift must lie in [0, window)");

    WindowLayout layout;
    layout.batch = B;
    layout.channels = C;
    layout.height = H;
    layout.width = W;
    layout.spec = spec;
    const int64_t total = (H + spec.shift_lat + wh - 1) / wh * wh;
    layout.pad_top = spec.shift_lat;
    layout.pad_bottom = total - H - spec.shift_lat;
    layout.windows_lat = total / wh;
    layout.windows_lon = W / ww;

    auto x = features;
    if (spec.shift_lon != 0) x = torch::roll(x, {-spec.shift_lon}, {3});
    if (layout.pad_top + layout.pad_bottom > 0) {
        x = F::pad(x, F::PadFuncOptions({0, 0, layout.pad_top, layout.pad_bottom}));
    }
    const int64_t nh = layout.windows_lat, nw = layout.windows_lon;
    auto tokens = x.reshape({B, C, nh, wh, nw, ww})
                      .permute({0, 2, 4, 3, 5, 1})
                      .reshape({B * nh * nw, wh * ww, C});

    auto rows = torch::arange(total, torch::kLong);
    auto row_valid = (rows >= layout.pad_top).logical_and(rows < layout.pad_top + H);
    auto valid = row_valid.view({nh, wh, 1, 1})
                     .expand({nh, wh, nw, ww})
                     .permute({0, 2, 1, 3})
                     .reshape({nh * nw, wh * ww});
    return {tokens, valid, layout};
}

torch::Tensor window_merge(const torch::Tensor& tokens, const WindowLayout& layout) {
    const auto& s = layout.spec;
    const int64_t nh = layout.windows_lat, nw = layout.windows_lon;
    require(tokens.dim() == 3 && tokens.size(0) == layout.batch * nh * nw &&
                tokens.size(1) == s.height * s.width && tokens.size(2) == layout.channels,
            "window_merge: token tensor does not match the layout");
    auto x = tokens.reshape({layout.batch, nh, nw, s.height, s.width, layout.channels})
                 .permute({0, 5, 1, 3, 2, 4})
                 .reshape({layout.batch, layout.channels, nh * s.height, layout.width});
    if (layout.pad_top + layout.pad_bottom > 0) x = x.narrow(2, layout.pad_top, layout.height);
    if (s.shift_lon != 0) x = torch::roll(x, {s.shift_lon}, {3});
    return x.contiguous();
}

WindowSpec block_window(int64_t window, int64_t height, int64_t width, bool shifted) {
    if (window < 1) throw ConfigError("window size must be positive");
    WindowSpec spec;
    spec.height = std::min(window, height);
    spec.width = std::min(window, width);
    if (width % spec.width != 0) {
        throw ConfigError("window " + std::to_string(spec.width) +
                          " does not divide longitude size " + std::to_string(width));
    }
    spec.shift_lat = (shifted && spec.height < height) ? spec.height / 2 : 0;
    spec.shift_lon = (shifted && spec.width < width) ? spec.width / 2 : 0;
    return spec;
}

// ---------------------------------------------------------------------------
// Swin block

SwinBlockImpl::SwinBlockImpl(const SwinBlockOptions& options) : options_(options) {
    const int64_t C = options.dim;
    if (options.heads < 1 || C % options.heads != 0) {
        throw ConfigError("feature dim " + std::to_string(C) + " is not divisible by " +
                          std::to_string(options.heads) + " heads");
    }
    const int64_t hidden = static_cast<int64_t>(static_cast<double>(C) * options.mlp_ratio);
    const int64_t wh = options.window.height, ww = options.window.width;
    norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({C})));
    qkv = register_module("qkv", torch::nn::Linear(C, 3 * C));
    proj = register_module("proj", torch::nn::Linear(C, C));
    norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({C})));
    fc1 = register_module("fc1", torch::nn::Linear(C, hidden));
    fc2 = register_module("fc2", torch::nn::Linear(hidden, C));
    bias_table = register_parameter(
        "relative_position_bias", torch::randn({(2 * wh - 1) * (2 * ww - 1), options.heads}) * 0.02);
    relative_index = relative_position_index(wh, ww);
}

torch::Tensor SwinBlockImpl::forward(const torch::Tensor& x) { return forward(x, nullptr); }

torch::Tensor SwinBlockImpl::forward(const torch::Tensor& x, torch::Tensor* attention) {
    require(x.dim() == 4 && x.size(1) == options_.dim,
            "swin block expects [batch, " + std::to_string(options_.dim) + ", lat, lon]");
    const int64_t heads = options_.heads, C = options_.dim, hd = C / heads;

    auto normed = norm1(x.permute({0, 2, 3, 1})).permute({0, 3, 1, 2});
    auto win = window_partition(normed, options_.window);
    const int64_t Bw = win.tokens.size(0), N = win.tokens.size(1);
    const int64_t nW = win.layout.windows_per_image();

    auto qkv_t = qkv(win.tokens).reshape({Bw, N, 3, heads, hd}).permute({2, 0, 3, 1, 4});
    auto q = qkv_t[0] * (1.0 / std::sqrt(static_cast<double>(hd)));
    auto k = qkv_t[1];
    auto v = qkv_t[2];
    auto logits = torch::matmul(q, k.transpose(-2, -1));  // [Bw, heads, N, N]
    auto bias = bias_table.index_select(0, relative_index.view({-1}))
                    .view({N, N, heads})
                    .permute({2, 0, 1});
    logits = logits + bias.unsqueeze(0);
    if (win.layout.pad_top + win.layout.pad_bottom > 0) {
        auto key_mask = torch::zeros({nW, N}, logits.options())
                            .masked_fill(win.valid.logical_not(), kMaskedLogit);
        logits = (logits.view({Bw / nW, nW, heads, N, N}) + key_mask.view({1, nW, 1, 1, N}))
                     .view({Bw, heads, N, N});
    }
    auto probs = torch::softmax(logits, -1);
    if (attention) *attention = probs;
    auto out = torch::matmul(probs, v).transpose(1, 2).reshape({Bw, N, C});
    out = proj(out);
    auto y = x + window_merge(out, win.layout);

    auto t = y.permute({0, 2, 3, 1});
    t = t + fc2(F::gelu(fc1(norm2(t))));
    return t.permute({0, 3, 1, 2}).contiguous();
}

void SwinBlockImpl::zero_residual_branches() {
    torch::NoGradGuard no_grad;
    proj->weight.zero_();
    proj->bias.zero_();
    fc2->weight.zero_();
    fc2->bias.zero_();
}

int64_t SwinBlockImpl::parameter_count(const SwinBlockOptions& o) {
    const int64_t C = o.dim;
    const int64_t hidden = static_cast<int64_t>(static_cast<double>(C) * o.mlp_ratio);
    const int64_t table = (2 * o.window.height - 1) * (2 * o.window.width - 1) * o.heads;
    return 2 * C                    // norm1
           + 3 * C * C + 3 * C      // qkv
           + C * C + C              // proj
           + table                  // relative position bias
           + 2 * C                  // norm2
           + C * hidden + hidden    // fc1
           + hidden * C + C;        // fc2
}

// ---------------------------------------------------------------------------
// Stage

SwinStageImpl::SwinStageImpl(int64_t dim, int64_t heads, int64_t depth, int64_t window,
                             int64_t height, int64_t width, double mlp_ratio) {
    for (int64_t i = 0; i < depth; ++i) {
        SwinBlockOptions o{dim, heads, block_window(window, height, width, i % 2 == 1), mlp_ratio};
        blocks_.push_back(register_module("block" + std::to_string(i), SwinBlock(o)));
    }
}

std::vector<torch::Tensor> SwinStageImpl::forward(const torch::Tensor& x) {
    std::vector<torch::Tensor> outs;
    outs.reserve(blocks_.size());
    auto h = x;
    for (auto& b : blocks_) {
        h = b->forward(h);
        outs.push_back(h);
    }
    return outs;
}

int64_t SwinStageImpl::parameter_count(int64_t dim, int64_t heads, int64_t depth, int64_t window,
                                       int64_t height, int64_t width, double mlp_ratio) {
    int64_t n = 0;
    for (int64_t i = 0; i < depth; ++i) {
        n += SwinBlockImpl::parameter_count(
            {dim, heads, block_window(window, height, width, i % 2 == 1), mlp_ratio});
    }
    return n;
}

// ---------------------------------------------------------------------------
// Embeddings

CubeEmbedImpl::CubeEmbedImpl(int64_t in_channels, int64_t history, int64_t dim) : history_(history) {
    if (history < 1) throw ConfigError("history length must be positive");
    conv = register_module(
        "conv", torch::nn::Conv3d(torch::nn::Conv3dOptions(in_channels, dim, {history, 2, 2})
                                      .stride({history, 2, 2})));
}

torch::Tensor CubeEmbedImpl::forward(const torch::Tensor& history) {
    require(history.dim() == 5, "cube embedding expects [batch, history, channels, lat, lon]");
    if (history.size(1) != history_) {
        throw ShapeError("cube embedding expects " + std::to_string(history_) +
                         " history frames, got " + std::to_string(history.size(1)));
    }
    require(history.size(3) % 2 == 0 && history.size(4) % 2 == 0,
            "cube embedding needs even grid dimensions");
    return conv(history.permute({0, 2, 1, 3, 4})).squeeze(2);
}

PatchEmbedImpl::PatchEmbedImpl(int64_t in_channels, int64_t dim, int64_t patch) : patch_(patch) {
    conv = register_module(
        "conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, dim, patch).stride(patch)));
}

torch::Tensor PatchEmbedImpl::forward(const torch::Tensor& x) {
    require(x.dim() == 4, "patch embedding expects [batch, channels, lat, lon]");
    require(x.size(2) % patch_ == 0 && x.size(3) % patch_ == 0,
            "patch embedding needs grid dimensions divisible by " + std::to_string(patch_));
    return conv(x);
}

PatchUnembedImpl::PatchUnembedImpl(int64_t dim, int64_t out_channels, int64_t patch) {
    conv = register_module(
        "conv", torch::nn::ConvTranspose2d(
                    torch::nn::ConvTranspose2dOptions(dim, out_channels, patch).stride(patch)));
}

torch::Tensor PatchUnembedImpl::forward(const torch::Tensor& f) {
    require(f.dim() == 4, "patch unembedding expects [batch, dim, lat, lon]");
    return conv(f);
}

void PatchUnembedImpl::zero_() {
    torch::NoGradGuard no_grad;
    conv->weight.zero_();
    conv->bias.zero_();
}

PeriodicConv2dImpl::PeriodicConv2dImpl(int64_t in_channels, int64_t out_channels, int64_t kernel,
                                       int64_t stride, bool bias)
    : pad_(kernel / 2) {
    conv_ = register_module("conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(
                                                          in_channels, out_channels, kernel)
                                                          .stride(stride)
                                                          .padding(torch::ExpandingArray<2>({pad_, 0}))
                                                          .bias(bias)));
}

torch::Tensor PeriodicConv2dImpl::forward(const torch::Tensor& x) {
    if (pad_ == 0) return conv_(x);
    const int64_t W = x.size(3);
    auto wrapped = torch::cat({x.narrow(3, W - pad_, pad_), x, x.narrow(3, 0, pad_)}, 3);
    return conv_(wrapped);
}

// ---------------------------------------------------------------------------

int64_t default_heads(int64_t dim) {
    int64_t h = std::max<int64_t>(1, dim / 32);
    while (dim % h != 0) --h;
    return h;
}

int64_t count_parameters(const torch::nn::Module& module) {
    int64_t n = 0;
    for (const auto& p : module.parameters()) n += p.numel();
    return n;
}

} // namespace swinrdm::nn
