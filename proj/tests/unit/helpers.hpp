#pragma once

#include <cmath>
#include <functional>
#include <vector>

// c10 defines glog-style CHECK macros; drop them so doctest's take effect.
#include <torch/torch.h>
#undef CHECK
#undef CHECK_EQ
#undef CHECK_NE
#undef CHECK_LT
#undef CHECK_LE
#undef CHECK_GT
#undef CHECK_GE
#undef CHECK_NOTNULL
#include <doctest.h>

#include "swinrdm/grid_data.hpp"

namespace testing {

/// Desk catalog with unit statistics on every channel.
inline swinrdm::data::VariableCatalog unit_catalog() {
    auto c = swinrdm::data::VariableCatalog::build("desk");
    const auto n = static_cast<size_t>(c.size());
    c.set_stats({std::vector<double>(n, 0.0), std::vector<double>(n, 1.0)});
    return c;
}

struct GradCheck {
    double max_rel = 0.0;
    int64_t checked = 0;
};

/// Compares autograd against central differences on up to `probes` entries of
/// every tensor in `params`. `loss` must be a scalar function of the params.
inline GradCheck check_gradients(const std::vector<torch::Tensor>& params,
                                 const std::function<torch::Tensor()>& loss, double h = 1e-4,
                                 int64_t probes = 6, uint64_t seed = 1) {
    for (auto p : params) {
        if (p.grad().defined()) p.mutable_grad().zero_();
    }
    loss().backward();
    GradCheck out;
    torch::NoGradGuard ng;
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    for (auto p : params) {
        auto flat = p.view({-1});
        const auto grad = p.grad().view({-1}).clone();
        const int64_t n = flat.numel();
        for (int64_t i = 0; i < std::min(n, probes); ++i) {
            const int64_t idx = n <= probes ? i : torch::randint(n, {1}, gen).item<int64_t>();
            const double orig = flat[idx].item<double>();
            flat[idx] = orig + h;
            const double up = loss().item<double>();
            flat[idx] = orig - h;
            const double down = loss().item<double>();
            flat[idx] = orig;
            const double fd = (up - down) / (2 * h);
            const double ad = grad[idx].item<double>();
            const double rel = std::abs(fd - ad) / std::max({std::abs(fd), std::abs(ad), 1e-6});
            out.max_rel = std::max(out.max_rel, rel);
            ++out.checked;
        }
    }
    return out;
}

} // namespace testing
