#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace swinrdm::data {

using TimePoint = std::chrono::sys_seconds;
using Hours = std::chrono::hours;

enum class LevelKind { Pressure, Surface, Constant };

struct VariableEntry {
    std::string name;   // short variable name, e.g. "z", "t2m", "lsm"
    LevelKind kind = LevelKind::Surface;
    int level_hpa = 0;  // only meaningful for pressure-level variables
    std::string unit;

    /// Lookup key: name plus level for pressure variables ("z500"), name otherwise.
    std::string key() const;
};

struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> std;
};

/// Smallest standard deviation a channel can be assigned.
inline constexpr double kStdFloor = 1e-6;

/// Ordered channel layout plus per-channel normalization statistics.
class VariableCatalog {
public:
    /// "paper71": 5 variables x 13 pressure levels, 4 surface fields, 2 constants.
    /// "desk":    Z500, T850, T2M, TP, U10, V10 and the two constant fields.
    static VariableCatalog build(std::string_view profile);

    const std::string& profile() const { return profile_; }
    const std::vector<VariableEntry>& entries() const { return entries_; }
    int64_t size() const { return static_cast<int64_t>(entries_.size()); }

    std::optional<int64_t> find(std::string_view key) const;
    /// Like find() but throws DataError when the key is absent.
    int64_t index(std::string_view key) const;

    bool is_constant(int64_t channel) const;
    std::vector<int64_t> predicted_channels() const;
    std::vector<int64_t> constant_channels() const;

    /// Channels of the headline variables Z500, T850, T2M, TP, U10, V10 in that order.
    std::vector<int64_t> headline_channels() const;
    static const std::vector<std::string>& headline_keys();

    bool has_stats() const { return !stats_.mean.empty(); }
    const ChannelStats& stats() const;
    void set_stats(ChannelStats stats);

    /// Stable hash of the channel layout (names, levels, units); excludes statistics.
    std::string layout_hash() const;

    nlohmann::json to_json() const;
    static VariableCatalog from_json(const nlohmann::json& j);

private:
    std::string profile_;
    std::vector<VariableEntry> entries_;
    ChannelStats stats_;
};

/// One multi-channel latitude-longitude snapshot.
struct FieldGrid {
    torch::Tensor values;  // [channel, lat, lon], float32 or float64
    std::vector<double> latitudes;
    std::vector<double> longitudes;
    TimePoint valid_time{};

    int64_t channels() const { return values.size(0); }
    int64_t height() const { return values.size(1); }
    int64_t width() const { return values.size(2); }
};

/// Cell-centred latitudes, north to south.
std::vector<double> make_latitudes(int64_t n);
/// Uniform longitudes starting at 0.
std::vector<double> make_longitudes(int64_t n);

/// A time series of grids with a fixed interval. Read-only after construction.
class Dataset {
public:
    Dataset() = default;
    Dataset(torch::Tensor values, std::vector<double> latitudes, std::vector<double> longitudes,
            TimePoint start, Hours interval, VariableCatalog catalog);

    const torch::Tensor& values() const { return values_; }  // [time, channel, lat, lon]
    const std::vector<double>& latitudes() const { return latitudes_; }
    const std::vector<double>& longitudes() const { return longitudes_; }
    TimePoint start() const { return start_; }
    Hours interval() const { return interval_; }
    const VariableCatalog& catalog() const { return catalog_; }
    VariableCatalog& catalog() { return catalog_; }

    int64_t steps() const { return values_.defined() ? values_.size(0) : 0; }
    int64_t height() const { return values_.size(2); }
    int64_t width() const { return values_.size(3); }
    TimePoint time_at(int64_t step) const { return start_ + interval_ * step; }
    FieldGrid frame(int64_t step) const;

private:
    torch::Tensor values_;
    std::vector<double> latitudes_;
    std::vector<double> longitudes_;
    TimePoint start_{};
    Hours interval_{6};
    VariableCatalog catalog_;
};

/// Per-channel mean and standard deviation over time and space, accumulated in
/// double precision with a streaming update. `frames` is [time, channel, lat, lon].
ChannelStats compute_normalization_stats(const torch::Tensor& frames);
ChannelStats compute_normalization_stats(const std::vector<FieldGrid>& frames);

/// (x - mean) / std per channel; constant channels pass through.
/// Works on any tensor whose third-from-last dimension is the channel axis.
torch::Tensor normalize_values(const torch::Tensor& values, const VariableCatalog& catalog);
/// Inverse of normalize_values; precipitation is clamped at zero in physical space.
torch::Tensor denormalize_values(const torch::Tensor& values, const VariableCatalog& catalog);

FieldGrid normalize(const FieldGrid& grid, const VariableCatalog& catalog);
FieldGrid denormalize(const FieldGrid& grid, const VariableCatalog& catalog);

/// Block-mean pooling over factor x factor cells; input [..., lat, lon].
torch::Tensor downsample_values(const torch::Tensor& values, int64_t factor);
FieldGrid downsample(const FieldGrid& hr, int64_t factor);

/// Bilinear interpolation by an integer factor on a cell-centred grid,
/// periodic in longitude and edge-clamped in latitude. Input [..., lat, lon].
torch::Tensor upsample_bilinear(const torch::Tensor& values, int64_t factor);

/// Synthetic stand-in for reanalysis data.
///
/// Four latent fields (large-scale flow, temperature, moisture and small-scale
/// turbulence) evolve on the fine grid by a split scheme: every latitude row is
/// translated zonally by a jet profile u(lat) using an exact spectral shift,
/// then each Fourier mode k is damped by exp(-kappa |k|^2) and re-excited with
/// Gaussian noise of variance (1 - exp(-2 kappa |k|^2)) S(k). The forcing is
/// tied to the damping, so the spectrum S(k) is stationary and both terms
/// vanish together when diffusion is zero. Physical channels are fixed affine
/// or nonlinear maps of the latents; winds come from the gradient of the flow
/// latent and precipitation is a non-negative heavy-tailed function of
/// moisture, ascent and turbulence.
struct SynthConfig {
    int64_t lat = 64;
    int64_t lon = 128;
    int64_t steps = 64;
    uint64_t seed = 0;
    double advection = 1.0;  // multiplier on the zonal jet profile
    double diffusion = 1.0;  // multiplier on the damping rates
    Hours interval{6};
    TimePoint start{};

    nlohmann::json to_json() const;
    static SynthConfig from_json(const nlohmann::json& j);
};

/// Minimum fine-grid size accepted by the generator.
inline constexpr int64_t kMinSynthLat = 16;
inline constexpr int64_t kMinSynthLon = 32;

Dataset generate_synthetic_dataset(const SynthConfig& config, const VariableCatalog& catalog,
                                   int64_t min_steps = 0);

/// Half-open range of time-step indices a sample may reference.
struct StepRange {
    int64_t begin = 0;
    int64_t end = 0;
};

struct PairConfig {
    int64_t history = 6;
    int64_t horizon = 20;
    Hours interval{6};
    int64_t sr_factor = 4;
    int64_t stride = 1;  // distance between consecutive window starts, in sampled steps
};

struct SamplePair {
    std::vector<FieldGrid> history;
    std::vector<FieldGrid> lr_targets;
    std::vector<FieldGrid> hr_targets;
    std::vector<int64_t> steps;  // dataset indices: history followed by targets
};

/// Lazily materialized sequence of sample pairs over a dataset split.
class SamplePairSequence {
public:
    SamplePairSequence(const Dataset& dataset, PairConfig config, StepRange range);

    int64_t size() const { return static_cast<int64_t>(starts_.size()); }
    bool empty() const { return starts_.empty(); }
    const std::vector<std::string>& warnings() const { return warnings_; }

    /// Dataset indices referenced by pair i (history then targets).
    std::vector<int64_t> steps_of(int64_t i) const;
    SamplePair at(int64_t i) const;

    class iterator {
    public:
        using value_type = SamplePair;
        using difference_type = std::ptrdiff_t;
        iterator(const SamplePairSequence* seq, int64_t i) : seq_(seq), i_(i) {}
        SamplePair operator*() const { return seq_->at(i_); }
        iterator& operator++() { ++i_; return *this; }
        bool operator==(const iterator& other) const { return i_ == other.i_; }

    private:
        const SamplePairSequence* seq_;
        int64_t i_;
    };
    iterator begin() const { return {this, 0}; }
    iterator end() const { return {this, size()}; }

    const PairConfig& config() const { return config_; }
    int64_t sub_sample() const { return sub_sample_; }

private:
    const Dataset* dataset_;
    PairConfig config_;
    int64_t sub_sample_ = 1;
    std::vector<int64_t> starts_;
    std::vector<std::string> warnings_;
};

SamplePairSequence make_sample_pairs(const Dataset& dataset, const PairConfig& config,
                                     std::optional<StepRange> range = std::nullopt);

/// Flat little-endian float32 file laid out [time, channel, lat, lon] next to a
/// JSON sidecar (`<path>.json`) with dims, catalog, coordinates, start and interval.
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

std::string format_time(TimePoint t);
TimePoint parse_time(const std::string& s);

} // namespace swinrdm::data
