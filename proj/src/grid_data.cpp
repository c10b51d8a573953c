#include "swinrdm/grid_data.hpp"

#include <bit>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "swinrdm/error.hpp"
#include "swinrdm/hash.hpp"

namespace swinrdm::data {

namespace {

constexpr std::array<int, 13> kPaperLevels = {50, 100, 150, 200, 250, 300, 400,
                                              500, 600, 700, 850, 925, 1000};

std::string kind_name(LevelKind k) {
    switch (k) {
    case LevelKind::Pressure: return "pressure";
    case LevelKind::Surface: return "surface";
    case LevelKind::Constant: return "constant";
    }
    return "surface";
}

LevelKind kind_from_name(const std::string& s) {
    if (s == "pressure") return LevelKind::Pressure;
    if (s == "surface") return LevelKind::Surface;
    if (s == "constant") return LevelKind::Constant;
    throw ConfigError("unknown level kind '" + s + "'");
}

std::string pressure_unit(const std::string& var) {
    if (var == "z") return "m2 s-2";
    if (var == "t") return "K";
    if (var == "r") return "%";
    return "m s-1";
}

void append_surface_and_constants(std::vector<VariableEntry>& e) {
    e.push_back({"t2m", LevelKind::Surface, 0, "K"});
    e.push_back({"u10", LevelKind::Surface, 0, "m s-1"});
    e.push_back({"v10", LevelKind::Surface, 0, "m s-1"});
    e.push_back({"tp", LevelKind::Surface, 0, "mm"});
    e.push_back({"lsm", LevelKind::Constant, 0, "1"});
    e.push_back({"orog", LevelKind::Constant, 0, "km"});
}

// Index of the channel axis for tensors shaped [..., C, H, W].
int64_t channel_axis(const torch::Tensor& t) {
    if (t.dim() < 3) throw ShapeError("expected at least [channel, lat, lon]");
    return t.dim() - 3;
}

torch::Tensor channel_view(const std::vector<double>& v, const torch::Tensor& like) {
    auto t = torch::tensor(v, torch::kDouble).to(like.scalar_type());
    std::vector<int64_t> shape(static_cast<size_t>(like.dim()), 1);
    shape[static_cast<size_t>(channel_axis(like))] = static_cast<int64_t>(v.size());
    return t.view(shape);
}

} // namespace

// ---------------------------------------------------------------------------
// Catalog

std::string VariableEntry::key() const {
    if (kind == LevelKind::Pressure) return name + std::to_string(level_hpa);
    return name;
}

VariableCatalog VariableCatalog::build(std::string_view profile) {
    VariableCatalog c;
    c.profile_ = std::string(profile);
    if (profile == "paper71") {
        for (const char* var : {"z", "t", "r", "u", "v"}) {
            for (int lev : kPaperLevels) {
                c.entries_.push_back({var, LevelKind::Pressure, lev, pressure_unit(var)});
            }
        }
        append_surface_and_constants(c.entries_);
    } else if (profile == "desk") {
        c.entries_.push_back({"z", LevelKind::Pressure, 500, "m2 s-2"});
        c.entries_.push_back({"t", LevelKind::Pressure, 850, "K"});
        append_surface_and_constants(c.entries_);
    } else {
        throw ConfigError("unknown catalog profile '" + std::string(profile) + "'");
    }
    return c;
}

std::optional<int64_t> VariableCatalog::find(std::string_view key) const {
    for (size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].key() == key) return static_cast<int64_t>(i);
    }
    return std::nullopt;
}

int64_t VariableCatalog::index(std::string_view key) const {
    auto i = find(key);
    if (!i) throw DataError("catalog has no channel '" + std::string(key) + "'");
    return *i;
}

bool VariableCatalog::is_constant(int64_t channel) const {
    return entries_.at(static_cast<size_t>(channel)).kind == LevelKind::Constant;
}

std::vector<int64_t> VariableCatalog::predicted_channels() const {
    std::vector<int64_t> out;
    for (int64_t i = 0; i < size(); ++i)
        if (!is_constant(i)) out.push_back(i);
    return out;
}

std::vector<int64_t> VariableCatalog::constant_channels() const {
    std::vector<int64_t> out;
    for (int64_t i = 0; i < size(); ++i)
        if (is_constant(i)) out.push_back(i);
    return out;
}

const std::vector<std::string>& VariableCatalog::headline_keys() {
    static const std::vector<std::string> keys = {"z500", "t850", "t2m", "tp", "u10", "v10"};
    return keys;
}

std::vector<int64_t> VariableCatalog::headline_channels() const {
    std::vector<int64_t> out;
    for (const auto& k : headline_keys()) out.push_back(index(k));
    return out;
}

const ChannelStats& VariableCatalog::stats() const {
    if (!has_stats()) throw DataError("catalog has no normalization statistics");
    return stats_;
}

void VariableCatalog::set_stats(ChannelStats stats) {
    if (static_cast<int64_t>(stats.mean.size()) != size() ||
        static_cast<int64_t>(stats.std.size()) != size()) {
        throw ShapeError("normalization stats do not match the catalog channel count");
    }
    for (double s : stats.std) {
        if (!(s > 0.0)) throw DataError("normalization std must be positive");
    }
    stats_ = std::move(stats);
}

std::string VariableCatalog::layout_hash() const {
    std::string blob = profile_;
    for (const auto& e : entries_) blob += "|" + e.key() + ":" + e.unit + ":" + kind_name(e.kind);
    return hash_hex(blob);
}

nlohmann::json VariableCatalog::to_json() const {
    nlohmann::json j;
    j["profile"] = profile_;
    auto& arr = j["entries"] = nlohmann::json::array();
    for (const auto& e : entries_) {
        arr.push_back({{"name", e.name}, {"kind", kind_name(e.kind)}, {"level_hpa", e.level_hpa},
                       {"unit", e.unit}});
    }
    if (has_stats()) j["stats"] = {{"mean", stats_.mean}, {"std", stats_.std}};
    return j;
}

VariableCatalog VariableCatalog::from_json(const nlohmann::json& j) {
    VariableCatalog c;
    c.profile_ = j.value("profile", std::string("custom"));
    for (const auto& e : j.at("entries")) {
        c.entries_.push_back({e.at("name").get<std::string>(),
                              kind_from_name(e.at("kind").get<std::string>()),
                              e.value("level_hpa", 0), e.value("unit", std::string())});
    }
    if (j.contains("stats")) {
        c.set_stats({j["stats"].at("mean").get<std::vector<double>>(),
                     j["stats"].at("std").get<std::vector<double>>()});
    }
    return c;
}

// ---------------------------------------------------------------------------
// Grids and datasets

std::vector<double> make_latitudes(int64_t n) {
    std::vector<double> lat(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) lat[i] = 90.0 - (static_cast<double>(i) + 0.5) * 180.0 / n;
    return lat;
}

std::vector<double> make_longitudes(int64_t n) {
    std::vector<double> lon(static_cast<size_t>(n));
    for (int64_t j = 0; j < n; ++j) lon[j] = static_cast<double>(j) * 360.0 / n;
    return lon;
}

Dataset::Dataset(torch::Tensor values, std::vector<double> latitudes,
                 std::vector<double> longitudes, TimePoint start, Hours interval,
                 VariableCatalog catalog)
    : values_(std::move(values)), latitudes_(std::move(latitudes)),
      longitudes_(std::move(longitudes)), start_(start), interval_(interval),
      catalog_(std::move(catalog)) {
    if (values_.dim() != 4) throw ShapeError("dataset values must be [time, channel, lat, lon]");
    if (values_.size(1) != catalog_.size()) {
        throw ShapeError("dataset has " + std::to_string(values_.size(1)) +
                         " channels but the catalog has " + std::to_string(catalog_.size()));
    }
    if (static_cast<int64_t>(latitudes_.size()) != values_.size(2) ||
        static_cast<int64_t>(longitudes_.size()) != values_.size(3)) {
        throw ShapeError("coordinate lengths do not match the grid");
    }
    if (interval_.count() <= 0) throw ConfigError("dataset interval must be positive");
}

FieldGrid Dataset::frame(int64_t step) const {
    if (step < 0 || step >= steps()) throw RangeError("frame index out of range");
    return {values_[step], latitudes_, longitudes_, time_at(step)};
}

// ---------------------------------------------------------------------------
// Normalization

ChannelStats compute_normalization_stats(const torch::Tensor& frames) {
    if (!frames.defined() || frames.dim() != 4 || frames.size(0) == 0) {
        throw DataError("normalization statistics need a non-empty [time, channel, lat, lon] tensor");
    }
    const auto x = frames.to(torch::kDouble).contiguous();
    const int64_t T = x.size(0), C = x.size(1), N = x.size(2) * x.size(3);
    const double* p = x.data_ptr<double>();
    ChannelStats out;
    out.mean.resize(static_cast<size_t>(C));
    out.std.resize(static_cast<size_t>(C));
    for (int64_t c = 0; c < C; ++c) {
        // Welford update over time and grid points.
        double mean = 0.0, m2 = 0.0;
        int64_t n = 0;
        for (int64_t t = 0; t < T; ++t) {
            const double* row = p + (t * C + c) * N;
            for (int64_t i = 0; i < N; ++i) {
                ++n;
                const double d = row[i] - mean;
                mean += d / static_cast<double>(n);
                m2 += d * (row[i] - mean);
            }
        }
        out.mean[c] = mean;
        out.std[c] = std::max(std::sqrt(m2 / static_cast<double>(n)), kStdFloor);
    }
    return out;
}

ChannelStats compute_normalization_stats(const std::vector<FieldGrid>& frames) {
    if (frames.empty()) throw DataError("normalization statistics need a non-empty dataset");
    std::vector<torch::Tensor> v;
    v.reserve(frames.size());
    for (const auto& f : frames) v.push_back(f.values);
    return compute_normalization_stats(torch::stack(v));
}

torch::Tensor normalize_values(const torch::Tensor& values, const VariableCatalog& catalog) {
    const auto axis = channel_axis(values);
    if (values.size(axis) != catalog.size()) {
        throw ShapeError("grid has " + std::to_string(values.size(axis)) +
                         " channels, catalog expects " + std::to_string(catalog.size()));
    }
    auto mean = catalog.stats().mean;
    auto std = catalog.stats().std;
    for (int64_t c : catalog.constant_channels()) {
        mean[c] = 0.0;
        std[c] = 1.0;
    }
    return (values - channel_view(mean, values)) / channel_view(std, values);
}

torch::Tensor denormalize_values(const torch::Tensor& values, const VariableCatalog& catalog) {
    const auto axis = channel_axis(values);
    if (values.size(axis) != catalog.size()) {
        throw ShapeError("grid has " + std::to_string(values.size(axis)) +
                         " channels, catalog expects " + std::to_string(catalog.size()));
    }
    auto mean = catalog.stats().mean;
    auto std = catalog.stats().std;
    for (int64_t c : catalog.constant_channels()) {
        mean[c] = 0.0;
        std[c] = 1.0;
    }
    auto out = values * channel_view(std, values) + channel_view(mean, values);
    if (auto tp = catalog.find("tp")) {
        auto slice = out.select(axis, *tp);
        slice.clamp_min_(0.0);
    }
    return out;
}

FieldGrid normalize(const FieldGrid& grid, const VariableCatalog& catalog) {
    return {normalize_values(grid.values, catalog), grid.latitudes, grid.longitudes, grid.valid_time};
}

FieldGrid denormalize(const FieldGrid& grid, const VariableCatalog& catalog) {
    return {denormalize_values(grid.values, catalog), grid.latitudes, grid.longitudes,
            grid.valid_time};
}

// ---------------------------------------------------------------------------
// Regridding

torch::Tensor downsample_values(const torch::Tensor& values, int64_t factor) {
    if (factor <= 0) throw ConfigError("downsample factor must be positive");
    if (values.dim() < 2) throw ShapeError("downsample needs [..., lat, lon]");
    const int64_t H = values.size(-2), W = values.size(-1);
    if (H % factor != 0 || W % factor != 0) {
        throw ShapeError("grid " + std::to_string(H) + "x" + std::to_string(W) +
                         " is not divisible by factor " + std::to_string(factor));
    }
    if (factor == 1) return values.clone();
    auto lead = values.sizes().slice(0, values.dim() - 2).vec();
    std::vector<int64_t> shape = lead;
    shape.insert(shape.end(), {H / factor, factor, W / factor, factor});
    return values.reshape(shape).mean({-1, -3});
}

FieldGrid downsample(const FieldGrid& hr, int64_t factor) {
    auto v = downsample_values(hr.values, factor);
    auto pool = [factor](const std::vector<double>& x) {
        std::vector<double> out(x.size() / static_cast<size_t>(factor), 0.0);
        for (size_t i = 0; i < x.size(); ++i) out[i / factor] += x[i] / static_cast<double>(factor);
        return out;
    };
    return {v, pool(hr.latitudes), pool(hr.longitudes), hr.valid_time};
}

torch::Tensor upsample_bilinear(const torch::Tensor& values, int64_t factor) {
    if (factor <= 0) throw ConfigError("upsample factor must be positive");
    if (factor == 1) return values.clone();
    const auto lead = values.sizes().slice(0, values.dim() - 2).vec();
    const int64_t h = values.size(-2), w = values.size(-1);
    auto x = values.reshape({-1, 1, h, w});
    // One wrapped column on each side makes the interpolation periodic in longitude.
    x = torch::cat({x.narrow(3, w - 1, 1), x, x.narrow(3, 0, 1)}, 3);
    namespace F = torch::nn::functional;
    auto up = F::interpolate(x, F::InterpolateFuncOptions()
                                    .size(std::vector<int64_t>{h * factor, (w + 2) * factor})
                                    .mode(torch::kBilinear)
                                    .align_corners(false));
    up = up.narrow(3, factor, w * factor);
    std::vector<int64_t> shape = lead;
    shape.insert(shape.end(), {h * factor, w * factor});
    return up.reshape(shape);
}

// ---------------------------------------------------------------------------
// Synthetic generator

namespace {

struct LatentSpec {
    double k0;     // spectral knee, cycles per cell
    double slope;  // amplitude spectrum decays like |k|^-slope beyond the knee
    double kappa;  // damping rate per step per |k|^2 (cells^2)
};

constexpr LatentSpec kFlow{0.02, 3.0, 6.0};
constexpr LatentSpec kTemp{0.04, 2.5, 6.0};
constexpr LatentSpec kMoist{0.06, 2.0, 8.0};
constexpr LatentSpec kTurb{0.15, 1.5, 20.0};

class SpectralField {
public:
    SpectralField(const LatentSpec& spec, const torch::Tensor& k2) : spec_(spec), k2_(k2) {
        auto a = torch::pow(1.0 + k2 / (spec.k0 * spec.k0), -spec.slope / 2.0);
        amp_ = a / torch::sqrt((a * a).mean());
    }

    torch::Tensor filtered_noise(torch::Generator& gen) const {
        auto w = torch::randn(k2_.sizes(), gen, torch::kDouble);
        return amp_ * torch::fft::fft2(w);
    }

    torch::Tensor initial(torch::Generator& gen) const {
        return torch::real(torch::fft::ifft2(filtered_noise(gen)));
    }

    torch::Tensor damp_and_force(const torch::Tensor& f, double diffusion,
                                 torch::Generator& gen) const {
        auto d = torch::exp(-diffusion * spec_.kappa * k2_);
        auto F = d * torch::fft::fft2(f) + torch::sqrt(1.0 - d * d) * filtered_noise(gen);
        return torch::real(torch::fft::ifft2(F));
    }

private:
    LatentSpec spec_;
    torch::Tensor k2_;
    torch::Tensor amp_;
};

// Exact zonal translation of every row by `shift` cells (shape [H, 1]).
torch::Tensor zonal_shift(const torch::Tensor& f, const torch::Tensor& shift) {
    const int64_t W = f.size(1);
    auto m = torch::fft::fftfreq(W, torch::kDouble).view({1, W}) * static_cast<double>(W);
    auto phase = torch::polar(torch::ones_like(m * shift),
                              -2.0 * std::numbers::pi * m * shift / static_cast<double>(W));
    return torch::real(torch::fft::ifft(torch::fft::fft(f, c10::nullopt, 1) * phase, c10::nullopt, 1));
}

struct Derivatives {
    torch::Tensor dx, dy, laplacian;
};

Derivatives spectral_derivatives(const torch::Tensor& f, const torch::Tensor& kx,
                                 const torch::Tensor& ky) {
    const double two_pi = 2.0 * std::numbers::pi;
    auto F = torch::fft::fft2(f);
    auto i = c10::complex<double>(0.0, 1.0);
    return {torch::real(torch::fft::ifft2(F * kx * i * two_pi)),
            torch::real(torch::fft::ifft2(F * ky * i * two_pi)),
            torch::real(torch::fft::ifft2(-F * (kx * kx + ky * ky) * two_pi * two_pi))};
}

// Standard deviations of the derived fields, fixed from the first frame so the
// channel maps stay pointwise functions of the latents.
struct DerivedScales {
    double flow_dx = 1, flow_dy = 1, turb_dx = 1, turb_dy = 1, flow_lap = 1;
};

struct Latents {
    torch::Tensor flow, temp, moist, turb;
};

struct StaticFields {
    torch::Tensor lsm, orog, sin2, cos2, jet;  // [H, W] or broadcastable [H, 1]
};

torch::Tensor pressure_channel(const VariableEntry& e, const Latents& L, const Derivatives& dflow,
                               const Derivatives& dturb, const StaticFields& s,
                               const DerivedScales& k) {
    const double lev = static_cast<double>(e.level_hpa);
    if (e.name == "z") {
        const double base = 9.80665 * 7400.0 * std::log(1013.25 / lev);
        return base - 0.09 * base * s.sin2 + 1500.0 * std::pow(500.0 / lev, 0.3) * L.flow;
    }
    if (e.name == "t") {
        const double base = 288.0 * std::pow(lev / 1000.0, 0.19);
        return base - 30.0 * s.sin2 + 4.0 * (0.6 * L.flow + 0.8 * L.temp);
    }
    if (e.name == "r") {
        return 60.0 + 25.0 * torch::tanh(L.moist + 0.3 * L.temp);
    }
    const double scale = std::pow(1000.0 / lev, 0.3);
    if (e.name == "u") {
        return scale * (-3.0 * s.jet + 4.0 * (-dflow.dy / k.flow_dy) + 1.5 * (-dturb.dy / k.turb_dy));
    }
    if (e.name == "v") {
        return scale * (4.0 * (dflow.dx / k.flow_dx) + 1.5 * (dturb.dx / k.turb_dx));
    }
    throw ConfigError("synthetic generator has no rule for variable '" + e.name + "'");
}

torch::Tensor channel_field(const VariableEntry& e, const Latents& L, const Derivatives& dflow,
                            const Derivatives& dturb, const StaticFields& s,
                            const DerivedScales& k) {
    if (e.kind == LevelKind::Pressure) return pressure_channel(e, L, dflow, dturb, s, k);
    if (e.name == "t2m") {
        return 293.0 - 35.0 * s.sin2 + 4.5 * (0.5 * L.flow + 0.85 * L.temp) +
               1.2 * L.turb * s.lsm - 6.5 * s.orog + 2.0 * s.lsm;
    }
    if (e.name == "u10") return -3.0 * s.jet + 4.0 * (-dflow.dy / k.flow_dy) + 1.5 * (-dturb.dy / k.turb_dy);
    if (e.name == "v10") return 4.0 * (dflow.dx / k.flow_dx) + 1.5 * (dturb.dx / k.turb_dx);
    if (e.name == "tp") {
        auto ascent = (-dflow.laplacian / k.flow_lap);
        auto moisture = 0.75 * L.moist + 0.45 * ascent;
        auto rate = torch::nn::functional::softplus(2.2 * (moisture - 0.9));
        return 1.2 * rate * rate * torch::exp(0.7 * L.turb);
    }
    if (e.name == "lsm") return s.lsm;
    if (e.name == "orog") return s.orog;
    throw ConfigError("synthetic generator has no rule for variable '" + e.name + "'");
}

} // namespace

nlohmann::json SynthConfig::to_json() const {
    return {{"lat", lat},           {"lon", lon},
            {"steps", steps},       {"seed", seed},
            {"advection", advection}, {"diffusion", diffusion},
            {"interval_hours", interval.count()}, {"start", format_time(start)}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
    SynthConfig c;
    c.lat = j.value("lat", c.lat);
    c.lon = j.value("lon", c.lon);
    c.steps = j.value("steps", c.steps);
    c.seed = j.value("seed", c.seed);
    c.advection = j.value("advection", c.advection);
    c.diffusion = j.value("diffusion", c.diffusion);
    c.interval = Hours(j.value("interval_hours", static_cast<long>(c.interval.count())));
    if (j.contains("start")) c.start = parse_time(j["start"].get<std::string>());
    return c;
}

Dataset generate_synthetic_dataset(const SynthConfig& config, const VariableCatalog& catalog,
                                   int64_t min_steps) {
    if (config.lat < kMinSynthLat || config.lon < kMinSynthLon) {
        throw ConfigError("synthetic grid must be at least " + std::to_string(kMinSynthLat) + "x" +
                          std::to_string(kMinSynthLon));
    }
    if (config.steps < 1 || config.steps < min_steps) {
        throw ConfigError("synthetic dataset needs at least " +
                          std::to_string(std::max<int64_t>(min_steps, 1)) + " steps");
    }
    if (config.advection < 0.0 || config.diffusion < 0.0) {
        throw ConfigError("advection and diffusion multipliers must be non-negative");
    }
    torch::NoGradGuard no_grad;
    const int64_t H = config.lat, W = config.lon;
    auto gen = at::detail::createCPUGenerator(config.seed);
    auto statics_gen = at::detail::createCPUGenerator(config.seed ^ 0x9e3779b97f4a7c15ULL);

    auto ky = torch::fft::fftfreq(H, torch::kDouble).view({H, 1});
    auto kx = torch::fft::fftfreq(W, torch::kDouble).view({1, W});
    auto k2 = kx * kx + ky * ky;

    const auto lats = make_latitudes(H);
    auto phi = torch::tensor(lats, torch::kDouble).view({H, 1}) * (std::numbers::pi / 180.0);
    StaticFields s;
    s.sin2 = torch::sin(phi).pow(2);
    s.cos2 = torch::cos(phi).pow(2);
    s.jet = torch::cos(3.0 * phi);
    {
        SpectralField land({0.03, 3.0, 0.0}, k2), relief({0.05, 2.5, 0.0}, k2);
        s.lsm = (land.initial(statics_gen) > 0.3).to(torch::kDouble);
        s.orog = 0.8 * torch::nn::functional::softplus(1.5 * relief.initial(statics_gen)) * s.lsm;
    }

    const SpectralField flow(kFlow, k2), temp(kTemp, k2), moist(kMoist, k2), turb(kTurb, k2);
    Latents L{flow.initial(gen), temp.initial(gen), moist.initial(gen), turb.initial(gen)};

    // Zonal jet in fine cells per step: strongest at the equator.
    auto shift = config.advection * (0.6 + 1.2 * s.cos2);

    DerivedScales scales;
    auto out = torch::empty({config.steps, catalog.size(), H, W}, torch::kFloat);
    for (int64_t t = 0; t < config.steps; ++t) {
        const auto dflow = spectral_derivatives(L.flow, kx, ky);
        const auto dturb = spectral_derivatives(L.turb, kx, ky);
        if (t == 0) {
            auto sd = [](const torch::Tensor& x) { return std::max(x.std(false).item<double>(), 1e-12); };
            scales = {sd(dflow.dx), sd(dflow.dy), sd(dturb.dx), sd(dturb.dy), sd(dflow.laplacian)};
        }
        for (int64_t c = 0; c < catalog.size(); ++c) {
            out[t][c].copy_(channel_field(catalog.entries()[c], L, dflow, dturb, s, scales).expand({H, W}));
        }
        if (t + 1 == config.steps) break;
        auto evolve = [&](torch::Tensor& f, const SpectralField& spec) {
            if (config.advection > 0.0) f = zonal_shift(f, shift);
            if (config.diffusion > 0.0) f = spec.damp_and_force(f, config.diffusion, gen);
        };
        evolve(L.flow, flow);
        evolve(L.temp, temp);
        evolve(L.moist, moist);
        evolve(L.turb, turb);
    }
    return {out, lats, make_longitudes(W), config.start, config.interval, catalog};
}

// ---------------------------------------------------------------------------
// Sample pairs

SamplePairSequence::SamplePairSequence(const Dataset& dataset, PairConfig config, StepRange range)
    : dataset_(&dataset), config_(config) {
    if (config_.history < 1 || config_.horizon < 1 || config_.stride < 1) {
        throw ConfigError("history, horizon and stride must be positive");
    }
    const auto di = dataset.interval().count();
    const auto want = config_.interval.count();
    if (want <= 0 || want % di != 0) {
        throw ConfigError("pair interval must be a positive multiple of the dataset interval");
    }
    sub_sample_ = want / di;
    range.begin = std::max<int64_t>(range.begin, 0);
    range.end = std::min<int64_t>(range.end, dataset.steps());
    const int64_t span = (config_.history + config_.horizon - 1) * sub_sample_;
    for (int64_t s = range.begin; s + span < range.end; s += config_.stride * sub_sample_) {
        starts_.push_back(s);
    }
    if (starts_.empty()) {
        warnings_.push_back("insufficient length: a window spans " + std::to_string(span + 1) +
                            " steps but the range [" + std::to_string(range.begin) + ", " +
                            std::to_string(range.end) + ") holds " +
                            std::to_string(std::max<int64_t>(range.end - range.begin, 0)));
    }
}

std::vector<int64_t> SamplePairSequence::steps_of(int64_t i) const {
    std::vector<int64_t> out;
    const int64_t n = config_.history + config_.horizon;
    for (int64_t j = 0; j < n; ++j) out.push_back(starts_.at(static_cast<size_t>(i)) + j * sub_sample_);
    return out;
}

SamplePair SamplePairSequence::at(int64_t i) const {
    SamplePair p;
    p.steps = steps_of(i);
    for (int64_t j = 0; j < static_cast<int64_t>(p.steps.size()); ++j) {
        auto hr = dataset_->frame(p.steps[j]);
        if (j < config_.history) {
            p.history.push_back(downsample(hr, config_.sr_factor));
        } else {
            p.lr_targets.push_back(downsample(hr, config_.sr_factor));
            p.hr_targets.push_back(std::move(hr));
        }
    }
    return p;
}

SamplePairSequence make_sample_pairs(const Dataset& dataset, const PairConfig& config,
                                     std::optional<StepRange> range) {
    if (dataset.height() % config.sr_factor != 0 || dataset.width() % config.sr_factor != 0) {
        throw ShapeError("dataset grid is not divisible by the super-resolution factor");
    }
    return SamplePairSequence(dataset, config, range.value_or(StepRange{0, dataset.steps()}));
}

// ---------------------------------------------------------------------------
// IO

std::string format_time(TimePoint t) {
    const std::time_t tt = t.time_since_epoch().count();
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

TimePoint parse_time(const std::string& s) {
    std::tm tm{};
    std::istringstream in(s);
    in >> std::get_time(&tm, "%Y-%m-%dT%H:%M:%S");
    if (in.fail()) throw DataError("cannot parse timestamp '" + s + "'");
    return TimePoint(std::chrono::seconds(timegm(&tm)));
}

namespace {

std::filesystem::path sidecar_path(const std::filesystem::path& p) {
    auto s = p;
    s += ".json";
    return s;
}

} // namespace

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
    auto values = dataset.values().to(torch::kFloat).contiguous();
    std::ofstream bin(path, std::ios::binary);
    if (!bin) throw IoError("cannot open '" + path.string() + "' for writing");
    const auto* p = values.data_ptr<float>();
    const auto n = values.numel();
    if constexpr (std::endian::native == std::endian::little) {
        bin.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(float)));
    } else {
        for (int64_t i = 0; i < n; ++i) {
            auto u = std::bit_cast<uint32_t>(p[i]);
            u = __builtin_bswap32(u);
            bin.write(reinterpret_cast<const char*>(&u), sizeof(u));
        }
    }
    if (!bin) throw IoError("failed writing '" + path.string() + "'");

    nlohmann::json meta;
    meta["format"] = "swinrdm-flat-f32-le";
    meta["format_version"] = 1;
    meta["dims"] = {{"time", values.size(0)}, {"channel", values.size(1)},
                    {"lat", values.size(2)},  {"lon", values.size(3)}};
    meta["layout"] = {"time", "channel", "lat", "lon"};
    meta["catalog"] = dataset.catalog().to_json();
    meta["latitudes"] = dataset.latitudes();
    meta["longitudes"] = dataset.longitudes();
    meta["start"] = format_time(dataset.start());
    meta["interval_hours"] = dataset.interval().count();
    std::ofstream side(sidecar_path(path));
    if (!side) throw IoError("cannot write sidecar for '" + path.string() + "'");
    side << meta.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream side(sidecar_path(path));
    if (!side) throw IoError("missing sidecar '" + sidecar_path(path).string() + "'");
    nlohmann::json meta;
    try {
        side >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed sidecar: ") + e.what());
    }
    if (meta.value("format", std::string()) != "swinrdm-flat-f32-le") {
        throw DataError("unsupported dataset format in '" + path.string() + "'");
    }
    const auto& d = meta.at("dims");
    const int64_t T = d.at("time"), C = d.at("channel"), H = d.at("lat"), W = d.at("lon");
    auto values = torch::empty({T, C, H, W}, torch::kFloat);
    std::ifstream bin(path, std::ios::binary);
    if (!bin) throw IoError("cannot open '" + path.string() + "'");
    const auto bytes = static_cast<std::streamsize>(values.numel() * sizeof(float));
    bin.read(reinterpret_cast<char*>(values.data_ptr<float>()), bytes);
    if (bin.gcount() != bytes) throw DataError("dataset file is shorter than its sidecar declares");
    if constexpr (std::endian::native != std::endian::little) {
        auto* p = reinterpret_cast<uint32_t*>(values.data_ptr<float>());
        for (int64_t i = 0; i < values.numel(); ++i) p[i] = __builtin_bswap32(p[i]);
    }
    return {values,
            meta.at("latitudes").get<std::vector<double>>(),
            meta.at("longitudes").get<std::vector<double>>(),
            parse_time(meta.at("start").get<std::string>()),
            Hours(meta.at("interval_hours").get<long>()),
            VariableCatalog::from_json(meta.at("catalog"))};
}

} // namespace swinrdm::data
