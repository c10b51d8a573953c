#include "swinrdm/metrics.hpp"

#include <cmath>
#include <numbers>

#include "swinrdm/error.hpp"

namespace swinrdm::metrics {

namespace F = torch::nn::functional;

torch::Tensor LatWeights::tensor(torch::Dtype dtype) const {
    return torch::tensor(values, torch::kFloat64).to(dtype);
}

LatWeights lat_weights(const std::vector<double>& latitudes) {
    if (latitudes.empty()) throw DataError("latitude weights need at least one latitude");
    LatWeights w;
    double sum = 0.0;
    for (double lat : latitudes) {
        if (!(std::abs(lat) <= 90.0)) throw RangeError("latitude outside [-90, 90]");
        w.values.push_back(std::cos(lat * std::numbers::pi / 180.0));
        sum += w.values.back();
    }
    if (sum <= 0.0) throw RangeError("latitude weights sum to zero");
    const double mean = sum / static_cast<double>(latitudes.size());
    for (double& v : w.values) v /= mean;
    return w;
}

torch::Tensor weighted_rmse(const torch::Tensor& pred, const torch::Tensor& truth,
                            const LatWeights& weights) {
    if (pred.sizes() != truth.sizes()) throw ShapeError("weighted_rmse: prediction and truth differ in shape");
    if (pred.dim() < 2 || pred.size(-2) != static_cast<int64_t>(weights.values.size())) {
        throw ShapeError("weighted_rmse: latitude weights do not match the grid");
    }
    auto w = weights.tensor().view({-1, 1});
    auto err = (pred.to(torch::kFloat64) - truth.to(torch::kFloat64)).square() * w;
    return err.mean({-2, -1}).sqrt();
}

double weighted_rmse(const data::FieldGrid& pred, const data::FieldGrid& truth,
                     const LatWeights& weights, int64_t channel) {
    if (pred.values.sizes() != truth.values.sizes()) throw ShapeError("weighted_rmse: grids differ in shape");
    if (channel < 0 || channel >= pred.channels()) throw RangeError("weighted_rmse: channel out of range");
    return weighted_rmse(pred.values[channel], truth.values[channel], weights).item<double>();
}

ContingencyTable& ContingencyTable::operator+=(const ContingencyTable& o) {
    hits += o.hits;
    misses += o.misses;
    false_alarms += o.false_alarms;
    correct_negatives += o.correct_negatives;
    return *this;
}

CsiResult csi_from_table(const ContingencyTable& table) {
    CsiResult r;
    r.table = table;
    const int64_t denom = table.hits + table.misses + table.false_alarms;
    r.degenerate = denom == 0;
    r.csi = r.degenerate ? 0.0 : static_cast<double>(table.hits) / static_cast<double>(denom);
    return r;
}

CsiResult csi(const torch::Tensor& pred_tp, const torch::Tensor& truth_tp, double threshold) {
    if (threshold < 0.0) throw RangeError("CSI threshold must be non-negative");
    if (pred_tp.sizes() != truth_tp.sizes()) throw ShapeError("csi: prediction and truth differ in shape");
    auto p = pred_tp >= threshold;
    auto t = truth_tp >= threshold;
    ContingencyTable table;
    table.hits = (p & t).sum().item<int64_t>();
    table.misses = (~p & t).sum().item<int64_t>();
    table.false_alarms = (p & ~t).sum().item<int64_t>();
    table.correct_negatives = (~p & ~t).sum().item<int64_t>();
    return csi_from_table(table);
}

nlohmann::json FeatureExtractorConfig::to_json() const {
    return {{"variables", variables}, {"widths", widths}, {"seed", seed}};
}

FeatureExtractorConfig FeatureExtractorConfig::from_json(const nlohmann::json& j) {
    FeatureExtractorConfig c;
    c.variables = j.value("variables", c.variables);
    c.widths = j.value("widths", c.widths);
    c.seed = j.value("seed", c.seed);
    return c;
}

namespace {

torch::Tensor periodic_conv(const torch::Tensor& x, const torch::Tensor& w, const torch::Tensor& b,
                            int64_t stride) {
    auto padded = torch::cat({x.narrow(3, x.size(3) - 1, 1), x, x.narrow(3, 0, 1)}, 3);
    return F::conv2d(padded, w, F::Conv2dFuncOptions().bias(b).stride(stride).padding({1, 0}));
}

} // namespace

FeatureExtractor::FeatureExtractor(FeatureExtractorConfig config, const data::VariableCatalog& catalog)
    : config_(std::move(config)) {
    if (config_.variables.empty() || config_.widths.empty()) throw ConfigError("empty feature extractor");
    for (const auto& key : config_.variables) channels_.push_back(catalog.index(key));
    const auto& stats = catalog.stats();
    std::vector<double> mean, std;
    for (int64_t c : channels_) {
        mean.push_back(stats.mean[static_cast<size_t>(c)]);
        std.push_back(stats.std[static_cast<size_t>(c)]);
    }
    const auto n = static_cast<int64_t>(channels_.size());
    mean_ = torch::tensor(mean, torch::kFloat64).view({1, n, 1, 1}).to(torch::kFloat32);
    std_ = torch::tensor(std, torch::kFloat64).view({1, n, 1, 1}).to(torch::kFloat32);

    auto gen = at::detail::createCPUGenerator(config_.seed);
    int64_t in = n;
    for (int64_t out : config_.widths) {
        const double scale = std::sqrt(2.0 / static_cast<double>(in * 9));
        weights_.push_back(torch::randn({out, in, 3, 3}, gen, torch::kFloat32) * scale);
        biases_.push_back(torch::randn({out}, gen, torch::kFloat32) * 0.1);
        in = out;
    }
}

int64_t FeatureExtractor::dim() const {
    int64_t d = config_.widths.front();
    for (int64_t w : config_.widths) d += w;
    return d;
}

torch::Tensor FeatureExtractor::features(const torch::Tensor& grids) const {
    torch::NoGradGuard no_grad;
    if (grids.dim() != 4) throw ShapeError("feature extraction expects [N, channels, lat, lon]");
    for (int64_t c : channels_) {
        if (c >= grids.size(1)) throw DataError("feature extraction: missing channel " + std::to_string(c));
    }
    auto x = grids.index_select(1, torch::tensor(channels_, torch::kLong)).to(torch::kFloat32);
    x = (x - mean_) / std_;
    std::vector<torch::Tensor> parts;
    torch::Tensor first_std;
    for (size_t i = 0; i < weights_.size(); ++i) {
        x = torch::relu(periodic_conv(x, weights_[i], biases_[i], i == 0 ? 1 : 2));
        parts.push_back(x.mean({2, 3}));
        if (i == 0) first_std = x.std({2, 3}, /*unbiased=*/false);
    }
    parts.push_back(first_std);
    return torch::cat(parts, 1).to(torch::kFloat64);
}

Eigen::MatrixXd extract_features(const torch::Tensor& grids, const FeatureExtractor& extractor) {
    auto f = extractor.features(grids).contiguous();
    Eigen::MatrixXd m(f.size(0), f.size(1));
    auto acc = f.accessor<double, 2>();
    for (int64_t i = 0; i < f.size(0); ++i) {
        for (int64_t j = 0; j < f.size(1); ++j) m(i, j) = acc[i][j];
    }
    return m;
}

Eigen::MatrixXd extract_features(const std::vector<data::FieldGrid>& grids,
                                 const FeatureExtractor& extractor) {
    if (grids.empty()) throw DataError("feature extraction needs at least one grid");
    std::vector<torch::Tensor> v;
    for (const auto& g : grids) v.push_back(g.values);
    return extract_features(torch::stack(v), extractor);
}

namespace {

Eigen::MatrixXd sym_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

} // namespace

double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double ridge) {
    if (a.rows() < 2 || b.rows() < 2) throw DataError("Frechet distance needs at least two samples per set");
    if (a.cols() != b.cols()) throw ShapeError("Frechet distance: feature dimensions differ");
    auto moments = [ridge](const Eigen::MatrixXd& x, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
        mu = x.colwise().mean();
        Eigen::MatrixXd c = x.rowwise() - mu.transpose();
        cov = c.transpose() * c / static_cast<double>(x.rows() - 1);
        cov.diagonal().array() += ridge;
    };
    Eigen::VectorXd mu_a, mu_b;
    Eigen::MatrixXd cov_a, cov_b;
    moments(a, mu_a, cov_a);
    moments(b, mu_b, cov_b);
    const Eigen::MatrixXd root_a = sym_sqrt(cov_a);
    Eigen::MatrixXd inner = root_a * cov_b * root_a;
    inner = 0.5 * (inner + inner.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner, Eigen::EigenvaluesOnly);
    const double cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double d = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * cross;
    return std::max(d, 0.0);
}

torch::Tensor wind_speed(const torch::Tensor& u, const torch::Tensor& v) {
    if (u.sizes() != v.sizes()) throw ShapeError("wind_speed: component shapes differ");
    return torch::sqrt(u.square() + v.square());
}

data::FieldGrid wind_speed(const data::FieldGrid& grid, const data::VariableCatalog& catalog) {
    const int64_t iu = catalog.index("u10"), iv = catalog.index("v10");
    if (iu >= grid.channels() || iv >= grid.channels()) throw DataError("wind_speed: grid lacks wind channels");
    return {wind_speed(grid.values[iu], grid.values[iv]).unsqueeze(0), grid.latitudes, grid.longitudes,
            grid.valid_time};
}

data::FieldGrid ensemble_mean(const std::vector<data::FieldGrid>& members) {
    if (members.empty()) throw DataError("ensemble_mean needs at least one member");
    std::vector<torch::Tensor> v;
    for (const auto& m : members) {
        if (m.values.sizes() != members.front().values.sizes()) throw ShapeError("ensemble members differ in shape");
        v.push_back(m.values);
    }
    const auto& f = members.front();
    return {torch::stack(v).mean(0), f.latitudes, f.longitudes, f.valid_time};
}

} // namespace swinrdm::metrics
