#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "swinrdm/grid_data.hpp"

namespace swinrdm::metrics {

/// cos(latitude) row weights normalized to mean 1 over rows.
struct LatWeights {
    std::vector<double> values;

    /// [lat] tensor of the weights.
    torch::Tensor tensor(torch::Dtype dtype = torch::kFloat64) const;
};

LatWeights lat_weights(const std::vector<double>& latitudes);

/// sqrt(mean over rows and columns of w_row * (pred - truth)^2) for one channel.
double weighted_rmse(const data::FieldGrid& pred, const data::FieldGrid& truth,
                     const LatWeights& weights, int64_t channel);

/// Batched form over the two trailing [lat, lon] axes: [..., lat, lon] -> [...].
torch::Tensor weighted_rmse(const torch::Tensor& pred, const torch::Tensor& truth,
                            const LatWeights& weights);

struct ContingencyTable {
    int64_t hits = 0;
    int64_t misses = 0;
    int64_t false_alarms = 0;
    int64_t correct_negatives = 0;

    int64_t total() const { return hits + misses + false_alarms + correct_negatives; }
    ContingencyTable& operator+=(const ContingencyTable& other);
};

struct CsiResult {
    ContingencyTable table;
    double csi = 0.0;
    bool degenerate = false;  // hits + misses + false_alarms == 0
};

/// Event iff value >= threshold (mm). Any shape; pred and truth must match.
CsiResult csi(const torch::Tensor& pred_tp, const torch::Tensor& truth_tp, double threshold);
CsiResult csi_from_table(const ContingencyTable& table);

struct FeatureExtractorConfig {
    std::vector<std::string> variables = data::VariableCatalog::headline_keys();
    std::vector<int64_t> widths = {32, 64, 128};
    uint64_t seed = 20230101;

    nlohmann::json to_json() const;
    static FeatureExtractorConfig from_json(const nlohmann::json& j);
};

/// Frozen random convolutional network. Selected channels are standardized with
/// the catalog statistics, then pass through periodic 3x3 convolutions with ReLU
/// (the second and third with stride 2). The feature vector is the spatial mean
/// of every layer plus the spatial standard deviation of the first layer.
class FeatureExtractor {
public:
    FeatureExtractor(FeatureExtractorConfig config, const data::VariableCatalog& catalog);

    int64_t dim() const;
    const FeatureExtractorConfig& config() const { return config_; }

    /// grids: [N, catalog channels, lat, lon] in physical units -> [N, dim] float64.
    torch::Tensor features(const torch::Tensor& grids) const;

private:
    FeatureExtractorConfig config_;
    std::vector<int64_t> channels_;
    torch::Tensor mean_, std_;  // [1, selected, 1, 1]
    std::vector<torch::Tensor> weights_, biases_;
};

/// One row per grid.
Eigen::MatrixXd extract_features(const std::vector<data::FieldGrid>& grids,
                                 const FeatureExtractor& extractor);
Eigen::MatrixXd extract_features(const torch::Tensor& grids, const FeatureExtractor& extractor);

/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2) of Gaussian fits
/// to the rows of a and b; `ridge` is added to both covariance diagonals.
double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double ridge = 1e-6);

/// sqrt(u10^2 + v10^2) as a one-channel grid.
data::FieldGrid wind_speed(const data::FieldGrid& grid, const data::VariableCatalog& catalog);
torch::Tensor wind_speed(const torch::Tensor& u, const torch::Tensor& v);

data::FieldGrid ensemble_mean(const std::vector<data::FieldGrid>& members);

} // namespace swinrdm::metrics
