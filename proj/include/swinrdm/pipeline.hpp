#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "swinrdm/diffusion_sr.hpp"
#include "swinrdm/forecaster.hpp"
#include "swinrdm/grid_data.hpp"
#include "swinrdm/metrics.hpp"

namespace swinrdm::pipeline {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

struct DataSection {
    std::string path;  // flat dataset on the fine grid; empty means synthesize
    data::SynthConfig synth;
    std::string catalog = "desk";
    int64_t sr_factor = 4;
    double train_fraction = 0.7;
    double val_fraction = 0.1;  // the remainder is the test split
};

struct ForecasterSection {
    forecast::ForecasterConfig model;  // channel counts and grid are filled from the data
    int64_t horizon = 8;
    int64_t val_windows = 64;
};

struct DiffusionSection {
    int64_t timesteps = 1000;
    diffusion::ScheduleKind kind = diffusion::ScheduleKind::Linear;
    std::string objective = "x0";  // "x0" or "eps"
    int64_t steps = 10;            // respaced sampling steps
    int64_t members = 10;
    diffusion::DenoiserConfig denoiser;
    diffusion::RegressionSrConfig regression;
};

struct OptimizerSection {
    std::string algorithm = "adamw";
    double learning_rate = 3e-4;
    double weight_decay = 0.05;
    std::string schedule = "cosine";  // "cosine" or "constant"
    int64_t epochs = 10;
    int64_t batch_size = 8;
    int64_t iters_per_epoch = 100;
    double clip_grad = 1.0;  // 0 disables clipping
};

struct EvalSection {
    std::vector<int64_t> leads;  // forecast steps; empty means 1..horizon
    std::vector<double> csi_thresholds = {2.0, 5.0, 10.0, 20.0, 50.0};
    int64_t inits = 64;           // test initializations for deterministic methods
    int64_t ensemble_inits = 16;  // subset used for the ensemble
    metrics::FeatureExtractorConfig features;
    double frechet_ridge = 1e-6;
};

struct AblationSection {
    std::vector<int64_t> dims = {32, 64};
    int64_t multi_dim = 32;
    int64_t multi_scales = 3;
};

struct ExperimentConfig {
    DataSection data;
    ForecasterSection forecaster;
    DiffusionSection diffusion;
    OptimizerSection forecaster_optimizer;
    OptimizerSection sr_optimizer;
    EvalSection evaluation;
    AblationSection ablation;
    uint64_t seed = 0;
    std::string out_dir = "runs";

    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const fs::path& path);
    void save(const fs::path& path) const;

    /// Hash of everything that affects results (the output directory is excluded).
    std::string hash() const;

    /// Lead steps to evaluate, resolved against the horizon.
    std::vector<int64_t> eval_leads() const;

    /// Configuration sized for the one-core desk benchmark.
    static ExperimentConfig desk();
};

// ---------------------------------------------------------------------------
// Run bookkeeping

struct EpochLog {
    int64_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double learning_rate = 0.0;
    double seconds = 0.0;
};

/// Append-only log of one run.
class RunRecord {
public:
    RunRecord() = default;
    RunRecord(std::string kind, std::string config_hash);

    void add_epoch(const EpochLog& e) { epochs_.push_back(e); }
    void add_checkpoint(const std::string& id, const fs::path& path);
    void add_table(const std::string& name, nlohmann::json table);
    void add_timing(const std::string& name, double seconds);

    const std::string& kind() const { return kind_; }
    const std::string& config_hash() const { return config_hash_; }
    const std::vector<EpochLog>& epochs() const { return epochs_; }

    nlohmann::json to_json() const;
    void save(const fs::path& path) const;

private:
    std::string kind_;
    std::string config_hash_;
    std::vector<EpochLog> epochs_;
    nlohmann::json checkpoints_ = nlohmann::json::array();
    nlohmann::json tables_ = nlohmann::json::object();
    nlohmann::json timings_ = nlohmann::json::object();
};

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int64_t kCheckpointFormatVersion = 1;

/// Named parameter arrays plus the model config, the catalog (with statistics),
/// the catalog layout hash and the format version, in one archive.
struct Checkpoint {
    std::string kind;  // "forecaster", "denoiser" or "regression_sr"
    nlohmann::json config;
    nlohmann::json catalog;
    std::string catalog_hash;
    int64_t format_version = kCheckpointFormatVersion;
    std::string config_hash;  // experiment config the model was trained under
    std::map<std::string, torch::Tensor> tensors;

    /// Content hash over kind, config and tensor bytes.
    std::string id() const;
};

void save_checkpoint(const torch::nn::Module& module, const std::string& kind,
                     const nlohmann::json& model_config, const data::VariableCatalog& catalog,
                     const std::string& config_hash, const fs::path& path);
Checkpoint read_checkpoint(const fs::path& path);
/// Copies parameters and buffers by name; throws on missing names or shape mismatch.
void load_parameters(torch::nn::Module& module, const Checkpoint& checkpoint);

forecast::Forecaster load_forecaster(const Checkpoint& checkpoint);
diffusion::UNetDenoiser load_denoiser(const Checkpoint& checkpoint);
diffusion::RegressionSr load_regression(const Checkpoint& checkpoint);

// ---------------------------------------------------------------------------
// Data preparation

/// Everything derived from the dataset that training and evaluation share.
struct PreparedData {
    data::Dataset hr;               // physical units, fine grid, catalog stats set
    data::VariableCatalog catalog;  // with statistics from the training split
    torch::Tensor lr_norm;          // [T, C, h, w] normalized, coarse grid
    torch::Tensor hr_constants;     // [constants, H, W] on the fine grid
    torch::Tensor climatology_lr;   // [C, h, w] training-split mean, physical
    torch::Tensor climatology_hr;   // [C, H, W]
    std::vector<double> lr_lats, lr_lons;
    data::StepRange train, val, test;

    /// Normalized fine-grid frames for the given dataset indices: [N, C, H, W].
    torch::Tensor hr_norm(const std::vector<int64_t>& steps) const;
};

PreparedData prepare_data(const ExperimentConfig& config);

/// Forecaster config for the prepared data (channels, constants, grid, history).
forecast::ForecasterConfig resolve_forecaster_config(const ExperimentConfig& config,
                                                     const PreparedData& data);
diffusion::DenoiserConfig resolve_denoiser_config(const ExperimentConfig& config,
                                                  const PreparedData& data);
diffusion::RegressionSrConfig resolve_regression_config(const ExperimentConfig& config,
                                                        const PreparedData& data);

/// First dataset index of every training window (history followed by horizon
/// targets) that fits inside `range`.
std::vector<int64_t> window_starts(const ExperimentConfig& config, const PreparedData& data,
                                   const data::StepRange& range);

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
    fs::path checkpoint;
    std::string checkpoint_id;
    RunRecord record;
    double best_val_loss = 0.0;
};

/// AdamW with cosine learning-rate decay on free-running rollouts of `horizon`
/// steps. The checkpoint with the lowest validation loss is kept. Non-finite
/// losses abort with TrainingDiverged.
TrainResult train_forecaster(const ExperimentConfig& config, const PreparedData& data,
                             const fs::path& out_dir);

/// Validation loss of a forecaster on the fixed validation windows.
double validation_loss(forecast::ForecasterImpl& model, const ExperimentConfig& config,
                       const PreparedData& data);

/// Forecast steps k drawn uniformly from [1, horizon].
std::vector<int64_t> draw_forecast_steps(int64_t n, int64_t horizon, torch::Generator& gen);

struct SrTrainResult {
    TrainResult diffusion;
    TrainResult regression;
};

/// Stage two: the forecaster checkpoint is frozen and rolled out once from every
/// training window; each training sample picks one window and a uniform step k
/// and pairs the forecast frame x_k with the fine-grid truth y_k.
SrTrainResult train_sr(const ExperimentConfig& config, const PreparedData& data,
                       const fs::path& forecaster_checkpoint, const fs::path& out_dir,
                       bool train_regression = true);

// ---------------------------------------------------------------------------
// Inference

struct ForecastBundle {
    data::TimePoint init_time{};
    std::vector<data::FieldGrid> lr;  // physical, forecast steps 1..K
    std::vector<int64_t> leads;       // steps that were super-resolved
    std::vector<diffusion::EnsembleForecast> hr;  // one per entry of `leads`
    nlohmann::json provenance;

    nlohmann::json to_json() const;
};

/// history_norm: [history, C, h, w] normalized coarse frames ending at init_time.
ForecastBundle rollout_and_superresolve(const torch::Tensor& history_norm, data::TimePoint init_time,
                                        int64_t K, forecast::ForecasterImpl& forecaster,
                                        diffusion::Denoiser& denoiser,
                                        const diffusion::DiffusionSchedule& schedule,
                                        const diffusion::SamplerOptions& options,
                                        const PreparedData& data, const std::vector<int64_t>& leads);

/// Checkpoint-driven form used by the CLI: history frames are physical coarse grids.
ForecastBundle rollout_and_superresolve(const std::vector<data::FieldGrid>& history, int64_t K,
                                        const fs::path& forecaster_checkpoint,
                                        const fs::path& sr_checkpoint, const ExperimentConfig& config,
                                        const PreparedData& data, int64_t steps, int64_t members,
                                        uint64_t seed, const std::vector<int64_t>& leads);

void save_bundle(const ForecastBundle& bundle, const data::VariableCatalog& catalog,
                 const fs::path& out_dir);

// ---------------------------------------------------------------------------
// Evaluation

/// Predictions of one method on one grid: fields[l] is [N, C, H, W] in physical
/// units for lead leads[l]. members[l], when present, is [N, M, C, H, W].
struct MethodPredictions {
    std::string method;
    std::string checkpoint;
    std::vector<torch::Tensor> fields;
    std::vector<torch::Tensor> members;
};

struct ScoreGroup {
    std::string grid;  // "coarse" or "fine"
    std::vector<int64_t> leads;
    std::vector<double> lead_hours;
    std::vector<torch::Tensor> truth;  // per lead [N, C, H, W]
    std::vector<double> latitudes;
    std::vector<MethodPredictions> methods;
    bool frechet = false;
    bool csi = false;
};

struct Report {
    nlohmann::json json;
    std::string csv;

    /// Value of a row, or nullopt if absent. lead_hours < 0 selects aggregate rows;
    /// `threshold` selects CSI rows.
    std::optional<double> value(const std::string& method, const std::string& variable,
                                const std::string& metric, double lead_hours,
                                std::optional<double> threshold = std::nullopt) const;
    std::string hash() const;
    void save(const fs::path& out_dir, const std::string& stem = "report") const;
    static Report from_json(const nlohmann::json& j);
};

/// Wide CSV of report rows: one line per method, one column per (variable, metric, lead).
std::string rows_to_csv(const nlohmann::json& rows);

/// Scores every method of every group against its truth. Rows are keyed by
/// (method, variable, lead, metric) and carry the config hash and checkpoint id.
Report score(const std::vector<ScoreGroup>& groups, const data::VariableCatalog& catalog,
             const EvalSection& eval, const std::string& config_hash);

struct EvalCheckpoints {
    fs::path forecaster;
    fs::path denoiser;
    fs::path regression;  // optional
};

/// Runs every method on the test split (forecaster, persistence and climatology
/// on the coarse grid; bilinear, regression SR, diffusion SR and its ensemble on
/// the fine grid) and scores them.
Report evaluate(const ExperimentConfig& config, const PreparedData& data,
                const EvalCheckpoints& checkpoints);

// ---------------------------------------------------------------------------
// Plotting

struct PlotMetadata {
    std::string variable;
    std::string method;
    double lead_hours = 0.0;
    double vmin = 0.0;
    double vmax = 0.0;
};

/// fields[method][l] is a physical grid for lead_hours[l]; truth[l] sets the
/// colour range together with every method. Variables may include "ws" (wind
/// speed). Writes one PNG per (variable, lead, method) with the colour bounds in
/// text chunks and returns the paths.
std::vector<fs::path> plot_fields(const std::map<std::string, std::vector<data::FieldGrid>>& fields,
                                  const std::vector<data::FieldGrid>& truth,
                                  const std::vector<double>& lead_hours,
                                  const std::vector<std::string>& variables,
                                  const data::VariableCatalog& catalog, const fs::path& out_dir);

PlotMetadata read_plot_metadata(const fs::path& png);

// ---------------------------------------------------------------------------
// Ablations

struct SuiteOptions {
    bool reuse_checkpoints = true;  // skip training when a checkpoint with the same config hash exists
    bool run_sr = true;
};

/// Desk analogs of the aggregation ablation, the single- vs multi-scale
/// trade-off (with exact parameter counts at desk and paper scale) and the
/// super-resolution comparison. Failures of individual runs are recorded and
/// the suite continues.
nlohmann::json run_ablation_suite(const ExperimentConfig& config, const fs::path& out_dir,
                                  const SuiteOptions& options = {});

/// Paper-scale forecaster config (71 channels, 6 history frames, 128 x 256 grid).
forecast::ForecasterConfig paper_scale_config(forecast::Variant variant, int64_t dim);

} // namespace swinrdm::pipeline
