#include <fstream>
#include <set>

#include "swinrdm/error.hpp"
#include "swinrdm/hash.hpp"
#include "swinrdm/pipeline.hpp"

namespace swinrdm::pipeline {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config sections

namespace {

json optimizer_to_json(const OptimizerSection& o) {
    return {{"algorithm", o.algorithm},       {"learning_rate", o.learning_rate},
            {"weight_decay", o.weight_decay}, {"schedule", o.schedule},
            {"epochs", o.epochs},             {"batch_size", o.batch_size},
            {"iters_per_epoch", o.iters_per_epoch}, {"clip_grad", o.clip_grad}};
}

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where);

OptimizerSection optimizer_from_json(const json& j, OptimizerSection o) {
    reject_unknown(j, {"algorithm", "learning_rate", "weight_decay", "schedule", "epochs", "batch_size",
                       "iters_per_epoch", "clip_grad"},
                   "optimizer");
    o.algorithm = j.value("algorithm", o.algorithm);
    o.learning_rate = j.value("learning_rate", o.learning_rate);
    o.weight_decay = j.value("weight_decay", o.weight_decay);
    o.schedule = j.value("schedule", o.schedule);
    o.epochs = j.value("epochs", o.epochs);
    o.batch_size = j.value("batch_size", o.batch_size);
    o.iters_per_epoch = j.value("iters_per_epoch", o.iters_per_epoch);
    o.clip_grad = j.value("clip_grad", o.clip_grad);
    if (o.algorithm != "adamw") throw ConfigError("unsupported optimizer '" + o.algorithm + "'");
    if (o.schedule != "cosine" && o.schedule != "constant") {
        throw ConfigError("unsupported learning-rate schedule '" + o.schedule + "'");
    }
    if (o.epochs < 1 || o.batch_size < 1 || o.iters_per_epoch < 1 || !(o.learning_rate > 0.0)) {
        throw ConfigError("epochs, batch size, iterations and learning rate must be positive");
    }
    return o;
}

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [key, _] : j.items()) {
        if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

} // namespace

json ExperimentConfig::to_json() const {
    json j;
    j["data"] = {{"path", data.path},
                 {"synth", data.synth.to_json()},
                 {"catalog", data.catalog},
                 {"sr_factor", data.sr_factor},
                 {"train_fraction", data.train_fraction},
                 {"val_fraction", data.val_fraction}};
    j["forecaster"] = {{"model", forecaster.model.to_json()},
                       {"horizon", forecaster.horizon},
                       {"val_windows", forecaster.val_windows}};
    j["diffusion"] = {{"timesteps", diffusion.timesteps},
                      {"kind", diffusion::to_string(diffusion.kind)},
                      {"objective", diffusion.objective},
                      {"steps", diffusion.steps},
                      {"members", diffusion.members},
                      {"denoiser", diffusion.denoiser.to_json()},
                      {"regression", diffusion.regression.to_json()}};
    j["forecaster_optimizer"] = optimizer_to_json(forecaster_optimizer);
    j["sr_optimizer"] = optimizer_to_json(sr_optimizer);
    j["evaluation"] = {{"leads", evaluation.leads},
                       {"csi_thresholds", evaluation.csi_thresholds},
                       {"inits", evaluation.inits},
                       {"ensemble_inits", evaluation.ensemble_inits},
                       {"features", evaluation.features.to_json()},
                       {"frechet_ridge", evaluation.frechet_ridge}};
    j["ablation"] = {{"dims", ablation.dims},
                     {"multi_dim", ablation.multi_dim},
                     {"multi_scales", ablation.multi_scales}};
    j["seed"] = seed;
    j["out_dir"] = out_dir;
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) try {
    reject_unknown(j, {"data", "forecaster", "diffusion", "forecaster_optimizer", "sr_optimizer",
                       "evaluation", "ablation", "seed", "out_dir"},
                   "experiment config");
    ExperimentConfig c = desk();
    if (j.contains("data")) {
        const auto& d = j["data"];
        reject_unknown(d, {"path", "synth", "catalog", "sr_factor", "train_fraction", "val_fraction"}, "data");
        c.data.path = d.value("path", c.data.path);
        if (d.contains("synth")) c.data.synth = data::SynthConfig::from_json(d["synth"]);
        c.data.catalog = d.value("catalog", c.data.catalog);
        c.data.sr_factor = d.value("sr_factor", c.data.sr_factor);
        c.data.train_fraction = d.value("train_fraction", c.data.train_fraction);
        c.data.val_fraction = d.value("val_fraction", c.data.val_fraction);
    }
    if (j.contains("forecaster")) {
        const auto& f = j["forecaster"];
        reject_unknown(f, {"model", "horizon", "val_windows"}, "forecaster");
        if (f.contains("model")) c.forecaster.model = forecast::ForecasterConfig::from_json(f["model"]);
        c.forecaster.horizon = f.value("horizon", c.forecaster.horizon);
        c.forecaster.val_windows = f.value("val_windows", c.forecaster.val_windows);
    }
    if (j.contains("diffusion")) {
        const auto& d = j["diffusion"];
        reject_unknown(d, {"timesteps", "kind", "objective", "steps", "members", "denoiser", "regression"},
                       "diffusion");
        c.diffusion.timesteps = d.value("timesteps", c.diffusion.timesteps);
        if (d.contains("kind")) c.diffusion.kind = diffusion::schedule_kind_from_string(d["kind"]);
        c.diffusion.objective = d.value("objective", c.diffusion.objective);
        c.diffusion.steps = d.value("steps", c.diffusion.steps);
        c.diffusion.members = d.value("members", c.diffusion.members);
        if (d.contains("denoiser")) c.diffusion.denoiser = diffusion::DenoiserConfig::from_json(d["denoiser"]);
        if (d.contains("regression")) {
            c.diffusion.regression = diffusion::RegressionSrConfig::from_json(d["regression"]);
        }
    }
    if (j.contains("forecaster_optimizer")) {
        c.forecaster_optimizer = optimizer_from_json(j["forecaster_optimizer"], c.forecaster_optimizer);
    }
    if (j.contains("sr_optimizer")) c.sr_optimizer = optimizer_from_json(j["sr_optimizer"], c.sr_optimizer);
    if (j.contains("evaluation")) {
        const auto& e = j["evaluation"];
        reject_unknown(e, {"leads", "csi_thresholds", "inits", "ensemble_inits", "features", "frechet_ridge"},
                       "evaluation");
        c.evaluation.leads = e.value("leads", c.evaluation.leads);
        c.evaluation.csi_thresholds = e.value("csi_thresholds", c.evaluation.csi_thresholds);
        c.evaluation.inits = e.value("inits", c.evaluation.inits);
        c.evaluation.ensemble_inits = e.value("ensemble_inits", c.evaluation.ensemble_inits);
        if (e.contains("features")) {
            c.evaluation.features = metrics::FeatureExtractorConfig::from_json(e["features"]);
        }
        c.evaluation.frechet_ridge = e.value("frechet_ridge", c.evaluation.frechet_ridge);
    }
    if (j.contains("ablation")) {
        const auto& a = j["ablation"];
        reject_unknown(a, {"dims", "multi_dim", "multi_scales"}, "ablation");
        c.ablation.dims = a.value("dims", c.ablation.dims);
        c.ablation.multi_dim = a.value("multi_dim", c.ablation.multi_dim);
        c.ablation.multi_scales = a.value("multi_scales", c.ablation.multi_scales);
    }
    c.seed = j.value("seed", c.seed);
    c.out_dir = j.value("out_dir", c.out_dir);

    if (c.diffusion.objective != "x0" && c.diffusion.objective != "eps") {
        throw ConfigError("diffusion objective must be 'x0' or 'eps'");
    }
    if (c.forecaster.horizon < 1) throw ConfigError("horizon must be positive");
    if (c.data.train_fraction <= 0.0 || c.data.val_fraction <= 0.0 ||
        c.data.train_fraction + c.data.val_fraction >= 1.0) {
        throw ConfigError("split fractions must be positive and leave room for a test split");
    }
    return c;
} catch (const json::exception& e) {
    throw ConfigError(std::string("malformed experiment config: ") + e.what());
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return from_json(j);
}

void ExperimentConfig::save(const fs::path& path) const {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write config " + path.string());
    out << to_json().dump(2) << "\n";
}

std::string ExperimentConfig::hash() const {
    auto j = to_json();
    j.erase("out_dir");
    return hash_hex(j.dump());
}

std::vector<int64_t> ExperimentConfig::eval_leads() const {
    if (!evaluation.leads.empty()) {
        for (int64_t l : evaluation.leads) {
            if (l < 1 || l > forecaster.horizon) throw ConfigError("evaluation lead outside [1, horizon]");
        }
        return evaluation.leads;
    }
    std::vector<int64_t> out;
    for (int64_t l = 1; l <= forecaster.horizon; ++l) out.push_back(l);
    return out;
}

ExperimentConfig ExperimentConfig::desk() {
    ExperimentConfig c;
    c.data.synth.lat = 64;
    c.data.synth.lon = 128;
    c.data.synth.steps = 1600;
    c.forecaster.model.history = 6;
    c.forecaster.model.window = 8;
    c.forecaster.model.depth = 6;
    c.forecaster.model.dec_dim = 64;
    c.forecaster.model.enc_dim = 96;
    c.forecaster.model.scales = 3;
    c.forecaster.horizon = 8;
    c.diffusion.denoiser.base_width = 16;
    c.diffusion.regression = {};
    c.forecaster_optimizer.learning_rate = 1e-3;
    c.sr_optimizer.learning_rate = 5e-4;
    c.sr_optimizer.epochs = 10;
    c.sr_optimizer.iters_per_epoch = 200;
    return c;
}

// ---------------------------------------------------------------------------
// Run record

RunRecord::RunRecord(std::string kind, std::string config_hash)
    : kind_(std::move(kind)), config_hash_(std::move(config_hash)) {}

void RunRecord::add_checkpoint(const std::string& id, const fs::path& path) {
    checkpoints_.push_back({{"id", id}, {"path", path.string()}});
}

void RunRecord::add_table(const std::string& name, json table) {
    if (tables_.contains(name)) throw ConfigError("run record already holds table '" + name + "'");
    tables_[name] = std::move(table);
}

void RunRecord::add_timing(const std::string& name, double seconds) {
    timings_[name] = timings_.value(name, 0.0) + seconds;
}

json RunRecord::to_json() const {
    json epochs = json::array();
    for (const auto& e : epochs_) {
        epochs.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"val_loss", e.val_loss},
                          {"learning_rate", e.learning_rate},
                          {"seconds", e.seconds}});
    }
    return {{"kind", kind_},         {"config_hash", config_hash_}, {"epochs", epochs},
            {"checkpoints", checkpoints_}, {"tables", tables_},     {"timings", timings_}};
}

void RunRecord::save(const fs::path& path) const {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write run record " + path.string());
    out << to_json().dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Checkpoints

std::string Checkpoint::id() const {
    uint64_t h = fnv1a64(kind);
    h = fnv1a64(config.dump(), h);
    h = fnv1a64(catalog_hash, h);
    for (const auto& [name, t] : tensors) {
        h = fnv1a64(name, h);
        auto c = t.contiguous().cpu();
        h = fnv1a64({static_cast<const char*>(c.data_ptr()), static_cast<size_t>(c.numel() * c.element_size())}, h);
    }
    return hex64(h);
}

void save_checkpoint(const torch::nn::Module& module, const std::string& kind,
                     const json& model_config, const data::VariableCatalog& catalog,
                     const std::string& config_hash, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    torch::serialize::OutputArchive archive;
    archive.write("kind", c10::IValue(kind));
    archive.write("config", c10::IValue(model_config.dump()));
    archive.write("catalog", c10::IValue(catalog.to_json().dump()));
    archive.write("catalog_hash", c10::IValue(catalog.layout_hash()));
    archive.write("config_hash", c10::IValue(config_hash));
    archive.write("format_version", c10::IValue(kCheckpointFormatVersion));
    std::vector<std::string> names;
    for (const auto& p : module.named_parameters()) {
        archive.write("tensor/" + p.key(), p.value().detach());
        names.push_back(p.key());
    }
    for (const auto& b : module.named_buffers()) {
        archive.write("tensor/" + b.key(), b.value().detach());
        names.push_back(b.key());
    }
    archive.write("tensor_names", c10::IValue(json(names).dump()));
    try {
        archive.save_to(path.string());
    } catch (const c10::Error& e) {
        throw IoError("cannot write checkpoint " + path.string() + ": " + e.what_without_backtrace());
    }
}

Checkpoint read_checkpoint(const fs::path& path) {
    if (!fs::exists(path)) throw IoError("checkpoint " + path.string() + " does not exist");
    torch::serialize::InputArchive archive;
    try {
        archive.load_from(path.string());
    } catch (const c10::Error& e) {
        throw IoError("cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
    }
    auto read_string = [&](const std::string& key) {
        c10::IValue v;
        if (!archive.try_read(key, v) || !v.isString()) {
            throw DataError("checkpoint " + path.string() + " lacks '" + key + "'");
        }
        return v.toStringRef();
    };
    Checkpoint c;
    c10::IValue version;
    if (!archive.try_read("format_version", version) || !version.isInt()) {
        throw DataError("checkpoint " + path.string() + " lacks a format version");
    }
    c.format_version = version.toInt();
    if (c.format_version != kCheckpointFormatVersion) {
        throw DataError("checkpoint format version " + std::to_string(c.format_version) +
                        " is not supported (expected " + std::to_string(kCheckpointFormatVersion) + ")");
    }
    c.kind = read_string("kind");
    c.config = json::parse(read_string("config"));
    c.catalog = json::parse(read_string("catalog"));
    c.catalog_hash = read_string("catalog_hash");
    c.config_hash = read_string("config_hash");
    for (const auto& name : json::parse(read_string("tensor_names")).get<std::vector<std::string>>()) {
        torch::Tensor t;
        archive.read("tensor/" + name, t);
        c.tensors[name] = t;
    }
    if (data::VariableCatalog::from_json(c.catalog).layout_hash() != c.catalog_hash) {
        throw DataError("checkpoint catalog does not match its recorded hash");
    }
    return c;
}

void load_parameters(torch::nn::Module& module, const Checkpoint& checkpoint) {
    torch::NoGradGuard no_grad;
    auto assign = [&](const std::string& name, torch::Tensor& target) {
        auto it = checkpoint.tensors.find(name);
        if (it == checkpoint.tensors.end()) throw DataError("checkpoint lacks tensor '" + name + "'");
        if (it->second.sizes() != target.sizes()) {
            throw ShapeError("checkpoint tensor '" + name + "' has a different shape");
        }
        target.copy_(it->second);
    };
    for (auto& p : module.named_parameters()) assign(p.key(), p.value());
    for (auto& b : module.named_buffers()) assign(b.key(), b.value());
}

namespace {

void expect_kind(const Checkpoint& c, const std::string& kind) {
    if (c.kind != kind) throw DataError("expected a " + kind + " checkpoint, found " + c.kind);
}

} // namespace

forecast::Forecaster load_forecaster(const Checkpoint& checkpoint) {
    expect_kind(checkpoint, "forecaster");
    forecast::Forecaster m(forecast::ForecasterConfig::from_json(checkpoint.config));
    load_parameters(*m, checkpoint);
    m->eval();
    return m;
}

diffusion::UNetDenoiser load_denoiser(const Checkpoint& checkpoint) {
    expect_kind(checkpoint, "denoiser");
    diffusion::UNetDenoiser m(diffusion::DenoiserConfig::from_json(checkpoint.config));
    load_parameters(*m, checkpoint);
    m->eval();
    return m;
}

diffusion::RegressionSr load_regression(const Checkpoint& checkpoint) {
    expect_kind(checkpoint, "regression_sr");
    diffusion::RegressionSr m(diffusion::RegressionSrConfig::from_json(checkpoint.config));
    load_parameters(*m, checkpoint);
    m->eval();
    return m;
}

// ---------------------------------------------------------------------------
// Data preparation

torch::Tensor PreparedData::hr_norm(const std::vector<int64_t>& steps) const {
    auto idx = torch::tensor(steps, torch::kLong);
    return data::normalize_values(hr.values().index_select(0, idx), catalog).to(torch::kFloat32);
}

PreparedData prepare_data(const ExperimentConfig& config) {
    PreparedData p;
    auto catalog = data::VariableCatalog::build(config.data.catalog);
    p.hr = config.data.path.empty() ? data::generate_synthetic_dataset(config.data.synth, catalog)
                                    : data::load_dataset(config.data.path);
    if (p.hr.catalog().layout_hash() != catalog.layout_hash()) {
        throw DataError("dataset catalog does not match the configured '" + config.data.catalog + "' profile");
    }
    const int64_t T = p.hr.steps();
    const auto f = config.data.sr_factor;
    if (p.hr.height() % f != 0 || p.hr.width() % f != 0) {
        throw ConfigError("fine grid is not divisible by the super-resolution factor");
    }
    const auto train_end = static_cast<int64_t>(static_cast<double>(T) * config.data.train_fraction);
    const auto val_end =
        static_cast<int64_t>(static_cast<double>(T) * (config.data.train_fraction + config.data.val_fraction));
    p.train = {0, train_end};
    p.val = {train_end, val_end};
    p.test = {val_end, T};

    auto train_frames = p.hr.values().narrow(0, 0, train_end);
    catalog.set_stats(data::compute_normalization_stats(train_frames));
    p.hr.catalog() = catalog;
    p.catalog = catalog;

    auto lr = data::downsample_values(p.hr.values(), f);
    p.lr_norm = data::normalize_values(lr, catalog).to(torch::kFloat32).contiguous();
    auto constants = catalog.constant_channels();
    p.hr_constants = constants.empty()
                         ? torch::zeros({0, p.hr.height(), p.hr.width()})
                         : p.hr.values()[0].index_select(0, torch::tensor(constants, torch::kLong)).to(torch::kFloat32);
    p.climatology_hr = train_frames.to(torch::kFloat64).mean(0);
    p.climatology_lr = lr.narrow(0, 0, train_end).to(torch::kFloat64).mean(0);
    auto lr_frame = data::downsample(p.hr.frame(0), f);
    p.lr_lats = lr_frame.latitudes;
    p.lr_lons = lr_frame.longitudes;
    return p;
}

forecast::ForecasterConfig resolve_forecaster_config(const ExperimentConfig& config,
                                                     const PreparedData& data) {
    auto c = config.forecaster.model;
    c.channels = data.catalog.size();
    c.constant_channels = data.catalog.constant_channels();
    c.lat = data.lr_norm.size(2);
    c.lon = data.lr_norm.size(3);
    c.validate();
    return c;
}

diffusion::DenoiserConfig resolve_denoiser_config(const ExperimentConfig& config, const PreparedData& data) {
    auto c = config.diffusion.denoiser;
    c.target_channels = static_cast<int64_t>(data.catalog.predicted_channels().size());
    c.cond_channels = c.target_channels + static_cast<int64_t>(data.catalog.constant_channels().size());
    c.max_k = std::max(c.max_k, config.forecaster.horizon);
    c.max_t = std::max(c.max_t, config.diffusion.timesteps);
    return c;
}

diffusion::RegressionSrConfig resolve_regression_config(const ExperimentConfig& config,
                                                        const PreparedData& data) {
    auto c = config.diffusion.regression;
    c.target_channels = static_cast<int64_t>(data.catalog.predicted_channels().size());
    c.cond_channels = c.target_channels + static_cast<int64_t>(data.catalog.constant_channels().size());
    c.lat = data.hr.height();
    c.lon = data.hr.width();
    return c;
}

std::vector<int64_t> window_starts(const ExperimentConfig& config, const PreparedData& data,
                                   const data::StepRange& range) {
    data::PairConfig pc;
    pc.history = config.forecaster.model.history;
    pc.horizon = config.forecaster.horizon;
    pc.interval = data.hr.interval();
    pc.sr_factor = config.data.sr_factor;
    const auto seq = data::make_sample_pairs(data.hr, pc, range);
    std::vector<int64_t> out;
    for (int64_t i = 0; i < seq.size(); ++i) out.push_back(seq.steps_of(i).front());
    return out;
}

forecast::ForecasterConfig paper_scale_config(forecast::Variant variant, int64_t dim) {
    forecast::ForecasterConfig base;
    base.channels = 71;
    base.constant_channels = {69, 70};
    base.history = 6;
    base.lat = 128;
    base.lon = 256;
    base.window = 8;
    base.depth = 6;
    base.scales = 4;
    return forecast::make_variant_config(base, variant, dim, true);
}

} // namespace swinrdm::pipeline
