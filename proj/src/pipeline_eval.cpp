#include <chrono>
#include <fstream>
#include <set>

#include "swinrdm/error.hpp"
#include "swinrdm/log.hpp"
#include "swinrdm/hash.hpp"
#include "swinrdm/pipeline.hpp"

namespace swinrdm::pipeline {

using nlohmann::json;

namespace {

/// Reads an x0 estimate off an eps-predicting network.
class EpsToX0 : public diffusion::Denoiser {
public:
    EpsToX0(diffusion::Denoiser& inner, const diffusion::DiffusionSchedule& parent)
        : inner_(inner), alpha_bars_(torch::tensor(parent.alpha_bars(), torch::kFloat64)) {}

    torch::Tensor predict(const torch::Tensor& y_t, const torch::Tensor& cond, const torch::Tensor& t,
                          const torch::Tensor& k) override {
        auto eps = inner_.predict(y_t, cond, t, k);
        auto ab = alpha_bars_.index_select(0, t - 1).to(y_t.scalar_type()).view({-1, 1, 1, 1});
        return (y_t - torch::sqrt(1.0 - ab) * eps) / torch::sqrt(ab);
    }

private:
    diffusion::Denoiser& inner_;
    torch::Tensor alpha_bars_;
};

/// Physical fields [N, C, H, W] from normalized predicted channels [N, P, H, W].
torch::Tensor assemble_physical(const torch::Tensor& predicted_norm, const PreparedData& data) {
    const auto& catalog = data.catalog;
    const int64_t N = predicted_norm.size(0);
    auto full = torch::zeros({N, catalog.size(), predicted_norm.size(2), predicted_norm.size(3)},
                             predicted_norm.options());
    full.index_copy_(1, torch::tensor(catalog.predicted_channels(), torch::kLong), predicted_norm);
    const auto constants = catalog.constant_channels();
    if (!constants.empty()) {
        full.index_copy_(1, torch::tensor(constants, torch::kLong),
                         data.hr_constants.to(full.scalar_type()).unsqueeze(0).expand({N, -1, -1, -1}));
    }
    return data::denormalize_values(full, catalog);
}

std::vector<int64_t> spread(const std::vector<int64_t>& xs, int64_t n) {
    const auto size = static_cast<int64_t>(xs.size());
    if (n <= 0 || size <= n) return xs;
    std::vector<int64_t> out;
    for (int64_t i = 0; i < n; ++i) out.push_back(xs[static_cast<size_t>(i * size / n)]);
    return out;
}

uint64_t case_seed(uint64_t seed, int64_t start, int64_t lead) {
    const std::string key = std::to_string(seed) + ":" + std::to_string(start) + ":" + std::to_string(lead);
    return fnv1a64(key);
}

void write_flat(const torch::Tensor& values, const fs::path& path, json meta) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    auto v = values.to(torch::kFloat32).contiguous();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(static_cast<const char*>(v.data_ptr()), static_cast<std::streamsize>(v.numel() * 4));
    meta["format"] = "swinrdm-flat-f32-le";
    meta["dims"] = v.sizes().vec();
    std::ofstream side(path.string() + ".json");
    side << meta.dump(2) << "\n";
    if (!out || !side) throw IoError("cannot write " + path.string());
}

} // namespace

// ---------------------------------------------------------------------------
// Rollout and super-resolution

json ForecastBundle::to_json() const {
    json hr_j = json::array();
    for (const auto& e : hr) {
        hr_j.push_back({{"forecast_step", e.forecast_step},
                        {"members", e.members.size()},
                        {"member_seeds", e.member_seeds},
                        {"valid_time", data::format_time(e.mean.valid_time)}});
    }
    return {{"init_time", data::format_time(init_time)}, {"steps", lr.size()}, {"leads", leads},
            {"hr", hr_j}, {"provenance", provenance}};
}

ForecastBundle rollout_and_superresolve(const torch::Tensor& history_norm, data::TimePoint init_time,
                                        int64_t K, forecast::ForecasterImpl& forecaster,
                                        diffusion::Denoiser& denoiser,
                                        const diffusion::DiffusionSchedule& schedule,
                                        const diffusion::SamplerOptions& options,
                                        const PreparedData& data, const std::vector<int64_t>& leads) {
    torch::NoGradGuard no_grad;
    if (history_norm.dim() != 4 || history_norm.size(0) != forecaster.config().history ||
        history_norm.size(1) != data.catalog.size()) {
        throw ShapeError("history must be [" + std::to_string(forecaster.config().history) + ", " +
                         std::to_string(data.catalog.size()) + ", lat, lon]");
    }
    ForecastBundle b;
    b.init_time = init_time;
    auto lr = forecaster.rollout(history_norm.unsqueeze(0).to(torch::kFloat32), K)[0];
    const auto interval = data.hr.interval();
    for (int64_t k = 1; k <= K; ++k) {
        b.lr.push_back({data::denormalize_values(lr[k - 1], data.catalog), data.lr_lats, data.lr_lons,
                        init_time + interval * k});
    }
    const auto hr_lats = data.hr.latitudes();
    const auto hr_lons = data.hr.longitudes();
    for (int64_t lead : leads) {
        if (lead < 1 || lead > K) throw RangeError("lead " + std::to_string(lead) + " outside [1, K]");
        data::FieldGrid grid{lr[lead - 1], data.lr_lats, data.lr_lons, init_time + interval * lead};
        auto opts = options;
        opts.seed = fnv1a64(std::to_string(options.seed) + ":" + std::to_string(lead));
        b.hr.push_back(diffusion::sample(grid, lead, schedule, denoiser, opts, data.catalog, data.hr_constants,
                                         hr_lats, hr_lons));
        b.leads.push_back(lead);
    }
    b.provenance = {{"sampler_steps", options.steps},
                    {"members", options.members},
                    {"seed", options.seed},
                    {"sr_factor", options.sr_factor},
                    {"interval_hours", interval.count()}};
    return b;
}

ForecastBundle rollout_and_superresolve(const std::vector<data::FieldGrid>& history, int64_t K,
                                        const fs::path& forecaster_checkpoint, const fs::path& sr_checkpoint,
                                        const ExperimentConfig& config, const PreparedData& data,
                                        int64_t steps, int64_t members, uint64_t seed,
                                        const std::vector<int64_t>& leads) {
    const auto fck = read_checkpoint(forecaster_checkpoint);
    const auto sck = read_checkpoint(sr_checkpoint);
    for (const auto* c : {&fck, &sck}) {
        if (c->catalog_hash != data.catalog.layout_hash()) {
            throw DataError("checkpoint catalog does not match the configured catalog");
        }
    }
    auto forecaster = load_forecaster(fck);
    auto denoiser = load_denoiser(sck);
    if (history.empty()) throw DataError("empty history");
    std::vector<torch::Tensor> frames;
    for (const auto& g : history) {
        if (g.channels() != data.catalog.size()) throw ShapeError("history frame has the wrong channel count");
        frames.push_back(data::normalize_values(g.values, data.catalog));
    }
    const auto schedule = diffusion::DiffusionSchedule::make(config.diffusion.timesteps, config.diffusion.kind);
    diffusion::SamplerOptions opts{steps, members, seed, config.data.sr_factor};
    EpsToX0 eps(*denoiser, schedule);
    diffusion::Denoiser& model = config.diffusion.objective == "x0" ? static_cast<diffusion::Denoiser&>(*denoiser)
                                                                    : static_cast<diffusion::Denoiser&>(eps);
    auto bundle = rollout_and_superresolve(torch::stack(frames), history.back().valid_time, K, *forecaster, model,
                                           schedule, opts, data, leads);
    bundle.provenance["forecaster_checkpoint"] = fck.id();
    bundle.provenance["sr_checkpoint"] = sck.id();
    bundle.provenance["config_hash"] = config.hash();
    return bundle;
}

void save_bundle(const ForecastBundle& bundle, const data::VariableCatalog& catalog, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    std::vector<torch::Tensor> lr;
    for (const auto& g : bundle.lr) lr.push_back(g.values);
    if (!lr.empty()) {
        data::Dataset ds(torch::stack(lr).to(torch::kFloat32), bundle.lr.front().latitudes,
                         bundle.lr.front().longitudes, bundle.lr.front().valid_time,
                         bundle.lr.size() > 1
                             ? std::chrono::duration_cast<data::Hours>(bundle.lr[1].valid_time - bundle.lr[0].valid_time)
                             : data::Hours{6},
                         catalog);
        data::save_dataset(ds, out_dir / "lr_forecast.f32");
    }
    for (const auto& e : bundle.hr) {
        std::vector<torch::Tensor> m;
        for (const auto& g : e.members) m.push_back(g.values);
        const std::string stem = "hr_step" + std::to_string(e.forecast_step);
        json meta = {{"layout", {"member", "channel", "lat", "lon"}},
                     {"valid_time", data::format_time(e.mean.valid_time)},
                     {"member_seeds", e.member_seeds},
                     {"catalog", catalog.to_json()},
                     {"latitudes", e.mean.latitudes},
                     {"longitudes", e.mean.longitudes}};
        write_flat(torch::stack(m), out_dir / (stem + "_members.f32"), meta);
        meta["layout"] = {"channel", "lat", "lon"};
        meta.erase("member_seeds");
        write_flat(e.mean.values, out_dir / (stem + "_mean.f32"), meta);
    }
    std::ofstream out(out_dir / "bundle.json");
    out << bundle.to_json().dump(2) << "\n";
    if (!out) throw IoError("cannot write bundle metadata");
}

// ---------------------------------------------------------------------------
// Scoring

std::optional<double> Report::value(const std::string& method, const std::string& variable,
                                    const std::string& metric, double lead_hours,
                                    std::optional<double> threshold) const {
    for (const auto& row : json.at("rows")) {
        if (row.at("method") != method || row.at("variable") != variable || row.at("metric") != metric) continue;
        if (threshold && (!row.contains("threshold") || std::abs(row.at("threshold").get<double>() - *threshold) > 1e-9)) {
            continue;
        }
        const auto& lh = row.at("lead_hours");
        if (lead_hours < 0.0 ? lh.is_null() : (!lh.is_null() && std::abs(lh.get<double>() - lead_hours) < 1e-9)) {
            return row.at("value").get<double>();
        }
    }
    return std::nullopt;
}

std::string Report::hash() const { return hash_hex(json.at("rows").dump()); }

void Report::save(const fs::path& out_dir, const std::string& stem) const {
    fs::create_directories(out_dir);
    std::ofstream j(out_dir / (stem + ".json"));
    j << json.dump(2) << "\n";
    std::ofstream c(out_dir / (stem + ".csv"));
    c << csv;
    if (!j || !c) throw IoError("cannot write report to " + out_dir.string());
}

namespace {

std::string lead_label(const json& lh) {
    if (lh.is_null()) return "all";
    const double h = lh.get<double>();
    return std::to_string(static_cast<int64_t>(std::llround(h))) + "h";
}

} // namespace

std::string rows_to_csv(const json& rows) {
    std::vector<std::string> columns;
    std::set<std::string> seen_columns;
    std::vector<std::string> order;
    std::map<std::string, std::map<std::string, double>> table;
    for (const auto& r : rows) {
        const std::string key = r.at("group").get<std::string>() + "/" + r.at("method").get<std::string>();
        std::string col = r.at("variable").get<std::string>() + "_" + r.at("metric").get<std::string>() + "_" +
                          lead_label(r.at("lead_hours"));
        if (r.contains("threshold")) col += "_" + r.at("threshold").dump() + "mm";
        if (seen_columns.insert(col).second) columns.push_back(col);
        if (!table.count(key)) order.push_back(key);
        table[key][col] = r.at("value").get<double>();
    }
    std::ostringstream os;
    os.precision(10);
    os << "method";
    for (const auto& c : columns) os << "," << c;
    os << "\n";
    for (const auto& key : order) {
        os << key;
        for (const auto& c : columns) {
            os << ",";
            auto it = table[key].find(c);
            if (it != table[key].end()) os << it->second;
        }
        os << "\n";
    }
    return os.str();
}

Report score(const std::vector<ScoreGroup>& groups, const data::VariableCatalog& catalog, const EvalSection& eval,
             const std::string& config_hash) {
    json rows = json::array();
    auto add = [&](const ScoreGroup& g, const MethodPredictions& m, const std::string& variable,
                   std::optional<double> lead_hours, const std::string& metric, double value) -> json& {
        rows.push_back({{"group", g.grid},
                        {"method", m.method},
                        {"variable", variable},
                        {"lead_hours", lead_hours ? json(*lead_hours) : json(nullptr)},
                        {"metric", metric},
                        {"value", value},
                        {"config_hash", config_hash},
                        {"checkpoint", m.checkpoint}});
        return rows.back();
    };
    const auto predicted = catalog.predicted_channels();
    const auto tp = catalog.find("tp");
    const auto iu = catalog.find("u10"), iv = catalog.find("v10");
    std::unique_ptr<metrics::FeatureExtractor> fe;

    for (const auto& g : groups) {
        if (g.truth.size() != g.leads.size() || g.lead_hours.size() != g.leads.size()) {
            throw ShapeError("score group '" + g.grid + "' has misaligned leads");
        }
        const auto w = metrics::lat_weights(g.latitudes);
        for (const auto& m : g.methods) {
            if (m.fields.size() != g.leads.size()) throw ShapeError("method '" + m.method + "' misses leads");
            std::vector<metrics::ContingencyTable> tables(eval.csi_thresholds.size());
            for (size_t l = 0; l < g.leads.size(); ++l) {
                const auto& pred = m.fields[l];
                const auto& truth = g.truth[l];
                if (pred.sizes() != truth.sizes()) {
                    throw ShapeError("method '" + m.method + "' is misaligned with the truth at lead " +
                                     std::to_string(g.leads[l]));
                }
                const double lh = g.lead_hours[l];
                auto rmse = metrics::weighted_rmse(pred, truth, w).mean(0);  // [C]
                for (int64_t c : predicted) {
                    add(g, m, catalog.entries()[static_cast<size_t>(c)].key(), lh, "rmse", rmse[c].item<double>());
                }
                if (iu && iv) {
                    auto ws_p = metrics::wind_speed(pred.select(1, *iu), pred.select(1, *iv));
                    auto ws_t = metrics::wind_speed(truth.select(1, *iu), truth.select(1, *iv));
                    add(g, m, "ws", lh, "rmse", metrics::weighted_rmse(ws_p, ws_t, w).mean().item<double>());
                }
                if (m.members.size() == g.leads.size() && m.members[l].defined()) {
                    // Per case and channel: MSE of the mean against the mean member MSE.
                    auto wt = w.tensor().view({-1, 1});
                    auto t64 = truth.to(torch::kFloat64).unsqueeze(1);
                    auto mem = m.members[l].to(torch::kFloat64);
                    auto member_mse = ((mem - t64).square() * wt).mean({-2, -1}).mean(1);
                    auto mean_mse = ((mem.mean(1, true) - t64).square() * wt).mean({-2, -1}).squeeze(1);
                    auto idx = torch::tensor(predicted, torch::kLong);
                    const auto violations =
                        (mean_mse.index_select(1, idx) > member_mse.index_select(1, idx) * (1.0 + 1e-12) + 1e-12)
                            .sum()
                            .item<int64_t>();
                    add(g, m, "all", lh, "jensen_violations", static_cast<double>(violations));
                    add(g, m, "all", lh, "jensen_cases", static_cast<double>(mean_mse.size(0) * idx.size(0)));
                }
                if (g.csi && tp) {
                    for (size_t i = 0; i < eval.csi_thresholds.size(); ++i) {
                        const double thr = eval.csi_thresholds[i];
                        auto r = metrics::csi(pred.select(1, *tp), truth.select(1, *tp), thr);
                        tables[i] += r.table;
                        auto& row = add(g, m, "tp", lh, "csi", r.csi);
                        row["threshold"] = thr;
                        row["degenerate"] = r.degenerate;
                    }
                }
                if (g.frechet) {
                    if (!fe) fe = std::make_unique<metrics::FeatureExtractor>(eval.features, catalog);
                    const double d = metrics::frechet_distance(metrics::extract_features(pred, *fe),
                                                               metrics::extract_features(truth, *fe),
                                                               eval.frechet_ridge);
                    add(g, m, "all", lh, "frechet", d);
                }
            }
            if (g.csi && tp) {
                for (size_t i = 0; i < eval.csi_thresholds.size(); ++i) {
                    const auto r = metrics::csi_from_table(tables[i]);
                    auto& row = add(g, m, "tp", std::nullopt, "csi", r.csi);
                    row["threshold"] = eval.csi_thresholds[i];
                    row["degenerate"] = r.degenerate;
                    row["hits"] = r.table.hits;
                    row["misses"] = r.table.misses;
                    row["false_alarms"] = r.table.false_alarms;
                    row["correct_negatives"] = r.table.correct_negatives;
                }
            }
        }
    }
    Report report;
    report.json = {{"config_hash", config_hash}, {"rows", rows}};
    report.csv = rows_to_csv(rows);
    return report;
}

// ---------------------------------------------------------------------------
// Evaluation driver

Report evaluate(const ExperimentConfig& config, const PreparedData& data, const EvalCheckpoints& checkpoints) {
    torch::NoGradGuard no_grad;
    const auto t0 = std::chrono::steady_clock::now();
    const auto fck = read_checkpoint(checkpoints.forecaster);
    const auto dck = read_checkpoint(checkpoints.denoiser);
    std::optional<Checkpoint> rck;
    if (!checkpoints.regression.empty()) rck = read_checkpoint(checkpoints.regression);
    for (const auto* c : {&fck, &dck}) {
        if (c->catalog_hash != data.catalog.layout_hash()) throw DataError("checkpoint catalog mismatch");
    }
    auto forecaster = load_forecaster(fck);
    auto denoiser = load_denoiser(dck);
    std::optional<diffusion::RegressionSr> regression;
    if (rck) regression = load_regression(*rck);

    const int64_t H = forecaster->config().history, K = config.forecaster.horizon;
    const auto leads = config.eval_leads();
    const auto starts = spread(window_starts(config, data, data.test), config.evaluation.inits);
    if (starts.size() < 2) throw DataError("test split needs at least two complete windows");
    const auto ens_starts = spread(starts, config.evaluation.ensemble_inits);
    const auto N = static_cast<int64_t>(starts.size());
    const auto f = config.data.sr_factor;
    const auto& catalog = data.catalog;
    const auto pidx = torch::tensor(catalog.predicted_channels(), torch::kLong);
    std::vector<double> lead_hours;
    for (int64_t l : leads) lead_hours.push_back(static_cast<double>(data.hr.interval().count() * l));

    // Coarse-grid rollouts, normalized: [N, K, C, h, w].
    std::vector<torch::Tensor> chunks;
    for (size_t b = 0; b < starts.size(); b += 32) {
        std::vector<torch::Tensor> hist;
        for (size_t i = b; i < std::min(starts.size(), b + 32); ++i) hist.push_back(data.lr_norm.narrow(0, starts[i], H));
        chunks.push_back(forecaster->rollout(torch::stack(hist), K));
    }
    const auto rollouts = torch::cat(chunks);

    auto steps_at = [&](const std::vector<int64_t>& ss, int64_t offset) {
        std::vector<int64_t> out;
        for (int64_t s : ss) out.push_back(s + offset);
        return out;
    };
    const auto& hr_values = data.hr.values();
    auto hr_truth = [&](const std::vector<int64_t>& steps) {
        return hr_values.index_select(0, torch::tensor(steps, torch::kLong)).to(torch::kFloat32);
    };

    ScoreGroup coarse{"coarse", leads, lead_hours, {}, data.lr_lats, {}, false, false};
    MethodPredictions m_fc{"forecaster", fck.id(), {}, {}}, m_pers{"persistence", "", {}, {}},
        m_clim{"climatology", "", {}, {}};
    const auto last_hist = data::downsample_values(hr_truth(steps_at(starts, H - 1)), f);
    for (int64_t lead : leads) {
        coarse.truth.push_back(data::downsample_values(hr_truth(steps_at(starts, H + lead - 1)), f));
        m_fc.fields.push_back(data::denormalize_values(rollouts.select(1, lead - 1), catalog));
        m_pers.fields.push_back(last_hist);
        m_clim.fields.push_back(data.climatology_lr.to(torch::kFloat32).unsqueeze(0).expand({N, -1, -1, -1}));
    }
    coarse.methods = {m_fc, m_pers, m_clim};

    const auto schedule = diffusion::DiffusionSchedule::make(config.diffusion.timesteps, config.diffusion.kind);
    const auto respaced = diffusion::respace(schedule, config.diffusion.steps);
    EpsToX0 eps(*denoiser, schedule);
    diffusion::Denoiser& model = config.diffusion.objective == "x0" ? static_cast<diffusion::Denoiser&>(*denoiser)
                                                                    : static_cast<diffusion::Denoiser&>(eps);
    const int64_t P = pidx.size(0);

    // Reverse chain for rows of `cond`, one seeded generator per row.
    auto run_sampler = [&](const torch::Tensor& cond, int64_t lead, const std::vector<uint64_t>& seeds) {
        std::vector<torch::Tensor> out;
        for (int64_t b = 0; b < cond.size(0); b += 32) {
            const int64_t n = std::min<int64_t>(32, cond.size(0) - b);
            std::vector<torch::Generator> gens;
            for (int64_t i = b; i < b + n; ++i) gens.push_back(at::detail::createCPUGenerator(seeds[static_cast<size_t>(i)]));
            out.push_back(diffusion::sample_normalized(cond.narrow(0, b, n), torch::full({n}, lead, torch::kLong),
                                                       respaced, model, P, gens));
        }
        return torch::cat(out);
    };

    ScoreGroup fine{"fine", leads, lead_hours, {}, data.hr.latitudes(), {}, true, true};
    MethodPredictions m_bil{"bilinear", fck.id(), {}, {}}, m_reg{"regression_sr", rck ? rck->id() : "", {}, {}},
        m_dif{"diffusion_sr", dck.id(), {}, {}};
    ScoreGroup ens{"fine_ensemble", leads, lead_hours, {}, data.hr.latitudes(), {}, false, true};
    MethodPredictions m_single{"diffusion_sr_member", dck.id(), {}, {}},
        m_ens{"diffusion_sr_ensemble", dck.id(), {}, {}};
    std::vector<int64_t> ens_rows;
    for (int64_t s : ens_starts) {
        ens_rows.push_back(std::find(starts.begin(), starts.end(), s) - starts.begin());
    }
    const auto ens_idx = torch::tensor(ens_rows, torch::kLong);
    const int64_t M = config.diffusion.members;

    for (int64_t lead : leads) {
        const auto t_lead = std::chrono::steady_clock::now();
        fine.truth.push_back(hr_truth(steps_at(starts, H + lead - 1)));
        ens.truth.push_back(hr_truth(steps_at(ens_starts, H + lead - 1)));
        const auto x = rollouts.select(1, lead - 1);
        const auto cond = diffusion::make_condition(x, data.hr_constants, catalog, f);
        m_bil.fields.push_back(assemble_physical(cond.narrow(1, 0, P), data));
        if (regression) m_reg.fields.push_back(assemble_physical((*regression)->forward(cond), data));

        std::vector<uint64_t> seeds;
        for (int64_t s : starts) seeds.push_back(diffusion::member_seed(case_seed(config.seed, s, lead), 0));
        m_dif.fields.push_back(assemble_physical(run_sampler(cond, lead, seeds), data));

        const auto E = static_cast<int64_t>(ens_starts.size());
        auto ens_cond = cond.index_select(0, ens_idx).unsqueeze(1).expand({-1, M, -1, -1, -1}).reshape(
            {E * M, cond.size(1), cond.size(2), cond.size(3)});
        std::vector<uint64_t> ens_seeds;
        for (int64_t s : ens_starts) {
            for (int64_t m = 0; m < M; ++m) ens_seeds.push_back(diffusion::member_seed(case_seed(config.seed, s, lead), m));
        }
        auto members = assemble_physical(run_sampler(ens_cond, lead, ens_seeds), data)
                           .view({E, M, catalog.size(), cond.size(2), cond.size(3)});
        m_single.fields.push_back(members.select(1, 0).contiguous());
        m_ens.fields.push_back(members.mean(1));
        m_ens.members.push_back(members);
        log_info("evaluate lead ", lead, " done in ",
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t_lead).count(), "s");
    }
    fine.methods = {m_bil};
    if (regression) fine.methods.push_back(m_reg);
    fine.methods.push_back(m_dif);
    ens.methods = {m_single, m_ens};

    auto report = score({coarse, fine, ens}, catalog, config.evaluation, config.hash());
    report.json["checkpoints"] = {{"forecaster", fck.id()}, {"denoiser", dck.id()},
                                  {"regression_sr", rck ? rck->id() : ""}};
    report.json["inits"] = N;
    report.json["ensemble_inits"] = ens_starts.size();
    report.json["members"] = M;
    report.json["sampler_steps"] = config.diffusion.steps;
    report.json["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

} // namespace swinrdm::pipeline
