#include <chrono>
#include <fstream>

#include "swinrdm/error.hpp"
#include "swinrdm/log.hpp"
#include "swinrdm/hash.hpp"
#include "swinrdm/pipeline.hpp"

namespace swinrdm::pipeline {

using nlohmann::json;

namespace {

struct ForecasterRun {
    fs::path checkpoint;
    std::string checkpoint_id;
    std::string config_hash;
    double val_loss = 0.0;
    int64_t params = 0;
    bool reused = false;
};

// A checkpoint is reusable only when its run finished: the run record written
// at the end of training must name it. Interrupted runs leave a checkpoint
// without a matching record.
bool reusable(const fs::path& ckpt, const fs::path& record, const std::string& config_hash) {
    if (!fs::exists(ckpt) || !fs::exists(record)) return false;
    try {
        const auto ck = read_checkpoint(ckpt);
        if (ck.config_hash != config_hash) return false;
        const auto r = json::parse(std::ifstream(record));
        if (r.value("config_hash", std::string()) != config_hash) return false;
        for (const auto& c : r.at("checkpoints")) {
            if (c.at("id") == ck.id()) return true;
        }
        return false;
    } catch (const std::exception&) {
        return false;
    }
}

ForecasterRun train_or_reuse(const ExperimentConfig& cfg, const PreparedData& data, const fs::path& dir,
                             const SuiteOptions& options) {
    ForecasterRun run;
    run.config_hash = cfg.hash();
    run.checkpoint = dir / "forecaster.ckpt";
    if (options.reuse_checkpoints && reusable(run.checkpoint, dir / "forecaster_record.json", run.config_hash)) {
        const auto ck = read_checkpoint(run.checkpoint);
        auto model = load_forecaster(ck);
        run.checkpoint_id = ck.id();
        run.val_loss = validation_loss(*model, cfg, data);
        run.reused = true;
    } else {
        cfg.save(dir / "config.json");
        const auto r = train_forecaster(cfg, data, dir);
        run.checkpoint_id = r.checkpoint_id;
        run.val_loss = r.best_val_loss;
    }
    run.params = forecast::parameter_count(resolve_forecaster_config(cfg, data));
    return run;
}

ExperimentConfig with_variant(const ExperimentConfig& base, forecast::Variant variant, int64_t dim, bool agg,
                              int64_t scales) {
    auto cfg = base;
    cfg.forecaster.model.scales = scales;
    cfg.forecaster.model = forecast::make_variant_config(cfg.forecaster.model, variant, dim, agg);
    return cfg;
}

std::string run_name(forecast::Variant variant, int64_t dim, bool agg) {
    return forecast::to_string(variant) + "_d" + std::to_string(dim) + (agg ? "_agg" : "_noagg");
}

double megabytes(int64_t params) { return static_cast<double>(params) * 4.0 / (1024.0 * 1024.0); }

} // namespace

Report Report::from_json(const nlohmann::json& j) {
    Report r;
    r.json = j;
    r.csv = rows_to_csv(j.at("rows"));
    return r;
}

json run_ablation_suite(const ExperimentConfig& config, const fs::path& out_dir, const SuiteOptions& options) {
    const auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(out_dir);
    const auto data = prepare_data(config);
    json failures = json::array();
    std::map<std::string, ForecasterRun> runs;

    auto attempt = [&](const std::string& name, const ExperimentConfig& cfg) -> const ForecasterRun* {
        if (runs.count(name)) return &runs[name];
        try {
            log_info("ablation run ", name);
            runs[name] = train_or_reuse(cfg, data, out_dir / name, options);
            return &runs[name];
        } catch (const Error& e) {
            failures.push_back({{"run", name}, {"kind", e.kind()}, {"message", e.what()}});
            return nullptr;
        }
    };

    // Aggregation ablation: every dim with and without multi-layer aggregation.
    json table1 = json::array();
    for (int64_t dim : config.ablation.dims) {
        for (bool agg : {true, false}) {
            const auto cfg = with_variant(config, forecast::Variant::SingleScale, dim, agg, config.ablation.multi_scales);
            const auto name = run_name(forecast::Variant::SingleScale, dim, agg);
            const auto* r = attempt(name, cfg);
            json row = {{"run", name}, {"dim", dim}, {"aggregation", agg}};
            if (r) {
                row["params"] = r->params;
                row["val_loss"] = r->val_loss;
                row["checkpoint"] = r->checkpoint_id;
                row["config_hash"] = r->config_hash;
            }
            table1.push_back(row);
        }
    }

    // Single- versus multi-scale trade-off.
    json table2 = json::array();
    auto add_t2 = [&](forecast::Variant variant, int64_t dim) {
        const auto cfg = with_variant(config, variant, dim, true, config.ablation.multi_scales);
        const auto name = run_name(variant, dim, true);
        const auto* r = attempt(name, cfg);
        json row = {{"run", name}, {"variant", forecast::to_string(variant)}, {"dim", dim}};
        if (r) {
            row["params"] = r->params;
            row["param_megabytes"] = megabytes(r->params);
            row["val_loss"] = r->val_loss;
            row["checkpoint"] = r->checkpoint_id;
            row["config_hash"] = r->config_hash;
        }
        table2.push_back(row);
    };
    for (int64_t dim : config.ablation.dims) add_t2(forecast::Variant::SingleScale, dim);
    add_t2(forecast::Variant::MultiScale, config.ablation.multi_dim);
    json paper_counts = json::array();
    for (auto [variant, dim] : std::vector<std::pair<forecast::Variant, int64_t>>{
             {forecast::Variant::MultiScale, 256}, {forecast::Variant::SingleScale, 512},
             {forecast::Variant::SingleScale, 384}}) {
        const auto n = forecast::parameter_count(paper_scale_config(variant, dim));
        paper_counts.push_back({{"variant", forecast::to_string(variant)}, {"dim", dim}, {"params", n},
                                {"param_megabytes", megabytes(n)}});
    }

    // Super-resolution comparison on top of the largest single-scale forecaster.
    json table3 = json::object();
    if (options.run_sr) {
        const int64_t dim = *std::max_element(config.ablation.dims.begin(), config.ablation.dims.end());
        const auto name = run_name(forecast::Variant::SingleScale, dim, true);
        const auto cfg = with_variant(config, forecast::Variant::SingleScale, dim, true, config.ablation.multi_scales);
        const auto* fr = attempt(name, cfg);
        if (fr) {
            try {
                const auto sr_dir = out_dir / "sr";
                EvalCheckpoints ck{fr->checkpoint, sr_dir / "denoiser.ckpt", sr_dir / "regression_sr.ckpt"};
                const bool reuse = options.reuse_checkpoints &&
                                   reusable(ck.denoiser, sr_dir / "denoiser_record.json", cfg.hash()) &&
                                   reusable(ck.regression, sr_dir / "regression_sr_record.json", cfg.hash());
                if (!reuse) {
                    cfg.save(sr_dir / "config.json");
                    train_sr(cfg, data, fr->checkpoint, sr_dir, true);
                }
                const auto report = evaluate(cfg, data, ck);
                report.save(sr_dir);
                table3 = {{"forecaster", name},
                          {"report_hash", report.hash()},
                          {"checkpoints", report.json.at("checkpoints")},
                          {"rows", report.json.at("rows")}};
            } catch (const Error& e) {
                failures.push_back({{"run", "sr"}, {"kind", e.kind()}, {"message", e.what()}});
            }
        }
    }

    json suite = {{"config_hash", config.hash()},
                  {"table1", table1},
                  {"table2", table2},
                  {"table2_paper_scale", paper_counts},
                  {"table3", table3},
                  {"failures", failures}};
    suite["suite_hash"] = hash_hex(suite.dump());
    suite["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ofstream(out_dir / "ablation.json") << suite.dump(2) << "\n";
    std::ofstream csv(out_dir / "ablation.csv");
    csv << "table,run,variant,dim,aggregation,params,val_loss\n";
    for (const auto& r : table1) {
        csv << "table1," << r["run"].get<std::string>() << ",single," << r["dim"] << "," << r["aggregation"] << ","
            << r.value("params", json(nullptr)) << "," << r.value("val_loss", json(nullptr)) << "\n";
    }
    for (const auto& r : table2) {
        csv << "table2," << r["run"].get<std::string>() << "," << r["variant"].get<std::string>() << "," << r["dim"]
            << ",true," << r.value("params", json(nullptr)) << "," << r.value("val_loss", json(nullptr)) << "\n";
    }
    for (const auto& r : paper_counts) {
        csv << "table2_paper_scale,," << r["variant"].get<std::string>() << "," << r["dim"] << ",true,"
            << r["params"] << ",\n";
    }
    return suite;
}

} // namespace swinrdm::pipeline
