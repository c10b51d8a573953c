// Command-line front end. Every command prints a JSON result on stdout; failures
// print a JSON error record on stderr (and into <out>/error.json when --out names
// a directory) and exit nonzero.
#include <fstream>
#include <iostream>
#include <regex>

#include <CLI11.hpp>

#include "swinrdm/error.hpp"
#include "swinrdm/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace swinrdm;

namespace {

struct Common {
    std::string config;
    std::optional<uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required = true) {
    cmd->add_option("--config", c.config, "Experiment config (JSON)");
    cmd->add_option("--seed", c.seed, "Seed overriding the config");
    auto* o = cmd->add_option("--out", c.out, "Output directory or file");
    if (out_required) o->required();
}

pipeline::ExperimentConfig load_config(const Common& c) {
    auto cfg = c.config.empty() ? pipeline::ExperimentConfig::desk() : pipeline::ExperimentConfig::load(c.config);
    if (c.seed) {
        cfg.seed = *c.seed;
        cfg.data.synth.seed = *c.seed;
    }
    if (!c.out.empty()) cfg.out_dir = c.out;
    return cfg;
}

std::pair<int64_t, int64_t> parse_grid(const std::string& s) {
    static const std::regex re(R"((\d+)x(\d+))");
    std::smatch m;
    if (!std::regex_match(s, m, re)) throw ConfigError("grid must look like 64x128, got '" + s + "'");
    return {std::stoll(m[1]), std::stoll(m[2])};
}

int exit_code(const std::string& kind) {
    if (kind == "config" || kind == "usage") return 2;
    if (kind == "data" || kind == "shape" || kind == "range") return 3;
    if (kind == "io") return 4;
    if (kind == "diverged") return 5;
    return 1;
}

int fail(const std::string& command, const std::string& out, json record) {
    record["status"] = "error";
    record["command"] = command;
    std::cerr << record.dump() << "\n";
    if (!out.empty() && fs::is_directory(out)) std::ofstream(fs::path(out) / "error.json") << record.dump(2) << "\n";
    return exit_code(record.value("kind", "internal"));
}

void succeed(json result) {
    result["status"] = "ok";
    std::cout << result.dump(2) << "\n";
}

/// Normalized coarse history ending at test-split window `init`.
struct TestCase {
    int64_t start = 0;
    std::vector<data::FieldGrid> history;
};

TestCase test_case(const pipeline::ExperimentConfig& cfg, const pipeline::PreparedData& data, int64_t init) {
    const auto starts = pipeline::window_starts(cfg, data, data.test);
    if (init < 0 || init >= static_cast<int64_t>(starts.size())) {
        throw RangeError("--init must lie in [0, " + std::to_string(starts.size()) + ")");
    }
    TestCase t;
    t.start = starts[static_cast<size_t>(init)];
    for (int64_t i = 0; i < cfg.forecaster.model.history; ++i) {
        t.history.push_back(data::downsample(data.hr.frame(t.start + i), cfg.data.sr_factor));
    }
    return t;
}

std::vector<int64_t> parse_leads(const std::vector<int64_t>& leads, const pipeline::ExperimentConfig& cfg) {
    return leads.empty() ? cfg.eval_leads() : leads;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"swinrdm: recurrent windowed-attention forecasting with diffusion super-resolution"};
    app.require_subcommand(1);
    std::string command;

    // data synth | stats
    auto* data_cmd = app.add_subcommand("data", "Synthesize datasets or compute statistics");
    data_cmd->require_subcommand(1);
    Common synth_c;
    std::string grid = "64x128";
    int64_t synth_steps = 64;
    double advection = 1.0, diffusion_mult = 1.0;
    std::string catalog_profile = "desk";
    auto* synth = data_cmd->add_subcommand("synth", "Generate a synthetic dataset");
    add_common(synth, synth_c);
    synth->add_option("--grid", grid, "Fine grid as LATxLON");
    synth->add_option("--steps", synth_steps, "Number of time steps");
    synth->add_option("--advection", advection, "Multiplier on the zonal jet");
    synth->add_option("--diffusion", diffusion_mult, "Multiplier on damping and forcing");
    synth->add_option("--catalog", catalog_profile, "Catalog profile (desk or paper71)");

    Common stats_c;
    std::string stats_in;
    auto* stats = data_cmd->add_subcommand("stats", "Per-channel normalization statistics");
    add_common(stats, stats_c);
    stats->add_option("--in", stats_in, "Dataset path")->required();

    Common tf_c;
    auto* tf = app.add_subcommand("train-forecaster", "Train the recurrent forecaster");
    add_common(tf, tf_c);

    Common ts_c;
    std::string forecaster_ckpt, sr_ckpt, regression_ckpt;
    bool no_regression = false;
    auto* ts = app.add_subcommand("train-sr", "Train the diffusion super-resolution model and the regression baseline");
    add_common(ts, ts_c);
    ts->add_option("--forecaster", forecaster_ckpt, "Frozen forecaster checkpoint")->required();
    ts->add_flag("--no-regression", no_regression, "Skip the regression baseline");

    Common ro_c;
    int64_t sampler_steps = 0, members = 0, init = 0;
    std::vector<int64_t> leads;
    auto* ro = app.add_subcommand("rollout", "Forecast one test case and super-resolve it");
    add_common(ro, ro_c);
    ro->add_option("--forecaster", forecaster_ckpt)->required();
    ro->add_option("--sr", sr_ckpt)->required();
    ro->add_option("--steps", sampler_steps, "Respaced sampler steps");
    ro->add_option("--members", members, "Ensemble members");
    ro->add_option("--init", init, "Index of the test-split initialization");
    ro->add_option("--leads", leads, "Forecast steps to super-resolve");

    Common ev_c;
    auto* ev = app.add_subcommand("evaluate", "Score all methods on the test split");
    add_common(ev, ev_c);
    ev->add_option("--forecaster", forecaster_ckpt)->required();
    ev->add_option("--sr", sr_ckpt)->required();
    ev->add_option("--regression", regression_ckpt);
    ev->add_option("--steps", sampler_steps, "Respaced sampler steps");
    ev->add_option("--members", members, "Ensemble members");

    Common ab_c;
    bool no_reuse = false, no_sr = false;
    auto* ab = app.add_subcommand("ablation", "Run the ablation suite");
    add_common(ab, ab_c);
    ab->add_flag("--no-reuse", no_reuse, "Retrain even when matching checkpoints exist");
    ab->add_flag("--no-sr", no_sr, "Skip the super-resolution comparison");

    Common pl_c;
    std::vector<std::string> variables = {"z500", "t2m", "tp", "ws"};
    auto* pl = app.add_subcommand("plot", "Render forecast maps for one test case");
    add_common(pl, pl_c);
    pl->add_option("--forecaster", forecaster_ckpt)->required();
    pl->add_option("--sr", sr_ckpt)->required();
    pl->add_option("--regression", regression_ckpt);
    pl->add_option("--init", init);
    pl->add_option("--leads", leads);
    pl->add_option("--variables", variables);
    pl->add_option("--steps", sampler_steps);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("parse", "", {{"kind", "usage"}, {"message", e.what()}});
    }

    std::string out;
    try {
        if (synth->parsed()) {
            command = "data synth";
            out = synth_c.out;
            auto cfg = load_config(synth_c);
            auto sc = cfg.data.synth;
            std::tie(sc.lat, sc.lon) = parse_grid(grid);
            sc.steps = synth_steps;
            if (synth_c.seed) sc.seed = *synth_c.seed;
            sc.advection = advection;
            sc.diffusion = diffusion_mult;
            const auto ds = data::generate_synthetic_dataset(sc, data::VariableCatalog::build(catalog_profile));
            data::save_dataset(ds, synth_c.out);
            succeed({{"command", command}, {"path", synth_c.out}, {"dims", ds.values().sizes().vec()}});
        } else if (stats->parsed()) {
            command = "data stats";
            out = stats_c.out;
            const auto ds = data::load_dataset(stats_in);
            const auto s = data::compute_normalization_stats(ds.values());
            json j = json::object();
            for (size_t c = 0; c < ds.catalog().entries().size(); ++c) {
                j[ds.catalog().entries()[c].key()] = {{"mean", s.mean[c]}, {"std", s.std[c]}};
            }
            if (fs::path(stats_c.out).has_parent_path()) fs::create_directories(fs::path(stats_c.out).parent_path());
            std::ofstream f(stats_c.out);
            f << j.dump(2) << "\n";
            if (!f) throw IoError("cannot write " + stats_c.out);
            succeed({{"command", command}, {"path", stats_c.out}, {"channels", j}});
        } else if (tf->parsed()) {
            command = "train-forecaster";
            out = tf_c.out;
            fs::create_directories(out);
            const auto cfg = load_config(tf_c);
            cfg.save(fs::path(out) / "config.json");
            const auto data = pipeline::prepare_data(cfg);
            const auto r = pipeline::train_forecaster(cfg, data, out);
            succeed({{"command", command}, {"checkpoint", r.checkpoint.string()}, {"checkpoint_id", r.checkpoint_id},
                     {"best_val_loss", r.best_val_loss}, {"record", r.record.to_json()}});
        } else if (ts->parsed()) {
            command = "train-sr";
            out = ts_c.out;
            fs::create_directories(out);
            const auto cfg = load_config(ts_c);
            cfg.save(fs::path(out) / "config.json");
            const auto data = pipeline::prepare_data(cfg);
            const auto r = pipeline::train_sr(cfg, data, forecaster_ckpt, out, !no_regression);
            json res = {{"command", command},
                        {"denoiser", r.diffusion.checkpoint.string()},
                        {"denoiser_id", r.diffusion.checkpoint_id},
                        {"denoiser_val_loss", r.diffusion.best_val_loss}};
            if (!no_regression) {
                res["regression"] = r.regression.checkpoint.string();
                res["regression_val_loss"] = r.regression.best_val_loss;
            }
            succeed(res);
        } else if (ro->parsed()) {
            command = "rollout";
            out = ro_c.out;
            fs::create_directories(out);
            const auto cfg = load_config(ro_c);
            const auto data = pipeline::prepare_data(cfg);
            const auto tc = test_case(cfg, data, init);
            const auto bundle = pipeline::rollout_and_superresolve(
                tc.history, cfg.forecaster.horizon, forecaster_ckpt, sr_ckpt, cfg, data,
                sampler_steps > 0 ? sampler_steps : cfg.diffusion.steps, members > 0 ? members : cfg.diffusion.members,
                cfg.seed, parse_leads(leads, cfg));
            pipeline::save_bundle(bundle, data.catalog, out);
            succeed({{"command", command}, {"bundle", bundle.to_json()}, {"out", out}});
        } else if (ev->parsed()) {
            command = "evaluate";
            out = ev_c.out;
            fs::create_directories(out);
            auto cfg = load_config(ev_c);
            if (sampler_steps > 0) cfg.diffusion.steps = sampler_steps;
            if (members > 0) cfg.diffusion.members = members;
            const auto data = pipeline::prepare_data(cfg);
            const auto report = pipeline::evaluate(cfg, data, {forecaster_ckpt, sr_ckpt, regression_ckpt});
            report.save(out);
            succeed({{"command", command}, {"report", (fs::path(out) / "report.json").string()},
                     {"report_hash", report.hash()}});
        } else if (ab->parsed()) {
            command = "ablation";
            out = ab_c.out;
            const auto cfg = load_config(ab_c);
            const auto suite = pipeline::run_ablation_suite(cfg, out, {!no_reuse, !no_sr});
            succeed({{"command", command},
                     {"suite_hash", suite["suite_hash"]},
                     {"table1", suite["table1"]},
                     {"table2", suite["table2"]},
                     {"failures", suite["failures"]}});
        } else if (pl->parsed()) {
            command = "plot";
            out = pl_c.out;
            auto cfg = load_config(pl_c);
            if (sampler_steps > 0) cfg.diffusion.steps = sampler_steps;
            const auto data = pipeline::prepare_data(cfg);
            const auto tc = test_case(cfg, data, init);
            const auto use = parse_leads(leads, cfg);
            const auto bundle = pipeline::rollout_and_superresolve(tc.history, cfg.forecaster.horizon,
                                                                   forecaster_ckpt, sr_ckpt, cfg, data,
                                                                   cfg.diffusion.steps, 1, cfg.seed, use);
            std::map<std::string, std::vector<data::FieldGrid>> fields;
            std::vector<data::FieldGrid> truth;
            std::vector<double> hours;
            std::optional<diffusion::RegressionSr> reg;
            if (!regression_ckpt.empty()) reg = pipeline::load_regression(pipeline::read_checkpoint(regression_ckpt));
            const auto H = cfg.forecaster.model.history;
            for (size_t i = 0; i < use.size(); ++i) {
                const int64_t lead = use[i];
                truth.push_back(data.hr.frame(tc.start + H + lead - 1));
                hours.push_back(static_cast<double>(data.hr.interval().count() * lead));
                fields["diffusion_sr"].push_back(bundle.hr[i].members.front());
                const auto lr_norm = data::normalize_values(bundle.lr[static_cast<size_t>(lead - 1)].values, data.catalog);
                const auto cond = diffusion::make_condition(lr_norm.unsqueeze(0), data.hr_constants, data.catalog,
                                                            cfg.data.sr_factor);
                const auto P = static_cast<int64_t>(data.catalog.predicted_channels().size());
                auto to_grid = [&](const torch::Tensor& pred_norm) {
                    auto full = torch::zeros({data.catalog.size(), cond.size(2), cond.size(3)});
                    full.index_copy_(0, torch::tensor(data.catalog.predicted_channels(), torch::kLong), pred_norm);
                    const auto ci = data.catalog.constant_channels();
                    if (!ci.empty()) full.index_copy_(0, torch::tensor(ci, torch::kLong), data.hr_constants);
                    return data::FieldGrid{data::denormalize_values(full, data.catalog), data.hr.latitudes(),
                                           data.hr.longitudes(), truth.back().valid_time};
                };
                fields["bilinear"].push_back(to_grid(cond[0].narrow(0, 0, P)));
                if (reg) {
                    torch::NoGradGuard ng;
                    fields["regression_sr"].push_back(to_grid((*reg)->forward(cond)[0]));
                }
            }
            fields["truth"] = truth;
            const auto files = pipeline::plot_fields(fields, truth, hours, variables, data.catalog, out);
            json paths = json::array();
            for (const auto& f : files) paths.push_back(f.string());
            succeed({{"command", command}, {"files", paths}});
        }
    } catch (const TrainingDiverged& e) {
        return fail(command, out, {{"kind", e.kind()}, {"message", e.what()}, {"epoch", e.epoch()}, {"step", e.step()}});
    } catch (const Error& e) {
        return fail(command, out, {{"kind", e.kind()}, {"message", e.what()}});
    } catch (const c10::Error& e) {
        return fail(command, out, {{"kind", "tensor"}, {"message", e.what_without_backtrace()}});
    } catch (const std::exception& e) {
        return fail(command, out, {{"kind", "internal"}, {"message", e.what()}});
    }
    return 0;
}
