// Acceptance runner: one PASS/FAIL line per criterion.
//
// Criteria 1-4 run the oracle test cases of unit_tests by name and time them.
// Criteria 5-10 read the desk ablation suite, which is trained on first use and
// reused afterwards (checkpoints are keyed by config hash).

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "swinrdm/error.hpp"
#include "swinrdm/pipeline.hpp"

using namespace swinrdm;
using namespace swinrdm::pipeline;
using nlohmann::json;

namespace {

struct Outcome {
    int id;
    bool pass;
    std::string detail;
};

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(5);
    s << v;
    return s.str();
}

Outcome run_unit_cases(int id, const std::string& unit_tests, const std::string& cases, double budget_s,
                       const fs::path& log_dir) {
    const auto log = log_dir / ("criterion_" + std::to_string(id) + ".log");
    const std::string cmd = "SWINRDM_QUIET=1 \"" + unit_tests + "\" --test-case=\"" + cases + "\" > \"" +
                            log.string() + "\" 2>&1";
    const auto t0 = std::chrono::steady_clock::now();
    const int status = std::system(cmd.c_str());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ifstream in(log);
    std::string line, summary;
    while (std::getline(in, line)) {
        if (line.find("assertions:") != std::string::npos) summary = line.substr(line.find("assertions:"));
    }
    const bool ok = status == 0 && !summary.empty();
    const bool fast = secs < budget_s;
    return {id, ok && fast,
            (summary.empty() ? std::string("no test summary") : summary) + "; " + fmt(secs) + " s (budget " +
                fmt(budget_s) + " s)"};
}

// Rows of the SR comparison keyed the way Report::value expects.
struct Scores {
    Report report;
    std::vector<double> leads;  // lead hours on the fine grid

    double get(const std::string& method, const std::string& variable, const std::string& metric, double lead,
               std::optional<double> thr = std::nullopt) const {
        const auto v = report.value(method, variable, metric, lead, thr);
        if (!v) {
            throw DataError("report lacks " + method + "/" + variable + "/" + metric + " at " + fmt(lead) + " h");
        }
        return *v;
    }
};

Outcome table1(const json& suite) {
    std::map<int64_t, std::map<bool, double>> val;
    for (const auto& r : suite.at("table1")) {
        if (!r.contains("val_loss")) return {5, false, "run " + r.at("run").get<std::string>() + " did not finish"};
        val[r.at("dim").get<int64_t>()][r.at("aggregation").get<bool>()] = r.at("val_loss").get<double>();
    }
    bool pass = !val.empty();
    std::string detail;
    for (const auto& [dim, v] : val) {
        if (!v.count(true) || !v.count(false)) return {5, false, "dim " + std::to_string(dim) + " lacks a run"};
        pass = pass && v.at(true) <= v.at(false);
        detail += "d" + std::to_string(dim) + " agg " + fmt(v.at(true)) + " vs no-agg " + fmt(v.at(false)) + "; ";
    }
    return {5, pass, detail};
}

Outcome table2(const json& suite) {
    std::map<std::pair<std::string, int64_t>, int64_t> paper;
    for (const auto& r : suite.at("table2_paper_scale")) {
        paper[{r.at("variant").get<std::string>(), r.at("dim").get<int64_t>()}] = r.at("params").get<int64_t>();
    }
    const auto m256 = paper.at({"multi", 256}), s512 = paper.at({"single", 512}), s384 = paper.at({"single", 384});
    const bool counts = m256 > s512 && s512 > s384;

    std::optional<double> single_big, multi_small;
    int64_t single_dim = -1, multi_dim = std::numeric_limits<int64_t>::max();
    for (const auto& r : suite.at("table2")) {
        if (!r.contains("val_loss")) return {6, false, "run " + r.at("run").get<std::string>() + " did not finish"};
        const auto dim = r.at("dim").get<int64_t>();
        const auto v = r.at("val_loss").get<double>();
        if (r.at("variant") == "single" && dim > single_dim) single_dim = dim, single_big = v;
        if (r.at("variant") == "multi" && dim < multi_dim) multi_dim = dim, multi_small = v;
    }
    if (!single_big || !multi_small) return {6, false, "table2 lacks a single- or multi-scale run"};
    const bool tradeoff = *single_big <= *multi_small;
    return {6, counts && tradeoff,
            "paper-scale params multi/256 " + std::to_string(m256) + " > single/512 " + std::to_string(s512) +
                " > single/384 " + std::to_string(s384) + (counts ? " ok" : " VIOLATED") + "; val single/" +
                std::to_string(single_dim) + " " + fmt(*single_big) + " vs multi/" + std::to_string(multi_dim) + " " +
                fmt(*multi_small)};
}

Outcome sr_comparison(const Scores& s, const std::vector<std::string>& variables) {
    const double last = s.leads.back();
    const double fd = s.get("diffusion_sr", "all", "frechet", last);
    const double fr = s.get("regression_sr", "all", "frechet", last);
    const double fb = s.get("bilinear", "all", "frechet", last);
    auto range = [&](const std::string& m) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (double l : s.leads) {
            const double v = s.get(m, "all", "frechet", l);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        return hi - lo;
    };
    const double rd = range("diffusion_sr"), rb = range("bilinear");
    // RMSE spread: per variable, mean over leads, largest relative gap between the three methods.
    double worst = 0.0;
    std::string worst_var;
    for (const auto& var : variables) {
        std::vector<double> means;
        for (const auto* m : {"bilinear", "regression_sr", "diffusion_sr"}) {
            double sum = 0.0;
            for (double l : s.leads) sum += s.get(m, var, "rmse", l);
            means.push_back(sum / static_cast<double>(s.leads.size()));
        }
        const auto [lo, hi] = std::minmax_element(means.begin(), means.end());
        const double gap = *hi / *lo - 1.0;
        if (gap > worst) worst = gap, worst_var = var;
    }
    const bool order = fd < fr && fr < fb;
    const bool flatter = rd < rb;
    const bool close = worst <= 0.15;
    return {7, order && flatter && close,
            "Frechet at " + fmt(last) + " h diffusion " + fmt(fd) + ", regression " + fmt(fr) + ", bilinear " +
                fmt(fb) + (order ? "" : " (order violated)") + "; lead range diffusion " + fmt(rd) + " vs bilinear " +
                fmt(rb) + "; worst RMSE gap " + fmt(100.0 * worst) + "% (" + worst_var + ")"};
}

Outcome ensemble(const Scores& s, const std::vector<std::string>& variables) {
    bool pass = true;
    std::string detail;
    int64_t violations = 0, cases = 0;
    for (double l : s.leads) {
        violations += static_cast<int64_t>(s.get("diffusion_sr_ensemble", "all", "jensen_violations", l));
        cases += static_cast<int64_t>(s.get("diffusion_sr_ensemble", "all", "jensen_cases", l));
    }
    int failing = 0;
    for (const auto& var : variables) {
        for (double l : s.leads) {
            const double em = s.get("diffusion_sr_ensemble", var, "rmse", l);
            const double one = s.get("diffusion_sr_member", var, "rmse", l);
            if (em > one) {
                pass = false;
                if (failing++ < 3) detail += var + "@" + fmt(l) + "h " + fmt(em) + " > " + fmt(one) + "; ";
            }
        }
    }
    pass = pass && violations == 0 && cases > 0;
    return {8, pass,
            detail + "ensemble mean <= member on " +
                std::to_string(variables.size() * s.leads.size() - static_cast<size_t>(failing)) + "/" +
                std::to_string(variables.size() * s.leads.size()) + " (variable, lead) pairs; Jensen violations " +
                std::to_string(violations) + "/" + std::to_string(cases)};
}

Outcome csi_direction(const Scores& s, std::vector<double> thresholds) {
    std::sort(thresholds.begin(), thresholds.end());
    bool pass = thresholds.size() >= 2;
    std::string detail;
    for (size_t i = thresholds.size() >= 2 ? thresholds.size() - 2 : 0; i < thresholds.size(); ++i) {
        const double thr = thresholds[i];
        const double d = s.get("diffusion_sr", "tp", "csi", -1.0, thr);
        const double r = s.get("regression_sr", "tp", "csi", -1.0, thr);
        pass = pass && d > r;
        detail += fmt(thr) + " mm: diffusion " + fmt(d) + " vs regression " + fmt(r) + "; ";
    }
    return {9, pass, detail};
}

Outcome skill_floor(const Scores& s, const std::vector<std::string>& variables, double lead) {
    bool pass = true;
    std::string detail;
    for (const auto& var : variables) {
        const double f = s.get("forecaster", var, "rmse", lead);
        const double p = s.get("persistence", var, "rmse", lead);
        const double c = s.get("climatology", var, "rmse", lead);
        const bool ok = f < p && f < c;
        pass = pass && ok;
        detail += var + " " + fmt(f) + "/" + fmt(p) + "/" + fmt(c) + (ok ? "" : " (no skill)") + "; ";
    }
    return {10, pass, "forecaster/persistence/climatology at " + fmt(lead) + " h: " + detail};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria runner"};
    std::string unit_tests = SWINRDM_UNIT_TESTS_PATH;
    std::string config_path;
    std::string suite_dir = "desk_suite";
    std::string out = "acceptance.json";
    bool skip_desk = false;
    app.add_option("--unit-tests", unit_tests, "unit_tests binary");
    app.add_option("--config", config_path, "Experiment config for the desk suite (default: built-in desk config)");
    app.add_option("--suite-dir", suite_dir, "Desk suite directory (created or reused)");
    app.add_option("--out", out, "Machine-readable results");
    app.add_flag("--skip-desk", skip_desk, "Report criteria 5-10 as not run");
    CLI11_PARSE(app, argc, argv);

    std::vector<Outcome> outcomes;
    const fs::path log_dir = fs::path(suite_dir) / "acceptance_logs";
    fs::create_directories(log_dir);

    outcomes.push_back(run_unit_cases(1, unit_tests, "forward process,posterior,respacing", 60.0, log_dir));
    outcomes.push_back(run_unit_cases(2, unit_tests, "gradients match central differences in float64", 300.0, log_dir));
    outcomes.push_back(run_unit_cases(
        3, unit_tests, "window partition and merge,swin block,embeddings,normalize and denormalize", 300.0, log_dir));
    outcomes.push_back(run_unit_cases(
        4, unit_tests, "weighted RMSE,critical success index,Frechet distance,wind speed", 300.0, log_dir));

    auto not_run = [&](const std::string& why) {
        for (int id = 5; id <= 10; ++id) outcomes.push_back({id, false, why});
    };
    if (skip_desk) {
        not_run("desk suite not run (--skip-desk)");
    } else {
        try {
            const auto config = config_path.empty() ? ExperimentConfig::desk() : ExperimentConfig::load(config_path);
            const auto suite = run_ablation_suite(config, suite_dir);
            for (const auto& f : suite.at("failures")) std::cerr << "suite failure: " << f.dump() << "\n";
            outcomes.push_back(table1(suite));
            outcomes.push_back(table2(suite));

            const auto catalog = data::VariableCatalog::build(config.data.catalog);
            std::vector<std::string> variables;
            for (int64_t c : catalog.predicted_channels()) {
                variables.push_back(catalog.entries()[static_cast<size_t>(c)].key());
            }
            if (suite.at("table3").empty()) {
                for (int id = 7; id <= 10; ++id) outcomes.push_back({id, false, "SR comparison did not run"});
            } else {
                Scores s{Report::from_json(suite.at("table3")), {}};
                for (const auto& r : suite.at("table3").at("rows")) {
                    if (r.at("method") == "diffusion_sr" && r.at("metric") == "frechet") {
                        s.leads.push_back(r.at("lead_hours").get<double>());
                    }
                }
                std::sort(s.leads.begin(), s.leads.end());
                auto guarded = [&](int id, auto&& fn) {
                    try {
                        outcomes.push_back(fn());
                    } catch (const std::exception& e) {
                        outcomes.push_back({id, false, e.what()});
                    }
                };
                guarded(7, [&] { return sr_comparison(s, variables); });
                guarded(8, [&] { return ensemble(s, variables); });
                guarded(9, [&] { return csi_direction(s, config.evaluation.csi_thresholds); });
                // 24 h-equivalent lead; the synthetic interval is read from the rows
                guarded(10, [&] { return skill_floor(s, variables, 24.0); });
            }
        } catch (const std::exception& e) {
            not_run(std::string("desk suite error: ") + e.what());
        }
    }

    json results = json::array();
    bool all = true;
    for (const auto& o : outcomes) {
        std::printf("criterion %2d: %s  %s\n", o.id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
        results.push_back({{"criterion", o.id}, {"pass", o.pass}, {"detail", o.detail}});
        all = all && o.pass;
    }
    std::ofstream(out) << json{{"criteria", results}, {"all_pass", all}}.dump(2) << "\n";
    return all ? 0 : 1;
}
