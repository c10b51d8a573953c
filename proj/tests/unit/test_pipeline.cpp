#include <cstdlib>
#include <fstream>
#include <random>

#include <png.h>

#include "helpers.hpp"
#include "swinrdm/error.hpp"
#include "swinrdm/pipeline.hpp"

using namespace swinrdm;
using namespace swinrdm::pipeline;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("swinrdm_pipeline_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

ExperimentConfig smoke_config() {
    return ExperimentConfig::load(fs::path(SWINRDM_TEST_DATA) / "smoke_config.json");
}

// Data, forecaster and SR checkpoints shared by the slower cases.
struct Smoke {
    ExperimentConfig config;
    PreparedData data;
    fs::path dir;
    TrainResult forecaster;
    SrTrainResult sr;

    static Smoke& get() {
        static Smoke s = [] {
            Smoke s;
            s.config = smoke_config();
            s.data = prepare_data(s.config);
            s.dir = scratch("smoke");
            s.forecaster = train_forecaster(s.config, s.data, s.dir);
            s.sr = train_sr(s.config, s.data, s.forecaster.checkpoint, s.dir, true);
            return s;
        }();
        return s;
    }
};

std::vector<uint8_t> png_pixels(const fs::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    REQUIRE(png_image_begin_read_from_file(&image, path.string().c_str()) != 0);
    image.format = PNG_FORMAT_RGB;
    std::vector<uint8_t> buf(PNG_IMAGE_SIZE(image));
    REQUIRE(png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr) != 0);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    return {std::istreambuf_iterator<char>(in), {}};
}

} // namespace

TEST_SUITE("pipeline") {

TEST_CASE("config JSON roundtrip and hashing") {
    const auto c = ExperimentConfig::desk();
    const auto back = ExperimentConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK(back.hash() == c.hash());

    auto moved = c;
    moved.out_dir = "elsewhere";
    CHECK(moved.hash() == c.hash());
    auto reseeded = c;
    reseeded.seed = c.seed + 1;
    CHECK(reseeded.hash() != c.hash());

    auto j = c.to_json();
    j["forecaster"]["horizn"] = 3;
    CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
    j = c.to_json();
    j["diffusion"]["objective"] = "v";
    CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
    j = c.to_json();
    j["forecaster"]["horizon"] = "eight";
    CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);

    const auto dir = scratch("config");
    c.save(dir / "c.json");
    CHECK(ExperimentConfig::load(dir / "c.json").hash() == c.hash());
    std::ofstream(dir / "bad.json") << "{not json";
    CHECK_THROWS_AS(ExperimentConfig::load(dir / "bad.json"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::load(dir / "missing.json"), IoError);

    auto leads = c;
    leads.evaluation.leads = {};
    CHECK(leads.eval_leads().size() == static_cast<size_t>(c.forecaster.horizon));
    leads.evaluation.leads = {c.forecaster.horizon + 1};
    CHECK_THROWS_AS(leads.eval_leads(), ConfigError);
}

TEST_CASE("checkpoint roundtrip and validation") {
    torch::manual_seed(0);
    const auto catalog = testing::unit_catalog();
    forecast::ForecasterConfig fc;
    fc.channels = 8;
    fc.constant_channels = {6, 7};
    fc.history = 2;
    fc.lat = 8;
    fc.lon = 16;
    fc.dec_dim = 8;
    fc.enc_dim = 8;
    fc.depth = 2;
    fc.window = 4;
    fc.heads = 2;
    forecast::Forecaster f(fc);
    const auto dir = scratch("checkpoint");
    save_checkpoint(*f, "forecaster", fc.to_json(), catalog, "abc", dir / "f.ckpt");

    const auto ck = read_checkpoint(dir / "f.ckpt");
    CHECK(ck.kind == "forecaster");
    CHECK(ck.format_version == kCheckpointFormatVersion);
    CHECK(ck.config_hash == "abc");
    CHECK(ck.catalog_hash == catalog.layout_hash());
    CHECK(ck.id() == read_checkpoint(dir / "f.ckpt").id());
    auto g = load_forecaster(ck);
    auto params = f->named_parameters();
    for (const auto& item : g->named_parameters()) CHECK(torch::equal(item.value(), params[item.key()]));
    auto hist = torch::randn({1, 2, 8, 8, 16});
    CHECK(torch::equal(f->rollout(hist, 2), g->rollout(hist, 2)));
    CHECK_THROWS_AS(load_denoiser(ck), DataError);

    auto write_archive = [&](const fs::path& p, int64_t version, const std::string& catalog_hash) {
        torch::serialize::OutputArchive a;
        a.write("kind", c10::IValue(std::string("forecaster")));
        a.write("config", c10::IValue(fc.to_json().dump()));
        a.write("catalog", c10::IValue(catalog.to_json().dump()));
        a.write("catalog_hash", c10::IValue(catalog_hash));
        a.write("config_hash", c10::IValue(std::string("abc")));
        a.write("format_version", c10::IValue(version));
        a.write("tensor_names", c10::IValue(std::string("[]")));
        a.save_to(p.string());
    };
    write_archive(dir / "v2.ckpt", kCheckpointFormatVersion + 1, catalog.layout_hash());
    CHECK_THROWS_AS(read_checkpoint(dir / "v2.ckpt"), DataError);
    write_archive(dir / "cat.ckpt", kCheckpointFormatVersion, "0000");
    CHECK_THROWS_AS(read_checkpoint(dir / "cat.ckpt"), DataError);
    write_archive(dir / "empty.ckpt", kCheckpointFormatVersion, catalog.layout_hash());
    CHECK_THROWS_AS(load_forecaster(read_checkpoint(dir / "empty.ckpt")), DataError);
    CHECK_THROWS_AS(read_checkpoint(dir / "missing.ckpt"), IoError);
}

TEST_CASE("forecast step draws are uniform") {
    torch::Generator gen = at::detail::createCPUGenerator(11);
    const int64_t n = 10000, horizon = 8;
    const auto k = draw_forecast_steps(n, horizon, gen);
    REQUIRE(k.size() == static_cast<size_t>(n));
    std::vector<double> counts(horizon, 0.0);
    for (auto v : k) {
        REQUIRE(v >= 1);
        REQUIRE(v <= horizon);
        counts[static_cast<size_t>(v - 1)] += 1.0;
    }
    const double expected = static_cast<double>(n) / horizon;
    double chi2 = 0.0;
    for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
    // 99th percentile of chi-square with 7 degrees of freedom
    CHECK(chi2 < 18.475);
    CHECK_THROWS_AS(draw_forecast_steps(4, 0, gen), ConfigError);
}

TEST_CASE("data preparation") {
    const auto config = smoke_config();
    const auto data = prepare_data(config);
    const auto f = config.data.sr_factor;
    CHECK(data.lr_norm.size(2) * f == data.hr.values().size(2));
    CHECK(data.lr_norm.size(3) * f == data.hr.values().size(3));
    CHECK(data.hr_constants.size(0) == static_cast<int64_t>(data.catalog.constant_channels().size()));
    CHECK(data.train.end <= data.val.begin);
    CHECK(data.val.end <= data.test.begin);
    // statistics come from the training split only
    for (int64_t s : window_starts(config, data, data.test)) CHECK(s >= data.test.begin);
}

TEST_CASE("smoke training") {
    auto& s = Smoke::get();
    const auto& epochs = s.forecaster.record.epochs();
    REQUIRE(epochs.size() == static_cast<size_t>(s.config.forecaster_optimizer.epochs));
    CHECK(epochs.back().train_loss < epochs.front().train_loss);
    CHECK(std::isfinite(s.forecaster.best_val_loss));
    CHECK(fs::exists(s.forecaster.checkpoint));
    CHECK(fs::exists(s.sr.diffusion.checkpoint));
    CHECK(fs::exists(s.sr.regression.checkpoint));
    CHECK(read_checkpoint(s.sr.diffusion.checkpoint).config_hash == s.config.hash());

    // the same config and seed reproduce the same weights
    const auto again = train_forecaster(s.config, s.data, scratch("smoke_again"));
    CHECK(again.checkpoint_id == s.forecaster.checkpoint_id);
    CHECK(again.best_val_loss == s.forecaster.best_val_loss);
}

TEST_CASE("rollout and super-resolution") {
    auto& s = Smoke::get();
    const auto H = s.config.forecaster.model.history;
    const auto start = window_starts(s.config, s.data, s.data.test).front();
    auto forecaster = load_forecaster(read_checkpoint(s.forecaster.checkpoint));
    auto denoiser = load_denoiser(read_checkpoint(s.sr.diffusion.checkpoint));
    const auto schedule = diffusion::DiffusionSchedule::make(s.config.diffusion.timesteps, s.config.diffusion.kind);
    const diffusion::SamplerOptions opt{s.config.diffusion.timesteps, 1, 5, s.config.data.sr_factor};
    const auto bundle = rollout_and_superresolve(s.data.lr_norm.narrow(0, start, H), {}, 3, *forecaster, *denoiser,
                                                 schedule, opt, s.data, {1, 3});
    REQUIRE(bundle.lr.size() == 3);
    REQUIRE(bundle.hr.size() == 2);
    for (const auto& e : bundle.hr) {
        REQUIRE(e.members.size() == 1);
        const auto& m = e.members[0];
        CHECK(m.height() == bundle.lr[0].height() * 4);
        CHECK(m.width() == bundle.lr[0].width() * 4);
        CHECK(torch::isfinite(m.values).all().item<bool>());
        const auto tp = s.data.catalog.index("tp");
        CHECK(m.values[tp].min().item<double>() >= 0.0);
    }
    CHECK(bundle.hr[1].forecast_step == 3);
    const auto again = rollout_and_superresolve(s.data.lr_norm.narrow(0, start, H), {}, 3, *forecaster, *denoiser,
                                                schedule, opt, s.data, {1, 3});
    CHECK(torch::equal(again.hr[0].members[0].values, bundle.hr[0].members[0].values));
    CHECK_THROWS_AS(rollout_and_superresolve(s.data.lr_norm.narrow(0, start, H), {}, 3, *forecaster, *denoiser,
                                             schedule, opt, s.data, {4}),
                    RangeError);
}

TEST_CASE("scoring the truth against itself") {
    const auto config = smoke_config();
    const auto data = prepare_data(config);
    const auto& catalog = data.catalog;
    ScoreGroup g{"fine", {1, 2}, {6.0, 12.0}, {}, data.hr.latitudes(), {}, true, true};
    for (int64_t l = 0; l < 2; ++l) {
        g.truth.push_back(data.hr.values().narrow(0, data.test.begin + 4 * l, 4).to(torch::kFloat32));
    }
    // make every threshold populated so CSI is defined
    const auto tp = catalog.index("tp");
    for (auto& t : g.truth) t.select(1, tp).select(1, 0).fill_(60.0);
    g.methods.push_back({"oracle", "ck", g.truth, {}});
    auto noisy = g.truth;
    for (auto& t : noisy) t = t + 1.0;
    g.methods.push_back({"shifted", "", noisy, {}});
    const auto r = score({g}, catalog, config.evaluation, config.hash());

    for (double lh : {6.0, 12.0}) {
        CHECK(r.value("oracle", "t2m", "rmse", lh).value() == 0.0);
        CHECK(r.value("oracle", "ws", "rmse", lh).value() == 0.0);
        CHECK(std::abs(r.value("oracle", "all", "frechet", lh).value()) <= 1e-6);
        CHECK(r.value("shifted", "t2m", "rmse", lh).value() == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(r.value("shifted", "all", "frechet", lh).value() > 1e-3);
    }
    for (double thr : config.evaluation.csi_thresholds) {
        CHECK(r.value("oracle", "tp", "csi", -1.0, thr).value() == 1.0);
    }
    for (const auto& row : r.json.at("rows")) {
        CHECK(row.at("config_hash") == config.hash());
        CHECK(row.contains("checkpoint"));
    }
    CHECK(r.value("oracle", "tp", "csi", 6.0, 0.123) == std::nullopt);
    CHECK(r.csv.find("oracle") != std::string::npos);
    CHECK(Report::from_json(r.json).hash() == r.hash());

    auto bad = g;
    bad.methods[0].fields.pop_back();
    CHECK_THROWS_AS(score({bad}, catalog, config.evaluation, config.hash()), ShapeError);
}

TEST_CASE("plots") {
    const auto catalog = testing::unit_catalog();
    torch::manual_seed(4);
    const auto lats = data::make_latitudes(8), lons = data::make_longitudes(16);
    std::vector<data::FieldGrid> truth, a;
    for (int l = 0; l < 2; ++l) {
        truth.push_back({torch::randn({8, 8, 16}).abs(), lats, lons, {}});
        a.push_back({truth.back().values * 0.5, lats, lons, {}});
    }
    const std::map<std::string, std::vector<data::FieldGrid>> fields = {{"copy", truth}, {"half", a}};
    const auto dir = scratch("plots");
    const auto paths = plot_fields(fields, truth, {6.0, 12.0}, {"t2m", "tp", "ws"}, catalog, dir);
    CHECK(paths.size() == 12);
    for (const auto& p : paths) CHECK(fs::exists(p));

    std::map<std::pair<std::string, double>, std::pair<double, double>> ranges;
    for (const auto& p : paths) {
        const auto meta = read_plot_metadata(p);
        const auto key = std::make_pair(meta.variable, meta.lead_hours);
        if (ranges.count(key)) {
            CHECK(ranges[key].first == meta.vmin);
            CHECK(ranges[key].second == meta.vmax);
        } else {
            ranges[key] = {meta.vmin, meta.vmax};
        }
    }
    CHECK(ranges.size() == 6);
    const auto only_truth = plot_fields({{"x", truth}, {"y", truth}}, truth, {6.0, 12.0}, {"tp"}, catalog,
                                        scratch("plots3"));
    REQUIRE(only_truth.size() == 4);
    std::map<std::string, std::vector<uint8_t>> px;
    for (const auto& p : only_truth) {
        const auto meta = read_plot_metadata(p);
        if (meta.lead_hours == 6.0) px[meta.method] = png_pixels(p);
    }
    CHECK(px.at("x") == px.at("y"));
    CHECK_THROWS_AS(plot_fields(fields, {truth[0]}, {6.0, 12.0}, {"t2m"}, catalog, dir), ShapeError);
}

TEST_CASE("ablation suite smoke") {
    auto config = smoke_config();
    const auto dir = scratch("ablation");
    const auto suite = run_ablation_suite(config, dir, {true, false});
    CHECK(suite.at("failures").empty());
    REQUIRE(suite.at("table1").size() == 4);
    REQUIRE(suite.at("table2").size() == 3);
    for (const auto& row : suite.at("table1")) {
        CHECK(row.contains("val_loss"));
        CHECK(row.at("config_hash").get<std::string>().size() > 0);
        CHECK(row.at("checkpoint").get<std::string>().size() > 0);
    }
    int64_t multi256 = 0, single512 = 0;
    for (const auto& row : suite.at("table2_paper_scale")) {
        if (row.at("variant") == "multi" && row.at("dim") == 256) multi256 = row.at("params");
        if (row.at("variant") == "single" && row.at("dim") == 512) single512 = row.at("params");
    }
    CHECK(multi256 > single512);
    CHECK(fs::exists(dir / "ablation.json"));
    CHECK(slurp(dir / "ablation.csv").find("table2_paper_scale") != std::string::npos);

    // rerunning reuses the checkpoints and reproduces the tables
    const auto again = run_ablation_suite(config, dir, {true, false});
    CHECK(again.at("suite_hash") == suite.at("suite_hash"));

    // a checkpoint without its run record (an interrupted run) is retrained, not reused
    const auto run_dir = dir / suite.at("table1")[0].at("run").get<std::string>();
    fs::remove(run_dir / "forecaster_record.json");
    const auto before = fs::last_write_time(run_dir / "forecaster.ckpt");
    const auto third = run_ablation_suite(config, dir, {true, false});
    CHECK(fs::exists(run_dir / "forecaster_record.json"));
    CHECK(fs::last_write_time(run_dir / "forecaster.ckpt") != before);
    CHECK(third.at("suite_hash") == suite.at("suite_hash"));
}

TEST_CASE("command line error records") {
    const auto dir = scratch("cli");
    auto run = [&](const std::string& args) {
        const std::string cmd = std::string(SWINRDM_CLI_PATH) + " " + args + " > " + (dir / "stdout.txt").string() + " 2> " + (dir / "stderr.txt").string();
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    };
    std::ofstream(dir / "bad.json") << R"({"forecaster":{"horizn":3}})";
    CHECK(run("train-forecaster --config " + (dir / "bad.json").string() + " --out " + (dir / "out").string()) == 2);
    const auto record = json::parse(slurp(dir / "out" / "error.json"));
    CHECK(record.at("status") == "error");
    CHECK(record.at("kind") == "config");
    CHECK(record.at("command") == "train-forecaster");
    CHECK(json::parse(slurp(dir / "stderr.txt").substr(slurp(dir / "stderr.txt").rfind("{\"command\""))) == record);

    CHECK(run("data stats --in " + (dir / "nope.f32").string() + " --out " + (dir / "s").string()) != 0);
    CHECK(run("evaluate --out " + (dir / "e").string()) != 0);

    CHECK(run("data synth --grid 16x32 --steps 40 --seed 2 --out " + (dir / "d").string()) == 0);
    CHECK(fs::exists(dir / "d"));
}

}
