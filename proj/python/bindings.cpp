#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "swinrdm/error.hpp"
#include "swinrdm/pipeline.hpp"

namespace py = pybind11;
using namespace swinrdm;
using nlohmann::json;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

torch::Tensor to_tensor(const Array& a) {
    std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
    return torch::from_blob(const_cast<double*>(a.data()), shape, torch::kFloat64).clone();
}

Array to_array(const torch::Tensor& t) {
    auto c = t.detach().to(torch::kFloat64).contiguous().cpu();
    Array out(std::vector<py::ssize_t>(c.sizes().begin(), c.sizes().end()));
    std::memcpy(out.mutable_data(), c.data_ptr<double>(), static_cast<size_t>(c.numel()) * sizeof(double));
    return out;
}

// Configs cross the boundary as JSON text; the Python package wraps them in dicts.
pipeline::ExperimentConfig config_of(const std::string& text) {
    return text.empty() ? pipeline::ExperimentConfig::desk()
                        : pipeline::ExperimentConfig::from_json(json::parse(text));
}

py::dict csi_dict(const metrics::CsiResult& r) {
    py::dict d;
    d["csi"] = r.csi;
    d["degenerate"] = r.degenerate;
    d["hits"] = r.table.hits;
    d["misses"] = r.table.misses;
    d["false_alarms"] = r.table.false_alarms;
    d["correct_negatives"] = r.table.correct_negatives;
    return d;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Recurrent window-attention forecaster with diffusion super-resolution";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
    py::register_exception<DataError>(m, "DataError", base.ptr());
    py::register_exception<RangeError>(m, "RangeError", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());
    py::register_exception<TrainingDiverged>(m, "TrainingDiverged", base.ptr());

    // data
    m.def("catalog", [](const std::string& profile) { return data::VariableCatalog::build(profile).to_json().dump(); },
          py::arg("profile") = "desk");
    m.def(
        "synthesize",
        [](const std::string& synth, const std::string& profile) {
            const auto cfg = data::SynthConfig::from_json(json::parse(synth));
            const auto ds = data::generate_synthetic_dataset(cfg, data::VariableCatalog::build(profile));
            return py::make_tuple(to_array(ds.values()), ds.latitudes(), ds.longitudes());
        },
        py::arg("synth_config"), py::arg("profile") = "desk");
    m.def("downsample", [](const Array& v, int64_t f) { return to_array(data::downsample_values(to_tensor(v), f)); },
          py::arg("values"), py::arg("factor"));
    m.def("make_latitudes", &data::make_latitudes);

    // metrics
    m.def("lat_weights", [](const std::vector<double>& lats) { return metrics::lat_weights(lats).values; });
    m.def(
        "weighted_rmse",
        [](const Array& pred, const Array& truth, const std::vector<double>& lats) {
            return to_array(metrics::weighted_rmse(to_tensor(pred), to_tensor(truth), metrics::lat_weights(lats)));
        },
        py::arg("pred"), py::arg("truth"), py::arg("latitudes"));
    m.def(
        "csi",
        [](const Array& pred, const Array& truth, double thr) {
            return csi_dict(metrics::csi(to_tensor(pred), to_tensor(truth), thr));
        },
        py::arg("pred"), py::arg("truth"), py::arg("threshold"));
    m.def(
        "frechet_distance",
        [](const Array& a, const Array& b, double ridge) {
            auto to_eigen = [](const Array& x) {
                if (x.ndim() != 2) throw ShapeError("feature sets must be 2-D");
                return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                           x.data(), x.shape(0), x.shape(1))
                    .eval();
            };
            return metrics::frechet_distance(to_eigen(a), to_eigen(b), ridge);
        },
        py::arg("a"), py::arg("b"), py::arg("ridge") = 1e-6);
    m.def("wind_speed", [](const Array& u, const Array& v) {
        return to_array(metrics::wind_speed(to_tensor(u), to_tensor(v)));
    });

    // diffusion schedule
    m.def(
        "alpha_bars",
        [](int64_t T, const std::string& kind, int64_t respaced) {
            auto s = diffusion::DiffusionSchedule::make(T, diffusion::schedule_kind_from_string(kind));
            if (respaced > 0) s = diffusion::respace(s, respaced);
            return py::make_tuple(s.alpha_bars(), s.timesteps());
        },
        py::arg("timesteps"), py::arg("kind") = "linear", py::arg("respaced") = 0);
    m.def(
        "q_sample",
        [](const Array& y0, int64_t t, const Array& eps, int64_t T, const std::string& kind) {
            const auto s = diffusion::DiffusionSchedule::make(T, diffusion::schedule_kind_from_string(kind));
            return to_array(diffusion::q_sample(to_tensor(y0), t, to_tensor(eps), s));
        },
        py::arg("y0"), py::arg("t"), py::arg("eps"), py::arg("timesteps"), py::arg("kind") = "linear");

    // forecaster sizing
    m.def(
        "parameter_count",
        [](const std::string& variant, int64_t dim) {
            return forecast::parameter_count(
                pipeline::paper_scale_config(forecast::variant_from_string(variant), dim));
        },
        py::arg("variant"), py::arg("dim"));

    // pipeline
    m.def("desk_config", [] { return pipeline::ExperimentConfig::desk().to_json().dump(); });
    m.def("config_hash", [](const std::string& c) { return config_of(c).hash(); });
    m.def(
        "train_forecaster",
        [](const std::string& c, const std::filesystem::path& out) {
            py::gil_scoped_release release;
            const auto cfg = config_of(c);
            const auto r = pipeline::train_forecaster(cfg, pipeline::prepare_data(cfg), out);
            return std::make_tuple(r.checkpoint, r.best_val_loss, r.record.to_json().dump());
        },
        py::arg("config"), py::arg("out"));
    m.def(
        "train_sr",
        [](const std::string& c, const std::filesystem::path& forecaster, const std::filesystem::path& out) {
            py::gil_scoped_release release;
            const auto cfg = config_of(c);
            const auto r = pipeline::train_sr(cfg, pipeline::prepare_data(cfg), forecaster, out, true);
            return std::make_tuple(r.diffusion.checkpoint, r.regression.checkpoint);
        },
        py::arg("config"), py::arg("forecaster"), py::arg("out"));
    m.def(
        "evaluate",
        [](const std::string& c, const std::filesystem::path& forecaster, const std::filesystem::path& denoiser,
           const std::filesystem::path& regression) {
            py::gil_scoped_release release;
            const auto cfg = config_of(c);
            return pipeline::evaluate(cfg, pipeline::prepare_data(cfg), {forecaster, denoiser, regression}).json.dump();
        },
        py::arg("config"), py::arg("forecaster"), py::arg("denoiser"), py::arg("regression") = "");
    m.def(
        "rollout",
        [](const std::string& c, const std::filesystem::path& forecaster, const std::filesystem::path& sr,
           int64_t init, int64_t steps, int64_t members, const std::vector<int64_t>& leads) {
            py::gil_scoped_release release;
            const auto cfg = config_of(c);
            const auto data = pipeline::prepare_data(cfg);
            const auto starts = pipeline::window_starts(cfg, data, data.test);
            if (init < 0 || init >= static_cast<int64_t>(starts.size())) throw RangeError("init outside the test split");
            const auto H = cfg.forecaster.model.history;
            std::vector<data::FieldGrid> history;
            const auto lr = data::denormalize_values(data.lr_norm.narrow(0, starts[static_cast<size_t>(init)], H),
                                                     data.catalog);
            for (int64_t i = 0; i < H; ++i) history.push_back({lr[i], data.lr_lats, data.lr_lons, {}});
            const auto b = pipeline::rollout_and_superresolve(history, cfg.forecaster.horizon, forecaster, sr, cfg,
                                                              data, steps, members, cfg.seed,
                                                              leads.empty() ? cfg.eval_leads() : leads);
            py::gil_scoped_acquire acquire;
            py::list lr_out, hr_out;
            for (const auto& g : b.lr) lr_out.append(to_array(g.values));
            for (const auto& e : b.hr) {
                std::vector<torch::Tensor> ms;
                for (const auto& mem : e.members) ms.push_back(mem.values);
                hr_out.append(to_array(torch::stack(ms)));
            }
            return py::make_tuple(lr_out, hr_out, b.to_json().dump());
        },
        py::arg("config"), py::arg("forecaster"), py::arg("sr"), py::arg("init") = 0, py::arg("steps") = 10,
        py::arg("members") = 1, py::arg("leads") = std::vector<int64_t>{});
    m.def(
        "ablation",
        [](const std::string& c, const std::filesystem::path& out, bool run_sr) {
            py::gil_scoped_release release;
            return pipeline::run_ablation_suite(config_of(c), out, {true, run_sr}).dump();
        },
        py::arg("config"), py::arg("out"), py::arg("run_sr") = true);
}
