#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "gatewire/calibration.hpp"
#include "gatewire/checkpoint.hpp"
#include "gatewire/config.hpp"
#include "gatewire/dataset.hpp"
#include "gatewire/errors.hpp"
#include "gatewire/gating.hpp"
#include "gatewire/harness.hpp"
#include "gatewire/model.hpp"
#include "gatewire/rng.hpp"
#include "gatewire/training.hpp"

namespace py = pybind11;
using namespace gatewire;
using Rows = std::vector<std::vector<double>>;

namespace {

// Python objects cross the boundary as JSON text so the strict C++ readers
// do all of the validation.
nlohmann::json to_cjson(const py::object& obj) {
  const std::string text = py::module_::import("json").attr("dumps")(obj).cast<std::string>();
  return nlohmann::json::parse(text);
}

py::object to_pyjson(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

Tensor rows_tensor(const Rows& rows) {
  if (rows.empty()) throw ArgumentError("expected at least one row");
  return Tensor::matrix(rows);
}

Rows tensor_rows(const Tensor& t) {
  Rows out(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) out[i].assign(t.row(i).begin(), t.row(i).end());
  return out;
}

ExitPoint parse_exit(const std::string& s) {
  if (s == "main") return ExitPoint::main();
  if (s.rfind("side", 0) == 0 && s.size() > 4) return ExitPoint::side(std::stoul(s.substr(4)));
  throw ArgumentError("exit must be 'main' or 'side<j>', got '" + s + "'");
}

CountMode parse_count_mode(const std::string& s) {
  if (s == "exact") return CountMode::exact;
  if (s == "weights_only") return CountMode::weights_only;
  throw ArgumentError("count_mode must be 'exact' or 'weights_only'");
}

BinScheme parse_bins(const std::string& s) {
  if (s == "paper") return BinScheme::paper;
  if (s == "full") return BinScheme::full;
  throw ArgumentError("bins must be 'paper' or 'full'");
}

py::dict row_dict(const SweepRow& r) {
  py::dict d;
  d["theta"] = r.theta;
  d["n"] = r.n;
  d["accuracy"] = r.accuracy;
  d["early_exit_fraction"] = r.early_exit_fraction;
  d["avg_params"] = r.avg_params;
  d["side_acc_exited"] = r.side_acc_exited;
  d["main_acc_forwarded"] = r.main_acc_forwarded;
  return d;
}

py::dict report_dict(const CalibrationReport& rep) {
  py::list bins;
  for (const auto& b : rep.bins) {
    py::dict d;
    d["lower"] = b.lower;
    d["upper"] = b.upper;
    d["n"] = b.n;
    d["mean_confidence"] = b.mean_confidence;
    d["accuracy"] = b.accuracy;
    bins.append(d);
  }
  py::dict d;
  d["ece"] = rep.ece;
  d["total_n"] = rep.total_n;
  d["bins"] = bins;
  d["reliability_csv"] = rep.reliability_csv();
  return d;
}

ExperimentConfig experiment_from(const py::object& config) {
  if (config.is_none()) return desk_scale_experiment();
  RunConfig rc = RunConfig::from_json(to_cjson(config));
  rc.validate();
  return rc.experiment;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Confidence-gated early-exit networks";

  auto& base_exc = py::register_exception<Error>(m, "GatewireError", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", base_exc.ptr());

  m.def("softmax", [](const Rows& rows) { return tensor_rows(softmax(rows_tensor(rows))); }, py::arg("logits"));
  m.def("derive_seed", &derive_seed, py::arg("seed"), py::arg("stream"), py::arg("index") = 0);

  py::class_<SyntheticSpec>(m, "SyntheticSpec")
      .def(py::init<>())
      .def_readwrite("num_classes", &SyntheticSpec::num_classes)
      .def_readwrite("per_class_count", &SyntheticSpec::per_class_count)
      .def_readwrite("dim", &SyntheticSpec::dim)
      .def_readwrite("easy_fraction", &SyntheticSpec::easy_fraction)
      .def_readwrite("separation", &SyntheticSpec::separation)
      .def_readwrite("hard_separation", &SyntheticSpec::hard_separation)
      .def_readwrite("hard_spread", &SyntheticSpec::hard_spread)
      .def_readwrite("sigma", &SyntheticSpec::sigma)
      .def_readwrite("seed", &SyntheticSpec::seed)
      .def("easy_classes", &SyntheticSpec::easy_classes)
      .def("validate", &SyntheticSpec::validate);

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("dim", &Dataset::dim)
      .def_readonly("num_classes", &Dataset::num_classes)
      .def_readonly("labels", &Dataset::labels)
      .def("__len__", &Dataset::size)
      .def("row", [](const Dataset& d, std::size_t i) {
        if (i >= d.size()) throw py::index_error("row out of range");
        auto r = d.row(i);
        return std::vector<double>(r.begin(), r.end());
      })
      .def("to_csv", &dataset_to_csv)
      .def_static("from_csv", &dataset_from_csv, py::arg("text"))
      .def("save", [](const Dataset& d, const std::filesystem::path& p) { save_csv(d, p); })
      .def_static("load", &load_csv, py::arg("path"))
      .def("__eq__", [](const Dataset& a, const Dataset& b) { return a == b; });

  m.def("gen_synthetic", &gen_synthetic, py::arg("spec"));

  py::class_<Splits>(m, "Splits")
      .def_readonly("train", &Splits::train)
      .def_readonly("val", &Splits::val)
      .def_readonly("test", &Splits::test)
      .def_readonly("raw_test", &Splits::raw_test);
  m.def(
      "split",
      [](const Dataset& d, std::array<double, 3> fractions, std::uint64_t seed) { return split(d, fractions, seed); },
      py::arg("dataset"), py::arg("fractions"), py::arg("seed"));

  py::class_<Model>(m, "Model")
      .def_static(
          "build",
          [](const py::object& spec, std::uint64_t seed) {
            NetworkSpec s = to_cjson(spec).get<NetworkSpec>();
            return Model::build(s, seed);
          },
          py::arg("spec"), py::arg("seed") = 0)
      .def_static("load", &load_checkpoint, py::arg("path"))
      .def("save", [](const Model& model, const std::filesystem::path& p) { save_checkpoint(model, p); })
      .def("to_bytes",
           [](const Model& model) {
             auto bytes = serialize_checkpoint(model);
             return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
           })
      .def_static("from_bytes",
                  [](const py::bytes& b) {
                    const std::string s = b;
                    return deserialize_checkpoint(
                        std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
                  })
      .def_property_readonly("spec", [](const Model& model) { return to_pyjson(nlohmann::json(model.spec())); })
      .def_property_readonly("num_blocks", &Model::num_blocks)
      .def_property_readonly("num_sidenets", &Model::num_sidenets)
      .def("parameter_names",
           [](const Model& model) {
             std::vector<std::string> names;
             for (const auto& p : model.parameters()) names.push_back(p.name);
             return names;
           })
      .def(
          "param_count",
          [](const Model& model, const std::string& exit, const std::string& mode) {
            return model.param_count(parse_exit(exit), parse_count_mode(mode));
          },
          py::arg("exit") = "main", py::arg("count_mode") = "exact")
      .def(
          "forward",
          [](const Model& model, const Rows& rows) {
            auto r = model.forward(rows_tensor(rows));
            py::dict d;
            d["main"] = tensor_rows(r.main_probs);
            py::list sides;
            for (const auto& s : r.side_probs) sides.append(tensor_rows(s));
            d["sides"] = sides;
            return d;
          },
          py::arg("rows"));

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_property(
          "mode", [](const TrainConfig& c) { return c.mode == TrainMode::frozen ? "frozen" : "joint"; },
          [](TrainConfig& c, const std::string& v) {
            if (v == "frozen") {
              c.mode = TrainMode::frozen;
            } else if (v == "joint") {
              c.mode = TrainMode::joint;
            } else {
              throw ConfigError("mode must be 'frozen' or 'joint'");
            }
          })
      .def_readwrite("alpha", &TrainConfig::alpha)
      .def_readwrite("lr_init", &TrainConfig::lr_init)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("plateau_patience", &TrainConfig::plateau_patience)
      .def_readwrite("decay_factor", &TrainConfig::decay_factor)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("sidenet_count", &TrainConfig::sidenet_count);

  m.def(
      "train",
      [](Model& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg) {
        return train(model, train_set, val_set, cfg).to_csv();
      },
      py::arg("model"), py::arg("train"), py::arg("val"), py::arg("config"),
      "Trains in place and returns the epoch log as CSV text.");

  m.def(
      "infer_batch",
      [](const Model& model, const Dataset& data, double theta, const std::string& mode) {
        GateConfig g{theta, parse_count_mode(mode)};
        g.validate();
        auto b = infer_batch(model, data, g);
        py::list rows;
        for (const auto& r : b.results) {
          py::dict d;
          d["predicted_class"] = r.predicted_class;
          d["source"] = r.source.str();
          d["confidence"] = r.confidence;
          d["params_used"] = r.params_used;
          rows.append(d);
        }
        py::dict d;
        d["results"] = rows;
        d["accuracy"] = b.accuracy;
        d["early_exit_fraction"] = b.early_exit_fraction;
        d["avg_params"] = b.avg_params;
        return d;
      },
      py::arg("model"), py::arg("data"), py::arg("theta") = 0.9, py::arg("count_mode") = "exact");

  m.def(
      "sweep",
      [](const Model& model, const Dataset& data, std::optional<std::vector<double>> thetas, const std::string& mode) {
        auto r = sweep(model, data, thetas.value_or(default_theta_grid()), parse_count_mode(mode));
        py::list rows;
        for (const auto& row : r.rows) rows.append(row_dict(row));
        py::dict d;
        d["rows"] = rows;
        d["side_only"] = row_dict(r.side_only);
        d["main_only"] = row_dict(r.main_only);
        d["csv"] = sweep_to_csv(r.rows);
        return d;
      },
      py::arg("model"), py::arg("data"), py::arg("thetas") = py::none(), py::arg("count_mode") = "exact");
  m.def("default_theta_grid", &default_theta_grid);

  m.def(
      "ece",
      [](const std::vector<double>& conf, const std::vector<bool>& correct, const std::string& bins) {
        if (conf.size() != correct.size()) throw ArgumentError("confidences and correct differ in length");
        std::vector<PredictionRecord> recs;
        for (std::size_t i = 0; i < conf.size(); ++i) recs.push_back({conf[i], correct[i]});
        return report_dict(calibration_report(recs, parse_bins(bins)));
      },
      py::arg("confidences"), py::arg("correct"), py::arg("bins") = "paper");
  m.def(
      "calibrate",
      [](const Model& model, const Dataset& data, const std::string& head, const std::string& bins) {
        return report_dict(calibration_report(model, data, HeadSelector::parse(head), parse_bins(bins)));
      },
      py::arg("model"), py::arg("data"), py::arg("head") = "main", py::arg("bins") = "paper");

  m.def(
      "run_experiment",
      [](const py::object& config, std::uint64_t seed) {
        auto run = run_experiment(experiment_from(config), seed);
        return py::make_tuple(std::move(run.model), run.splits, run.log.to_csv());
      },
      py::arg("config") = py::none(), py::arg("seed") = 0,
      "Returns (model, splits, log_csv). `config` is a run-config dict; None uses the desk defaults.");
  m.def(
      "compare",
      [](const py::object& config, const std::vector<std::uint64_t>& seeds) {
        return to_pyjson(compare_with_without(experiment_from(config), seeds).to_json());
      },
      py::arg("config") = py::none(), py::arg("seeds") = std::vector<std::uint64_t>{0});
  m.def("desk_scale_config", [] {
    RunConfig rc;
    return to_pyjson(rc.to_json());
  });
}
