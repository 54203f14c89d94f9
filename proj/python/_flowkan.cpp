#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "flowkan/commands.hpp"
#include "flowkan/rwkv.hpp"
#include "flowkan/selfcheck.hpp"

namespace py = pybind11;
using namespace flowkan;
using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

namespace {

Tensor<double> to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<double>(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor<double>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

RunConfig parse_config(const std::string& text) {
  auto cfg = RunConfig::from_json(text.empty() ? nlohmann::json::object() : nlohmann::json::parse(text));
  cfg.finalize();
  return cfg;
}

py::dict check_row(const check::CheckRow& r) {
  py::dict d;
  d["suite"] = r.suite;
  d["max_error"] = r.max_error;
  d["tolerance"] = r.tolerance;
  d["seconds"] = r.seconds;
  d["pass"] = r.pass;
  d["detail"] = r.detail;
  return d;
}

}  // namespace

PYBIND11_MODULE(_flowkan, m) {
  m.doc() = "Flow-matching RWKV/GroupKAN policy core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def("wkv_scan",
        [](const Array& k, const Array& v, const Array& w, const Array& u) {
          return to_array(rwkv::wkv_forward_scan(to_tensor(k), to_tensor(v), to_tensor(w), to_tensor(u)));
        },
        py::arg("k"), py::arg("v"), py::arg("w"), py::arg("u"), "Causal WKV over [B, T, C] with decay w >= 0 and bonus u.");
  m.def("wkv_bidirectional",
        [](const Array& k, const Array& v, const Array& w, const Array& u, bool dedup) {
          return to_array(rwkv::wkv_bidirectional(to_tensor(k), to_tensor(v), to_tensor(w), to_tensor(u), dedup));
        },
        py::arg("k"), py::arg("v"), py::arg("w"), py::arg("u"), py::arg("dedup") = false);

  m.def("bspline_basis",
        [](double x, std::size_t intervals, std::size_t order, double extent) {
          kan::SplineGrid g{intervals, order, extent};
          kan::validate_grid(g);
          return kan::bspline_basis(g, x);
        },
        py::arg("x"), py::arg("intervals") = 5, py::arg("order") = 3, py::arg("extent") = 1.1);

  m.def("default_config", [] { return RunConfig{}.to_json().dump(); }, "Default run configuration as JSON text.");
  m.def("normalize_config", [](const std::string& text) { return parse_config(text).to_json().dump(); },
        py::arg("config_json"), "Validates a partial config and returns it with defaults filled in.");
  m.def("config_hash", [](const std::string& text) { return config_hash(parse_config(text)); }, py::arg("config_json"));

  m.def("count_params", [](const std::string& text) { return backbone::count_params(parse_config(text).model.backbone); },
        py::arg("config_json") = "");
  m.def("count_stage_spline_coefficients",
        [](const std::string& text, std::size_t stage) {
          return backbone::count_stage_spline_coefficients(parse_config(text).model.backbone, stage);
        },
        py::arg("config_json"), py::arg("stage"));

  m.def("gen_demos",
        [](const std::string& text, std::size_t count, const std::filesystem::path& out) {
          return cmd::gen_demos(parse_config(text), count, out).size();
        },
        py::arg("config_json"), py::arg("count"), py::arg("out"), py::call_guard<py::gil_scoped_release>());

  m.def("train",
        [](const std::string& text, const std::filesystem::path& corpus, const std::filesystem::path& out_dir,
           std::optional<std::filesystem::path> resume) {
          cmd::TrainResult r;
          {
            py::gil_scoped_release release;
            r = cmd::train(parse_config(text), corpus, out_dir, resume);
          }
          py::dict d;
          d["checkpoint"] = r.checkpoint.string();
          d["metrics"] = r.metrics.string();
          d["steps"] = r.steps;
          d["first_total"] = r.first_total;
          d["last_total"] = r.last_total;
          return d;
        },
        py::arg("config_json"), py::arg("corpus"), py::arg("out_dir"), py::arg("resume") = std::nullopt);

  m.def("evaluate",
        [](const std::filesystem::path& ckpt, const std::string& eval_json, std::size_t n_steps) {
          std::optional<env::EvalConfig> ec;
          if (!eval_json.empty()) {
            auto j = nlohmann::json::object();
            j["eval"] = nlohmann::json::parse(eval_json);
            ec = RunConfig::from_json(j).eval;
          }
          py::gil_scoped_release release;
          return cmd::evaluate(ckpt, ec, n_steps).to_json().dump();
        },
        py::arg("checkpoint"), py::arg("eval_json") = "", py::arg("n_steps") = 0,
        "Evaluation report as JSON text; eval_json overrides the stored eval section.");

  m.def("bench",
        [](std::optional<std::filesystem::path> ckpt, std::vector<std::size_t> steps, std::size_t repeats,
           std::uint64_t seed) {
          std::vector<cmd::BenchRow> rows;
          {
            py::gil_scoped_release release;
            rows = cmd::bench(ckpt, steps, repeats, seed);
          }
          py::list out;
          for (const auto& r : rows) {
            py::dict d;
            d["mode"] = r.mode;
            d["n_steps"] = r.n_steps;
            d["median_ms"] = r.median_ms;
            d["p95_ms"] = r.p95_ms;
            d["nfe"] = r.nfe;
            out.append(d);
          }
          return out;
        },
        py::arg("checkpoint") = std::nullopt, py::arg("steps") = std::vector<std::size_t>{1, 10},
        py::arg("repeats") = 20, py::arg("seed") = 0);

  m.def("self_check",
        [](std::uint64_t seed) {
          std::vector<check::CheckRow> rows;
          {
            py::gil_scoped_release release;
            rows = check::run_all(seed);
          }
          py::list out;
          for (const auto& r : rows) out.append(check_row(r));
          return out;
        },
        py::arg("seed") = 0);
  m.def("wkv_oracle", [](std::uint64_t seed) { return check_row(check::wkv_oracle(seed)); }, py::arg("seed") = 0);
  m.def("spline_oracle", [](std::uint64_t seed) { return check_row(check::spline_oracle(seed)); }, py::arg("seed") = 0);
}
