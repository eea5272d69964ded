#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <array>
#include <string>
#include <vector>

#include "psym/altloss.hpp"
#include "psym/cli/commands.hpp"
#include "psym/cotrain.hpp"
#include "psym/errors.hpp"
#include "psym/eval.hpp"
#include "psym/gmm.hpp"
#include "psym/synthdata.hpp"

namespace py = pybind11;
using namespace psym;

PYBIND11_MODULE(_psym, m) {
  m.doc() = "Bindings for the psym C++ core";

  auto error = py::register_exception<Error>(m, "PsymError");
  py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
  auto data_error = py::register_exception<DataError>(m, "DataError", error.ptr());
  py::register_exception<UndefinedMetricError>(m, "UndefinedMetricError", data_error.ptr());
  py::register_exception<NumericError>(m, "NumericError", error.ptr());

  py::class_<gmm::GmmParams>(m, "GmmParams")
      .def(py::init<>())
      .def(py::init([](double wl, double wh, double ml, double mh, double vl, double vh) {
             return gmm::GmmParams{wl, wh, ml, mh, vl, vh};
           }),
           py::arg("weight_low"), py::arg("weight_high"), py::arg("mean_low"), py::arg("mean_high"),
           py::arg("var_low"), py::arg("var_high"))
      .def_readwrite("weight_low", &gmm::GmmParams::weight_low)
      .def_readwrite("weight_high", &gmm::GmmParams::weight_high)
      .def_readwrite("mean_low", &gmm::GmmParams::mean_low)
      .def_readwrite("mean_high", &gmm::GmmParams::mean_high)
      .def_readwrite("var_low", &gmm::GmmParams::var_low)
      .def_readwrite("var_high", &gmm::GmmParams::var_high)
      .def("__repr__", [](const gmm::GmmParams& p) {
        return "GmmParams(weights=(" + std::to_string(p.weight_low) + ", " + std::to_string(p.weight_high) +
               "), means=(" + std::to_string(p.mean_low) + ", " + std::to_string(p.mean_high) + "))";
      });

  py::class_<gmm::FitResult>(m, "FitResult")
      .def_readonly("params", &gmm::FitResult::params)
      .def_readonly("log_likelihood", &gmm::FitResult::log_likelihood)
      .def_readonly("iterations", &gmm::FitResult::iterations)
      .def_readonly("converged", &gmm::FitResult::converged);

  m.def(
      "fit_gmm",
      [](const std::vector<double>& values, std::size_t max_iters, double tol) {
        return gmm::fit(values, gmm::FitOptions{max_iters, tol});
      },
      py::arg("values"), py::arg("max_iters") = 200, py::arg("tol") = 1e-6);
  m.def("posterior_abnormal", &gmm::posterior_abnormal, py::arg("params"), py::arg("x"));

  m.def(
      "auc", [](const std::vector<double>& s, const std::vector<int>& y) { return eval::auc(s, y); },
      py::arg("scores"), py::arg("labels"));
  m.def(
      "average_auc_over_cutoffs",
      [](const std::vector<double>& scores, const std::vector<double>& areas, std::size_t n) {
        const auto r = eval::average_auc_over_cutoffs(scores, areas, n);
        return py::dict(py::arg("mean_auc") = r.mean_auc, py::arg("cutoffs") = r.cutoffs, py::arg("aucs") = r.aucs,
                        py::arg("evaluated") = r.evaluated, py::arg("skipped") = r.skipped);
      },
      py::arg("scores"), py::arg("areas"), py::arg("n_cutoffs") = eval::kDefaultCutoffs);

  m.def(
      "abnormal_area",
      [](std::array<int, 4> patch, std::array<int, 4> roi) {
        return synth::abnormal_area({patch[0], patch[1], patch[2], patch[3]}, {roi[0], roi[1], roi[2], roi[3]});
      },
      py::arg("patch"), py::arg("roi"), "Boxes are (x_min, x_max, y_min, y_max), half-open.");

  m.def("soft_bce_loss", &cotrain::soft_bce_loss, py::arg("P"), py::arg("q"));
  m.def(
      "cross_losses",
      [](double P1, double P2, double q1, double q2) {
        const auto r = cotrain::cross_losses(P1, P2, q1, q2);
        return py::make_tuple(r.L1, r.L2, r.L);
      },
      py::arg("P1"), py::arg("P2"), py::arg("q1"), py::arg("q2"));
  m.def(
      "soft_triplet_loss",
      [](double P, double D, double margin) { return altloss::soft_triplet_loss(P, D, {margin}); }, py::arg("P"),
      py::arg("D"), py::arg("margin") = 1.0);
  m.def(
      "ssl_mix_loss",
      [](double P, std::array<double, 6> g) {
        return altloss::ssl_mix_loss(P, {g[0], g[1], g[2], g[3], g[4], g[5]});
      },
      py::arg("P"), py::arg("grid"), "grid is (l11_12, l21_22, l11_21, l11_22, l12_21, l12_22).");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<std::string> full{"psym"};
        full.insert(full.end(), args.begin(), args.end());
        std::vector<const char*> argv;
        for (const auto& a : full) argv.push_back(a.c_str());
        py::gil_scoped_release release;
        return cli::run_cli(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"), "Runs the psym command line with the given arguments and returns its exit code.");
}
