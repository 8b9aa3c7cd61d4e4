#include "sechyp/cli.hpp"
#include "sechyp/equilibria.hpp"
#include "sechyp/flow.hpp"
#include "sechyp/splitting.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

namespace py = pybind11;
using namespace sechyp;
using nlohmann::json;

namespace {

// JSON crosses the boundary as text; the Python side parses it.
std::string dump(const json& j) { return j.dump(); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Numerical probes for singular-hyperbolic flows";
  m.attr("__version__") = kToolVersion;

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InputError>(m, "InputError", base.ptr());
  py::register_exception<RangeError>(m, "RangeError", base.ptr());
  py::register_exception<PreconditionError>(m, "PreconditionError", base.ptr());
  auto numeric = py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<IntegrationFailure>(m, "IntegrationFailure", numeric.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", numeric.ptr());
  py::register_exception<InsufficientDataError>(m, "InsufficientDataError", base.ptr());

  py::class_<VectorFieldModel>(m, "VectorFieldModel")
      .def_static("lorenz", &VectorFieldModel::lorenz, py::arg("sigma") = 10.0, py::arg("rho") = 28.0,
                  py::arg("beta") = 8.0 / 3.0)
      .def_static("linear", &VectorFieldModel::linear, py::arg("matrix"))
      .def_static("diagonal", &VectorFieldModel::diagonal, py::arg("rates"))
      .def_static("center_contraction", &VectorFieldModel::center_contraction, py::arg("omega") = 1.0,
                  py::arg("kappa") = 1.0)
      .def_static("from_json", [](const std::string& s) { return VectorFieldModel::from_json(json::parse(s)); })
      .def("to_json", [](const VectorFieldModel& self) { return dump(self.to_json()); })
      .def_property_readonly("dim", &VectorFieldModel::dim)
      .def_property_readonly("id", &VectorFieldModel::id)
      .def_property_readonly("params", &VectorFieldModel::params)
      .def("field", py::overload_cast<const Vec&>(&VectorFieldModel::field, py::const_), py::arg("x"))
      .def("jacobian", py::overload_cast<const Vec&>(&VectorFieldModel::jacobian, py::const_), py::arg("x"))
      .def("divergence", &VectorFieldModel::divergence, py::arg("x"))
      .def("negated", &VectorFieldModel::negated)
      .def("__repr__", [](const VectorFieldModel& self) { return "<VectorFieldModel " + self.id() + ">"; });

  m.def("flow_point", &flow_point, py::arg("model"), py::arg("x0"), py::arg("T"), py::arg("tol") = 1e-9,
        py::call_guard<py::gil_scoped_release>());

  m.def(
      "integrate",
      [](const VectorFieldModel& model, const Vec& x0, double t0, double t1, double tol) {
        Trajectory traj = [&] {
          py::gil_scoped_release release;
          return integrate(model, x0, t0, t1, tol);
        }();
        const auto& nodes = traj.nodes();
        Vec t(static_cast<Eigen::Index>(nodes.size()));
        Mat x(static_cast<Eigen::Index>(nodes.size()), traj.dim());
        for (std::size_t i = 0; i < nodes.size(); ++i) {
          t[static_cast<Eigen::Index>(i)] = nodes[i].t;
          x.row(static_cast<Eigen::Index>(i)) = nodes[i].x.transpose();
        }
        return py::make_tuple(t, x);
      },
      py::arg("model"), py::arg("x0"), py::arg("t0"), py::arg("t1"), py::arg("tol") = 1e-9,
      "Accepted integrator steps as (times, states).");

  m.def(
      "classify_equilibrium",
      [](const VectorFieldModel& model, const Vec& sigma, int d_s) {
        return dump(to_json(classify_equilibrium(model, sigma, d_s)));
      },
      py::arg("model"), py::arg("sigma"), py::arg("d_s") = 1);

  m.def(
      "lyapunov_spectrum",
      [](const VectorFieldModel& model, const Vec& x0, double T, double transient, double tol) {
        LyapunovOptions o;
        o.transient = transient;
        o.tol = tol;
        py::gil_scoped_release release;
        return dump(to_json(lyapunov_spectrum(model, x0, T, o)));
      },
      py::arg("model"), py::arg("x0"), py::arg("T"), py::arg("transient") = 0.0, py::arg("tol") = 1e-9);

  m.def("command_names", &command_names);

  m.def(
      "run_command",
      [](const std::string& command, const std::string& config) {
        const Config cfg = parse_config(json::parse(config));
        CommandResult r = [&] {
          py::gil_scoped_release release;
          return run_command(command, cfg);
        }();
        py::dict artifacts;
        for (const auto& a : r.artifacts) artifacts[py::str(a.name)] = py::str(a.content);
        return py::make_tuple(r.passed, dump(r.report), artifacts);
      },
      py::arg("command"), py::arg("config"));

  m.def(
      "cli_main",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "sechyp");
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        py::gil_scoped_release release;
        return cli_main(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"));
}
