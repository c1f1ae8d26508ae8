#include <sstream>

#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "popmix/cli.hpp"
#include "popmix/disorder.hpp"
#include "popmix/green.hpp"
#include "popmix/meanfield.hpp"
#include "popmix/observables.hpp"
#include "popmix/qmcw.hpp"

namespace py = pybind11;
using namespace popmix;

namespace {

const LevelScheme& scheme() {
  static const LevelScheme s = LevelScheme::half_to_three_halves();
  return s;
}

DriveParams drive(double omega, double delta, double minus_over_plus) {
  return DriveParams::dual(omega, Complex(minus_over_plus, 0.0), delta);
}

py::dict record_dict(const ResultRecord& r) {
  py::dict d;
  d["p1"] = r.p1;
  d["p2"] = r.p2;
  d["excited"] = r.excited;
  d["ratio"] = r.ratio ? py::cast(*r.ratio) : py::none();
  d["p1_per_atom"] = r.p1_per_atom;
  if (r.p1_error) d["p1_err"] = *r.p1_error;
  if (r.p2_error) d["p2_err"] = *r.p2_error;
  return d;
}

}  // namespace

PYBIND11_MODULE(_popmix, m) {
  m.doc() = "Mean-field, trajectory and exact steady states of driven atom chains";
  m.attr("__version__") = POPMIX_VERSION;

  m.def("level_scheme", [] {
    py::list out;
    for (const auto& t : scheme().transitions()) {
      out.append(py::make_tuple(t.ground, t.excited, t.q, t.cg));
    }
    return out;
  }, "Transitions (ground, excited, q, cg) of the J=1/2 -> 3/2 scheme, level indices 0-based.");

  m.def("linear_chain", [](int n, double d) {
    const auto g = linear_chain(n, d);
    Eigen::MatrixXd pos(n, 3);
    for (int j = 0; j < n; ++j) pos.row(j) = g.position(j).transpose();
    return pos;
  }, py::arg("n"), py::arg("d"), "Atom positions (n x 3) in wavelengths.");

  m.def("green_tensor", [](const Vec3& a, const Vec3& b) { return Mat3c(green_tensor(a, b)); },
        py::arg("r_j"), py::arg("r_l"), "Free-space dyadic Green tensor (lambda = 1).");

  m.def("coupling_matrices", [](int n, double d, const std::string& on_site) {
    const auto mode = on_site == "per-transition" ? OnSiteDecay::PerTransition
                                                  : OnSiteDecay::PolarizationChannels;
    const auto c = coupling_matrices(linear_chain(n, d), scheme(), mode);
    py::dict out;
    out["coherent"] = c.coherent;
    out["dissipative"] = c.dissipative;
    return out;
  }, py::arg("n"), py::arg("d"), py::arg("on_site") = "polarization");

  m.def("mf_steady_state", [](int n, double d, double omega, double delta, double minus_over_plus,
                              bool check_uniqueness) {
    MeanFieldOptions o;
    o.check_uniqueness = check_uniqueness;
    SteadyStateReport rep;
    {
      py::gil_scoped_release release;
      rep = mf_steady_state(linear_chain(n, d), scheme(), drive(omega, delta, minus_over_plus), o);
    }
    auto out = record_dict(populations(rep.state, scheme()));
    out["converged"] = rep.converged;
    out["iterations"] = rep.iterations;
    out["residual"] = rep.residual;
    out["method"] = rep.method;
    out["rho"] = rep.state.rho;
    if (rep.uniqueness_gap) out["uniqueness_gap"] = *rep.uniqueness_gap;
    return out;
  }, py::arg("n"), py::arg("d"), py::arg("omega") = 0.01, py::arg("delta") = 0.0,
     py::arg("minus_over_plus") = 0.0, py::arg("check_uniqueness") = false);

  m.def("identical_atom_sweep", [](std::vector<std::int64_t> ns, double d, double omega) {
    std::vector<IdenticalAtomResult> rs;
    {
      py::gil_scoped_release release;
      rs = identical_atom_sweep(ns, d, scheme(), drive(omega, 0.0, 0.0));
    }
    py::list out;
    for (const auto& r : rs) {
      py::dict e;
      e["n"] = r.n;
      e["p1"] = r.p1;
      e["p2"] = r.p2;
      e["ratio"] = r.ratio;
      e["converged"] = r.converged;
      out.append(e);
    }
    return out;
  }, py::arg("ns"), py::arg("d"), py::arg("omega") = 0.01);

  m.def("exact_master_equation", [](int n, double d, double omega, double delta) {
    ExactResult r;
    {
      py::gil_scoped_release release;
      r = exact_master_equation(coupling_matrices(linear_chain(n, d), scheme()), scheme(),
                                drive(omega, delta, 0.0));
    }
    py::dict out;
    out["p1"] = r.p1;
    out["p2"] = r.p2;
    out["populations"] = r.populations;
    out["residual"] = r.residual;
    out["unique"] = r.unique;
    return out;
  }, py::arg("n"), py::arg("d"), py::arg("omega") = 0.01, py::arg("delta") = 0.0);

  m.def("qmcw_ensemble", [](int n, double d, int max_exc, int n_traj, std::uint64_t seed,
                            double t_final, double omega) {
    EnsembleResult ens;
    std::size_t dim = 0;
    {
      py::gil_scoped_release release;
      const TrajectoryEngine engine(coupling_matrices(linear_chain(n, d), scheme()), scheme(),
                                    drive(omega, 0.0, 0.0), max_exc);
      dim = engine.basis().dim();
      TrajectoryOptions o;
      o.t_final = t_final;
      ens = run_ensemble(engine, n_traj, seed, o);
    }
    auto out = record_dict(populations(ens));
    out["dim"] = dim;
    std::vector<double> p1s;
    for (const auto& t : ens.trajectories) p1s.push_back(t.p1);
    out["p1_per_traj"] = p1s;
    return out;
  }, py::arg("n"), py::arg("d"), py::arg("max_exc") = 1, py::arg("n_traj") = 16,
     py::arg("seed") = 1, py::arg("t_final") = 1.0e5, py::arg("omega") = 0.01);

  m.def("disorder_average", [](int n, double eps, int n_realizations, std::uint64_t seed,
                               double base_spacing) {
    DisorderSpec spec;
    spec.base_spacing = base_spacing;
    spec.strength = eps;
    spec.n_realizations = n_realizations;
    spec.seed = seed;
    DisorderSweepResult r;
    {
      py::gil_scoped_release release;
      r = disorder_average(n, spec, scheme(), drive(0.01, 0.0, 0.0));
    }
    py::dict out;
    out["mean"] = r.mean;
    out["std_dev"] = r.std_dev;
    out["std_error"] = r.std_error;
    out["n_failed"] = r.n_failed;
    out["failed"] = r.failed;
    out["p1_values"] = r.p1_values();
    return out;
  }, py::arg("n"), py::arg("eps"), py::arg("n_realizations") = 500, py::arg("seed") = 0,
     py::arg("base_spacing") = 2.0);

  m.def("far_field_map", [](int n, double d, int n_phi, int n_theta) {
    FarFieldMap map;
    {
      py::gil_scoped_release release;
      const auto geometry = linear_chain(n, d);
      const auto rep = mf_steady_state(geometry, scheme(), drive(0.01, 0.0, 0.0));
      map = far_field_map(coherences(rep.state, scheme()), geometry, scheme(), n_phi, n_theta);
    }
    return py::make_tuple(map.theta, map.phi, Eigen::MatrixXd(map.intensity));
  }, py::arg("n"), py::arg("d"), py::arg("n_phi") = 361, py::arg("n_theta") = 181,
     "Mean-field far-field intensity map: (theta, phi, I[theta, phi]).");

  m.def("axial_field_series", &axial_field_series, py::arg("d"), py::arg("n"));
  m.def("axial_field_sum", &axial_field_sum, py::arg("d"), py::arg("n"));

  m.def("run_config", [](const std::string& config_json, bool resume) {
    const auto config = cli::config_from_json(nlohmann::json::parse(config_json));
    std::ostringstream log;
    cli::RunSummary s;
    {
      py::gil_scoped_release release;
      s = cli::run(config, resume, log);
    }
    py::dict out;
    out["computed"] = s.computed;
    out["skipped"] = s.skipped;
    out["flagged"] = s.flagged;
    out["log"] = log.str();
    return out;
  }, py::arg("config_json"), py::arg("resume") = false,
     "Runs a JSON configuration exactly like the command-line tool.");

  py::register_exception<cli::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<cli::ResumeMismatch>(m, "ResumeMismatch", PyExc_RuntimeError);
  py::register_exception<CapacityError>(m, "CapacityError", PyExc_MemoryError);
}
