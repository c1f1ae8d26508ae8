#include "popmix/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "popmix/disorder.hpp"
#include "popmix/green.hpp"
#include "popmix/meanfield.hpp"
#include "popmix/qmcw.hpp"
#include "popmix/rng.hpp"

namespace popmix::cli {

using nlohmann::json;

namespace {

constexpr const char* kVersion = POPMIX_VERSION;

void reject_unknown(const json& j, const std::string& section, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(section + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; })) {
      throw ConfigError(section + "." + k + ": unknown key");
    }
  }
}

template <class T>
T get_field(const json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::vector<double> real_grid_from_json(const json& j, const std::string& path) {
  if (j.is_number()) return {j.get<double>()};
  if (j.is_string()) {
    try {
      return parse_real_grid(j.get<std::string>());
    } catch (const ConfigError& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }
  if (j.is_array()) {
    std::vector<double> out;
    for (const auto& v : j) out.push_back(get_field<double>(v, path));
    return out;
  }
  if (j.is_object()) {
    if (j.contains("start")) {
      reject_unknown(j, path, {"start", "stop", "step"});
      const double a = get_field<double>(j.at("start"), path + ".start");
      const double b = get_field<double>(j.value("stop", json(a)), path + ".stop");
      const double s = get_field<double>(j.value("step", json(1.0)), path + ".step");
      std::ostringstream txt;
      txt << std::setprecision(17) << a << ':' << b << ':' << s;
      return parse_real_grid(txt.str());
    }
    if (j.contains("log10_start")) {
      reject_unknown(j, path, {"log10_start", "log10_stop", "count"});
      const double a = get_field<double>(j.at("log10_start"), path + ".log10_start");
      const double b = get_field<double>(j.at("log10_stop"), path + ".log10_stop");
      const int c = get_field<int>(j.at("count"), path + ".count");
      if (c < 1) throw ConfigError(path + ".count: must be >= 1");
      std::vector<double> out;
      for (int i = 0; i < c; ++i) out.push_back(std::pow(10.0, c == 1 ? a : a + (b - a) * i / (c - 1)));
      return out;
    }
  }
  throw ConfigError(path + ": expected a number, list, \"a:b:step\" string or range object");
}

std::vector<std::int64_t> int_grid_from_json(const json& j, const std::string& path) {
  std::vector<std::int64_t> out;
  for (double v : real_grid_from_json(j, path)) {
    const auto r = static_cast<std::int64_t>(std::llround(v));
    if (out.empty() || out.back() != r) out.push_back(r);
  }
  return out;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string stem_of(const std::string& path) {
  const auto p = std::filesystem::path(path);
  return (p.parent_path() / p.stem()).string();
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

MeanFieldOptions mf_options(const RunConfig& c) {
  MeanFieldOptions o;
  o.tolerance = c.mf_tolerance;
  o.max_iterations = c.mf_max_iterations;
  o.check_uniqueness = c.check_uniqueness;
  return o;
}

OnSiteDecay on_site_mode(const RunConfig& c) {
  return c.on_site == "per-transition" ? OnSiteDecay::PerTransition
                                       : OnSiteDecay::PolarizationChannels;
}

DriveParams drive_of(const RunConfig& c) {
  return DriveParams::dual(c.omega, Complex(c.minus_over_plus, 0.0), c.delta);
}

ResultRecord base_record(const RunConfig& c, const GridPoint& p) {
  ResultRecord r;
  r.method = to_string(c.method);
  r.n_atoms = static_cast<int>(p.n);
  r.d = p.d;
  r.rabi = c.omega;
  r.detuning = c.delta;
  r.max_excitations = c.method == Method::Qmcw ? p.max_exc : 0;
  r.seed = p.seed;
  r.disorder_eps = p.eps;
  return r;
}

void copy_populations(ResultRecord& dst, const ResultRecord& src) {
  dst.p1 = src.p1;
  dst.p2 = src.p2;
  dst.excited = src.excited;
  dst.ratio = src.ratio;
  dst.p1_per_atom = src.p1_per_atom;
  dst.p1_error = src.p1_error;
  dst.p2_error = src.p2_error;
  dst.excited_error = src.excited_error;
}

struct Context {
  const RunConfig& config;
  LevelScheme scheme = LevelScheme::half_to_three_halves();
  std::map<double, std::map<std::int64_t, LatticeSum>> lattice;  // identical-atom sums per d
};

ResultRecord compute_meanfield(const Context& ctx, const GridPoint& p) {
  const auto& c = ctx.config;
  ResultRecord r = base_record(c, p);
  const auto drive = drive_of(c);
  if (c.disorder) {
    DisorderSpec spec;
    spec.base_spacing = p.d;
    spec.strength = p.eps;
    spec.n_realizations = c.disorder->n_realizations;
    spec.seed = p.seed;
    const auto sweep = disorder_average(static_cast<int>(p.n), spec, ctx.scheme, drive, mf_options(c));
    r.p1 = sweep.mean;
    r.p2 = sweep.mean_p2;
    r.excited = sweep.mean_excited;
    if (r.p2 != 0.0) r.ratio = r.p1 / r.p2;
    r.converged = !sweep.failed;
    r.extra["std_dev"] = sweep.std_dev;
    r.extra["std_error"] = sweep.std_error;
    r.extra["n_realizations"] = spec.n_realizations;
    r.extra["n_failed"] = sweep.n_failed;
    r.extra["realizations"] = sweep.to_json().at("realizations");
    return r;
  }
  const auto geometry = linear_chain(static_cast<int>(p.n), p.d);
  const auto couplings = coupling_matrices(geometry, ctx.scheme, on_site_mode(c));
  const auto report = mf_steady_state(couplings, ctx.scheme, drive, mf_options(c));
  copy_populations(r, populations(report.state, ctx.scheme));
  r.converged = report.converged;
  r.extra["iterations"] = report.iterations;
  r.extra["residual"] = report.residual;
  r.extra["solver"] = report.method;
  if (!report.diagnostics.empty()) r.extra["diagnostics"] = report.diagnostics;
  if (report.uniqueness_gap) r.extra["uniqueness_gap"] = *report.uniqueness_gap;
  const CVec s = coherences(report.state, ctx.scheme);
  const auto field = scattered_field_at_atoms(s, geometry, ctx.scheme, drive);
  const auto& mid = field.scattered[static_cast<std::size_t>(p.n / 2)];
  r.extra["e_minus_center"] = std::abs(mid.minus);
  r.extra["e_plus_center"] = std::abs(mid.plus);
  if (c.far_field) {
    auto map = far_field_map(s, geometry, ctx.scheme, c.far_field->n_phi, c.far_field->n_theta);
    r.extra["intensity_max"] = map.max();
    r.extra["lobe_solid_angle"] = lobe_solid_angle(map);
    r.extra["mirror_asymmetry"] = map.mirror_asymmetry();
    r.extra["radiated_power"] = radiated_power(s, couplings);
    if (c.far_field->reference_max) map.normalize(*c.far_field->reference_max);
    const std::string file = stem_of(c.output) + ".farfield." + std::to_string(p.index) + ".txt";
    std::ofstream os(file);
    map.write_table(os);
    if (!os) throw std::runtime_error("cannot write " + file);
    r.extra["far_field_file"] = std::filesystem::path(file).filename().string();
  }
  return r;
}

ResultRecord compute_qmcw(const Context& ctx, const GridPoint& p, std::ostream& log) {
  const auto& c = ctx.config;
  ResultRecord r = base_record(c, p);
  const auto couplings =
      coupling_matrices(linear_chain(static_cast<int>(p.n), p.d), ctx.scheme, on_site_mode(c));
  const TrajectoryEngine engine(couplings, ctx.scheme, drive_of(c), p.max_exc);
  log << "  basis dimension " << engine.basis().dim() << '\n';
  TrajectoryOptions opts;
  opts.t_final = c.t_final;
  opts.window_fraction = c.window_fraction;
  const auto ens = run_ensemble(engine, c.n_traj, p.seed, opts);
  copy_populations(r, populations(ens));
  r.extra["dim"] = engine.basis().dim();
  r.extra["n_traj"] = c.n_traj;
  r.extra["drift_sigma"] = ens.drift_sigma;
  double jumps = 0.0;
  for (const auto& t : ens.trajectories) jumps += static_cast<double>(t.jumps.size());
  r.extra["jumps_per_traj"] = jumps / c.n_traj;
  if (c.save_trajectories) {
    const std::string file = stem_of(c.output) + ".traj." + std::to_string(p.index) + ".jsonl";
    std::ofstream os(file);
    write_trajectory_batch(os, ens.trajectories);
    r.extra["trajectory_file"] = std::filesystem::path(file).filename().string();
  }
  return r;
}

ResultRecord compute_exact(const Context& ctx, const GridPoint& p) {
  const auto& c = ctx.config;
  ResultRecord r = base_record(c, p);
  const auto couplings =
      coupling_matrices(linear_chain(static_cast<int>(p.n), p.d), ctx.scheme, on_site_mode(c));
  const auto ex = exact_master_equation(couplings, ctx.scheme, drive_of(c));
  r.p1 = ex.p1;
  r.p2 = ex.p2;
  double total_ground = 0.0;
  for (const auto& pops : ex.populations) {
    r.p1_per_atom.push_back(pops[0]);
    total_ground += pops[0] + pops[static_cast<std::size_t>(ctx.scheme.stretched_ground())];
  }
  r.excited = 1.0 - total_ground / static_cast<double>(p.n);
  if (r.p2 != 0.0) r.ratio = r.p1 / r.p2;
  r.converged = ex.unique;
  r.extra["residual"] = ex.residual;
  r.extra["unique"] = ex.unique;
  if (!ex.diagnostics.empty()) r.extra["diagnostics"] = ex.diagnostics;
  return r;
}

ResultRecord compute_identical(const Context& ctx, const GridPoint& p) {
  const auto& c = ctx.config;
  ResultRecord r = base_record(c, p);
  const auto& sum = ctx.lattice.at(p.d).at(p.n);
  const auto res = identical_atom_steady_state(sum, p.d, ctx.scheme, drive_of(c), mf_options(c));
  r.p1 = res.p1;
  r.p2 = res.p2;
  r.excited = 1.0 - res.p1 - res.p2;
  if (res.p2 != 0.0) r.ratio = res.p1 / res.p2;
  r.converged = res.converged;
  r.extra["iterations"] = res.iterations;
  r.extra["residual"] = res.residual;
  return r;
}

json record_line(const ResultRecord& r, std::size_t index) {
  json j = r.to_json();
  j["type"] = "record";
  j["index"] = index;
  return j;
}

std::string format_csv_value(const json& v) {
  if (v.is_null()) return "";
  if (v.is_boolean()) return v.get<bool>() ? "1" : "0";
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_float()) {
    std::ostringstream os;
    os << std::setprecision(12) << v.get<double>();
    return os.str();
  }
  return v.dump();
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::MeanField: return "meanfield";
    case Method::Qmcw: return "qmcw";
    case Method::Exact: return "exact";
    case Method::IdenticalAtom: return "identical-atom";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  if (name == "meanfield" || name == "mf") return Method::MeanField;
  if (name == "qmcw") return Method::Qmcw;
  if (name == "exact") return Method::Exact;
  if (name == "identical-atom") return Method::IdenticalAtom;
  throw ConfigError("method: unknown value '" + name +
                    "' (expected meanfield, qmcw, exact or identical-atom)");
}

std::vector<double> parse_real_grid(const std::string& text) {
  std::vector<double> out;
  auto num = [&](const std::string& s) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &pos);
    } catch (const std::exception&) {
      throw ConfigError("not a number: '" + s + "'");
    }
    if (pos != s.size()) throw ConfigError("not a number: '" + s + "'");
    return v;
  };
  if (text.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    for (std::string part; std::getline(ss, part, ':');) parts.push_back(part);
    if (parts.size() != 3) throw ConfigError("range must be start:stop:step");
    const double a = num(parts[0]), b = num(parts[1]), s = num(parts[2]);
    if (!(s > 0.0) || b < a) throw ConfigError("range needs step > 0 and stop >= start");
    const auto count = static_cast<long>(std::floor((b - a) / s + 1e-9));
    for (long i = 0; i <= count; ++i) out.push_back(a + static_cast<double>(i) * s);
    return out;
  }
  std::stringstream ss(text);
  for (std::string part; std::getline(ss, part, ',');) {
    if (!part.empty()) out.push_back(num(part));
  }
  if (out.empty()) throw ConfigError("empty grid");
  return out;
}

std::vector<std::int64_t> parse_int_grid(const std::string& text) {
  std::vector<std::int64_t> out;
  for (double v : parse_real_grid(text)) {
    if (std::abs(v - std::round(v)) > 1e-9) throw ConfigError("not an integer: " + std::to_string(v));
    out.push_back(std::llround(v));
  }
  return out;
}

void RunConfig::validate() const {
  if (n.empty()) throw ConfigError("system.n: empty grid");
  if (d.empty()) throw ConfigError("system.d: empty grid");
  for (auto v : n) {
    if (v < 1) throw ConfigError("system.n: atom numbers must be >= 1");
    if (method != Method::IdenticalAtom && v > 100000) throw ConfigError("system.n: too many atoms for an explicit chain");
    if (method == Method::Exact && v > 3) throw ConfigError("system.n: exact method supports N <= 3");
  }
  for (double v : d) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("system.d: spacings must be positive");
  }
  if (!std::isfinite(omega) || omega < 0.0) throw ConfigError("drive.omega: must be >= 0");
  if (!std::isfinite(delta)) throw ConfigError("drive.delta: must be finite");
  if (!std::isfinite(minus_over_plus)) throw ConfigError("drive.minus_over_plus: must be finite");
  if (on_site != "polarization" && on_site != "per-transition") {
    throw ConfigError("system.on_site: expected 'polarization' or 'per-transition'");
  }
  if (max_exc.empty()) throw ConfigError("qmcw.max_exc: empty grid");
  for (int m : max_exc) {
    if (m < 1) throw ConfigError("qmcw.max_exc: must be >= 1");
  }
  if (n_traj < 2) throw ConfigError("qmcw.n_traj: need at least 2 trajectories");
  if (!(t_final > 0.0)) throw ConfigError("qmcw.t_final: must be positive");
  if (!(window_fraction > 0.0 && window_fraction < 1.0)) {
    throw ConfigError("qmcw.window_fraction: must be in (0, 1)");
  }
  if (!(mf_tolerance > 0.0)) throw ConfigError("meanfield.tolerance: must be positive");
  if (mf_max_iterations < 1) throw ConfigError("meanfield.max_iterations: must be >= 1");
  if (disorder) {
    if (method != Method::MeanField) throw ConfigError("disorder: only supported with method meanfield");
    if (disorder->eps.empty()) throw ConfigError("disorder.eps: empty grid");
    for (double e : disorder->eps) {
      if (!(e >= 0.0) || !std::isfinite(e)) throw ConfigError("disorder.eps: must be >= 0");
    }
    if (disorder->n_realizations < 1) throw ConfigError("disorder.n_realizations: must be >= 1");
    for (auto v : n) {
      if (v < 2) throw ConfigError("system.n: disordered chains need N >= 2");
    }
  }
  if (far_field) {
    if (method != Method::MeanField) throw ConfigError("far_field: only supported with method meanfield");
    if (disorder) throw ConfigError("far_field: not available for disorder sweeps");
    if (far_field->n_phi < 1) throw ConfigError("far_field.n_phi: must be >= 1");
    if (far_field->n_theta < 2) throw ConfigError("far_field.n_theta: must be >= 2");
    if (far_field->reference_max && !(*far_field->reference_max > 0.0)) {
      throw ConfigError("far_field.reference_max: must be positive");
    }
  }
  if (output.empty()) throw ConfigError("output: empty path");
}

json RunConfig::to_json() const {
  json j;
  j["method"] = to_string(method);
  j["seed"] = seed;
  j["system"] = {{"n", n}, {"d", d}, {"on_site", on_site}};
  j["drive"] = {{"omega", omega}, {"delta", delta}, {"minus_over_plus", minus_over_plus}};
  j["qmcw"] = {{"max_exc", max_exc},
               {"n_traj", n_traj},
               {"t_final", t_final},
               {"window_fraction", window_fraction},
               {"save_trajectories", save_trajectories}};
  j["meanfield"] = {{"tolerance", mf_tolerance},
                    {"max_iterations", mf_max_iterations},
                    {"check_uniqueness", check_uniqueness}};
  if (disorder) j["disorder"] = {{"eps", disorder->eps}, {"n_realizations", disorder->n_realizations}};
  if (far_field) {
    j["far_field"] = {{"n_phi", far_field->n_phi},
                      {"n_theta", far_field->n_theta},
                      {"reference_max", optional_json(far_field->reference_max)}};
  }
  return j;
}

std::string RunConfig::hash() const {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(to_json().dump());
  return os.str();
}

std::size_t RunConfig::grid_size() const {
  const std::size_t ne = disorder ? disorder->eps.size() : 1;
  const std::size_t nx = method == Method::Qmcw ? max_exc.size() : 1;
  return n.size() * d.size() * nx * ne;
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  reject_unknown(j, "config",
                 {"method", "seed", "output", "system", "drive", "qmcw", "meanfield", "disorder", "far_field"});
  if (j.contains("method")) c.method = parse_method(get_field<std::string>(j.at("method"), "method"));
  if (j.contains("seed")) c.seed = get_field<std::uint64_t>(j.at("seed"), "seed");
  if (j.contains("output")) c.output = get_field<std::string>(j.at("output"), "output");
  if (j.contains("system")) {
    const auto& s = j.at("system");
    reject_unknown(s, "system", {"n", "d", "on_site"});
    if (s.contains("n")) c.n = int_grid_from_json(s.at("n"), "system.n");
    if (s.contains("d")) c.d = real_grid_from_json(s.at("d"), "system.d");
    if (s.contains("on_site")) c.on_site = get_field<std::string>(s.at("on_site"), "system.on_site");
  }
  if (j.contains("drive")) {
    const auto& s = j.at("drive");
    reject_unknown(s, "drive", {"omega", "delta", "minus_over_plus"});
    if (s.contains("omega")) c.omega = get_field<double>(s.at("omega"), "drive.omega");
    if (s.contains("delta")) c.delta = get_field<double>(s.at("delta"), "drive.delta");
    if (s.contains("minus_over_plus")) {
      c.minus_over_plus = get_field<double>(s.at("minus_over_plus"), "drive.minus_over_plus");
    }
  }
  if (j.contains("qmcw")) {
    const auto& s = j.at("qmcw");
    reject_unknown(s, "qmcw", {"max_exc", "n_traj", "t_final", "window_fraction", "save_trajectories"});
    if (s.contains("max_exc")) {
      c.max_exc.clear();
      for (auto v : int_grid_from_json(s.at("max_exc"), "qmcw.max_exc")) c.max_exc.push_back(static_cast<int>(v));
    }
    if (s.contains("n_traj")) c.n_traj = get_field<int>(s.at("n_traj"), "qmcw.n_traj");
    if (s.contains("t_final")) c.t_final = get_field<double>(s.at("t_final"), "qmcw.t_final");
    if (s.contains("window_fraction")) {
      c.window_fraction = get_field<double>(s.at("window_fraction"), "qmcw.window_fraction");
    }
    if (s.contains("save_trajectories")) {
      c.save_trajectories = get_field<bool>(s.at("save_trajectories"), "qmcw.save_trajectories");
    }
  }
  if (j.contains("meanfield")) {
    const auto& s = j.at("meanfield");
    reject_unknown(s, "meanfield", {"tolerance", "max_iterations", "check_uniqueness"});
    if (s.contains("tolerance")) c.mf_tolerance = get_field<double>(s.at("tolerance"), "meanfield.tolerance");
    if (s.contains("max_iterations")) {
      c.mf_max_iterations = get_field<int>(s.at("max_iterations"), "meanfield.max_iterations");
    }
    if (s.contains("check_uniqueness")) {
      c.check_uniqueness = get_field<bool>(s.at("check_uniqueness"), "meanfield.check_uniqueness");
    }
  }
  if (j.contains("disorder") && !j.at("disorder").is_null()) {
    const auto& s = j.at("disorder");
    reject_unknown(s, "disorder", {"eps", "n_realizations"});
    DisorderConfig dc;
    if (s.contains("eps")) dc.eps = real_grid_from_json(s.at("eps"), "disorder.eps");
    if (s.contains("n_realizations")) {
      dc.n_realizations = get_field<int>(s.at("n_realizations"), "disorder.n_realizations");
    }
    c.disorder = dc;
  }
  if (j.contains("far_field") && !j.at("far_field").is_null()) {
    const auto& s = j.at("far_field");
    reject_unknown(s, "far_field", {"n_phi", "n_theta", "reference_max"});
    FarFieldConfig fc;
    if (s.contains("n_phi")) fc.n_phi = get_field<int>(s.at("n_phi"), "far_field.n_phi");
    if (s.contains("n_theta")) fc.n_theta = get_field<int>(s.at("n_theta"), "far_field.n_theta");
    if (s.contains("reference_max") && !s.at("reference_max").is_null()) {
      fc.reference_max = get_field<double>(s.at("reference_max"), "far_field.reference_max");
    }
    c.far_field = fc;
  }
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open '" + path + "'");
  json j;
  try {
    j = json::parse(is, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + std::string(e.what()));
  }
  return config_from_json(j);
}

std::vector<GridPoint> expand_grid(const RunConfig& config) {
  std::vector<GridPoint> out;
  const std::vector<int> exc = config.method == Method::Qmcw ? config.max_exc : std::vector<int>{0};
  const std::vector<double> eps = config.disorder ? config.disorder->eps : std::vector<double>{0.0};
  for (auto n : config.n) {
    for (double d : config.d) {
      for (int m : exc) {
        for (double e : eps) {
          GridPoint p;
          p.index = out.size();
          p.n = n;
          p.d = d;
          p.max_exc = m;
          p.eps = e;
          p.seed = derive_seed(config.seed, p.index);
          out.push_back(p);
        }
      }
    }
  }
  return out;
}

const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols{
      "index", "method", "n", "d", "omega", "delta", "max_exc", "disorder_eps", "seed",
      "p1", "p2", "excited", "ratio", "p1_err", "p2_err", "excited_err", "converged"};
  return cols;
}

std::string csv_path_for(const std::string& jsonl_path) { return stem_of(jsonl_path) + ".csv"; }

void write_csv(const std::string& jsonl_path, const std::string& csv_path) {
  std::ifstream is(jsonl_path);
  if (!is) throw std::runtime_error("cannot read " + jsonl_path);
  std::ofstream os(csv_path);
  const auto& cols = csv_columns();
  for (std::size_t k = 0; k < cols.size(); ++k) os << (k ? "," : "") << cols[k];
  os << '\n';
  for (std::string line; std::getline(is, line);) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    if (j.value("type", "") != "record") continue;
    for (std::size_t k = 0; k < cols.size(); ++k) {
      os << (k ? "," : "") << (j.contains(cols[k]) ? format_csv_value(j.at(cols[k])) : "");
    }
    os << '\n';
  }
  if (!os) throw std::runtime_error("cannot write " + csv_path);
}

std::optional<int> threads_from_env() {
  const char* v = std::getenv("POPMIX_THREADS");
  if (!v || !*v) return std::nullopt;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1 || n > 4096) return std::nullopt;
  return static_cast<int>(n);
}

RunSummary run(const RunConfig& config, bool resume, std::ostream& log) {
  config.validate();
#ifdef _OPENMP
  if (auto t = threads_from_env()) omp_set_num_threads(*t);
#endif
  const auto grid = expand_grid(config);
  const std::string hash = config.hash();
  json header = {{"type", "header"},
                 {"version", kVersion},
                 {"config_hash", hash},
                 {"seed", config.seed},
                 {"config", config.to_json()}};

  std::set<std::size_t> done;
  std::vector<std::string> kept;
  namespace fs = std::filesystem;
  if (resume && fs::exists(config.output) && fs::file_size(config.output) > 0) {
    std::ifstream is(config.output);
    std::string line;
    std::getline(is, line);
    json h;
    try {
      h = json::parse(line);
    } catch (const json::exception&) {
      throw ResumeMismatch("resume: '" + config.output + "' has no readable header");
    }
    if (h.value("type", "") != "header" || h.value("config_hash", "") != hash) {
      throw ResumeMismatch("resume: config hash " + hash + " differs from '" + config.output +
                           "' (" + h.value("config_hash", std::string("none")) +
                           "); refusing to overwrite");
    }
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      try {
        const json r = json::parse(line);
        const auto idx = r.at("index").get<std::size_t>();
        if (r.value("type", "") != "record" || idx >= grid.size() || done.count(idx)) continue;
        done.insert(idx);
        kept.push_back(line);
      } catch (const json::exception&) {
        break;  // partial line from an interrupted run
      }
    }
  }
  if (auto parent = fs::path(config.output).parent_path(); !parent.empty()) fs::create_directories(parent);
  {
    std::ofstream os(config.output, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + config.output);
    os << header.dump() << '\n';
    for (const auto& l : kept) os << l << '\n';
  }
  std::ofstream out(config.output, std::ios::app);

  Context ctx{config, LevelScheme::half_to_three_halves(), {}};
  std::vector<GridPoint> pending;
  for (const auto& p : grid) {
    if (!done.count(p.index)) pending.push_back(p);
  }
  if (config.method == Method::IdenticalAtom) {
    for (double d : config.d) {
      std::vector<std::int64_t> ns;
      for (const auto& p : pending) {
        if (p.d == d) ns.push_back(p.n);
      }
      std::sort(ns.begin(), ns.end());
      ns.erase(std::unique(ns.begin(), ns.end()), ns.end());
      if (ns.empty()) continue;
      for (const auto& s : lattice_sums(ns, d)) ctx.lattice[d][s.n] = s;
    }
  }

  RunSummary summary;
  summary.skipped = done.size();
  auto commit = [&](const GridPoint& p, const ResultRecord& r, double seconds) {
    r.validate();
    out << record_line(r, p.index).dump() << '\n';
    out.flush();
    ++summary.computed;
    if (!r.converged) ++summary.flagged;
    std::ostringstream msg;
    msg << '[' << p.index + 1 << '/' << grid.size() << "] " << r.method << " n=" << p.n
        << " d=" << p.d;
    if (config.method == Method::Qmcw) msg << " max_exc=" << p.max_exc;
    if (config.disorder) msg << " eps=" << p.eps;
    msg << " p1=" << std::setprecision(6) << r.p1;
    if (r.p1_error) msg << " +- " << *r.p1_error;
    msg << " p2=" << r.p2 << (r.converged ? "" : " NOT CONVERGED") << " (" << std::setprecision(3)
        << seconds << " s)\n";
    log << msg.str() << std::flush;
  };

  using clock = std::chrono::steady_clock;
  if (config.method == Method::Qmcw) {
    for (const auto& p : pending) {
      const auto t0 = clock::now();
      const auto r = compute_qmcw(ctx, p, log);
      commit(p, r, std::chrono::duration<double>(clock::now() - t0).count());
    }
  } else {
    // Points run concurrently in blocks and are committed in grid order.
    const std::size_t block = 64;
    for (std::size_t b = 0; b < pending.size(); b += block) {
      const std::size_t e = std::min(pending.size(), b + block);
      std::vector<ResultRecord> rs(e - b);
      std::vector<double> secs(e - b);
      std::vector<std::string> errors(e - b);
#pragma omp parallel for schedule(dynamic)
      for (std::size_t i = b; i < e; ++i) {
        const auto t0 = clock::now();
        try {
          const auto& p = pending[i];
          if (config.method == Method::MeanField) rs[i - b] = compute_meanfield(ctx, p);
          else if (config.method == Method::Exact) rs[i - b] = compute_exact(ctx, p);
          else rs[i - b] = compute_identical(ctx, p);
        } catch (const std::exception& ex) {
          errors[i - b] = ex.what();
        }
        secs[i - b] = std::chrono::duration<double>(clock::now() - t0).count();
      }
      for (std::size_t i = b; i < e; ++i) {
        if (!errors[i - b].empty()) throw std::runtime_error(errors[i - b]);
        commit(pending[i], rs[i - b], secs[i - b]);
      }
    }
  }
  out.close();
  write_csv(config.output, csv_path_for(config.output));
  log << "wrote " << config.output << " and " << csv_path_for(config.output) << " ("
      << summary.computed << " computed, " << summary.skipped << " resumed, " << summary.flagged
      << " flagged)\n";
  return summary;
}

}  // namespace popmix::cli
