#include "popmix/observables.hpp"

#include <cmath>
#include <deque>
#include <ostream>

#include "popmix/green.hpp"

namespace popmix {

namespace {

constexpr double kPopTol = 1e-9;
constexpr double kSumTol = 1e-8;

// Columns C_t eps_q(t).
Eigen::Matrix<Complex, 3, Eigen::Dynamic> dipoles(const LevelScheme& scheme) {
  Eigen::Matrix<Complex, 3, Eigen::Dynamic> p(3, scheme.n_transitions());
  for (int t = 0; t < scheme.n_transitions(); ++t) {
    const auto& tr = scheme.transition(t);
    p.col(t) = tr.cg * spherical_basis(tr.q);
  }
  return p;
}

SphericalField spherical(const CVec3& e) {
  return {spherical_basis(+1).dot(e), spherical_basis(-1).dot(e), spherical_basis(0).dot(e)};
}

void set_optional(nlohmann::json& j, const char* key, const std::optional<double>& v) {
  if (v) j[key] = *v;
  else j[key] = nullptr;
}

std::optional<double> get_optional(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

void fill_ratio(ResultRecord& r) {
  if (r.p2 != 0.0) r.ratio = r.p1 / r.p2;
}

}  // namespace

void ResultRecord::validate() const {
  auto check = [](double p, const char* what) {
    if (!(p >= -kPopTol && p <= 1.0 + kPopTol)) {
      throw ModelError(std::string(what) + " population out of range: " + std::to_string(p));
    }
  };
  check(p1, "p1");
  check(p2, "p2");
  check(excited, "excited");
  for (double p : p1_per_atom) check(p, "per-atom p1");
  if (std::abs(p1 + p2 + excited - 1.0) > kSumTol) {
    throw ModelError("populations do not sum to one: " + std::to_string(p1 + p2 + excited));
  }
}

nlohmann::json ResultRecord::to_json() const {
  nlohmann::json j;
  j["method"] = method;
  j["n"] = n_atoms;
  j["d"] = d;
  j["omega"] = rabi;
  j["delta"] = detuning;
  j["max_exc"] = max_excitations;
  j["seed"] = seed;
  j["disorder_eps"] = disorder_eps;
  j["p1"] = p1;
  j["p2"] = p2;
  j["excited"] = excited;
  set_optional(j, "ratio", ratio);
  set_optional(j, "p1_err", p1_error);
  set_optional(j, "p2_err", p2_error);
  set_optional(j, "excited_err", excited_error);
  j["p1_per_atom"] = p1_per_atom;
  j["converged"] = converged;
  j["extra"] = extra;
  return j;
}

ResultRecord ResultRecord::from_json(const nlohmann::json& j) {
  ResultRecord r;
  r.method = j.at("method").get<std::string>();
  r.n_atoms = j.at("n").get<int>();
  r.d = j.at("d").get<double>();
  r.rabi = j.at("omega").get<double>();
  r.detuning = j.at("delta").get<double>();
  r.max_excitations = j.value("max_exc", 0);
  r.seed = j.value("seed", std::uint64_t{0});
  r.disorder_eps = j.value("disorder_eps", 0.0);
  r.p1 = j.at("p1").get<double>();
  r.p2 = j.at("p2").get<double>();
  r.excited = j.at("excited").get<double>();
  r.ratio = get_optional(j, "ratio");
  r.p1_error = get_optional(j, "p1_err");
  r.p2_error = get_optional(j, "p2_err");
  r.excited_error = get_optional(j, "excited_err");
  r.p1_per_atom = j.value("p1_per_atom", std::vector<double>{});
  r.converged = j.value("converged", true);
  r.extra = j.value("extra", nlohmann::json::object());
  return r;
}

ResultRecord populations(const MeanFieldState& state, const LevelScheme& scheme) {
  ResultRecord r;
  r.n_atoms = state.n_atoms();
  if (r.n_atoms == 0) throw std::invalid_argument("empty state");
  const int g1 = 0;
  const int g2 = scheme.stretched_ground();
  for (const auto& rho : state.rho) {
    const double a = rho(g1, g1).real();
    const double b = rho(g2, g2).real();
    r.p1_per_atom.push_back(a);
    r.p1 += a;
    r.p2 += b;
    r.excited += rho.diagonal().real().sum() - a - b;
  }
  r.p1 /= r.n_atoms;
  r.p2 /= r.n_atoms;
  r.excited /= r.n_atoms;
  fill_ratio(r);
  return r;
}

ResultRecord populations(const EnsembleResult& ensemble) {
  if (ensemble.trajectories.empty()) throw std::invalid_argument("empty ensemble");
  ResultRecord r;
  r.n_atoms = static_cast<int>(ensemble.trajectories.front().populations.size());
  r.p1 = ensemble.p1.mean;
  r.p2 = ensemble.p2.mean;
  r.excited = ensemble.excited.mean;
  r.p1_error = ensemble.p1.std_error;
  r.p2_error = ensemble.p2.std_error;
  r.excited_error = ensemble.excited.std_error;
  r.p1_per_atom = ensemble.p1_per_atom;
  r.extra["n_traj"] = ensemble.trajectories.size();
  r.extra["drift_sigma"] = ensemble.drift_sigma;
  fill_ratio(r);
  return r;
}

double ground_ratio(const ResultRecord& record) {
  if (record.p2 == 0.0) throw std::domain_error("ground ratio undefined: p2 = 0");
  return record.p1 / record.p2;
}

double ground_ratio(const MeanFieldState& state, const LevelScheme& scheme) {
  return ground_ratio(populations(state, scheme));
}

FieldDecomposition scattered_field_at_atoms(const CVec& coherences, const ArrayGeometry& geometry,
                                            const LevelScheme& scheme, const DriveParams& drive) {
  const int n = geometry.n_atoms();
  const int nt = scheme.n_transitions();
  if (coherences.size() != n * nt) throw std::invalid_argument("coherence size");
  const auto p = dipoles(scheme);
  std::vector<CVec3> moments(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) moments[static_cast<std::size_t>(j)] = p * coherences.segment(j * nt, nt);

  FieldDecomposition out;
  out.incident = spherical(drive_field(drive));
  out.scattered.resize(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    CVec3 e = CVec3::Zero();
    for (int l = 0; l < n; ++l) {
      if (l == j) continue;
      e += green_tensor(geometry.position(j), geometry.position(l)) *
           moments[static_cast<std::size_t>(l)];
    }
    out.scattered[static_cast<std::size_t>(j)] = spherical(kCouplingScale * e);
  }
  return out;
}

FieldDecomposition scattered_field_at_atoms(const MeanFieldState& state,
                                            const ArrayGeometry& geometry,
                                            const LevelScheme& scheme, const DriveParams& drive) {
  return scattered_field_at_atoms(coherences(state, scheme), geometry, scheme, drive);
}

Complex axial_field_series(double d, std::int64_t n) {
  Complex sum = 0.0;
  for (std::int64_t j = 1; j < n; ++j) {
    const double x = static_cast<double>(j) * d;
    sum += std::polar(1.0, kWaveNumber * (x - std::floor(x))) / static_cast<double>(j);
  }
  return sum;
}

Complex axial_field_sum(double d, std::int64_t n) {
  const CVec3 ep = spherical_basis(+1);
  const CVec3 em = spherical_basis(-1);
  Complex sum = 0.0;
  for (std::int64_t j = 1; j < n; ++j) {
    const Vec3 r(static_cast<double>(j) * d, 0.0, 0.0);
    sum += em.dot(green_tensor(r, Vec3::Zero()) * ep);
  }
  return 8.0 * kPi * d * sum;
}

Vec3 direction(double theta, double phi) {
  return {std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta)};
}

CVec3 far_field_vector(const CVec& coherences, const ArrayGeometry& geometry,
                       const LevelScheme& scheme, const FarFieldQuery& query) {
  const int n = geometry.n_atoms();
  const int nt = scheme.n_transitions();
  if (coherences.size() != n * nt) throw std::invalid_argument("coherence size");
  if (!(query.theta >= 0.0 && query.theta <= kPi)) throw std::domain_error("theta outside [0, pi]");
  const auto p = dipoles(scheme);
  const Vec3 origin = geometry.position(geometry.last_atom());
  const Vec3 u = direction(query.theta, query.phi);
  CVec3 e = CVec3::Zero();
  if (std::isinf(query.radius)) {
    for (int j = 0; j < n; ++j) {
      e += far_field_amplitude(u, geometry.position(j) - origin) * (p * coherences.segment(j * nt, nt));
    }
    return e;
  }
  // Finite radius: full Green tensor with exp(ikr)/r removed.
  const Vec3 point = origin + query.radius * u;
  for (int j = 0; j < n; ++j) {
    e += green_tensor(point, geometry.position(j)) * (p * coherences.segment(j * nt, nt));
  }
  const double frac = query.radius - std::floor(query.radius);
  return e * (query.radius * std::polar(1.0, -kWaveNumber * frac));
}

double far_field_intensity(const CVec& coherences, const ArrayGeometry& geometry,
                           const LevelScheme& scheme, const FarFieldQuery& query) {
  return far_field_vector(coherences, geometry, scheme, query).squaredNorm();
}

double radiated_power(const CVec& coherences, const CouplingMatrices& couplings) {
  return (coherences.adjoint() * couplings.dissipative * coherences)(0).real() / (6.0 * kPi);
}

void FarFieldMap::normalize(double reference) {
  if (!(reference > 0.0)) throw std::domain_error("normalization reference must be positive");
  intensity /= reference;
}

double FarFieldMap::integrate() const {
  const auto nth = static_cast<Eigen::Index>(theta.size());
  const auto nph = static_cast<Eigen::Index>(phi.size());
  if (nth < 2 || nph < 1) return 0.0;
  const double dth = theta[1] - theta[0];
  const double dph = 2.0 * kPi / static_cast<double>(nph);
  double total = 0.0;
  for (Eigen::Index i = 0; i < nth; ++i) {
    const double w = (i == 0 || i == nth - 1) ? 0.5 : 1.0;
    total += w * std::sin(theta[static_cast<std::size_t>(i)]) * intensity.row(i).sum();
  }
  return total * dth * dph;
}

double FarFieldMap::mirror_asymmetry() const {
  const auto nph = static_cast<Eigen::Index>(phi.size());
  double worst = 0.0;
  for (Eigen::Index i = 0; i < intensity.rows(); ++i) {
    for (Eigen::Index k = 0; k < nph; ++k) {
      const Eigen::Index km = (nph - k) % nph;
      worst = std::max(worst, std::abs(intensity(i, k) - intensity(i, km)));
    }
  }
  const double m = max();
  return m > 0.0 ? worst / m : 0.0;
}

void FarFieldMap::write_table(std::ostream& os) const {
  os.precision(10);
  os << "# theta phi intensity\n";
  for (std::size_t i = 0; i < theta.size(); ++i) {
    for (std::size_t k = 0; k < phi.size(); ++k) {
      os << theta[i] << ' ' << phi[k] << ' '
         << intensity(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) << '\n';
    }
  }
}

FarFieldMap far_field_map(const CVec& coherences, const ArrayGeometry& geometry,
                          const LevelScheme& scheme, int n_phi, int n_theta) {
  if (n_phi < 1 || n_theta < 2) throw std::invalid_argument("far-field grid too small");
  FarFieldMap map;
  for (int i = 0; i < n_theta; ++i) map.theta.push_back(kPi * i / (n_theta - 1));
  for (int k = 0; k < n_phi; ++k) map.phi.push_back(2.0 * kPi * k / n_phi);
  map.intensity.resize(n_theta, n_phi);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n_theta; ++i) {
    for (int k = 0; k < n_phi; ++k) {
      FarFieldQuery q;
      q.theta = map.theta[static_cast<std::size_t>(i)];
      q.phi = map.phi[static_cast<std::size_t>(k)];
      map.intensity(i, k) = far_field_intensity(coherences, geometry, scheme, q);
    }
  }
  return map;
}

double lobe_solid_angle(const FarFieldMap& map, double fraction) {
  const Eigen::Index nth = map.intensity.rows();
  const Eigen::Index nph = map.intensity.cols();
  Eigen::Index i0 = 0, k0 = 0;
  const double peak = map.intensity.maxCoeff(&i0, &k0);
  const double level = fraction * peak;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> seen =
      Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(nth, nph, false);
  std::deque<std::pair<Eigen::Index, Eigen::Index>> queue{{i0, k0}};
  seen(i0, k0) = true;
  const double dth = map.theta.size() > 1 ? map.theta[1] - map.theta[0] : kPi;
  const double dph = 2.0 * kPi / static_cast<double>(nph);
  double omega = 0.0;
  while (!queue.empty()) {
    const auto [i, k] = queue.front();
    queue.pop_front();
    const double w = (i == 0 || i == nth - 1) ? 0.5 : 1.0;
    omega += w * std::sin(map.theta[static_cast<std::size_t>(i)]) * dth * dph;
    const std::pair<Eigen::Index, Eigen::Index> nbrs[4] = {
        {i - 1, k}, {i + 1, k}, {i, (k + 1) % nph}, {i, (k + nph - 1) % nph}};
    for (const auto& [a, b] : nbrs) {
      if (a < 0 || a >= nth || seen(a, b)) continue;
      if (map.intensity(a, b) > level) {
        seen(a, b) = true;
        queue.emplace_back(a, b);
      }
    }
  }
  return omega;
}

}  // namespace popmix
