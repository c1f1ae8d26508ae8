#include "popmix/meanfield.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include <Eigen/Dense>
#include <boost/numeric/odeint.hpp>
#include "json.hpp"

#include "popmix/rng.hpp"

namespace popmix {

namespace {

CMat kron(const CMat& a, const CMat& b) {
  CMat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

double max_abs(const CVec& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

// Anderson-accelerated damped fixed point x <- x + mixing * f(x).
class AndersonMixer {
 public:
  AndersonMixer(double mixing, int depth) : mixing_(mixing), depth_(depth) {}

  CVec next(const CVec& x, const CVec& f) {
    xs_.push_back(x);
    fs_.push_back(f);
    if (static_cast<int>(xs_.size()) > depth_ + 1) {
      xs_.pop_front();
      fs_.pop_front();
    }
    const int m = static_cast<int>(xs_.size()) - 1;
    if (m == 0 || depth_ == 0) return x + mixing_ * f;
    CMat df(x.size(), m);
    CMat dx(x.size(), m);
    for (int i = 0; i < m; ++i) {
      df.col(i) = fs_[static_cast<std::size_t>(i + 1)] - fs_[static_cast<std::size_t>(i)];
      dx.col(i) = xs_[static_cast<std::size_t>(i + 1)] - xs_[static_cast<std::size_t>(i)];
    }
    const CVec gamma = df.completeOrthogonalDecomposition().solve(f);
    return x + mixing_ * f - (dx + mixing_ * df) * gamma;
  }

  void reset() {
    xs_.clear();
    fs_.clear();
  }

 private:
  double mixing_;
  int depth_;
  std::deque<CVec> xs_;
  std::deque<CVec> fs_;
};

// Neumaier-compensated complex accumulator.
struct CompensatedSum {
  double re = 0.0, re_c = 0.0, im = 0.0, im_c = 0.0;

  static void add(double& s, double& c, double v) {
    const double t = s + v;
    if (std::abs(s) >= std::abs(v)) {
      c += (s - t) + v;
    } else {
      c += (v - t) + s;
    }
    s = t;
  }
  void operator+=(Complex v) {
    add(re, re_c, v.real());
    add(im, im_c, v.imag());
  }
  Complex value() const { return {re + re_c, im + im_c}; }
};

CVec drive_rabis(const DriveParams& drive, const LevelScheme& scheme) {
  return transition_rabis(drive, scheme);
}

CVec atom_coherences(const CMat& rho, const LevelScheme& scheme) {
  CVec s(scheme.n_transitions());
  for (int t = 0; t < scheme.n_transitions(); ++t) {
    const auto& tr = scheme.transition(t);
    s(t) = rho(tr.excited, tr.ground);
  }
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// MeanFieldState

MeanFieldState MeanFieldState::uniform(int n_atoms, const LevelScheme& scheme, int level) {
  if (n_atoms < 1) throw std::domain_error("state needs at least one atom");
  if (level < 0 || level >= scheme.n_levels()) throw std::domain_error("level out of range");
  MeanFieldState s;
  CMat r = CMat::Zero(scheme.n_levels(), scheme.n_levels());
  r(level, level) = 1.0;
  s.rho.assign(static_cast<std::size_t>(n_atoms), r);
  return s;
}

double MeanFieldState::trace_error() const {
  double e = 0.0;
  for (const auto& r : rho) e = std::max(e, std::abs(r.trace() - 1.0));
  return e;
}

double MeanFieldState::hermiticity_error() const {
  double e = 0.0;
  for (const auto& r : rho) e = std::max(e, (r - r.adjoint()).cwiseAbs().maxCoeff());
  return e;
}

double MeanFieldState::min_eigenvalue() const {
  double e = std::numeric_limits<double>::infinity();
  for (const auto& r : rho) {
    const CMat h = 0.5 * (r + r.adjoint());
    Eigen::SelfAdjointEigenSolver<CMat> es(h, Eigen::EigenvaluesOnly);
    e = std::min(e, es.eigenvalues().minCoeff());
  }
  return e;
}

void MeanFieldState::write_json(std::ostream& os) const {
  nlohmann::json j;
  j["n_atoms"] = n_atoms();
  j["n_levels"] = rho.empty() ? 0 : rho.front().rows();
  j["time"] = time;
  auto& atoms = j["rho"] = nlohmann::json::array();
  for (const auto& r : rho) {
    nlohmann::json entries = nlohmann::json::array();
    for (Eigen::Index a = 0; a < r.rows(); ++a) {
      for (Eigen::Index b = 0; b < r.cols(); ++b) {
        entries.push_back({r(a, b).real(), r(a, b).imag()});
      }
    }
    atoms.push_back(std::move(entries));
  }
  os << j.dump() << '\n';
}

MeanFieldState MeanFieldState::read_json(std::istream& is) {
  const auto j = nlohmann::json::parse(is);
  const int n = j.at("n_atoms").get<int>();
  const int nl = j.at("n_levels").get<int>();
  const auto& atoms = j.at("rho");
  if (static_cast<int>(atoms.size()) != n) throw std::runtime_error("state file: atom count mismatch");
  MeanFieldState s;
  s.time = j.value("time", 0.0);
  for (const auto& entries : atoms) {
    if (static_cast<int>(entries.size()) != nl * nl) {
      throw std::runtime_error("state file: expected n_levels^2 entries per atom");
    }
    CMat r(nl, nl);
    for (int a = 0; a < nl; ++a) {
      for (int b = 0; b < nl; ++b) {
        const auto& e = entries.at(static_cast<std::size_t>(a * nl + b));
        r(a, b) = Complex(e.at(0).get<double>(), e.at(1).get<double>());
      }
    }
    s.rho.push_back(std::move(r));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Exchange fields

CVec coherences(const MeanFieldState& state, const LevelScheme& scheme) {
  const int nt = scheme.n_transitions();
  CVec s(state.n_atoms() * nt);
  for (int j = 0; j < state.n_atoms(); ++j) {
    s.segment(j * nt, nt) = atom_coherences(state.rho[static_cast<std::size_t>(j)], scheme);
  }
  return s;
}

CVec effective_rabi(int atom, const CVec& coherences, const CouplingMatrices& couplings) {
  if (atom < 0 || atom >= couplings.n_atoms) throw std::out_of_range("atom index");
  if (coherences.size() != couplings.dim()) throw std::invalid_argument("coherence size");
  const int nt = couplings.n_transitions;
  CVec r = CVec::Zero(nt);
  for (int l = 0; l < couplings.n_atoms; ++l) {
    if (l == atom) continue;
    const auto a = couplings.coherent.block(atom * nt, l * nt, nt, nt);
    const auto b = couplings.dissipative.block(atom * nt, l * nt, nt, nt);
    r += (a + Complex(0.0, 0.5) * b) * coherences.segment(l * nt, nt);
  }
  return r;
}

CVec effective_rabis(const CVec& coherences, const CouplingMatrices& couplings) {
  if (coherences.size() != couplings.dim()) throw std::invalid_argument("coherence size");
  return couplings.exchange() * coherences;
}

// ---------------------------------------------------------------------------
// Single atom

SingleAtomModel::SingleAtomModel(const LevelScheme& scheme, double detuning)
    : scheme_(scheme), n_(scheme.n_levels()), detuning_(detuning) {
  const CMat id = CMat::Identity(n_, n_);
  dissipator_ = CMat::Zero(n_ * n_, n_ * n_);
  for (const auto& tr : scheme_.transitions()) {
    CMat c = CMat::Zero(n_, n_);
    c(tr.ground, tr.excited) = tr.cg;
    const CMat cc = c.adjoint() * c;
    dissipator_ += kron(c, c.conjugate()) - 0.5 * kron(cc, id) - 0.5 * kron(id, cc.transpose());
  }
}

CMat SingleAtomModel::hamiltonian(const CVec& drive) const {
  CMat h = CMat::Zero(n_, n_);
  for (int i = 0; i < n_; ++i) {
    if (scheme_.level(i).excited) h(i, i) = -detuning_;
  }
  for (int t = 0; t < scheme_.n_transitions(); ++t) {
    const auto& tr = scheme_.transition(t);
    h(tr.excited, tr.ground) -= drive(t);
    h(tr.ground, tr.excited) -= std::conj(drive(t));
  }
  return h;
}

CMat SingleAtomModel::liouvillian(const CVec& drive) const {
  const CMat h = hamiltonian(drive);
  const CMat id = CMat::Identity(n_, n_);
  return dissipator_ - kI * (kron(h, id) - kron(id, h.transpose()));
}

CMat SingleAtomModel::rhs(const CMat& rho, const CVec& drive) const {
  const CMat h = hamiltonian(drive);
  CMat out = -kI * (h * rho - rho * h);
  for (const auto& tr : scheme_.transitions()) {
    const double w = tr.cg * tr.cg;
    // c = |g><e|: c rho c^dag picks rho_ee into the (g, g) entry.
    out(tr.ground, tr.ground) += w * rho(tr.excited, tr.excited);
    out.row(tr.excited) -= 0.5 * w * rho.row(tr.excited);
    out.col(tr.excited) -= 0.5 * w * rho.col(tr.excited);
  }
  return out;
}

CMat SingleAtomModel::steady_state(const CVec& drive) const {
  CMat a = liouvillian(drive);
  CVec b = CVec::Zero(n_ * n_);
  a.row(0).setZero();
  for (int i = 0; i < n_; ++i) a(0, i * n_ + i) = 1.0;
  b(0) = 1.0;
  const CVec x = a.partialPivLu().solve(b);
  CMat rho(n_, n_);
  for (int i = 0; i < n_; ++i) {
    for (int j = 0; j < n_; ++j) rho(i, j) = x(i * n_ + j);
  }
  return 0.5 * (rho + rho.adjoint());
}

// ---------------------------------------------------------------------------
// Mean-field dynamics

MeanFieldState mf_rhs(const MeanFieldState& state, const DriveParams& drive,
                      const CouplingMatrices& couplings, const LevelScheme& scheme) {
  if (state.n_atoms() != couplings.n_atoms) throw std::invalid_argument("state/couplings size");
  const SingleAtomModel model(scheme, drive.detuning);
  const int nt = scheme.n_transitions();
  const CVec omega = drive_rabis(drive, scheme);
  const CVec r = effective_rabis(coherences(state, scheme), couplings);
  MeanFieldState out;
  out.time = state.time;
  out.rho.resize(state.rho.size());
  for (int j = 0; j < state.n_atoms(); ++j) {
    const CVec w = omega + r.segment(j * nt, nt);
    out.rho[static_cast<std::size_t>(j)] = model.rhs(state.rho[static_cast<std::size_t>(j)], w);
  }
  return out;
}

double mf_residual(const MeanFieldState& state, const DriveParams& drive,
                   const CouplingMatrices& couplings, const LevelScheme& scheme) {
  const auto d = mf_rhs(state, drive, couplings, scheme);
  double e = 0.0;
  for (const auto& r : d.rho) e = std::max(e, r.cwiseAbs().maxCoeff());
  return e;
}

namespace {

struct FixedPointResult {
  MeanFieldState state;
  int iterations = 0;
  double increment = 0.0;
};

// Iterates s -> coherences(steady states under Omega + K s) from s0.
FixedPointResult fixed_point(const CMat& kernel, const SingleAtomModel& model, const CVec& omega,
                             int n_atoms, CVec s, const MeanFieldOptions& options) {
  const int nt = model.scheme().n_transitions();
  AndersonMixer mixer(options.mixing, options.anderson_depth);
  FixedPointResult out;
  out.state.rho.resize(static_cast<std::size_t>(n_atoms));
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int it = 1; it <= options.max_iterations; ++it) {
    const CVec r = kernel * s;
    CVec s_new(s.size());
#pragma omp parallel for schedule(static)
    for (int j = 0; j < n_atoms; ++j) {
      const CVec w = omega + r.segment(j * nt, nt);
      CMat rho = model.steady_state(w);
      s_new.segment(j * nt, nt) = atom_coherences(rho, model.scheme());
      out.state.rho[static_cast<std::size_t>(j)] = std::move(rho);
    }
    const CVec f = s_new - s;
    out.iterations = it;
    out.increment = max_abs(f);
    if (!std::isfinite(out.increment)) break;
    if (out.increment < options.coherence_tolerance) break;
    if (out.increment < 0.5 * best) {
      best = out.increment;
      since_best = 0;
    } else if (++since_best > 25) {
      // Stagnation at the roundoff floor or a genuine stall; caller decides.
      break;
    }
    s = mixer.next(s, f);
  }
  return out;
}

CVec second_start_coherences(const SingleAtomModel& model, const CVec& omega, int n_atoms) {
  // Deterministic pseudo-random strong drive mixing all polarizations.
  auto rng = make_stream(0x5eedULL, 0);
  const int nt = model.scheme().n_transitions();
  const double scale = std::max(omega.cwiseAbs().maxCoeff(), 1e-3) * 3.0;
  CVec s(n_atoms * nt);
  for (int j = 0; j < n_atoms; ++j) {
    CVec w(nt);
    for (int t = 0; t < nt; ++t) {
      w(t) = std::polar(scale * (0.5 + uniform_closed_open(rng)), 2.0 * kPi * uniform_closed_open(rng));
    }
    s.segment(j * nt, nt) = atom_coherences(model.steady_state(w), model.scheme());
  }
  return s;
}

SteadyStateReport integrate_to_steady_state(const CouplingMatrices& couplings,
                                            const LevelScheme& scheme, const DriveParams& drive,
                                            MeanFieldState start, const MeanFieldOptions& options,
                                            const CMat& kernel, const SingleAtomModel& model,
                                            const CVec& omega) {
  namespace odeint = boost::numeric::odeint;
  using State = std::vector<Complex>;
  const int n = couplings.n_atoms;
  const int nl = scheme.n_levels();
  const int nt = scheme.n_transitions();
  const std::size_t per_atom = static_cast<std::size_t>(nl * nl);

  auto pack = [&](const MeanFieldState& s) {
    State x(per_atom * static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
      for (int a = 0; a < nl; ++a) {
        for (int b = 0; b < nl; ++b) {
          x[j * per_atom + static_cast<std::size_t>(a * nl + b)] = s.rho[static_cast<std::size_t>(j)](a, b);
        }
      }
    }
    return x;
  };
  auto unpack = [&](const State& x, double t) {
    MeanFieldState s;
    s.time = t;
    s.rho.resize(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
      CMat r(nl, nl);
      for (int a = 0; a < nl; ++a) {
        for (int b = 0; b < nl; ++b) r(a, b) = x[j * per_atom + static_cast<std::size_t>(a * nl + b)];
      }
      s.rho[static_cast<std::size_t>(j)] = std::move(r);
    }
    return s;
  };
  auto system = [&](const State& x, State& dxdt, double t) {
    const MeanFieldState s = unpack(x, t);
    const CVec r = kernel * coherences(s, scheme);
    dxdt.resize(x.size());
    for (int j = 0; j < n; ++j) {
      const CMat d = model.rhs(s.rho[static_cast<std::size_t>(j)], omega + r.segment(j * nt, nt));
      for (int a = 0; a < nl; ++a) {
        for (int b = 0; b < nl; ++b) dxdt[j * per_atom + static_cast<std::size_t>(a * nl + b)] = d(a, b);
      }
    }
  };

  auto stepper = odeint::make_dense_output(1e-12, 1e-10, options.fallback_max_step,
                                           odeint::runge_kutta_dopri5<State>());
  State x = pack(start);
  double t = start.time;
  const double chunk = 500.0;
  SteadyStateReport rep;
  rep.method = "integration";
  while (t < start.time + options.fallback_max_time) {
    odeint::integrate_adaptive(stepper, system, x, t, t + chunk, options.fallback_max_step);
    t += chunk;
    MeanFieldState s = unpack(x, t);
    // Polish from the integrated state; accept once the residual contract holds.
    MeanFieldOptions polish = options;
    polish.max_iterations = std::min(options.max_iterations, 100);
    auto fp = fixed_point(kernel, model, omega, n, coherences(s, scheme), polish);
    fp.state.time = t;
    rep.iterations += fp.iterations;
    const double res = mf_residual(fp.state, drive, couplings, scheme);
    if (res < options.tolerance) {
      rep.state = std::move(fp.state);
      rep.residual = res;
      rep.converged = true;
      return rep;
    }
    rep.state = std::move(s);
    rep.residual = mf_residual(rep.state, drive, couplings, scheme);
  }
  rep.converged = false;
  std::ostringstream msg;
  msg << "time integration reached t=" << t << " with residual " << rep.residual;
  rep.diagnostics = msg.str();
  return rep;
}

double max_population_gap(const MeanFieldState& a, const MeanFieldState& b) {
  double e = 0.0;
  for (std::size_t j = 0; j < a.rho.size(); ++j) {
    e = std::max(e, (a.rho[j].diagonal() - b.rho[j].diagonal()).cwiseAbs().maxCoeff());
  }
  return e;
}

}  // namespace

SteadyStateReport mf_steady_state(const CouplingMatrices& couplings, const LevelScheme& scheme,
                                  const DriveParams& drive, const MeanFieldOptions& options) {
  if (!(drive.rabi > 0.0)) throw std::domain_error("mean-field steady state needs rabi > 0");
  if (couplings.n_transitions != scheme.n_transitions()) {
    throw std::invalid_argument("couplings were built for a different level scheme");
  }
  const int n = couplings.n_atoms;
  const SingleAtomModel model(scheme, drive.detuning);
  const CVec omega = drive_rabis(drive, scheme);
  const CMat kernel = couplings.exchange();

  MeanFieldState initial = options.initial.value_or(
      MeanFieldState::uniform(n, scheme, scheme.stretched_ground()));
  if (initial.n_atoms() != n) throw std::invalid_argument("initial state has wrong atom count");

  auto fp = fixed_point(kernel, model, omega, n, coherences(initial, scheme), options);
  SteadyStateReport rep;
  rep.method = "fixed-point";
  rep.iterations = fp.iterations;
  rep.state = std::move(fp.state);
  rep.residual = mf_residual(rep.state, drive, couplings, scheme);
  rep.converged = rep.residual < options.tolerance;

  if (!rep.converged && options.integration_fallback) {
    std::ostringstream msg;
    msg << "fixed point stalled after " << fp.iterations << " iterations (increment "
        << fp.increment << ", residual " << rep.residual << "); ";
    auto alt = integrate_to_steady_state(couplings, scheme, drive, initial, options, kernel, model,
                                         omega);
    alt.iterations += rep.iterations;
    alt.diagnostics = msg.str() + (alt.diagnostics.empty() ? "time integration converged"
                                                           : alt.diagnostics);
    rep = std::move(alt);
  } else if (!rep.converged) {
    std::ostringstream msg;
    msg << "fixed point did not converge: increment " << fp.increment << ", residual "
        << rep.residual;
    rep.diagnostics = msg.str();
  }

  if (options.check_uniqueness && rep.converged) {
    auto second = fixed_point(kernel, model, omega, n, second_start_coherences(model, omega, n),
                              options);
    const double res2 = mf_residual(second.state, drive, couplings, scheme);
    const double gap = max_population_gap(rep.state, second.state);
    rep.uniqueness_gap = gap;
    if (res2 < options.tolerance && gap > options.uniqueness_tolerance) {
      std::ostringstream msg;
      msg << (rep.diagnostics.empty() ? "" : "; ")
          << "multiple mean-field fixed points: population gap " << gap;
      rep.diagnostics += msg.str();
    }
  }
  return rep;
}

SteadyStateReport mf_steady_state(const ArrayGeometry& geometry, const LevelScheme& scheme,
                                  const DriveParams& drive, const MeanFieldOptions& options,
                                  OnSiteDecay on_site) {
  return mf_steady_state(coupling_matrices(geometry, scheme, on_site), scheme, drive, options);
}

// ---------------------------------------------------------------------------
// Identical-atom reduction

std::vector<LatticeSum> lattice_sums(std::span<const std::int64_t> ns, double d) {
  if (!(d > 0.0)) throw std::domain_error("spacing must be positive");
  for (std::size_t i = 0; i < ns.size(); ++i) {
    if (ns[i] < 1) throw std::domain_error("atom counts must be >= 1");
    if (i > 0 && ns[i] < ns[i - 1]) throw std::invalid_argument("atom counts must be ascending");
  }
  std::vector<LatticeSum> out;
  out.reserve(ns.size());
  CompensatedSum sa, sma, sb, smb;
  std::int64_t m = 1;  // next separation index to add
  for (const std::int64_t n : ns) {
    for (; m < n; ++m) {
      const auto [a, b] = green_scalars(static_cast<double>(m) * d);
      const double md = static_cast<double>(m);
      sa += a;
      sb += b;
      sma += md * a;
      smb += md * b;
    }
    const double inv = 2.0 / static_cast<double>(n);
    LatticeSum ls;
    ls.n = n;
    ls.sum.a = 2.0 * sa.value() - inv * sma.value();
    ls.sum.b = 2.0 * sb.value() - inv * smb.value();
    out.push_back(ls);
  }
  return out;
}

IdenticalAtomResult identical_atom_steady_state(const LatticeSum& sum, double d,
                                                const LevelScheme& scheme,
                                                const DriveParams& drive,
                                                const MeanFieldOptions& options) {
  Mat3c g = Mat3c::Zero();
  g.diagonal().setConstant(sum.sum.a);
  g(0, 0) += sum.sum.b;
  const CMat kernel = project_block(g, scheme);
  const SingleAtomModel model(scheme, drive.detuning);
  const CVec omega = drive_rabis(drive, scheme);

  auto fp = fixed_point(kernel, model, omega, 1, CVec::Zero(scheme.n_transitions()), options);
  IdenticalAtomResult r;
  r.n = sum.n;
  r.d = d;
  r.rho = fp.state.rho.front();
  r.iterations = fp.iterations;
  const CVec w = omega + kernel * atom_coherences(r.rho, scheme);
  r.residual = model.rhs(r.rho, w).cwiseAbs().maxCoeff();
  r.converged = r.residual < options.tolerance;
  r.p1 = r.rho(0, 0).real();
  r.p2 = r.rho(1, 1).real();
  r.ratio = r.p2 > 0.0 ? r.p1 / r.p2 : std::numeric_limits<double>::quiet_NaN();
  return r;
}

IdenticalAtomResult identical_atom_steady_state(std::int64_t n, double d,
                                                const LevelScheme& scheme,
                                                const DriveParams& drive,
                                                const MeanFieldOptions& options) {
  const std::int64_t ns[] = {n};
  return identical_atom_steady_state(lattice_sums(ns, d).front(), d, scheme, drive, options);
}

std::vector<IdenticalAtomResult> identical_atom_sweep(std::span<const std::int64_t> ns, double d,
                                                      const LevelScheme& scheme,
                                                      const DriveParams& drive,
                                                      const MeanFieldOptions& options) {
  std::vector<IdenticalAtomResult> out;
  for (const auto& s : lattice_sums(ns, d)) {
    out.push_back(identical_atom_steady_state(s, d, scheme, drive, options));
  }
  return out;
}

}  // namespace popmix
