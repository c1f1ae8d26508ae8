#include "popmix/qmcw.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "json.hpp"

namespace popmix {

// ---------------------------------------------------------------------------
// Basis

namespace {

double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

}  // namespace

std::size_t TruncatedBasis::count(int n_atoms, int max_excitations, const LevelScheme& scheme) {
  const int kmax = std::min(max_excitations, n_atoms);
  double total = 0.0;
  for (int k = 0; k <= kmax; ++k) {
    total += binomial(n_atoms, k) * std::pow(scheme.n_excited(), k) *
             std::pow(scheme.n_ground(), n_atoms - k);
  }
  if (total > static_cast<double>(std::numeric_limits<std::size_t>::max() / 2)) {
    return std::numeric_limits<std::size_t>::max();
  }
  return static_cast<std::size_t>(std::llround(total));
}

TruncatedBasis::TruncatedBasis(int n_atoms, int max_excitations, const LevelScheme& scheme,
                               std::size_t max_dimension)
    : n_atoms_(n_atoms), max_excitations_(max_excitations), n_levels_(scheme.n_levels()) {
  if (n_atoms < 1) throw std::domain_error("basis needs n >= 1");
  if (max_excitations < 0) throw std::domain_error("max_excitations must be >= 0");
  if (n_atoms * std::log2(static_cast<double>(n_levels_)) >= 63.0) {
    throw CapacityError("basis: " + std::to_string(n_atoms) +
                        " atoms do not fit a 64-bit configuration code");
  }
  const std::size_t expected = count(n_atoms, max_excitations, scheme);
  if (expected > max_dimension) {
    throw CapacityError("basis dimension " + std::to_string(expected) + " exceeds the budget of " +
                        std::to_string(max_dimension) + " states");
  }
  excited_.resize(static_cast<std::size_t>(n_levels_));
  for (int i = 0; i < n_levels_; ++i) excited_[static_cast<std::size_t>(i)] = scheme.level(i).excited;
  powers_.assign(static_cast<std::size_t>(n_atoms), 1);
  for (int j = n_atoms - 2; j >= 0; --j) {
    powers_[static_cast<std::size_t>(j)] =
        powers_[static_cast<std::size_t>(j + 1)] * static_cast<std::uint64_t>(n_levels_);
  }
  codes_.reserve(expected);
  // Depth-first over atoms in level order yields ascending codes.
  std::vector<int> levels(static_cast<std::size_t>(n_atoms), 0);
  auto recurse = [&](auto&& self, int atom, int exc, std::uint64_t code) -> void {
    if (atom == n_atoms) {
      codes_.push_back(code);
      return;
    }
    for (int l = 0; l < n_levels_; ++l) {
      const int e = exc + (excited_[static_cast<std::size_t>(l)] ? 1 : 0);
      if (e > max_excitations) continue;
      self(self, atom + 1, e, code + static_cast<std::uint64_t>(l) * powers_[static_cast<std::size_t>(atom)]);
    }
  };
  recurse(recurse, 0, 0, 0);
}

int TruncatedBasis::level_of(std::uint64_t code, int atom) const {
  return static_cast<int>((code / powers_[static_cast<std::size_t>(atom)]) %
                          static_cast<std::uint64_t>(n_levels_));
}

std::uint64_t TruncatedBasis::with_level(std::uint64_t code, int atom, int level) const {
  const std::uint64_t p = powers_[static_cast<std::size_t>(atom)];
  const int old = level_of(code, atom);
  return code - static_cast<std::uint64_t>(old) * p + static_cast<std::uint64_t>(level) * p;
}

int TruncatedBasis::excitations(std::size_t index) const {
  int e = 0;
  for (int j = 0; j < n_atoms_; ++j) e += excited_[static_cast<std::size_t>(level(index, j))] ? 1 : 0;
  return e;
}

std::optional<std::size_t> TruncatedBasis::find(std::uint64_t code) const {
  const auto it = std::lower_bound(codes_.begin(), codes_.end(), code);
  if (it == codes_.end() || *it != code) return std::nullopt;
  return static_cast<std::size_t>(it - codes_.begin());
}

std::optional<std::size_t> TruncatedBasis::find(std::span<const int> levels) const {
  if (static_cast<int>(levels.size()) != n_atoms_) return std::nullopt;
  std::uint64_t code = 0;
  for (int j = 0; j < n_atoms_; ++j) {
    const int l = levels[static_cast<std::size_t>(j)];
    if (l < 0 || l >= n_levels_) return std::nullopt;
    code += static_cast<std::uint64_t>(l) * powers_[static_cast<std::size_t>(j)];
  }
  return find(code);
}

// ---------------------------------------------------------------------------
// Operators

SpMat lowering_operator(const TruncatedBasis& basis, const LevelScheme& scheme, int atom,
                        int transition) {
  const auto& tr = scheme.transition(transition);
  std::vector<Eigen::Triplet<Complex>> trip;
  for (std::size_t s = 0; s < basis.dim(); ++s) {
    if (basis.level(s, atom) != tr.excited) continue;
    const auto target = basis.find(basis.with_level(basis.code(s), atom, tr.ground));
    if (target) trip.emplace_back(static_cast<int>(*target), static_cast<int>(s), 1.0);
  }
  SpMat m(static_cast<Eigen::Index>(basis.dim()), static_cast<Eigen::Index>(basis.dim()));
  m.setFromTriplets(trip.begin(), trip.end());
  return m;
}

namespace {

SpMat assemble_hamiltonian(const TruncatedBasis& basis, const CouplingMatrices& couplings,
                           const LevelScheme& scheme, const DriveParams& drive, bool with_decay) {
  if (couplings.n_atoms != basis.n_atoms()) throw std::invalid_argument("couplings/basis size");
  const int n = basis.n_atoms();
  const int nt = scheme.n_transitions();
  const CVec omega = transition_rabis(drive, scheme);
  CMat m = couplings.coherent;
  if (with_decay) m += Complex(0.0, 0.5) * couplings.dissipative;

  // transitions grouped by their excited and ground level
  std::vector<std::vector<int>> from_excited(static_cast<std::size_t>(scheme.n_levels()));
  std::vector<std::vector<int>> from_ground(static_cast<std::size_t>(scheme.n_levels()));
  for (int t = 0; t < nt; ++t) {
    from_excited[static_cast<std::size_t>(scheme.transition(t).excited)].push_back(t);
    from_ground[static_cast<std::size_t>(scheme.transition(t).ground)].push_back(t);
  }

  std::vector<Eigen::Triplet<Complex>> trip;
  for (std::size_t s = 0; s < basis.dim(); ++s) {
    const std::uint64_t c = basis.code(s);
    const int col = static_cast<int>(s);
    const int exc = basis.excitations(s);
    if (exc > 0 && drive.detuning != 0.0) trip.emplace_back(col, col, -drive.detuning * exc);
    for (int j = 0; j < n; ++j) {
      const int lv = basis.level_of(c, j);
      const auto& lvl = scheme.level(lv);
      if (!lvl.excited) {
        for (int t : from_ground[static_cast<std::size_t>(lv)]) {
          if (omega(t) == Complex(0.0)) continue;
          const auto target = basis.find(basis.with_level(c, j, scheme.transition(t).excited));
          if (target) trip.emplace_back(static_cast<int>(*target), col, -omega(t));
        }
        continue;
      }
      for (int b : from_excited[static_cast<std::size_t>(lv)]) {
        const auto& tb = scheme.transition(b);
        if (omega(b) != Complex(0.0)) {
          const auto target = basis.find(basis.with_level(c, j, tb.ground));
          if (target) trip.emplace_back(static_cast<int>(*target), col, -std::conj(omega(b)));
        }
        // -M_ab sigma_a^dag sigma_b with sigma_b lowering atom j
        const std::uint64_t c1 = basis.with_level(c, j, tb.ground);
        const int col_b = couplings.index(j, b);
        for (int i = 0; i < n; ++i) {
          const int li = basis.level_of(c1, i);
          for (int a : from_ground[static_cast<std::size_t>(li)]) {
            const Complex v = m(couplings.index(i, a), col_b);
            if (v == Complex(0.0)) continue;
            const auto target = basis.find(basis.with_level(c1, i, scheme.transition(a).excited));
            if (target) trip.emplace_back(static_cast<int>(*target), col, -v);
          }
        }
      }
    }
  }
  SpMat h(static_cast<Eigen::Index>(basis.dim()), static_cast<Eigen::Index>(basis.dim()));
  h.setFromTriplets(trip.begin(), trip.end());
  h.makeCompressed();
  return h;
}

}  // namespace

SpMat build_hamiltonian(const TruncatedBasis& basis, const CouplingMatrices& couplings,
                        const LevelScheme& scheme, const DriveParams& drive) {
  return assemble_hamiltonian(basis, couplings, scheme, drive, false);
}

SpMat build_effective_hamiltonian(const TruncatedBasis& basis, const CouplingMatrices& couplings,
                                  const LevelScheme& scheme, const DriveParams& drive) {
  return assemble_hamiltonian(basis, couplings, scheme, drive, true);
}

SpMat JumpSet::decay_operator() const {
  if (jumps.empty()) return {};
  SpMat out(jumps.front().op.rows(), jumps.front().op.cols());
  for (const auto& j : jumps) {
    SpMat term = SpMat(j.op.adjoint()) * j.op;
    out += j.rate * term;
  }
  return out;
}

JumpSet jump_decomposition(const CouplingMatrices& couplings, const TruncatedBasis& basis,
                           const LevelScheme& scheme, double negative_tolerance) {
  Eigen::SelfAdjointEigenSolver<CMat> es(couplings.dissipative);
  if (es.info() != Eigen::Success) throw ModelError("decay-rate matrix diagonalization failed");
  const double min_rate = es.eigenvalues().minCoeff();
  if (min_rate < -negative_tolerance) {
    std::ostringstream msg;
    msg << "decay-rate matrix is not positive semidefinite: eigenvalue " << min_rate;
    throw ModelError(msg.str());
  }
  const int dim = couplings.dim();
  const int nt = couplings.n_transitions;
  std::vector<SpMat> sigma;
  sigma.reserve(static_cast<std::size_t>(dim));
  for (int a = 0; a < dim; ++a) sigma.push_back(lowering_operator(basis, scheme, a / nt, a % nt));

  JumpSet set;
  set.jumps.reserve(static_cast<std::size_t>(dim));
  for (int l = 0; l < dim; ++l) {
    Jump j;
    j.rate = std::max(0.0, es.eigenvalues()(l));
    j.weights = es.eigenvectors().col(l).conjugate();
    j.op = SpMat(sigma.front().rows(), sigma.front().cols());
    for (int b = 0; b < dim; ++b) {
      if (std::abs(j.weights(b)) < 1e-15) continue;
      j.op += j.weights(b) * sigma[static_cast<std::size_t>(b)];
    }
    j.op.makeCompressed();
    set.jumps.push_back(std::move(j));
  }
  return set;
}

// ---------------------------------------------------------------------------
// Krylov exponential

double one_norm(const SpMat& a) {
  Eigen::VectorXd col = Eigen::VectorXd::Zero(a.cols());
  for (Eigen::Index r = 0; r < a.outerSize(); ++r) {
    for (SpMat::InnerIterator it(a, r); it; ++it) col(it.col()) += std::abs(it.value());
  }
  return col.size() ? col.maxCoeff() : 0.0;
}

namespace {

double round_step(double t) {
  const double s = std::pow(10.0, std::floor(std::log10(t)) - 1.0);
  return std::ceil(t / s) * s;
}

}  // namespace

std::vector<CVec> expv_sampled(const SpMat& h_eff, std::span<const double> times,
                               const CVec& v, const KrylovOptions& options,
                               KrylovStats* stats, double anorm) {
  KrylovStats local;
  KrylovStats& st = stats ? *stats : local;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!(times[i] > 0.0) || (i > 0 && !(times[i] > times[i - 1]))) {
      throw std::domain_error("expv sample times must be positive and increasing");
    }
  }
  std::vector<CVec> out;
  out.reserve(times.size());
  if (times.empty()) return out;
  const double t = times.back();
  const Eigen::Index n = v.size();
  double beta = v.norm();
  if (beta == 0.0) {
    out.assign(times.size(), v);
    return out;
  }
  if (n == 1) {
    ++st.matvecs;
    for (double tau : times) out.push_back(v * std::exp(-kI * h_eff.coeff(0, 0) * tau));
    return out;
  }
  if (!(anorm > 0.0)) anorm = std::max(one_norm(h_eff), std::numeric_limits<double>::min());
  int m_req = std::max(2, options.subspace);
  if (options.adaptive_subspace) {
    // Taylor-degree estimate for the whole interval; short intervals need few vectors.
    const double est = std::ceil(anorm * t) + 12.0;
    m_req = std::clamp(static_cast<int>(std::min(est, 1e6)), std::min(m_req, options.min_subspace), m_req);
  }
  const int m = static_cast<int>(std::min<Eigen::Index>(m_req, n));
  const double btol = 1e-7;
  const double gamma = 0.9;
  const double delta = 1.2;
  const double tol = options.tol;

  auto apply = [&](const CVec& x) {
    ++st.matvecs;
    return CVec(-kI * (h_eff * x));
  };

  double xm = 1.0 / m;
  const double fact = std::pow((m + 1) / std::exp(1.0), m + 1) * std::sqrt(2.0 * kPi * (m + 1));
  double t_new = round_step((1.0 / anorm) * std::pow((fact * tol) / (4.0 * beta * anorm), xm));

  CVec w = v;
  double t_now = 0.0;
  std::size_t next = 0;  // next sample to emit
  CMat vk(n, m + 1);
  CMat hk(m + 2, m + 2);
  while (next < times.size()) {
    if (++st.substeps > options.max_substeps) {
      throw StepRefusal("Krylov exponential exceeded its substep budget");
    }
    double t_step = std::min(t - t_now, t_new);
    vk.setZero();
    hk.setZero();
    vk.col(0) = w / beta;
    int mb = m;
    int k1 = 2;
    for (int j = 0; j < m; ++j) {
      CVec p = apply(vk.col(j));
      // Classical Gram-Schmidt with one reorthogonalization pass.
      const auto basis = vk.leftCols(j + 1);
      CVec hcol = basis.adjoint() * p;
      p.noalias() -= basis * hcol;
      const CVec corr = basis.adjoint() * p;
      p.noalias() -= basis * corr;
      hcol += corr;
      hk.col(j).head(j + 1) = hcol;
      const double s = p.norm();
      if (s < btol) {
        k1 = 0;
        mb = j + 1;
        t_step = t - t_now;
        break;
      }
      hk(j + 1, j) = s;
      vk.col(j + 1) = p / s;
    }
    double avnorm = 0.0;
    if (k1 != 0) {
      hk(m + 1, m) = 1.0;
      avnorm = apply(vk.col(m)).norm();
    }
    const int mx_full = mb + k1;
    const int mx = mb + std::max(0, k1 - 1);
    const CMat hs = hk.topLeftCorner(mx_full, mx_full);

    // Pending samples on a uniform grid t_now + k * g share one small exponential.
    const double g = times[next] - t_now;
    std::size_t k_max = 1;
    while (next + k_max < times.size() &&
           std::abs(times[next + k_max] - (t_now + static_cast<double>(k_max + 1) * g)) <=
               1e-9 * std::max(1.0, g) * static_cast<double>(k_max + 1)) {
      ++k_max;
    }
    std::vector<CVec> ys;
    CMat e_g;
    CVec y_end;
    std::size_t n_samples = 0;
    double err_loc = 0.0;
    int rejections = 0;
    while (true) {
      n_samples = std::min<std::size_t>(
          k_max, static_cast<std::size_t>(std::floor(t_step / g + 1e-9)));
      if (n_samples >= 1) {
        if (ys.empty()) e_g = (g * hs).exp();
        while (ys.size() < n_samples) ys.push_back(e_g * (ys.empty() ? CVec(CVec::Unit(mx_full, 0)) : ys.back()));
        t_step = static_cast<double>(n_samples) * g;
        y_end = ys[n_samples - 1];
      } else {
        y_end = (t_step * hs).exp().col(0);
      }
      if (k1 == 0) {
        err_loc = btol;
        break;
      }
      const double phi1 = std::abs(beta * y_end(m));
      const double phi2 = std::abs(beta * y_end(m + 1) * avnorm);
      if (phi1 > 10.0 * phi2) {
        err_loc = phi2;
        xm = 1.0 / m;
      } else if (phi1 > phi2) {
        err_loc = (phi1 * phi2) / (phi1 - phi2);
        xm = 1.0 / m;
      } else {
        err_loc = phi1;
        xm = 1.0 / (m - 1);
      }
      if (err_loc <= delta * t_step * tol) break;
      if (++rejections > options.max_rejections) {
        throw StepRefusal("Krylov exponential rejected too many substeps");
      }
      ++st.rejections;
      t_step = round_step(gamma * t_step * std::pow(t_step * tol / err_loc, xm));
    }
    for (std::size_t k = 0; k + 1 < n_samples; ++k) {
      out.push_back(vk.leftCols(mx) * (beta * ys[k].head(mx)));
    }
    w = vk.leftCols(mx) * (beta * y_end.head(mx));
    beta = w.norm();
    if (!std::isfinite(beta)) throw StepRefusal("Krylov exponential produced a non-finite state");
    if (n_samples >= 1) {
      out.push_back(w);
      next += n_samples;
      t_now = times[next - 1];
    } else {
      t_now += t_step;
    }
    if (beta == 0.0) {
      while (next < times.size()) {
        out.push_back(w);
        ++next;
      }
      break;
    }
    const double ratio = err_loc > 0.0 ? t_step * tol / err_loc : 1e10;
    t_new = round_step(gamma * t_step * std::pow(ratio, xm));
  }
  return out;
}

CVec expv(const SpMat& h_eff, double t, const CVec& v, const KrylovOptions& options,
          KrylovStats* stats) {
  if (!(t >= 0.0)) throw std::domain_error("expv needs t >= 0");
  if (t == 0.0) return v;
  const double times[] = {t};
  return std::move(expv_sampled(h_eff, times, v, options, stats).front());
}

// ---------------------------------------------------------------------------
// Trajectories

void StepSchedule::validate() const {
  if (!(t_l > t_m && t_m > t_s && t_s > 0.0)) {
    throw std::domain_error("step schedule needs t_l > t_m > t_s > 0");
  }
}

TrajectoryEngine::TrajectoryEngine(const CouplingMatrices& couplings, const LevelScheme& scheme,
                                   const DriveParams& drive, int max_excitations,
                                   std::size_t max_dimension)
    : scheme_(scheme),
      basis_(couplings.n_atoms, max_excitations, scheme, max_dimension),
      h_eff_(build_effective_hamiltonian(basis_, couplings, scheme, drive)),
      anorm_(one_norm(h_eff_)),
      jumps_(jump_decomposition(couplings, basis_, scheme)) {}

CVec TrajectoryEngine::initial_state() const {
  std::vector<int> levels(static_cast<std::size_t>(basis_.n_atoms()), scheme_.stretched_ground());
  CVec psi = CVec::Zero(static_cast<Eigen::Index>(basis_.dim()));
  psi(static_cast<Eigen::Index>(*basis_.find(levels))) = 1.0;
  return psi;
}

namespace {

double draw_threshold(Engine& rng, const TrajectoryOptions& options) {
  return options.threshold_source ? options.threshold_source(rng) : uniform_open(rng);
}

}  // namespace

TrajectoryState TrajectoryEngine::make_state(std::uint64_t seed, std::uint64_t index,
                                             const TrajectoryOptions& options) const {
  TrajectoryState st;
  st.psi = initial_state();
  st.rng = make_stream(seed, index);
  st.threshold = draw_threshold(st.rng, options);
  return st;
}

void TrajectoryEngine::evolve_nojump(TrajectoryState& state, double dt,
                                     const KrylovOptions& options, KrylovStats* stats) const {
  if (!(dt > 0.0)) throw std::domain_error("evolve_nojump needs dt > 0");
  const double times[] = {dt};
  state.psi = std::move(expv_sampled(h_eff_, times, state.psi, options, stats, anorm_).front());
  state.norm2 = state.psi.squaredNorm();
  state.time += dt;
}

std::vector<double> TrajectoryEngine::jump_weights(const CVec& psi) const {
  const double n2 = psi.squaredNorm();
  std::vector<double> w(jumps_.jumps.size(), 0.0);
  for (std::size_t l = 0; l < jumps_.jumps.size(); ++l) {
    const auto& j = jumps_.jumps[l];
    if (j.rate <= 0.0) continue;
    w[l] = j.rate * (j.op * psi).squaredNorm() / n2;
  }
  return w;
}

int TrajectoryEngine::select_jump(TrajectoryState& state) const {
  const auto w = jump_weights(state.psi);
  double total = 0.0;
  for (double x : w) total += x;
  if (!(total > 0.0)) throw std::logic_error("jump triggered with zero total jump rate");
  const double r = uniform_closed_open(state.rng) * total;
  double acc = 0.0;
  int channel = -1;
  for (std::size_t l = 0; l < w.size(); ++l) {
    if (w[l] <= 0.0) continue;
    acc += w[l];
    channel = static_cast<int>(l);
    if (r < acc) break;
  }
  CVec out = jumps_.jumps[static_cast<std::size_t>(channel)].op * state.psi;
  state.psi = out / out.norm();
  state.norm2 = 1.0;
  state.survival = 1.0;
  return channel;
}

std::vector<std::vector<double>> TrajectoryEngine::populations(const CVec& psi) const {
  const int n = basis_.n_atoms();
  std::vector<std::vector<double>> p(static_cast<std::size_t>(n),
                                     std::vector<double>(static_cast<std::size_t>(scheme_.n_levels()), 0.0));
  const double n2 = psi.squaredNorm();
  for (std::size_t s = 0; s < basis_.dim(); ++s) {
    const double w = std::norm(psi(static_cast<Eigen::Index>(s)));
    if (w == 0.0) continue;
    std::uint64_t c = basis_.code(s);
    for (int j = n - 1; j >= 0; --j) {
      const auto l = static_cast<std::size_t>(c % static_cast<std::uint64_t>(scheme_.n_levels()));
      c /= static_cast<std::uint64_t>(scheme_.n_levels());
      p[static_cast<std::size_t>(j)][l] += w;
    }
  }
  for (auto& row : p) {
    for (auto& x : row) x /= n2;
  }
  return p;
}

namespace {

// Trapezoid accumulation of per-atom populations over [start, end] windows.
class WindowAverager {
 public:
  WindowAverager(double start, double mid, double end, int n_atoms, int n_levels)
      : start_(start), mid_(mid), end_(end),
        full_(static_cast<std::size_t>(n_atoms), std::vector<double>(static_cast<std::size_t>(n_levels), 0.0)) {}

  void sample(double t, std::vector<std::vector<double>> pops, int level_of_interest) {
    if (has_last_ && t > last_t_ && last_t_ >= start_ - 1e-9) {
      const double dt = t - last_t_;
      for (std::size_t j = 0; j < full_.size(); ++j) {
        for (std::size_t l = 0; l < full_[j].size(); ++l) {
          full_[j][l] += 0.5 * dt * (pops[j][l] + last_[j][l]);
        }
      }
      double a = 0.0, b = 0.0;
      for (std::size_t j = 0; j < full_.size(); ++j) {
        a += last_[j][static_cast<std::size_t>(level_of_interest)];
        b += pops[j][static_cast<std::size_t>(level_of_interest)];
      }
      const double mean = 0.5 * dt * (a + b) / static_cast<double>(full_.size());
      (last_t_ < mid_ - 1e-9 ? first_ : second_) += mean;
    }
    last_t_ = t;
    last_ = std::move(pops);
    has_last_ = true;
  }

  bool empty() const { return end_ <= start_; }
  std::vector<std::vector<double>> average() const {
    auto out = full_;
    for (auto& row : out) {
      for (auto& x : row) x /= (end_ - start_);
    }
    return out;
  }
  double first_half() const { return first_ / (mid_ - start_); }
  double second_half() const { return second_ / (end_ - mid_); }

 private:
  double start_, mid_, end_;
  std::vector<std::vector<double>> full_;
  std::vector<std::vector<double>> last_;
  double last_t_ = 0.0;
  bool has_last_ = false;
  double first_ = 0.0;
  double second_ = 0.0;
};

}  // namespace

TrajectoryResult TrajectoryEngine::run_trajectory(std::uint64_t seed, std::uint64_t index,
                                                  const TrajectoryOptions& options) const {
  options.schedule.validate();
  if (!(options.t_final > 0.0)) throw std::domain_error("t_final must be positive");
  if (!(options.window_fraction >= 0.0 && options.window_fraction < 1.0)) {
    throw std::domain_error("window fraction must lie in [0, 1)");
  }
  const auto& sch = options.schedule;
  const double t_f = options.t_final;
  const double t_w = t_f * (1.0 - options.window_fraction);
  const double t_mid = 0.5 * (t_w + t_f);
  const double eps = 1e-9 * std::max(1.0, t_f);
  const int n = basis_.n_atoms();
  const int nl = scheme_.n_levels();

  TrajectoryResult res;
  res.seed = seed;
  res.index = index;
  TrajectoryState st = make_state(seed, index, options);
  WindowAverager avg(t_w, t_mid, t_f, n, nl);

  auto observe_at = [&](double t, const CVec& psi_unit) {
    if (t < t_w - eps && !options.record_snapshots) return;
    auto pops = populations(psi_unit);
    if (options.record_snapshots) {
      Snapshot sn;
      sn.time = t;
      for (int j = 0; j < n; ++j) {
        sn.p1 += pops[static_cast<std::size_t>(j)][0];
        sn.p2 += pops[static_cast<std::size_t>(j)][1];
        for (int l = 0; l < nl; ++l) {
          if (scheme_.level(l).excited) sn.excited += pops[static_cast<std::size_t>(j)][static_cast<std::size_t>(l)];
        }
      }
      sn.p1 /= n;
      sn.p2 /= n;
      sn.excited /= n;
      res.snapshots.push_back(sn);
    }
    if (t >= t_w - eps) avg.sample(t, std::move(pops), 0);
  };
  auto observe = [&](const CVec& psi_unit) { observe_at(st.time, psi_unit); };

  KrylovStats ks;
  // Grid t0 + h, t0 + 2h, ..., t0 + span relative to the interval start.
  auto grid = [](double span, double h) {
    std::vector<double> g;
    const double tol = 1e-12 * std::max(1.0, span);
    for (double x = h; x < span - tol; x += h) g.push_back(x);
    g.push_back(span);
    return g;
  };
  // Decides one attempted step whose end state (relative to the state at the
  // start of its interval) is `trial`; accepted steps advance and renormalize.
  auto attempt = [&](StepScale scale, double t_end, double base_survival, const CVec& trial) {
    const auto k = static_cast<std::size_t>(scale);
    ++res.stats.attempts[k];
    const double n2 = trial.squaredNorm();
    const double survival = base_survival * n2;
    const double dp = 1.0 - survival;
    const bool ok = dp < st.threshold;
    if (options.record_steps) res.steps.push_back({scale, ok, st.time, dp});
    if (ok) {
      ++res.stats.accepted[k];
      st.psi = trial / std::sqrt(n2);
      st.norm2 = n2;
      st.survival = survival;
      st.time = t_end;
      observe(st.psi);
    }
    return ok;
  };
  bool fresh = true;
  auto jump_with = [&](double t_end, const CVec& trial) {
    st.time = t_end;
    st.norm2 = trial.squaredNorm();
    st.psi = trial / std::sqrt(st.norm2);
    observe(st.psi);
    const int ch = select_jump(st);
    res.jumps.push_back({st.time, ch});
    st.threshold = draw_threshold(st.rng, options);
    observe(st.psi);
    fresh = true;
  };
  // Resolves the transient after a jump on the small grid when the first
  // medium step of the following interval is accepted.
  auto observe_transient = [&](double t0, double span, const CVec& psi0) {
    if (!fresh) return;
    fresh = false;
    if (t0 + span < t_w - eps && !options.record_snapshots) return;
    auto g = grid(span, sch.t_s);
    g.pop_back();
    if (g.empty()) return;
    const auto states = expv_sampled(h_eff_, g, psi0, options.krylov, &ks, anorm_);
    for (std::size_t i = 0; i < g.size(); ++i) observe_at(t0 + g[i], states[i].normalized());
  };

  observe(st.psi);
  while (st.time < t_f - eps) {
    const double limit = st.time < t_w - eps ? t_w : (st.time < t_mid - eps ? t_mid : t_f);
    const double t_l0 = st.time;
    const double s_l0 = st.survival;
    const auto g_m = grid(std::min(sch.t_l, limit - st.time), sch.t_m);
    // One propagation over the large interval also yields every medium-grid state.
    const auto states_m = expv_sampled(h_eff_, g_m, st.psi, options.krylov, &ks, anorm_);
    if (1.0 - s_l0 * states_m.back().squaredNorm() < st.threshold) {
      observe_transient(t_l0, g_m.front(), st.psi);
      // Interior medium-grid states feed the window average.
      for (std::size_t k = 0; k + 1 < g_m.size(); ++k) observe_at(t_l0 + g_m[k], states_m[k].normalized());
    }
    if (attempt(StepScale::Large, t_l0 + g_m.back(), s_l0, states_m.back())) continue;

    // Restart the interval from the saved state with medium steps.
    for (std::size_t k = 0; k < g_m.size(); ++k) {
      if (k == 0 && 1.0 - s_l0 * states_m[0].squaredNorm() < st.threshold) {
        observe_transient(t_l0, g_m.front(), st.psi);
      }
      fresh = false;
      if (attempt(StepScale::Medium, t_l0 + g_m[k], s_l0, states_m[k])) continue;
      // Overshoot inside medium step k: rescan it with small steps.
      const double t_m0 = st.time;
      const double s_m0 = st.survival;
      const auto g_s = grid(t_l0 + g_m[k] - t_m0, sch.t_s);
      const auto states_s = expv_sampled(h_eff_, g_s, st.psi, options.krylov, &ks, anorm_);
      bool jumped = false;
      for (std::size_t i = 0; i < g_s.size(); ++i) {
        if (attempt(StepScale::Small, t_m0 + g_s[i], s_m0, states_s[i])) continue;
        if (options.refine_jump_time) {
          double lo = 0.0, hi = t_m0 + g_s[i] - st.time;
          CVec at_hi = states_s[i];
          while (hi - lo > options.jump_time_resolution) {
            const double mid = 0.5 * (lo + hi);
            CVec w = expv(h_eff_, mid, st.psi, options.krylov, &ks);
            if (1.0 - st.survival * w.squaredNorm() < st.threshold) {
              lo = mid;
            } else {
              hi = mid;
              at_hi = std::move(w);
            }
          }
          // states_s[i] is relative to the medium start; at_hi to the current state.
          if (hi < t_m0 + g_s[i] - st.time) {
            jump_with(st.time + hi, at_hi);
          } else {
            jump_with(t_m0 + g_s[i], states_s[i]);
          }
        } else {
          jump_with(t_m0 + g_s[i], states_s[i]);
        }
        jumped = true;
        break;
      }
      // The medium and small propagations may disagree at the tolerance level;
      // the medium step already crossed the threshold, so jump at its end.
      if (!jumped) jump_with(st.time, st.psi);
      break;
    }
  }

  res.stats.matvecs = ks.matvecs;
  if (avg.empty()) {
    res.populations = populations(st.psi);
    res.p1_first_half = res.p1_second_half = 0.0;
  } else {
    res.populations = avg.average();
    res.p1_first_half = avg.first_half();
    res.p1_second_half = avg.second_half();
  }
  for (int j = 0; j < n; ++j) {
    const auto& row = res.populations[static_cast<std::size_t>(j)];
    res.p1 += row[0];
    res.p2 += row[1];
    for (int l = 0; l < nl; ++l) {
      if (scheme_.level(l).excited) res.excited += row[static_cast<std::size_t>(l)];
    }
  }
  res.p1 /= n;
  res.p2 /= n;
  res.excited /= n;
  if (avg.empty()) res.p1_first_half = res.p1_second_half = res.p1;
  res.final_state = std::move(st);
  return res;
}

// ---------------------------------------------------------------------------
// Ensembles

Estimate ensemble_average(std::span<const double> samples) {
  if (samples.size() < 2) throw std::invalid_argument("ensemble average needs >= 2 samples");
  Estimate e;
  e.count = samples.size();
  double sum = 0.0;
  for (double x : samples) sum += x;
  e.mean = sum / static_cast<double>(e.count);
  double ss = 0.0;
  for (double x : samples) ss += (x - e.mean) * (x - e.mean);
  e.std_dev = std::sqrt(ss / static_cast<double>(e.count - 1));
  e.std_error = e.std_dev / std::sqrt(static_cast<double>(e.count));
  return e;
}

Estimate ensemble_average(std::span<const TrajectoryResult> trajectories,
                          const std::function<double(const TrajectoryResult&)>& observable) {
  std::vector<double> x;
  x.reserve(trajectories.size());
  for (const auto& t : trajectories) x.push_back(observable(t));
  return ensemble_average(x);
}

EnsembleResult run_ensemble(const TrajectoryEngine& engine, int n_traj, std::uint64_t seed,
                            const TrajectoryOptions& options) {
  if (n_traj < 2) throw std::domain_error("ensemble needs n_traj >= 2");
  EnsembleResult out;
  out.trajectories.resize(static_cast<std::size_t>(n_traj));
  std::string error;
#pragma omp parallel for schedule(dynamic, 1)
  for (int i = 0; i < n_traj; ++i) {
    try {
      auto r = engine.run_trajectory(seed, static_cast<std::uint64_t>(i), options);
      r.final_state.psi.resize(0);
      out.trajectories[static_cast<std::size_t>(i)] = std::move(r);
    } catch (const std::exception& e) {
#pragma omp critical
      if (error.empty()) error = e.what();
    }
  }
  if (!error.empty()) throw std::runtime_error("trajectory failed: " + error);

  out.p1 = ensemble_average(out.trajectories, [](const TrajectoryResult& t) { return t.p1; });
  out.p2 = ensemble_average(out.trajectories, [](const TrajectoryResult& t) { return t.p2; });
  out.excited = ensemble_average(out.trajectories, [](const TrajectoryResult& t) { return t.excited; });
  const auto first = ensemble_average(out.trajectories, [](const TrajectoryResult& t) { return t.p1_first_half; });
  const auto second = ensemble_average(out.trajectories, [](const TrajectoryResult& t) { return t.p1_second_half; });
  out.drift_sigma = out.p1.std_error > 0.0 ? std::abs(first.mean - second.mean) / out.p1.std_error : 0.0;
  const int n = engine.basis().n_atoms();
  out.p1_per_atom.assign(static_cast<std::size_t>(n), 0.0);
  for (const auto& t : out.trajectories) {
    for (int j = 0; j < n; ++j) out.p1_per_atom[static_cast<std::size_t>(j)] += t.populations[static_cast<std::size_t>(j)][0];
  }
  for (auto& x : out.p1_per_atom) x /= n_traj;
  return out;
}

void write_trajectory_batch(std::ostream& os, std::span<const TrajectoryResult> trajectories) {
  for (const auto& t : trajectories) {
    nlohmann::json j;
    j["seed"] = t.seed;
    j["index"] = t.index;
    j["p1"] = t.p1;
    j["p2"] = t.p2;
    j["excited"] = t.excited;
    j["p1_first_half"] = t.p1_first_half;
    j["p1_second_half"] = t.p1_second_half;
    std::vector<double> per_atom;
    for (const auto& row : t.populations) per_atom.push_back(row.at(0));
    j["p1_per_atom"] = per_atom;
    j["steps"] = {{"large", {t.stats.attempts[0], t.stats.accepted[0]}},
                  {"medium", {t.stats.attempts[1], t.stats.accepted[1]}},
                  {"small", {t.stats.attempts[2], t.stats.accepted[2]}},
                  {"matvecs", t.stats.matvecs}};
    nlohmann::json jumps = nlohmann::json::array();
    for (const auto& jr : t.jumps) jumps.push_back({jr.time, jr.channel});
    j["jumps"] = std::move(jumps);
    os << j.dump() << '\n';
  }
}

}  // namespace popmix
