#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/SparseCore>

#include "popmix/common.hpp"
#include "popmix/green.hpp"
#include "popmix/levels.hpp"
#include "popmix/rng.hpp"

namespace popmix {

using SpMat = Eigen::SparseMatrix<Complex, Eigen::RowMajor>;

/// Product configurations with at most `max_excitations` atoms in the excited
/// manifold, sorted lexicographically (atom 0 most significant, levels in
/// scheme order).
class TruncatedBasis {
 public:
  static constexpr std::size_t kDefaultMaxDimension = 4'000'000;

  /// Throws CapacityError when the dimension exceeds `max_dimension`.
  TruncatedBasis(int n_atoms, int max_excitations, const LevelScheme& scheme,
                 std::size_t max_dimension = kDefaultMaxDimension);

  /// Number of configurations without enumerating them.
  static std::size_t count(int n_atoms, int max_excitations, const LevelScheme& scheme);

  int n_atoms() const { return n_atoms_; }
  int max_excitations() const { return max_excitations_; }
  int n_levels() const { return n_levels_; }
  std::size_t dim() const { return codes_.size(); }

  std::uint64_t code(std::size_t index) const { return codes_[index]; }
  int level(std::size_t index, int atom) const { return level_of(codes_[index], atom); }
  int level_of(std::uint64_t code, int atom) const;
  std::uint64_t with_level(std::uint64_t code, int atom, int level) const;
  int excitations(std::size_t index) const;
  std::optional<std::size_t> find(std::uint64_t code) const;
  std::optional<std::size_t> find(std::span<const int> levels) const;

 private:
  int n_atoms_;
  int max_excitations_;
  int n_levels_;
  std::vector<bool> excited_;
  std::vector<std::uint64_t> powers_;  // L^(n-1-j)
  std::vector<std::uint64_t> codes_;
};

/// sigma_b = |g><e| on one atom, restricted to the basis.
SpMat lowering_operator(const TruncatedBasis& basis, const LevelScheme& scheme, int atom,
                        int transition);

/// Hermitian H_A + H_int on the basis.
SpMat build_hamiltonian(const TruncatedBasis& basis, const CouplingMatrices& couplings,
                        const LevelScheme& scheme, const DriveParams& drive);
/// H_A + H_int - (i/2) sum_ab Gamma_ab sigma_a^dag sigma_b.
SpMat build_effective_hamiltonian(const TruncatedBasis& basis, const CouplingMatrices& couplings,
                                  const LevelScheme& scheme, const DriveParams& drive);

struct Jump {
  double rate = 0.0;
  SpMat op;  // J_l = sum_b conj(U_bl) sigma_b
  CVec weights;  // conj(U_bl) over (atom, transition)
};

struct JumpSet {
  std::vector<Jump> jumps;
  /// Sum_l rate_l J_l^dag J_l.
  SpMat decay_operator() const;
};

/// Diagonalizes the decay-rate matrix. Throws ModelError for rates below
/// -`negative_tolerance`; smaller negatives are clamped to zero.
JumpSet jump_decomposition(const CouplingMatrices& couplings, const TruncatedBasis& basis,
                           const LevelScheme& scheme, double negative_tolerance = 1e-10);

struct KrylovOptions {
  int subspace = 30;   // maximum Arnoldi dimension
  int min_subspace = 8;
  bool adaptive_subspace = true;  // shrink the subspace for short intervals
  double tol = 1e-9;   // local relative error per unit time
  int max_substeps = 100000;
  int max_rejections = 10;
};

struct KrylovStats {
  int substeps = 0;
  int matvecs = 0;
  int rejections = 0;
};

/// w = exp(t * A) v, A = -i H_eff given as H_eff; adaptive substepping with
/// a posteriori error control. Throws StepRefusal on internal failure.
CVec expv(const SpMat& h_eff, double t, const CVec& v, const KrylovOptions& options = {},
          KrylovStats* stats = nullptr);

/// exp(-i H_eff tau) v at every tau in `times` (positive, increasing) from a
/// single propagation; samples inside a substep share its Krylov basis.
/// `anorm` is the 1-norm of H_eff, computed when not positive.
std::vector<CVec> expv_sampled(const SpMat& h_eff, std::span<const double> times, const CVec& v,
                               const KrylovOptions& options = {}, KrylovStats* stats = nullptr,
                               double anorm = -1.0);

/// 1-norm (max column sum) of a sparse matrix.
double one_norm(const SpMat& a);

struct StepSchedule {
  double t_l = 1000.0;
  double t_m = 25.0;
  double t_s = 1.0;
  void validate() const;
};

struct TrajectoryState {
  CVec psi;
  double norm2 = 1.0;      // |psi|^2 before renormalization of the last step
  double survival = 1.0;   // accumulated no-jump probability since the last jump
  double time = 0.0;
  double threshold = 0.5;  // jump when 1 - survival exceeds it
  Engine rng;
};

struct JumpRecord {
  double time = 0.0;
  int channel = 0;
};

enum class StepScale { Large, Medium, Small };

struct StepEvent {
  StepScale scale;
  bool accepted;
  double time;  // start of the attempted step
  double dp;    // cumulative jump probability at the end of the attempt
};

struct StepStats {
  long attempts[3] = {0, 0, 0};
  long accepted[3] = {0, 0, 0};
  long matvecs = 0;
};

struct TrajectoryOptions {
  double t_final = 1.0e5;
  double window_fraction = 0.2;  // averaging window at the end of the run
  StepSchedule schedule;
  KrylovOptions krylov;
  bool record_steps = false;
  bool record_snapshots = false;
  /// Bisect the jump time inside the overshooting small step (off: resolve to t_s).
  bool refine_jump_time = false;
  double jump_time_resolution = 1e-3;
  /// Replaces the uniform threshold draw (testing hook).
  std::function<double(Engine&)> threshold_source;
};

struct Snapshot {
  double time = 0.0;
  double p1 = 0.0;
  double p2 = 0.0;
  double excited = 0.0;
};

struct TrajectoryResult {
  std::uint64_t seed = 0;
  std::uint64_t index = 0;
  std::vector<JumpRecord> jumps;
  std::vector<StepEvent> steps;
  std::vector<Snapshot> snapshots;
  StepStats stats;
  /// Time averages over the window, per atom and level: populations[atom][level].
  std::vector<std::vector<double>> populations;
  double p1 = 0.0;
  double p2 = 0.0;
  double excited = 0.0;
  /// p1 averaged over the first and second halves of the window.
  double p1_first_half = 0.0;
  double p1_second_half = 0.0;
  TrajectoryState final_state;
};

/// Everything needed to run trajectories for one parameter point.
class TrajectoryEngine {
 public:
  TrajectoryEngine(const CouplingMatrices& couplings, const LevelScheme& scheme,
                   const DriveParams& drive, int max_excitations,
                   std::size_t max_dimension = TruncatedBasis::kDefaultMaxDimension);

  const TruncatedBasis& basis() const { return basis_; }
  const SpMat& effective_hamiltonian() const { return h_eff_; }
  const JumpSet& jumps() const { return jumps_; }
  const LevelScheme& scheme() const { return scheme_; }

  /// All atoms in the stretched ground level.
  CVec initial_state() const;
  TrajectoryState make_state(std::uint64_t seed, std::uint64_t index,
                             const TrajectoryOptions& options) const;

  /// No-jump evolution by dt; psi is left unnormalized and norm2 updated.
  void evolve_nojump(TrajectoryState& state, double dt, const KrylovOptions& options,
                     KrylovStats* stats = nullptr) const;

  /// Samples a channel from the current psi and applies it (psi renormalized).
  /// Throws std::logic_error if every channel has zero weight.
  int select_jump(TrajectoryState& state) const;
  /// Channel weights rate_l <psi|J_l^dag J_l|psi> / <psi|psi>.
  std::vector<double> jump_weights(const CVec& psi) const;

  /// populations[atom][level] of the normalized state.
  std::vector<std::vector<double>> populations(const CVec& psi) const;

  TrajectoryResult run_trajectory(std::uint64_t seed, std::uint64_t index,
                                  const TrajectoryOptions& options) const;

 private:
  LevelScheme scheme_;
  TruncatedBasis basis_;
  SpMat h_eff_;
  double anorm_;
  JumpSet jumps_;
};

struct Estimate {
  double mean = 0.0;
  double std_error = 0.0;
  double std_dev = 0.0;
  std::size_t count = 0;
};

/// Sample mean with standard error std / sqrt(n). Needs at least two samples.
Estimate ensemble_average(std::span<const double> samples);
Estimate ensemble_average(std::span<const TrajectoryResult> trajectories,
                          const std::function<double(const TrajectoryResult&)>& observable);

struct EnsembleResult {
  std::vector<TrajectoryResult> trajectories;
  Estimate p1;
  Estimate p2;
  Estimate excited;
  /// Largest |first-half - second-half| drift of the window means, in units of its error.
  double drift_sigma = 0.0;
  std::vector<double> p1_per_atom;
};

/// Runs n_traj trajectories (indices 0..n_traj-1) concurrently; results are
/// collected in index order.
EnsembleResult run_ensemble(const TrajectoryEngine& engine, int n_traj, std::uint64_t seed,
                            const TrajectoryOptions& options);

/// One JSON object per trajectory: seed, index, window means, per-atom p1,
/// step statistics and the jump list [[time, channel], ...].
void write_trajectory_batch(std::ostream& os, std::span<const TrajectoryResult> trajectories);

/// Brute-force steady state of the full Lindbladian on the untruncated 6^N space.
struct ExactResult {
  CMat rho;
  std::vector<std::vector<double>> populations;  // [atom][level]
  double p1 = 0.0;  // mean over atoms
  double p2 = 0.0;
  double residual = 0.0;
  bool unique = true;
  std::string diagnostics;
};

ExactResult exact_master_equation(const CouplingMatrices& couplings, const LevelScheme& scheme,
                                  const DriveParams& drive);

}  // namespace popmix
