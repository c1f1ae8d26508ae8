#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "popmix/common.hpp"
#include "popmix/geometry.hpp"
#include "popmix/green.hpp"
#include "popmix/levels.hpp"

namespace popmix {

/// Product state: one single-atom density matrix per atom.
struct MeanFieldState {
  std::vector<CMat> rho;
  double time = 0.0;

  int n_atoms() const { return static_cast<int>(rho.size()); }
  /// Every atom in level `level`.
  static MeanFieldState uniform(int n_atoms, const LevelScheme& scheme, int level);
  /// Largest violation over atoms of trace, Hermiticity and positivity.
  double trace_error() const;
  double hermiticity_error() const;
  double min_eigenvalue() const;

  /// {"n_atoms", "n_levels", "time", "rho": [[[re, im] x n_levels^2] per atom]}, row-major.
  void write_json(std::ostream& os) const;
  static MeanFieldState read_json(std::istream& is);
};

/// <sigma_ge> = rho_eg for every (atom, transition), atom-major.
CVec coherences(const MeanFieldState& state, const LevelScheme& scheme);

/// Effective Rabi frequencies R_eg on atom `atom` from the coherences of all other atoms.
CVec effective_rabi(int atom, const CVec& coherences, const CouplingMatrices& couplings);
/// Same for all atoms at once, atom-major.
CVec effective_rabis(const CVec& coherences, const CouplingMatrices& couplings);

/// Single-atom Lindbladian under a given total drive per transition. Row-major
/// vectorization: vec(rho)[i * n + j] = rho(i, j).
class SingleAtomModel {
 public:
  SingleAtomModel(const LevelScheme& scheme, double detuning);

  const LevelScheme& scheme() const { return scheme_; }
  int n() const { return n_; }

  /// H = -detuning sum|e><e| - sum_t (W_t |e><g| + h.c.).
  CMat hamiltonian(const CVec& drive) const;
  CMat liouvillian(const CVec& drive) const;
  CMat rhs(const CMat& rho, const CVec& drive) const;
  /// Unique steady state (trace row replaces the first equation).
  CMat steady_state(const CVec& drive) const;

 private:
  LevelScheme scheme_;
  int n_;
  double detuning_;
  CMat dissipator_;  // fixed part of the Liouvillian
};

/// d rho / dt for every atom.
MeanFieldState mf_rhs(const MeanFieldState& state, const DriveParams& drive,
                      const CouplingMatrices& couplings, const LevelScheme& scheme);

/// Max over atoms and entries of |d rho/dt|.
double mf_residual(const MeanFieldState& state, const DriveParams& drive,
                   const CouplingMatrices& couplings, const LevelScheme& scheme);

struct MeanFieldOptions {
  double mixing = 0.5;
  int anderson_depth = 8;
  int max_iterations = 400;
  double tolerance = 1e-10;             // on the residual, units of Gamma
  double coherence_tolerance = 1e-14;   // fixed-point increment stop
  bool integration_fallback = true;
  double fallback_max_step = 0.05;      // 1/Gamma
  double fallback_max_time = 2.0e5;     // 1/Gamma
  bool check_uniqueness = false;        // re-solve from a second initial state
  double uniqueness_tolerance = 1e-6;
  std::optional<MeanFieldState> initial;  // default: all atoms in the stretched ground level
};

struct SteadyStateReport {
  MeanFieldState state;
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
  std::string method;       // "fixed-point" or "integration"
  std::string diagnostics;  // non-empty when something noteworthy happened
  /// Max population difference to the second solve, when requested.
  std::optional<double> uniqueness_gap;
};

SteadyStateReport mf_steady_state(const CouplingMatrices& couplings, const LevelScheme& scheme,
                                  const DriveParams& drive, const MeanFieldOptions& options = {});
SteadyStateReport mf_steady_state(const ArrayGeometry& geometry, const LevelScheme& scheme,
                                  const DriveParams& drive, const MeanFieldOptions& options = {},
                                  OnSiteDecay on_site = OnSiteDecay::PolarizationChannels);

/// Atom-averaged exchange sum for n identical atoms at spacing d:
/// (2/n) sum_{m=1}^{n-1} (n - m) G(m d xhat) = a * 1 + b * xhat xhat.
struct LatticeSum {
  std::int64_t n = 1;
  GreenScalars sum{};
};

/// Direct compensated summation in a single pass; `ns` must be ascending.
std::vector<LatticeSum> lattice_sums(std::span<const std::int64_t> ns, double d);

struct IdenticalAtomResult {
  std::int64_t n = 1;
  double d = 0.0;
  CMat rho;
  double p1 = 0.0;
  double p2 = 0.0;
  double ratio = 0.0;
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
};

/// One-atom mean-field problem in which every atom shares the same coherences.
IdenticalAtomResult identical_atom_steady_state(const LatticeSum& sum, double d,
                                                const LevelScheme& scheme,
                                                const DriveParams& drive,
                                                const MeanFieldOptions& options = {});
IdenticalAtomResult identical_atom_steady_state(std::int64_t n, double d,
                                                const LevelScheme& scheme,
                                                const DriveParams& drive,
                                                const MeanFieldOptions& options = {});
std::vector<IdenticalAtomResult> identical_atom_sweep(std::span<const std::int64_t> ns, double d,
                                                      const LevelScheme& scheme,
                                                      const DriveParams& drive,
                                                      const MeanFieldOptions& options = {});

}  // namespace popmix
