#pragma once

#include <cstdint>
#include <vector>

#include "json.hpp"
#include "popmix/geometry.hpp"
#include "popmix/levels.hpp"
#include "popmix/meanfield.hpp"

namespace popmix {

struct RealizationResult {
  std::uint64_t index = 0;
  double p1 = 0.0;
  double p2 = 0.0;
  double excited = 0.0;
  bool converged = false;
  double residual = 0.0;
  int iterations = 0;
};

struct DisorderSweepResult {
  int n_atoms = 0;
  DisorderSpec spec;
  std::vector<RealizationResult> realizations;  // index order, failures included
  int n_failed = 0;
  double mean = 0.0;      // <p1> over converged realizations
  double mean_p2 = 0.0;
  double mean_excited = 0.0;
  double std_dev = 0.0;   // sample standard deviation
  double std_error = 0.0;
  /// More than 1% of the realizations did not converge.
  bool failed = false;

  /// p1 of the converged realizations, index order.
  std::vector<double> p1_values() const;
  nlohmann::json to_json() const;
  static DisorderSweepResult from_json(const nlohmann::json& j);
};

/// Statistics over already computed realizations.
DisorderSweepResult aggregate_disorder(int n_atoms, const DisorderSpec& spec,
                                       std::vector<RealizationResult> realizations);

RealizationResult run_realization(int n_atoms, const DisorderSpec& spec, std::uint64_t index,
                                  const LevelScheme& scheme, const DriveParams& drive,
                                  const MeanFieldOptions& options = {});

/// Mean-field p1 over spec.n_realizations disordered chains, run concurrently.
/// With zero strength every realization is the ordered chain, solved once.
DisorderSweepResult disorder_average(int n_atoms, const DisorderSpec& spec,
                                     const LevelScheme& scheme, const DriveParams& drive,
                                     const MeanFieldOptions& options = {});

}  // namespace popmix
