#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "popmix/observables.hpp"

namespace popmix::cli {

enum class Method { MeanField, Qmcw, Exact, IdenticalAtom };

std::string to_string(Method m);
Method parse_method(const std::string& name);

/// Invalid configuration; the message names the offending field.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Existing results file was produced by a different configuration.
class ResumeMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DisorderConfig {
  std::vector<double> eps{0.01, 0.02, 0.05, 0.1};
  int n_realizations = 500;
};

struct FarFieldConfig {
  int n_phi = 361;
  int n_theta = 181;
  std::optional<double> reference_max;  // divide maps by this value
};

struct RunConfig {
  Method method = Method::MeanField;
  std::vector<std::int64_t> n{10};
  std::vector<double> d{2.0};
  double omega = 0.01;
  double delta = 0.0;
  double minus_over_plus = 0.0;  // sigma- admixture of the drive
  std::string on_site = "polarization";  // or "per-transition"

  std::vector<int> max_exc{1};
  int n_traj = 2400;
  double t_final = 1.0e5;
  double window_fraction = 0.2;
  bool save_trajectories = false;

  double mf_tolerance = 1e-10;
  int mf_max_iterations = 400;
  bool check_uniqueness = false;

  std::optional<DisorderConfig> disorder;
  std::optional<FarFieldConfig> far_field;

  std::uint64_t seed = 1;
  std::string output = "results.jsonl";

  /// Throws ConfigError with a field-level message.
  void validate() const;
  /// Full resolved configuration (output path excluded).
  nlohmann::json to_json() const;
  /// 16 hex digits, FNV-1a of the canonical dump of to_json().
  std::string hash() const;
  /// Number of grid points.
  std::size_t grid_size() const;
};

/// Reads nested sections into a config; unknown keys are rejected.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::string& path);

/// Parses "10", "10,25,50", "0.5:3.2:0.01" (start:stop:step, inclusive) grids.
std::vector<double> parse_real_grid(const std::string& text);
std::vector<std::int64_t> parse_int_grid(const std::string& text);

struct GridPoint {
  std::size_t index = 0;
  std::int64_t n = 0;
  double d = 0.0;
  int max_exc = 0;
  double eps = 0.0;
  std::uint64_t seed = 0;  // derived sub-seed
};

/// Grid in commit order: n outermost, then d, max_exc, eps.
std::vector<GridPoint> expand_grid(const RunConfig& config);

struct RunSummary {
  std::size_t computed = 0;
  std::size_t skipped = 0;   // already present when resuming
  std::size_t flagged = 0;   // non-converged or failed points
};

/// Executes every grid point, appends records to config.output (JSONL) and
/// rewrites the CSV projection next to it. Log lines go to `log`.
/// Throws ResumeMismatch when resuming onto a file with another config hash.
RunSummary run(const RunConfig& config, bool resume, std::ostream& log);

/// CSV columns written by run(), in order.
const std::vector<std::string>& csv_columns();
/// Rewrites `csv_path` from the records in `jsonl_path`.
void write_csv(const std::string& jsonl_path, const std::string& csv_path);
std::string csv_path_for(const std::string& jsonl_path);

/// Worker count from POPMIX_THREADS, if set and valid.
std::optional<int> threads_from_env();

}  // namespace popmix::cli
