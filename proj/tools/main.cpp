#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "popmix/cli.hpp"

namespace cli = popmix::cli;

int main(int argc, char** argv) {
  CLI::App app{"Steady states of driven atom chains with dipole-dipole interactions"};
  std::string config_path;
  std::optional<std::string> method, n, d, max_exc, out;
  std::optional<double> omega, delta;
  std::optional<int> n_traj;
  std::optional<std::uint64_t> seed;
  bool resume = false;
  bool print_config = false;

  app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--method", method, "meanfield | qmcw | exact | identical-atom");
  app.add_option("--n", n, "atom numbers: 10 | 10,25,50 | start:stop:step");
  app.add_option("--d", d, "spacings in wavelengths, same grid syntax");
  app.add_option("--omega", omega, "Rabi frequency of the stretched transition (units of Gamma)");
  app.add_option("--delta", delta, "laser detuning (units of Gamma)");
  app.add_option("--max-exc", max_exc, "excitation truncation(s) for qmcw, e.g. 1,2");
  app.add_option("--n-traj", n_traj, "trajectories per point (qmcw)");
  app.add_option("--seed", seed, "master seed");
  app.add_option("--out", out, "results file (JSON lines); CSV projection written alongside");
  app.add_flag("--resume", resume, "continue an interrupted run with the same configuration");
  app.add_flag("--print-config", print_config, "print the resolved configuration and exit");
  CLI11_PARSE(app, argc, argv);

  try {
    cli::RunConfig config = config_path.empty() ? cli::RunConfig{} : cli::load_config(config_path);
    if (method) config.method = cli::parse_method(*method);
    if (n) config.n = cli::parse_int_grid(*n);
    if (d) config.d = cli::parse_real_grid(*d);
    if (omega) config.omega = *omega;
    if (delta) config.delta = *delta;
    if (max_exc) {
      config.max_exc.clear();
      for (auto v : cli::parse_int_grid(*max_exc)) config.max_exc.push_back(static_cast<int>(v));
    }
    if (n_traj) config.n_traj = *n_traj;
    if (seed) config.seed = *seed;
    if (out) config.output = *out;
    config.validate();
    if (print_config) {
      std::cout << config.to_json().dump(2) << "\nhash " << config.hash() << '\n';
      return 0;
    }
    const auto summary = cli::run(config, resume, std::cerr);
    std::cout << "points " << summary.computed + summary.skipped << " computed " << summary.computed
              << " resumed " << summary.skipped << " flagged " << summary.flagged << '\n';
    return summary.flagged > 0 ? 1 : 0;
  } catch (const cli::ConfigError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const cli::ResumeMismatch& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const popmix::CapacityError& e) {
    std::cerr << "capacity error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 5;
  }
}
