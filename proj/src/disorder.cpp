#include "popmix/disorder.hpp"

#include <cmath>

namespace popmix {

std::vector<double> DisorderSweepResult::p1_values() const {
  std::vector<double> out;
  for (const auto& r : realizations) {
    if (r.converged) out.push_back(r.p1);
  }
  return out;
}

nlohmann::json DisorderSweepResult::to_json() const {
  nlohmann::json j;
  j["n"] = n_atoms;
  j["base_spacing"] = spec.base_spacing;
  j["eps"] = spec.strength;
  j["n_realizations"] = spec.n_realizations;
  j["seed"] = spec.seed;
  j["n_failed"] = n_failed;
  j["mean"] = mean;
  j["mean_p2"] = mean_p2;
  j["mean_excited"] = mean_excited;
  j["std_dev"] = std_dev;
  j["std_error"] = std_error;
  j["failed"] = failed;
  auto& list = j["realizations"] = nlohmann::json::array();
  for (const auto& r : realizations) {
    list.push_back({{"index", r.index}, {"p1", r.p1}, {"p2", r.p2}, {"excited", r.excited}, {"converged", r.converged},
                    {"residual", r.residual}, {"iterations", r.iterations}});
  }
  return j;
}

DisorderSweepResult DisorderSweepResult::from_json(const nlohmann::json& j) {
  DisorderSpec spec;
  spec.base_spacing = j.at("base_spacing").get<double>();
  spec.strength = j.at("eps").get<double>();
  spec.n_realizations = j.at("n_realizations").get<int>();
  spec.seed = j.at("seed").get<std::uint64_t>();
  std::vector<RealizationResult> rs;
  for (const auto& e : j.at("realizations")) {
    RealizationResult r;
    r.index = e.at("index").get<std::uint64_t>();
    r.p1 = e.at("p1").get<double>();
    r.p2 = e.value("p2", 0.0);
    r.excited = e.value("excited", 0.0);
    r.converged = e.at("converged").get<bool>();
    r.residual = e.value("residual", 0.0);
    r.iterations = e.value("iterations", 0);
    rs.push_back(r);
  }
  return aggregate_disorder(j.at("n").get<int>(), spec, std::move(rs));
}

DisorderSweepResult aggregate_disorder(int n_atoms, const DisorderSpec& spec,
                                       std::vector<RealizationResult> realizations) {
  DisorderSweepResult out;
  out.n_atoms = n_atoms;
  out.spec = spec;
  out.realizations = std::move(realizations);
  const auto values = out.p1_values();
  out.n_failed = static_cast<int>(out.realizations.size() - values.size());
  out.failed = out.n_failed > 0.01 * static_cast<double>(out.realizations.size());
  if (values.empty()) return out;
  double sum = 0.0, sum2 = 0.0, sume = 0.0;
  for (const auto& r : out.realizations) {
    if (!r.converged) continue;
    sum += r.p1;
    sum2 += r.p2;
    sume += r.excited;
  }
  const auto count = static_cast<double>(values.size());
  out.mean = sum / count;
  out.mean_p2 = sum2 / count;
  out.mean_excited = sume / count;
  if (values.size() > 1) {
    // Shifted by the first value so identical samples give exactly zero spread.
    double shift = 0.0;
    for (double v : values) shift += v - values.front();
    shift /= count;
    double ss = 0.0;
    for (double v : values) ss += (v - values.front() - shift) * (v - values.front() - shift);
    out.std_dev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    out.std_error = out.std_dev / std::sqrt(static_cast<double>(values.size()));
  }
  return out;
}

RealizationResult run_realization(int n_atoms, const DisorderSpec& spec, std::uint64_t index,
                                  const LevelScheme& scheme, const DriveParams& drive,
                                  const MeanFieldOptions& options) {
  RealizationResult r;
  r.index = index;
  const auto geometry = disordered_chain(n_atoms, spec, index);
  const auto report = mf_steady_state(geometry, scheme, drive, options);
  r.converged = report.converged;
  r.residual = report.residual;
  r.iterations = report.iterations;
  const int g2 = scheme.stretched_ground();
  for (const auto& rho : report.state.rho) {
    r.p1 += rho(0, 0).real();
    r.p2 += rho(g2, g2).real();
    r.excited += rho.diagonal().real().sum() - rho(0, 0).real() - rho(g2, g2).real();
  }
  r.p1 /= n_atoms;
  r.p2 /= n_atoms;
  r.excited /= n_atoms;
  return r;
}

DisorderSweepResult disorder_average(int n_atoms, const DisorderSpec& spec,
                                     const LevelScheme& scheme, const DriveParams& drive,
                                     const MeanFieldOptions& options) {
  spec.validate();
  std::vector<RealizationResult> rs(static_cast<std::size_t>(spec.n_realizations));
  if (spec.strength == 0.0) {
    const auto ordered = run_realization(n_atoms, spec, 0, scheme, drive, options);
    for (std::size_t i = 0; i < rs.size(); ++i) {
      rs[i] = ordered;
      rs[i].index = i;
    }
    return aggregate_disorder(n_atoms, spec, std::move(rs));
  }
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < spec.n_realizations; ++i) {
    rs[static_cast<std::size_t>(i)] =
        run_realization(n_atoms, spec, static_cast<std::uint64_t>(i), scheme, drive, options);
  }
  return aggregate_disorder(n_atoms, spec, std::move(rs));
}

}  // namespace popmix
