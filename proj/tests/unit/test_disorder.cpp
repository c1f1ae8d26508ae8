#include <numeric>

#include "doctest.h"
#include "popmix/disorder.hpp"
#include "popmix/observables.hpp"

using namespace popmix;

namespace {

const LevelScheme& scheme() {
  static const LevelScheme s = LevelScheme::half_to_three_halves();
  return s;
}

DisorderSpec spec(double eps, int n_real, std::uint64_t seed = 4) {
  DisorderSpec s;
  s.strength = eps;
  s.n_realizations = n_real;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("zero disorder reproduces the ordered chain") {
  const auto r = disorder_average(10, spec(0.0, 20), scheme(), DriveParams{});
  const auto ordered = populations(mf_steady_state(linear_chain(10, 2.0), scheme(), DriveParams{}).state, scheme());
  CHECK(r.mean == doctest::Approx(ordered.p1).epsilon(1e-12));
  CHECK(r.std_dev == 0.0);
  CHECK(r.realizations.size() == 20);
  CHECK_FALSE(r.failed);
}

TEST_CASE("disorder sweep statistics") {
  const auto a = disorder_average(10, spec(0.05, 24), scheme(), DriveParams{});
  const auto b = disorder_average(10, spec(0.05, 24), scheme(), DriveParams{});
  REQUIRE(a.realizations.size() == 24);
  for (std::size_t i = 0; i < a.realizations.size(); ++i) {
    CHECK(a.realizations[i].index == i);
    CHECK(a.realizations[i].p1 == b.realizations[i].p1);
  }
  CHECK(a.mean == b.mean);
  const auto v = a.p1_values();
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  CHECK(std::abs(a.mean - mean) < 1e-12);
  CHECK(a.std_error == doctest::Approx(a.std_dev / std::sqrt(24.0)));

  const auto ordered = populations(mf_steady_state(linear_chain(10, 2.0), scheme(), DriveParams{}).state, scheme());
  CHECK(a.mean < ordered.p1);

  const auto c = disorder_average(10, spec(0.05, 24, 5), scheme(), DriveParams{});
  CHECK(c.mean != a.mean);

  const auto back = DisorderSweepResult::from_json(a.to_json());
  CHECK(back.mean == a.mean);
  CHECK(back.realizations.size() == a.realizations.size());
  CHECK(back.p1_values() == a.p1_values());
}

TEST_CASE("single realization agrees with a direct solve") {
  const auto s = spec(0.1, 5);
  const auto r = run_realization(8, s, 3, scheme(), DriveParams{});
  const auto direct = mf_steady_state(disordered_chain(8, s, 3), scheme(), DriveParams{});
  CHECK(r.p1 == populations(direct.state, scheme()).p1);
  CHECK(r.converged);
}

TEST_CASE("failure flag above one percent") {
  std::vector<RealizationResult> rs(200);
  for (std::size_t i = 0; i < rs.size(); ++i) {
    rs[i].index = i;
    rs[i].p1 = 0.01 * static_cast<double>(i % 7);
    rs[i].converged = true;
  }
  rs[3].converged = false;
  rs[9].converged = false;
  auto ok = aggregate_disorder(10, spec(0.05, 200), rs);
  CHECK(ok.n_failed == 2);
  CHECK_FALSE(ok.failed);
  CHECK(ok.p1_values().size() == 198);
  rs[11].converged = false;
  auto bad = aggregate_disorder(10, spec(0.05, 200), rs);
  CHECK(bad.n_failed == 3);
  CHECK(bad.failed);
}

TEST_CASE("stronger disorder does not raise p1") {
  double prev = 1.0, prev_err = 0.0;
  for (double eps : {0.0, 0.02, 0.1}) {
    const auto r = disorder_average(10, spec(eps, 16), scheme(), DriveParams{});
    CHECK(r.mean <= prev + r.std_dev + prev_err);
    prev = r.mean;
    prev_err = r.std_dev;
  }
}
