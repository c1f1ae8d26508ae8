#include <cmath>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "popmix/observables.hpp"

using namespace popmix;

namespace {

const LevelScheme& scheme() {
  static const LevelScheme s = LevelScheme::half_to_three_halves();
  return s;
}

SteadyStateReport solve(int n, double d, const DriveParams& drive = {}) {
  auto rep = mf_steady_state(linear_chain(n, d), scheme(), drive);
  REQUIRE(rep.converged);
  return rep;
}

}  // namespace

TEST_CASE("populations of a single atom") {
  const auto rep = solve(1, 2.0);
  const auto r = populations(rep.state, scheme());
  CHECK(r.p1 == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  CHECK(r.p2 + r.excited == doctest::Approx(1.0));
  CHECK(r.p1_per_atom.size() == 1);
  CHECK(ground_ratio(r) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  ResultRecord empty;
  empty.p1 = 0.5;
  empty.p2 = 0.0;
  empty.excited = 0.5;
  CHECK_THROWS_AS(ground_ratio(empty), std::domain_error);
}

TEST_CASE("dual polarization ratio equals |E-/E+|^2") {
  for (double x : {0.1, 0.3, 0.5}) {
    const auto drive = DriveParams::dual(0.01, x);
    const auto mf = populations(solve(1, 2.0, drive).state, scheme());
    CHECK(std::abs(mf.ratio.value() / (x * x) - 1.0) < 1e-3);
    const auto ex = exact_master_equation(coupling_matrices(linear_chain(1, 2.0), scheme()),
                                          scheme(), drive);
    CHECK(std::abs(ex.p1 / ex.p2 / (x * x) - 1.0) < 1e-3);
  }
  const auto drive = DriveParams::dual(0.01, 0.3);
  const auto rep = solve(1, 2.0, drive);
  CHECK(ground_ratio(rep.state, scheme()) == doctest::Approx(0.09).epsilon(1e-3));
}

TEST_CASE("result record validation and serialization") {
  const auto rep = solve(4, 2.0);
  auto r = populations(rep.state, scheme());
  r.method = "meanfield";
  r.n_atoms = 4;
  r.d = 2.0;
  r.seed = 17;
  r.extra["note"] = "x";
  CHECK_NOTHROW(r.validate());
  const auto j = r.to_json();
  for (const char* key : {"method", "n", "d", "omega", "delta", "p1", "p2", "excited", "ratio",
                          "p1_per_atom", "converged", "seed", "disorder_eps"}) {
    CHECK(j.contains(key));
  }
  const auto back = ResultRecord::from_json(j);
  CHECK(back.p1 == r.p1);
  CHECK(back.p1_per_atom == r.p1_per_atom);
  CHECK(back.seed == 17);
  CHECK(back.extra == r.extra);
  CHECK(back.to_json() == j);

  auto bad = r;
  bad.p2 += 1e-6;
  CHECK_THROWS_AS(bad.validate(), ModelError);
  bad = r;
  bad.p1 = -1e-6;
  bad.p2 = r.p2 + r.p1 + 1e-6;
  CHECK_THROWS_AS(bad.validate(), ModelError);
}

TEST_CASE("ensemble populations carry standard errors") {
  const TrajectoryEngine e(coupling_matrices(linear_chain(2, 2.0), scheme()), scheme(), DriveParams{}, 1);
  TrajectoryOptions o;
  o.t_final = 2000.0;
  const auto ens = run_ensemble(e, 4, 3, o);
  const auto r = populations(ens);
  REQUIRE(r.p1_error.has_value());
  CHECK(*r.p1_error == ens.p1.std_error);
  CHECK(r.p1_per_atom.size() == 2);
  CHECK(r.p1 + r.p2 + r.excited == doctest::Approx(1.0));
}

TEST_CASE("p1 peaks at integer spacings") {
  const double at2 = populations(solve(50, 2.0).state, scheme()).p1;
  const double at175 = populations(solve(50, 1.75).state, scheme()).p1;
  CHECK(at2 > at175);
}

TEST_CASE("scattered field decomposition") {
  const auto one = solve(1, 2.0);
  const auto f1 = scattered_field_at_atoms(one.state, linear_chain(1, 2.0), scheme(), DriveParams{});
  CHECK(std::abs(f1.scattered[0].plus) == 0.0);
  CHECK(std::abs(f1.scattered[0].minus) == 0.0);
  CHECK(std::abs(f1.incident.plus - Complex(0.01)) < 1e-16);

  // The field decomposition reproduces the effective Rabi frequencies.
  const auto geo = linear_chain(6, 1.3);
  const auto rep = solve(6, 1.3);
  const auto s = coherences(rep.state, scheme());
  const auto f = scattered_field_at_atoms(s, geo, scheme(), DriveParams{});
  const auto r = effective_rabis(s, coupling_matrices(geo, scheme()));
  for (int j = 0; j < 6; ++j) {
    for (int t = 0; t < 6; ++t) {
      const auto& tr = scheme().transition(t);
      const auto& e = f.scattered[static_cast<std::size_t>(j)];
      const Complex comp = tr.q == 1 ? e.plus : (tr.q == -1 ? e.minus : e.z);
      CHECK(std::abs(tr.cg * comp - r(j * 6 + t)) < 1e-14);
    }
  }
}

TEST_CASE("central-atom sigma- field grows like log N at d = 2") {
  std::vector<double> x, y;
  for (int n = 10; n <= 100; n += 10) {
    const auto geo = linear_chain(n, 2.0);
    const auto rep = solve(n, 2.0);
    const auto f = scattered_field_at_atoms(rep.state, geo, scheme(), DriveParams{});
    x.push_back(std::log(static_cast<double>(n)));
    y.push_back(std::abs(f.scattered[static_cast<std::size_t>(n / 2)].minus));
  }
  const auto fit = oracle::linear_fit(x, y);
  CHECK(fit.slope > 0.0);
  CHECK(fit.r2 > 0.98);
}

TEST_CASE("alternating harmonic series at d = 2.5") {
  const double log2 = std::log(2.0);
  CHECK(std::abs(std::abs(axial_field_sum(2.5, 100)) / log2 - 1.0) < 0.02);
  CHECK(std::abs(std::abs(axial_field_series(2.5, 100000)) / log2 - 1.0) < 1e-4);
  // Integer spacing: the series is harmonic and diverges.
  Complex harmonic = 0.0;
  for (int j = 1; j < 50; ++j) harmonic += 1.0 / j;
  CHECK(std::abs(axial_field_series(2.0, 50) - harmonic) < 1e-10);
}

TEST_CASE("far field of a single atom") {
  const auto geo = linear_chain(1, 2.0);
  const auto s = coherences(solve(1, 2.0).state, scheme());
  const auto map = far_field_map(s, geo, scheme(), 72, 37);
  CHECK(map.mirror_asymmetry() < 1e-12);
  for (Eigen::Index i = 0; i < map.intensity.rows(); ++i) {
    const double row_max = map.intensity.row(i).maxCoeff();
    CHECK(row_max - map.intensity.row(i).minCoeff() <= 1e-12 * map.max());
  }
  const CVec3 along_x = far_field_vector(s, geo, scheme(), {kPi / 2, 0.0});
  CHECK(std::abs(along_x(0)) < 1e-15 * along_x.norm());
  CHECK(std::abs(along_x(2)) < 1e-15 * along_x.norm());
  CHECK(std::abs(along_x(1)) > 0.0);

  const double inf = far_field_intensity(s, geo, scheme(), {1.0, 0.4});
  const double r1 = far_field_intensity(s, geo, scheme(), {1.0, 0.4, 1e5});
  const double r2 = far_field_intensity(s, geo, scheme(), {1.0, 0.4, 2e5});
  CHECK(std::abs(r1 - r2) < 1e-6 * inf);
  CHECK(std::abs(r1 - inf) < 1e-6 * inf);
}

TEST_CASE("far field radius doubling for a short chain") {
  const auto geo = linear_chain(3, 2.0);
  const auto s = coherences(solve(3, 2.0).state, scheme());
  const double peak = far_field_intensity(s, geo, scheme(), {kPi / 2, 0.0});
  for (double theta : {0.3, 1.2, 2.5}) {
    for (double phi : {0.0, 1.0, 4.0}) {
      const double a = far_field_intensity(s, geo, scheme(), {theta, phi, 1e8});
      const double b = far_field_intensity(s, geo, scheme(), {theta, phi, 2e8});
      CHECK(std::abs(a - b) < 1e-6 * peak);
    }
  }
}

TEST_CASE("far-field energy balance") {
  for (int n : {1, 10}) {
    const auto geo = linear_chain(n, 2.0);
    const auto rep = solve(n, 2.0);
    const auto s = coherences(rep.state, scheme());
    const auto c = coupling_matrices(geo, scheme());
    const auto map = far_field_map(s, geo, scheme(), 181, 91);
    const double power = radiated_power(s, c);
    CHECK(std::abs(map.integrate() / power - 1.0) < 0.05);
    const auto pops = populations(rep.state, scheme());
    const double balance = 6.0 * kPi * map.integrate() / (n * pops.excited);
    CAPTURE(n);
    if (n == 1) {
      CHECK(std::abs(balance - 1.0) < 0.05);
    } else {
      // Cross terms Gamma_jl s_j* s_l make collective emission differ from Gamma * excited.
      MESSAGE("N=" << n << " coherent emission / (Gamma * excited) = " << balance);
    }
  }
}

TEST_CASE("main lobe narrows with N") {
  auto lobe = [](int n) {
    const auto geo = linear_chain(n, 2.0);
    const auto s = coherences(solve(n, 2.0).state, scheme());
    return lobe_solid_angle(far_field_map(s, geo, scheme(), 361, 181));
  };
  const double a50 = lobe(50), a200 = lobe(200);
  CHECK(a200 < a50);
  CHECK(a200 > 0.0);
}

TEST_CASE("far field map layout and export") {
  const auto geo = linear_chain(2, 2.0);
  const auto s = coherences(solve(2, 2.0).state, scheme());
  auto map = far_field_map(s, geo, scheme(), 8, 5);
  CHECK(map.theta.size() == 5);
  CHECK(map.phi.size() == 8);
  CHECK(map.theta.back() == doctest::Approx(kPi));
  CHECK(map.phi.back() == doctest::Approx(2.0 * kPi * 7.0 / 8.0));
  const double m = map.max();
  map.normalize(m);
  CHECK(map.max() == doctest::Approx(1.0));
  std::ostringstream os;
  map.write_table(os);
  const auto text = os.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 40);
}
