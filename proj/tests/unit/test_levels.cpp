#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "popmix/levels.hpp"

using namespace popmix;

namespace {
HalfInt h(double v) { return HalfInt::from(v); }
}  // namespace

TEST_CASE("clebsch_gordan reference values") {
  CHECK(clebsch_gordan(h(0.5), h(1.5)) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(clebsch_gordan(h(-0.5), h(0.5)) == doctest::Approx(1.0 / std::sqrt(3.0)).epsilon(1e-14));
  CHECK(std::abs(clebsch_gordan(h(0.5), h(0.5))) == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-14));
  CHECK(clebsch_gordan(h(-0.5), h(1.5)) == 0.0);
  CHECK_THROWS_AS(clebsch_gordan(h(1.5), h(0.5)), std::domain_error);
  CHECK_THROWS_AS(clebsch_gordan(h(0.5), h(2.5)), std::domain_error);
}

TEST_CASE("clebsch_gordan agrees with the Racah 3-j formula on all pairs") {
  const double stretched = oracle::clebsch(1.5, 1.5, 1.0, -1.0, 0.5, 0.5);
  for (double mg : {-0.5, 0.5}) {
    for (double me : {-1.5, -0.5, 0.5, 1.5}) {
      const double q = mg - me;
      const double ref = std::abs(q) > 1.0 ? 0.0 : oracle::clebsch(1.5, me, 1.0, q, 0.5, mg) / stretched;
      CAPTURE(mg);
      CAPTURE(me);
      CHECK(clebsch_gordan(h(mg), h(me)) == doctest::Approx(ref).epsilon(1e-12));
    }
  }
}

TEST_CASE("generic coupling coefficient matches the oracle for other J pairs") {
  for (auto [jg, je] : {std::pair{1.0, 2.0}, std::pair{1.0, 1.0}, std::pair{2.0, 1.0}, std::pair{0.5, 0.5}}) {
    for (double mg = -jg; mg <= jg + 1e-9; mg += 1.0) {
      for (double me = -je; me <= je + 1e-9; me += 1.0) {
        const double q = mg - me;
        const double ref = std::abs(q) > 1.0 ? 0.0 : oracle::clebsch(je, me, 1.0, q, jg, mg);
        CHECK(coupling_coefficient(h(jg), h(mg), h(je), h(me)) == doctest::Approx(ref).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("level scheme structure") {
  const auto s = LevelScheme::half_to_three_halves();
  CHECK(s.n_levels() == 6);
  CHECK(s.n_ground() == 2);
  CHECK(s.n_transitions() == 6);
  CHECK(s.level(s.index_of_label(2)).m.twice == 1);
  CHECK(s.level(s.index_of_label(6)).m.twice == 3);
  CHECK(s.cg(s.index_of_label(2), s.index_of_label(6)) == 1.0);
  CHECK(s.cg(s.index_of_label(1), s.index_of_label(6)) == 0.0);
  for (const auto& t : s.transitions()) {
    CHECK(std::abs(s.level(t.excited).m.twice - s.level(t.ground).m.twice) <= 2);
    CHECK(t.q * 2 == s.level(t.excited).m.twice - s.level(t.ground).m.twice);
    const double mirrored = s.cg(s.n_ground() - 1 - t.ground, s.n_levels() - 1 - (t.excited - s.n_ground()));
    CHECK(std::abs(mirrored) == doctest::Approx(std::abs(t.cg)));
  }
  for (int e = s.n_ground(); e < s.n_levels(); ++e) CHECK(s.decay_rate(e) == doctest::Approx(1.0));
  const auto other = LevelScheme::make(HalfInt{2}, HalfInt{4});
  CHECK(other.n_levels() == 8);
  CHECK(other.n_transitions() == 9);
}

TEST_CASE("spherical basis is orthonormal under the conjugate product") {
  for (int a = -1; a <= 1; ++a) {
    for (int b = -1; b <= 1; ++b) {
      const Complex p = spherical_basis(a).dot(spherical_basis(b));
      CHECK(std::abs(p - Complex(a == b ? 1.0 : 0.0)) < 1e-15);
    }
  }
  CHECK(std::abs(spherical_basis(1)(0) + 1.0 / std::sqrt(2.0)) < 1e-15);
  CHECK(std::abs(spherical_basis(-1)(1) - Complex(0, -1.0 / std::sqrt(2.0))) < 1e-15);
}

TEST_CASE("transition Rabi frequencies for a sigma+ drive") {
  const auto s = LevelScheme::half_to_three_halves();
  DriveParams d;
  d.rabi = 0.01;
  const int g1 = s.index_of_label(1), g2 = s.index_of_label(2);
  CHECK(std::abs(transition_rabi(d, s, g2, s.index_of_label(6)) - Complex(0.01)) < 1e-17);
  CHECK(std::abs(transition_rabi(d, s, g1, s.index_of_label(3))) == 0.0);
  CHECK(std::abs(transition_rabi(d, s, g1, s.index_of_label(5)) - Complex(0.01 / std::sqrt(3.0))) < 1e-16);
  CHECK(std::abs(transition_rabi(d, s, g1, s.index_of_label(6))) == 0.0);
  const auto all = transition_rabis(d, s);
  for (int t = 0; t < s.n_transitions(); ++t) {
    if (s.transition(t).q != 1) CHECK(std::abs(all(t)) == 0.0);
  }
}

TEST_CASE("dual polarization keeps the sigma+ Rabi frequency pinned") {
  const auto s = LevelScheme::half_to_three_halves();
  const auto d = DriveParams::dual(0.01, 0.3);
  CHECK(std::abs(transition_rabi(d, s, s.index_of_label(2), s.index_of_label(6)) - Complex(0.01)) < 1e-16);
  const Complex minus = transition_rabi(d, s, s.index_of_label(2), s.index_of_label(4));
  CHECK(std::abs(minus) == doctest::Approx(0.003 / std::sqrt(3.0)).epsilon(1e-12));
  CHECK_THROWS_AS(Polarization(CVec3::Zero()), std::domain_error);
}
