#include <algorithm>
#include <sstream>

#include "doctest.h"
#include "popmix/geometry.hpp"

using namespace popmix;

TEST_CASE("linear chains") {
  const auto one = linear_chain(1, 2.0);
  CHECK(one.n_atoms() == 1);
  CHECK(one.position(0).norm() == 0.0);
  const auto three = linear_chain(3, 2.0);
  CHECK(three.position(1).x() == 2.0);
  CHECK(three.position(2).x() == 4.0);
  const auto big = linear_chain(200, 2.0);
  CHECK(big.n_atoms() == 200);
  CHECK(big.position(199).x() == doctest::Approx(398.0));
  CHECK(big.uniform_spacing().value() == doctest::Approx(2.0));
  CHECK_THROWS_AS(linear_chain(0, 1.0), std::domain_error);
  CHECK_THROWS_AS(linear_chain(3, 0.0), std::domain_error);
  CHECK_THROWS_AS(linear_chain(3, -1.0), std::domain_error);
}

TEST_CASE("ordered chains are reflection symmetric") {
  const auto g = linear_chain(7, 1.75);
  const double xmax = g.position(6).x();
  for (int j = 0; j < 7; ++j) CHECK(xmax - g.position(j).x() == doctest::Approx(g.position(6 - j).x()));
}

TEST_CASE("geometry validation") {
  CHECK_THROWS_AS(ArrayGeometry({Vec3(0, 0, 0), Vec3(1, 0.1, 0)}), std::domain_error);
  CHECK_THROWS_AS(ArrayGeometry({Vec3(1, 0, 0), Vec3(0, 0, 0)}), std::domain_error);
  CHECK_THROWS_AS(ArrayGeometry(std::vector<Vec3>{}), std::domain_error);
}

TEST_CASE("disordered chains") {
  DisorderSpec spec;
  spec.strength = 0.0;
  spec.seed = 5;
  const auto ordered = disordered_chain(20, spec, 3);
  const auto ref = linear_chain(20, 2.0);
  for (int j = 0; j < 20; ++j) CHECK(ordered.position(j).x() == ref.position(j).x());

  spec.strength = 0.1;
  for (std::uint64_t r = 0; r < 20; ++r) {
    const auto g = disordered_chain(30, spec, r);
    for (int j = 1; j < 30; ++j) {
      const double gap = g.position(j).x() - g.position(j - 1).x();
      CHECK(gap >= 2.0);
      CHECK(gap < 2.1);
    }
  }
  const auto a = disordered_chain(10, spec, 1);
  const auto b = disordered_chain(10, spec, 1);
  const auto c = disordered_chain(10, spec, 2);
  bool differs = false;
  for (int j = 0; j < 10; ++j) {
    CHECK(a.position(j).x() == b.position(j).x());
    differs = differs || a.position(j).x() != c.position(j).x();
  }
  CHECK(differs);
  CHECK_THROWS_AS(disordered_chain(1, spec, 0), std::domain_error);
  spec.strength = -0.1;
  CHECK_THROWS_AS(disordered_chain(5, spec, 0), std::domain_error);
}

TEST_CASE("disorder mean gap approaches base + eps / 2") {
  DisorderSpec spec;
  spec.strength = 0.2;
  spec.seed = 11;
  double sum = 0.0;
  int count = 0;
  for (std::uint64_t r = 0; r < 200; ++r) {
    const auto g = disordered_chain(51, spec, r);
    sum += g.extent();
    count += 50;
  }
  // Standard error of the mean gap is 0.2 / sqrt(12 * 10000) ~ 6e-4.
  CHECK(sum / count == doctest::Approx(2.1).epsilon(2e-3));
}

TEST_CASE("geometry table round trip") {
  DisorderSpec spec;
  spec.strength = 0.05;
  const auto g = disordered_chain(6, spec, 4);
  std::stringstream ss;
  g.write_table(ss);
  const auto back = ArrayGeometry::read_table(ss);
  REQUIRE(back.n_atoms() == 6);
  for (int j = 0; j < 6; ++j) CHECK(back.position(j).x() == g.position(j).x());
}
