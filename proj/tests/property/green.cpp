#include <cmath>
#include <random>

#include "oracles.hpp"
#include "popmix/green.hpp"
#include "property/check.hpp"

using namespace popmix;

int main() {
  prop::Suite suite("green");
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto random_dir = [&] {
    Vec3 v;
    do v = Vec3(u(rng), u(rng), u(rng));
    while (v.norm() < 0.1);
    return v.normalized();
  };

  double recip = 0.0, sym = 0.0, fd = 0.0;
  for (int i = 0; i < 200; ++i) {
    const double kr = std::exp(std::log(100.0) * (i / 199.0));
    const Vec3 a = Vec3(u(rng), u(rng), u(rng));
    const Vec3 r = (kr / kWaveNumber) * random_dir();
    const Mat3c g = green_tensor(a + r, a);
    recip = std::max(recip, (g - green_tensor(a, a + r)).norm() / g.norm());
    sym = std::max(sym, (g - g.transpose()).norm() / g.norm());
    const auto ref = oracle::finite_difference_green(r);
    fd = std::max(fd, (g - ref).norm() / ref.norm());
  }
  suite.below("reciprocity", recip, 1e-14);
  suite.below("symmetry", sym, 1e-14);
  suite.below("finite_difference_kr_1_to_100", fd, 1e-6);

  double onsite = 0.0;
  for (double r : {1e-4, 1e-5, 1e-6}) {
    const Mat3c g = green_tensor(r * random_dir(), Vec3::Zero());
    const Eigen::Matrix3d im = g.imag();
    onsite = std::max(onsite, (im - (kWaveNumber / (6.0 * kPi)) * Eigen::Matrix3d::Identity()).norm() /
                                  (kWaveNumber / (6.0 * kPi)));
  }
  suite.below("on_site_limit_Im_G", onsite, 1e-6);

  double transverse = 0.0, ff = 0.0;
  for (int i = 0; i < 50; ++i) {
    const Vec3 n = random_dir();
    const Vec3 src(2.0 * i, 0.0, 0.0);
    const Mat3c amp = far_field_amplitude(n, src);
    transverse = std::max(transverse, (amp * n.cast<Complex>()).norm() + (n.cast<Complex>().transpose() * amp).norm());
    const double big = 1e4;
    const Mat3c exact = green_tensor(big * n, Vec3(0.3 * i / 50.0, 0, 0));
    const Mat3c approx = far_field_green(n, Vec3(0.3 * i / 50.0, 0, 0), big);
    ff = std::max(ff, (approx - exact).norm() / exact.norm());
  }
  suite.below("far_field_transversality", transverse, 1e-14);
  suite.below("far_field_vs_exact_r_1e4", ff, 1e-3);

  const auto scheme = LevelScheme::half_to_three_halves();
  double zrow = 0.0, coh_sym = 0.0, coh_imag = 0.0;
  for (double d : {0.5, 1.0, 1.75, 2.0, 2.5, std::sqrt(2.0)}) {
    const auto c = coupling_matrices(linear_chain(12, d), scheme);
    const int nt = c.n_transitions;
    for (int j = 0; j < c.n_atoms; ++j) {
      for (int l = 0; l < c.n_atoms; ++l) {
        if (j == l) continue;
        for (int a = 0; a < nt; ++a) {
          for (int b = 0; b < nt; ++b) {
            if ((scheme.transition(a).q == 0) == (scheme.transition(b).q == 0)) continue;
            zrow = std::max(zrow, std::abs(c.exchange()(c.index(j, a), c.index(l, b))));
          }
        }
      }
    }
    coh_sym = std::max(coh_sym, (c.coherent - c.coherent.transpose()).cwiseAbs().maxCoeff());
    coh_imag = std::max(coh_imag, c.coherent.imag().cwiseAbs().maxCoeff());
  }
  suite.below("axial_z_decoupling", zrow, 1e-12);
  suite.below("coherent_symmetric", coh_sym, 1e-12);
  suite.below("coherent_real", coh_imag, 1e-12);
  return suite.finish();
}
