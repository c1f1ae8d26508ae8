#include "popmix/green.hpp"

#include <cmath>
#include <optional>
#include <vector>

namespace popmix {

namespace {

// e^{ikr} with the phase reduced modulo one wavelength first.
Complex propagation_phase(double r) {
  const double frac = r - std::floor(r);
  return std::polar(1.0, kWaveNumber * frac);
}

Eigen::Matrix<Complex, 3, Eigen::Dynamic> dipole_vectors(const LevelScheme& scheme) {
  Eigen::Matrix<Complex, 3, Eigen::Dynamic> p(3, scheme.n_transitions());
  for (int t = 0; t < scheme.n_transitions(); ++t) {
    const auto& tr = scheme.transition(t);
    p.col(t) = tr.cg * spherical_basis(tr.q);
  }
  return p;
}

// x cos x - sin x, by its Taylor series where the direct form cancels.
double cos_sin_difference(double x) {
  if (x > 0.5) return x * std::cos(x) - std::sin(x);
  const double x2 = x * x;
  double term = x * x2;  // (-1)^n x^(2n+1) / (2n+1)! * 2n, built incrementally
  double fact = 6.0;
  double sum = 0.0;
  for (int n = 1; n < 12; ++n) {
    sum += (n % 2 ? -1.0 : 1.0) * 2.0 * n * term / fact;
    term *= x2;
    fact *= (2.0 * n + 2.0) * (2.0 * n + 3.0);
  }
  return sum;
}

}  // namespace

GreenScalars green_scalars(double r) {
  const double x = kWaveNumber * r;
  if (x < 0.5) {
    const double c = std::cos(x), s = std::sin(x), f = cos_sin_difference(x);
    const double x2 = x * x;
    const double norm = 1.0 / (4.0 * kPi * r);
    return {norm * Complex(c * (1.0 - 1.0 / x2) - s / x, s + f / x2),
            norm * Complex(-c * (1.0 - 3.0 / x2) + 3.0 * s / x, -s - 3.0 * f / x2)};
  }
  const Complex pref = propagation_phase(r) / (4.0 * kPi * r);
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  return {pref * Complex(1.0 - inv2, inv), pref * Complex(-1.0 + 3.0 * inv2, -3.0 * inv)};
}

Mat3c green_tensor(const Vec3& r_j, const Vec3& r_l) {
  const Vec3 d = r_j - r_l;
  const double r = d.norm();
  if (!(r > 0.0)) throw std::domain_error("Green tensor at coincident points");
  const Vec3 n = d / r;
  const auto [a, b] = green_scalars(r);
  Mat3c g = b * (n * n.transpose()).cast<Complex>();
  g.diagonal().array() += a;
  return g;
}

Mat3c far_field_amplitude(const Vec3& direction, const Vec3& source) {
  const Vec3 n = direction.normalized();
  Eigen::Matrix3d proj = Eigen::Matrix3d::Identity() - n * n.transpose();
  const Complex phase = std::polar(1.0, -kWaveNumber * n.dot(source));
  return proj.cast<Complex>() * (phase / (4.0 * kPi));
}

Mat3c far_field_green(const Vec3& direction, const Vec3& source, double radius) {
  return far_field_amplitude(direction, source) * (propagation_phase(radius) / radius);
}

CMat project_block(const Mat3c& g, const LevelScheme& scheme) {
  const auto p = dipole_vectors(scheme);
  return kCouplingScale * (p.adjoint() * g * p);
}

CMat on_site_decay_block(const LevelScheme& scheme, OnSiteDecay mode) {
  const int nt = scheme.n_transitions();
  if (mode == OnSiteDecay::PerTransition) {
    CMat d = CMat::Zero(nt, nt);
    for (int t = 0; t < nt; ++t) d(t, t) = scheme.transition(t).cg * scheme.transition(t).cg;
    return d;
  }
  const auto p = dipole_vectors(scheme);
  return p.adjoint() * p;
}

CMat CouplingMatrices::exchange() const {
  CMat k = coherent + Complex(0.0, 0.5) * dissipative;
  for (int j = 0; j < n_atoms; ++j) {
    k.block(j * n_transitions, j * n_transitions, n_transitions, n_transitions).setZero();
  }
  return k;
}

CouplingMatrices CouplingMatrices::decoupled(int n_atoms, const LevelScheme& scheme,
                                             OnSiteDecay mode) {
  CouplingMatrices c;
  c.n_atoms = n_atoms;
  c.n_transitions = scheme.n_transitions();
  c.on_site = mode;
  c.coherent = CMat::Zero(c.dim(), c.dim());
  c.dissipative = CMat::Zero(c.dim(), c.dim());
  const CMat site = on_site_decay_block(scheme, mode);
  for (int j = 0; j < n_atoms; ++j) {
    c.dissipative.block(j * c.n_transitions, j * c.n_transitions, c.n_transitions,
                        c.n_transitions) = site;
  }
  return c;
}

CouplingMatrices coupling_matrices(const ArrayGeometry& geometry, const LevelScheme& scheme,
                                   OnSiteDecay mode) {
  CouplingMatrices c = CouplingMatrices::decoupled(geometry.n_atoms(), scheme, mode);
  const int n = geometry.n_atoms();
  const int nt = c.n_transitions;

  auto fill_pair = [&](int j, int l, const Mat3c& g) {
    const Mat3c re = g.real().cast<Complex>();
    const Mat3c im = g.imag().cast<Complex>();
    const CMat a = project_block(re, scheme);
    const CMat b = 2.0 * project_block(im, scheme);
    c.coherent.block(j * nt, l * nt, nt, nt) = a;
    c.dissipative.block(j * nt, l * nt, nt, nt) = b;
    // Reciprocity: G^{lj} = G^{jl}, so the (l, j) block is the adjoint.
    c.coherent.block(l * nt, j * nt, nt, nt) = a.adjoint();
    c.dissipative.block(l * nt, j * nt, nt, nt) = b.adjoint();
  };

  if (const auto spacing = geometry.uniform_spacing()) {
    // Ordered chain: one Green tensor per distinct separation.
    std::vector<Mat3c> by_distance(static_cast<std::size_t>(n));
    for (int m = 1; m < n; ++m) {
      by_distance[static_cast<std::size_t>(m)] =
          green_tensor(geometry.position(m), geometry.position(0));
    }
    for (int j = 0; j < n; ++j) {
      for (int l = j + 1; l < n; ++l) fill_pair(j, l, by_distance[static_cast<std::size_t>(l - j)]);
    }
  } else {
    for (int j = 0; j < n; ++j) {
      for (int l = j + 1; l < n; ++l) {
        fill_pair(j, l, green_tensor(geometry.position(j), geometry.position(l)));
      }
    }
  }
  return c;
}

}  // namespace popmix
