#pragma once

#include "popmix/common.hpp"
#include "popmix/geometry.hpp"
#include "popmix/levels.hpp"

namespace popmix {

/// Radial coefficients of the free-space Green tensor, G = a * 1 + b * rhat rhat.
struct GreenScalars {
  Complex a;
  Complex b;
};

/// e^{ikr}/(4 pi r) times the near/intermediate/far-field polynomials in 1/(kr).
GreenScalars green_scalars(double r);

/// Free-space dyadic Green tensor between two points (units of lambda).
/// Throws std::domain_error for coincident points.
Mat3c green_tensor(const Vec3& r_j, const Vec3& r_l);

/// Far-field Green tensor at `radius` * `direction` from the origin due to a
/// dipole at `source`: transverse projector with the exact source phase.
Mat3c far_field_green(const Vec3& direction, const Vec3& source, double radius);

/// r -> infinity amplitude with e^{ikr}/r factored out:
/// (1 - n n) e^{-ik n.source} / (4 pi).
Mat3c far_field_amplitude(const Vec3& direction, const Vec3& source);

enum class OnSiteDecay {
  /// r -> 0 limit of Im G: Gamma * delta_{q q'} C_a C_b (rotation invariant).
  PolarizationChannels,
  /// Independent decay on each transition, Gamma * C_a^2 on the diagonal only.
  PerTransition,
};

/// Pairwise couplings between all transitions of all atoms. Row/column index
/// is atom * n_transitions + transition.
struct CouplingMatrices {
  int n_atoms = 0;
  int n_transitions = 0;
  OnSiteDecay on_site = OnSiteDecay::PolarizationChannels;
  /// (3 pi Gamma / k) C_a C_b eps*_a . Re G . eps_b ; on-site blocks are zero.
  CMat coherent;
  /// Decay-rate matrix 2 (3 pi Gamma / k) C_a C_b eps*_a . Im G . eps_b with the
  /// analytic on-site block.
  CMat dissipative;

  int index(int atom, int transition) const { return atom * n_transitions + transition; }
  int dim() const { return n_atoms * n_transitions; }

  /// Classical exchange kernel: coherent + (i/2) dissipative without on-site blocks.
  /// Multiplying the lowering coherences <sigma_ge> gives the effective Rabi frequencies.
  CMat exchange() const;

  /// Couplings of N non-interacting atoms.
  static CouplingMatrices decoupled(int n_atoms, const LevelScheme& scheme,
                                    OnSiteDecay mode = OnSiteDecay::PolarizationChannels);
};

/// Transition-projected block (3 pi Gamma / k) C_a C_b eps*_a . g . eps_b.
CMat project_block(const Mat3c& g, const LevelScheme& scheme);

/// On-site dissipative block for `mode`.
CMat on_site_decay_block(const LevelScheme& scheme, OnSiteDecay mode);

CouplingMatrices coupling_matrices(const ArrayGeometry& geometry, const LevelScheme& scheme,
                                   OnSiteDecay mode = OnSiteDecay::PolarizationChannels);

}  // namespace popmix
