#pragma once

#include <optional>
#include <span>
#include <vector>

#include "popmix/common.hpp"

namespace popmix {

/// Angular-momentum quantum number stored as twice its value.
struct HalfInt {
  int twice = 0;

  constexpr double value() const { return 0.5 * twice; }
  static HalfInt from(double v);
  friend constexpr bool operator==(HalfInt, HalfInt) = default;
};

struct Level {
  int label = 0;  // 1-based, ground levels first, increasing m within a manifold
  HalfInt m;
  bool excited = false;
};

struct Transition {
  int ground = 0;   // level index
  int excited = 0;  // level index
  int q = 0;        // m_e - m_g
  double cg = 0.0;  // normalized so the stretched coefficient is 1
};

/// Ground manifold J_g, excited manifold J_e and every dipole-allowed
/// transition between their Zeeman sublevels.
class LevelScheme {
 public:
  /// Builds the scheme for J_g -> J_e with |J_e - J_g| <= 1.
  static LevelScheme make(HalfInt j_ground, HalfInt j_excited);
  /// The J_g = 1/2 -> J_e = 3/2 scheme with levels |1>..|6>.
  static LevelScheme half_to_three_halves();

  HalfInt j_ground() const { return j_ground_; }
  HalfInt j_excited() const { return j_excited_; }

  int n_levels() const { return static_cast<int>(levels_.size()); }
  int n_ground() const { return n_ground_; }
  int n_excited() const { return n_levels() - n_ground_; }
  int n_transitions() const { return static_cast<int>(transitions_.size()); }

  std::span<const Level> levels() const { return levels_; }
  std::span<const Transition> transitions() const { return transitions_; }
  const Level& level(int index) const { return levels_.at(index); }
  const Transition& transition(int index) const { return transitions_.at(index); }

  /// Level index of a 1-based label.
  int index_of_label(int label) const;
  std::optional<int> transition_index(int ground, int excited) const;
  /// Normalized coefficient for a level pair, 0 when the pair is not dipole-allowed.
  double cg(int ground, int excited) const;
  /// Total decay rate out of an excited level, units of Gamma.
  double decay_rate(int excited) const;
  /// Index of the ground level holding the stretched state (m_g = +J_g).
  int stretched_ground() const { return n_ground_ - 1; }

 private:
  HalfInt j_ground_;
  HalfInt j_excited_;
  int n_ground_ = 0;
  std::vector<Level> levels_;
  std::vector<Transition> transitions_;
  std::vector<int> transition_lookup_;  // ground * n_levels + excited -> index or -1
};

/// <J_g m_g | J_e m_e; 1 m_g - m_e> with Condon-Shortley phases (unnormalized).
double coupling_coefficient(HalfInt j_ground, HalfInt m_ground, HalfInt j_excited,
                            HalfInt m_excited);

/// Normalized J_g = 1/2 -> J_e = 3/2 coefficient. Throws std::domain_error
/// for quantum numbers outside the two manifolds.
double clebsch_gordan(HalfInt m_ground, HalfInt m_excited);

/// Spherical basis vector: q = +1 -> sigma+ = -(x + i y)/sqrt2,
/// q = -1 -> sigma- = (x - i y)/sqrt2, q = 0 -> z.
CVec3 spherical_basis(int q);

/// Unit polarization vector in the Cartesian basis.
class Polarization {
 public:
  Polarization() : Polarization(spherical_basis(+1)) {}
  explicit Polarization(const CVec3& v);

  static Polarization sigma_plus() { return Polarization(spherical_basis(+1)); }
  static Polarization sigma_minus() { return Polarization(spherical_basis(-1)); }
  static Polarization pi() { return Polarization(spherical_basis(0)); }
  /// sigma+ with a sigma- admixture of relative amplitude `minus_over_plus`.
  static Polarization dual(Complex minus_over_plus);

  const CVec3& vector() const { return v_; }
  /// Spherical component eps*_q . v.
  Complex component(int q) const;

 private:
  CVec3 v_;
};

struct DriveParams {
  double rabi = 0.01;    // Omega on |2> <-> |6>, units of Gamma
  double detuning = 0.0; // omega_L - omega, units of Gamma
  Polarization polarization;

  /// sigma+ drive with a sigma- component of relative amplitude `minus_over_plus`.
  static DriveParams dual(double rabi, Complex minus_over_plus, double detuning = 0.0);
};

/// Incident field vector, scaled so the sigma+ component equals `rabi`
/// (or the whole unit vector when there is no sigma+ component).
CVec3 drive_field(const DriveParams& drive);

Complex transition_rabi(const DriveParams& drive, const LevelScheme& scheme, int ground,
                        int excited);
/// Rabi frequency per transition, in scheme order.
CVec transition_rabis(const DriveParams& drive, const LevelScheme& scheme);

}  // namespace popmix
