#include "popmix/levels.hpp"

#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace popmix {

HalfInt HalfInt::from(double v) {
  const double twice = 2.0 * v;
  const double rounded = std::round(twice);
  if (std::abs(twice - rounded) > 1e-12) {
    throw std::domain_error("not a half-integer: " + std::to_string(v));
  }
  return HalfInt{static_cast<int>(rounded)};
}

double coupling_coefficient(HalfInt j_ground, HalfInt m_ground, HalfInt j_excited,
                            HalfInt m_excited) {
  // Couple |J_e m_e> with the photon |1 q>, q = m_g - m_e, into |J_g m_g>.
  const int q2 = m_ground.twice - m_excited.twice;
  if (std::abs(q2) > 2 || std::abs(m_ground.twice) > j_ground.twice ||
      std::abs(m_excited.twice) > j_excited.twice) {
    return 0.0;
  }
  const int q = q2 / 2;
  const double j1 = j_excited.value();
  const double M = m_ground.value();
  const int dj2 = j_ground.twice - j_excited.twice;

  auto root = [](double num, double den) { return num <= 0.0 ? 0.0 : std::sqrt(num / den); };

  if (dj2 == 2) {  // J_g = J_e + 1
    switch (q) {
      case 1: return root((j1 + M) * (j1 + M + 1), (2 * j1 + 1) * (2 * j1 + 2));
      case 0: return root((j1 - M + 1) * (j1 + M + 1), (2 * j1 + 1) * (j1 + 1));
      default: return root((j1 - M) * (j1 - M + 1), (2 * j1 + 1) * (2 * j1 + 2));
    }
  }
  if (dj2 == 0) {
    if (j_excited.twice == 0) return 0.0;
    switch (q) {
      case 1: return -root((j1 + M) * (j1 - M + 1), 2 * j1 * (j1 + 1));
      case 0: return M / std::sqrt(j1 * (j1 + 1));
      default: return root((j1 - M) * (j1 + M + 1), 2 * j1 * (j1 + 1));
    }
  }
  if (dj2 == -2) {  // J_g = J_e - 1
    switch (q) {
      case 1: return root((j1 - M) * (j1 - M + 1), 2 * j1 * (2 * j1 + 1));
      case 0: return -root((j1 - M) * (j1 + M), j1 * (2 * j1 + 1));
      default: return root((j1 + M + 1) * (j1 + M), 2 * j1 * (2 * j1 + 1));
    }
  }
  return 0.0;
}

LevelScheme LevelScheme::make(HalfInt j_ground, HalfInt j_excited) {
  if (j_ground.twice < 0 || j_excited.twice < 0 ||
      std::abs(j_ground.twice - j_excited.twice) > 2 ||
      (j_ground.twice - j_excited.twice) % 2 != 0) {
    throw std::domain_error("J_g -> J_e is not a dipole transition");
  }
  LevelScheme s;
  s.j_ground_ = j_ground;
  s.j_excited_ = j_excited;
  int label = 1;
  for (int m2 = -j_ground.twice; m2 <= j_ground.twice; m2 += 2) {
    s.levels_.push_back(Level{label++, HalfInt{m2}, false});
  }
  s.n_ground_ = static_cast<int>(s.levels_.size());
  for (int m2 = -j_excited.twice; m2 <= j_excited.twice; m2 += 2) {
    s.levels_.push_back(Level{label++, HalfInt{m2}, true});
  }

  const HalfInt m_g_pin = j_ground;
  const HalfInt m_e_pin{std::min(j_excited.twice, j_ground.twice + 2)};
  const double pin = coupling_coefficient(j_ground, m_g_pin, j_excited, m_e_pin);
  if (pin == 0.0) throw std::domain_error("stretched coefficient vanishes");

  const int n = s.n_levels();
  s.transition_lookup_.assign(static_cast<std::size_t>(n * n), -1);
  for (int g = 0; g < s.n_ground_; ++g) {
    for (int e = s.n_ground_; e < n; ++e) {
      const int dq2 = s.levels_[e].m.twice - s.levels_[g].m.twice;
      if (std::abs(dq2) > 2) continue;
      const double c =
          coupling_coefficient(j_ground, s.levels_[g].m, j_excited, s.levels_[e].m) / pin;
      if (c == 0.0) continue;
      s.transition_lookup_[static_cast<std::size_t>(g * n + e)] =
          static_cast<int>(s.transitions_.size());
      s.transitions_.push_back(Transition{g, e, dq2 / 2, c});
    }
  }
  return s;
}

LevelScheme LevelScheme::half_to_three_halves() { return make(HalfInt{1}, HalfInt{3}); }

int LevelScheme::index_of_label(int label) const {
  if (label < 1 || label > n_levels()) {
    throw std::out_of_range("level label " + std::to_string(label));
  }
  return label - 1;
}

std::optional<int> LevelScheme::transition_index(int ground, int excited) const {
  const int n = n_levels();
  if (ground < 0 || ground >= n || excited < 0 || excited >= n) return std::nullopt;
  const int t = transition_lookup_[static_cast<std::size_t>(ground * n + excited)];
  if (t < 0) return std::nullopt;
  return t;
}

double LevelScheme::cg(int ground, int excited) const {
  const auto t = transition_index(ground, excited);
  return t ? transitions_[*t].cg : 0.0;
}

double LevelScheme::decay_rate(int excited) const {
  double rate = 0.0;
  for (const auto& t : transitions_) {
    if (t.excited == excited) rate += t.cg * t.cg;
  }
  return rate;
}

double clebsch_gordan(HalfInt m_ground, HalfInt m_excited) {
  if (std::abs(m_ground.twice) != 1 || std::abs(m_excited.twice) > 3 ||
      m_excited.twice % 2 == 0) {
    throw std::domain_error("quantum numbers outside J_g = 1/2, J_e = 3/2");
  }
  static const double pin = coupling_coefficient(HalfInt{1}, HalfInt{1}, HalfInt{3}, HalfInt{3});
  return coupling_coefficient(HalfInt{1}, m_ground, HalfInt{3}, m_excited) / pin;
}

CVec3 spherical_basis(int q) {
  const double s = 1.0 / std::sqrt(2.0);
  switch (q) {
    case 1: return CVec3(-s, Complex(0, -s), 0);
    case -1: return CVec3(s, Complex(0, -s), 0);
    case 0: return CVec3(0, 0, 1);
    default: throw std::domain_error("spherical index must be -1, 0 or +1");
  }
}

Polarization::Polarization(const CVec3& v) {
  const double n = v.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw std::domain_error("polarization must be nonzero");
  v_ = v / n;
}

Polarization Polarization::dual(Complex minus_over_plus) {
  return Polarization(spherical_basis(+1) + minus_over_plus * spherical_basis(-1));
}

Complex Polarization::component(int q) const { return spherical_basis(q).dot(v_); }

DriveParams DriveParams::dual(double rabi, Complex minus_over_plus, double detuning) {
  return DriveParams{rabi, detuning, Polarization::dual(minus_over_plus)};
}

CVec3 drive_field(const DriveParams& drive) {
  const Complex plus = drive.polarization.component(+1);
  if (std::abs(plus) > 1e-12) return drive.rabi * drive.polarization.vector() / plus;
  return drive.rabi * drive.polarization.vector();
}

Complex transition_rabi(const DriveParams& drive, const LevelScheme& scheme, int ground,
                        int excited) {
  const auto t = scheme.transition_index(ground, excited);
  if (!t) return 0.0;
  const auto& tr = scheme.transition(*t);
  return tr.cg * spherical_basis(tr.q).dot(drive_field(drive));
}

CVec transition_rabis(const DriveParams& drive, const LevelScheme& scheme) {
  const CVec3 field = drive_field(drive);
  CVec out(scheme.n_transitions());
  for (int t = 0; t < scheme.n_transitions(); ++t) {
    const auto& tr = scheme.transition(t);
    out(t) = tr.cg * spherical_basis(tr.q).dot(field);
  }
  return out;
}

}  // namespace popmix
