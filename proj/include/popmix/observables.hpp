#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "popmix/common.hpp"
#include "popmix/geometry.hpp"
#include "popmix/levels.hpp"
#include "popmix/meanfield.hpp"
#include "popmix/qmcw.hpp"

namespace popmix {

/// Ground-level populations of one run plus the metadata needed to reproduce it.
struct ResultRecord {
  std::string method;
  int n_atoms = 0;
  double d = 0.0;
  double rabi = 0.01;
  double detuning = 0.0;
  int max_excitations = 0;  // qmcw only
  std::uint64_t seed = 0;
  double disorder_eps = 0.0;

  double p1 = 0.0;
  double p2 = 0.0;
  double excited = 0.0;
  std::optional<double> ratio;  // absent when p2 == 0
  std::vector<double> p1_per_atom;
  std::optional<double> p1_error;  // ensemble standard errors
  std::optional<double> p2_error;
  std::optional<double> excited_error;

  bool converged = true;
  nlohmann::json extra = nlohmann::json::object();  // method-specific diagnostics

  /// Throws ModelError when populations leave [-1e-9, 1 + 1e-9] or do not sum to one.
  void validate() const;
  nlohmann::json to_json() const;
  static ResultRecord from_json(const nlohmann::json& j);
};

/// Per-atom diagonal extraction from a product state.
ResultRecord populations(const MeanFieldState& state, const LevelScheme& scheme);
/// Ensemble means with standard errors.
ResultRecord populations(const EnsembleResult& ensemble);

/// p1 / p2, throws std::domain_error when p2 == 0.
double ground_ratio(const ResultRecord& record);
double ground_ratio(const MeanFieldState& state, const LevelScheme& scheme);

/// Spherical components eps*_q . E of a field.
struct SphericalField {
  Complex plus;
  Complex minus;
  Complex z;
};

struct FieldDecomposition {
  std::vector<SphericalField> scattered;  // per atom
  SphericalField incident;
};

/// Classical field radiated by the dipoles given by `coherences`, at each atom
/// from all others. Normalized so a field E drives transition t with Rabi
/// frequency C_t eps*_q . E, so incident.plus equals the stretched Rabi frequency.
FieldDecomposition scattered_field_at_atoms(const CVec& coherences, const ArrayGeometry& geometry,
                                            const LevelScheme& scheme, const DriveParams& drive);
FieldDecomposition scattered_field_at_atoms(const MeanFieldState& state,
                                            const ArrayGeometry& geometry,
                                            const LevelScheme& scheme, const DriveParams& drive);

/// Partial sum sum_{j=1}^{n-1} exp(i k j d) / j: the sigma- field at the end of
/// a chain of in-phase sigma+ dipoles, radiative term only, in units of its first term.
Complex axial_field_series(double d, std::int64_t n);

/// The same sum with the full Green tensor: 8 pi d sum_j eps*_- . G(j d xhat) . eps_+.
Complex axial_field_sum(double d, std::int64_t n);

struct FarFieldQuery {
  double theta = 0.0;  // polar angle from +z
  double phi = 0.0;    // azimuth from +x
  /// Evaluation radius; infinite uses the asymptotic form.
  double radius = std::numeric_limits<double>::infinity();
};

Vec3 direction(double theta, double phi);

/// Far-field vector amplitude with exp(ikr)/r factored out, origin at the atom
/// with the largest x coordinate.
CVec3 far_field_vector(const CVec& coherences, const ArrayGeometry& geometry,
                       const LevelScheme& scheme, const FarFieldQuery& query);
/// |far_field_vector|^2 (raw normalization).
double far_field_intensity(const CVec& coherences, const ArrayGeometry& geometry,
                           const LevelScheme& scheme, const FarFieldQuery& query);

/// Total radiated power s^dag Gamma s / (6 pi), the exact integral of the raw
/// intensity over the sphere.
double radiated_power(const CVec& coherences, const CouplingMatrices& couplings);

struct FarFieldMap {
  std::vector<double> theta;  // rows
  std::vector<double> phi;    // columns
  Eigen::MatrixXd intensity;  // theta x phi
  double max() const { return intensity.maxCoeff(); }
  /// Divides by `reference` (e.g. the maximum of a reference run).
  void normalize(double reference);
  /// Trapezoid integral over the sphere: sum I sin(theta) dtheta dphi.
  double integrate() const;
  /// max |I(theta, phi) - I(theta, -phi)| / max I.
  double mirror_asymmetry() const;
  /// One line per point: "theta phi I".
  void write_table(std::ostream& os) const;
};

/// Uniform grid over theta in [0, pi] and phi in [0, 2 pi) (phi endpoint excluded).
FarFieldMap far_field_map(const CVec& coherences, const ArrayGeometry& geometry,
                          const LevelScheme& scheme, int n_phi = 361, int n_theta = 181);

/// Solid angle (steradians) of the region around `peak` where I > fraction * I(peak),
/// grown from the peak over connected grid cells.
double lobe_solid_angle(const FarFieldMap& map, double fraction = 0.5);

}  // namespace popmix
