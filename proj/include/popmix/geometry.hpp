#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "popmix/common.hpp"

namespace popmix {

/// Atom positions along x, units of lambda.
class ArrayGeometry {
 public:
  /// Throws std::domain_error unless positions lie on the x axis, strictly increasing.
  explicit ArrayGeometry(std::vector<Vec3> positions);

  int n_atoms() const { return static_cast<int>(positions_.size()); }
  std::span<const Vec3> positions() const { return positions_; }
  const Vec3& position(int j) const { return positions_.at(j); }
  double extent() const { return positions_.back().x() - positions_.front().x(); }
  /// Index of the atom with the largest x coordinate.
  int last_atom() const { return n_atoms() - 1; }

  /// Common spacing if the chain is uniform to `tol`.
  std::optional<double> uniform_spacing(double tol = 1e-12) const;

  /// One row per atom: "x y z".
  void write_table(std::ostream& os) const;
  static ArrayGeometry read_table(std::istream& is);

 private:
  std::vector<Vec3> positions_;
};

ArrayGeometry linear_chain(int n, double d);

struct DisorderSpec {
  double base_spacing = 2.0;
  double strength = 0.0;  // epsilon; gaps are (base + xi) with xi ~ U[0, epsilon)
  int n_realizations = 500;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Realization `realization` of an axially disordered chain.
ArrayGeometry disordered_chain(int n, const DisorderSpec& spec, std::uint64_t realization);

}  // namespace popmix
