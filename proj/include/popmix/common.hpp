#pragma once

#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace popmix {

using Complex = std::complex<double>;
using Vec3 = Eigen::Vector3d;
using CVec3 = Eigen::Vector3cd;
using Mat3c = Eigen::Matrix3cd;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;

// Units: Gamma = 1, lambda = 1.
inline constexpr double kPi = std::numbers::pi;
inline constexpr double kWaveNumber = 2.0 * std::numbers::pi;
// Prefactor 3*pi*Gamma/k multiplying every Green-tensor coupling.
inline constexpr double kCouplingScale = 3.0 * std::numbers::pi / kWaveNumber;

inline constexpr Complex kI{0.0, 1.0};

/// Requested problem does not fit the configured memory budget.
class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inputs violate a physical consistency requirement (e.g. negative decay rates).
class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An iterative kernel refused the requested step; the caller may retry smaller.
class StepRefusal : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace popmix
