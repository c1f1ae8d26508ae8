#include "popmix/geometry.hpp"

#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "popmix/rng.hpp"

namespace popmix {

ArrayGeometry::ArrayGeometry(std::vector<Vec3> positions) : positions_(std::move(positions)) {
  if (positions_.empty()) throw std::domain_error("geometry needs at least one atom");
  for (std::size_t j = 0; j < positions_.size(); ++j) {
    const Vec3& p = positions_[j];
    if (!p.allFinite()) throw std::domain_error("non-finite atom position");
    if (p.y() != 0.0 || p.z() != 0.0) throw std::domain_error("atoms must lie on the x axis");
    if (j > 0 && !(p.x() > positions_[j - 1].x())) {
      throw std::domain_error("positions must be strictly increasing in x");
    }
  }
}

std::optional<double> ArrayGeometry::uniform_spacing(double tol) const {
  if (n_atoms() < 2) return std::nullopt;
  const double d = positions_[1].x() - positions_[0].x();
  for (int j = 2; j < n_atoms(); ++j) {
    const double gap = positions_[j].x() - positions_[j - 1].x();
    if (std::abs(gap - d) > tol * std::max(1.0, d)) return std::nullopt;
  }
  return d;
}

void ArrayGeometry::write_table(std::ostream& os) const {
  os << std::setprecision(17);
  for (const auto& p : positions_) os << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
}

ArrayGeometry ArrayGeometry::read_table(std::istream& is) {
  std::vector<Vec3> out;
  std::string line;
  while (std::getline(is, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream row(line);
    double x = 0, y = 0, z = 0;
    if (!(row >> x >> y >> z)) throw std::domain_error("malformed geometry row: " + line);
    out.emplace_back(x, y, z);
  }
  return ArrayGeometry(std::move(out));
}

ArrayGeometry linear_chain(int n, double d) {
  if (n < 1) throw std::domain_error("chain needs n >= 1");
  if (!(d > 0.0) || !std::isfinite(d)) throw std::domain_error("spacing must be positive");
  std::vector<Vec3> pos;
  pos.reserve(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) pos.emplace_back(j * d, 0.0, 0.0);
  return ArrayGeometry(std::move(pos));
}

void DisorderSpec::validate() const {
  if (!(base_spacing > 0.0)) throw std::domain_error("disorder base spacing must be positive");
  if (!(strength >= 0.0) || !std::isfinite(strength)) {
    throw std::domain_error("disorder strength must be >= 0");
  }
  if (n_realizations < 1) throw std::domain_error("need at least one realization");
}

ArrayGeometry disordered_chain(int n, const DisorderSpec& spec, std::uint64_t realization) {
  if (n < 2) throw std::domain_error("disordered chain needs n >= 2");
  spec.validate();
  if (spec.strength == 0.0) return linear_chain(n, spec.base_spacing);
  auto rng = make_stream(spec.seed, realization);
  std::vector<Vec3> pos;
  pos.reserve(static_cast<std::size_t>(n));
  double x = 0.0;
  pos.emplace_back(0.0, 0.0, 0.0);
  for (int j = 1; j < n; ++j) {
    x += spec.base_spacing + spec.strength * uniform_closed_open(rng);
    pos.emplace_back(x, 0.0, 0.0);
  }
  return ArrayGeometry(std::move(pos));
}

}  // namespace popmix
