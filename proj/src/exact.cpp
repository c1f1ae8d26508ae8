#include <cmath>
#include <sstream>

#include <Eigen/SparseLU>

#include "popmix/qmcw.hpp"

namespace popmix {

namespace {

using Triplets = std::vector<Eigen::Triplet<Complex>>;

// Appends scale * kron(a, b) for sparse a, b.
void add_kron(Triplets& out, const SpMat& a, const SpMat& b, Complex scale) {
  const Eigen::Index nb = b.rows();
  for (Eigen::Index ra = 0; ra < a.outerSize(); ++ra) {
    for (SpMat::InnerIterator ia(a, ra); ia; ++ia) {
      const Complex va = scale * ia.value();
      for (Eigen::Index rb = 0; rb < b.outerSize(); ++rb) {
        for (SpMat::InnerIterator ib(b, rb); ib; ++ib) {
          out.emplace_back(static_cast<int>(ia.row() * nb + ib.row()),
                           static_cast<int>(ia.col() * nb + ib.col()), va * ib.value());
        }
      }
    }
  }
}

SpMat identity(Eigen::Index n) {
  SpMat id(n, n);
  id.setIdentity();
  return id;
}

CVec solve_with_trace_row(const Triplets& liouvillian, Eigen::Index d, Eigen::Index replaced,
                          bool& ok) {
  const Eigen::Index n = d * d;
  Triplets t;
  t.reserve(liouvillian.size() + static_cast<std::size_t>(d));
  for (const auto& e : liouvillian) {
    if (e.row() != replaced) t.push_back(e);
  }
  for (Eigen::Index i = 0; i < d; ++i) t.emplace_back(static_cast<int>(replaced), static_cast<int>(i * d + i), 1.0);
  Eigen::SparseMatrix<Complex> a(n, n);
  a.setFromTriplets(t.begin(), t.end());
  a.makeCompressed();
  Eigen::SparseLU<Eigen::SparseMatrix<Complex>> lu;
  lu.compute(a);
  ok = lu.info() == Eigen::Success;
  if (!ok) return {};
  CVec b = CVec::Zero(n);
  b(replaced) = 1.0;
  CVec x = lu.solve(b);
  ok = lu.info() == Eigen::Success && x.allFinite();
  return x;
}

}  // namespace

ExactResult exact_master_equation(const CouplingMatrices& couplings, const LevelScheme& scheme,
                                  const DriveParams& drive) {
  const int n = couplings.n_atoms;
  if (n < 1 || n > 3) throw std::domain_error("exact master equation supports 1 <= N <= 3");
  const TruncatedBasis basis(n, n, scheme);
  const auto d = static_cast<Eigen::Index>(basis.dim());
  const int nt = scheme.n_transitions();

  const SpMat h_eff = build_effective_hamiltonian(basis, couplings, scheme, drive);
  std::vector<SpMat> sigma;
  for (int a = 0; a < couplings.dim(); ++a) sigma.push_back(lowering_operator(basis, scheme, a / nt, a % nt));

  // Row-major vectorization: vec(A rho B) = kron(A, B^T) vec(rho).
  Triplets l;
  const SpMat id = identity(d);
  add_kron(l, h_eff, id, -kI);
  add_kron(l, id, SpMat(h_eff.conjugate()), kI);
  for (int a = 0; a < couplings.dim(); ++a) {
    const SpMat sa_conj = sigma[static_cast<std::size_t>(a)].conjugate();
    for (int b = 0; b < couplings.dim(); ++b) {
      const Complex g = couplings.dissipative(a, b);
      if (std::abs(g) < 1e-16) continue;
      add_kron(l, sigma[static_cast<std::size_t>(b)], sa_conj, g);
    }
  }

  ExactResult out;
  bool ok1 = false, ok2 = false;
  const CVec x1 = solve_with_trace_row(l, d, 0, ok1);
  const CVec x2 = solve_with_trace_row(l, d, d * d - 1, ok2);
  if (!ok1 || !ok2) {
    out.unique = false;
    out.diagnostics = "Liouvillian with one trace constraint is singular: steady state not unique";
    if (!ok1 && !ok2) return out;
  }
  const CVec& x = ok1 ? x1 : x2;
  if (ok1 && ok2) {
    const double gap = (x1 - x2).cwiseAbs().maxCoeff();
    if (gap > 1e-8) {
      out.unique = false;
      std::ostringstream msg;
      msg << "steady state depends on the constraint row (difference " << gap
          << "): null space dimension > 1";
      out.diagnostics = msg.str();
    }
  }
  out.rho = CMat(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) out.rho(i, j) = x(i * d + j);
  }
  out.rho = 0.5 * (out.rho + out.rho.adjoint());

  Eigen::SparseMatrix<Complex> lm(d * d, d * d);
  lm.setFromTriplets(l.begin(), l.end());
  CVec xv(d * d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) xv(i * d + j) = out.rho(i, j);
  }
  out.residual = (lm * xv).cwiseAbs().maxCoeff();

  out.populations.assign(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(scheme.n_levels()), 0.0));
  for (std::size_t s = 0; s < basis.dim(); ++s) {
    const double p = out.rho(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s)).real();
    for (int j = 0; j < n; ++j) {
      out.populations[static_cast<std::size_t>(j)][static_cast<std::size_t>(basis.level(s, j))] += p;
    }
  }
  for (int j = 0; j < n; ++j) {
    out.p1 += out.populations[static_cast<std::size_t>(j)][0] / n;
    out.p2 += out.populations[static_cast<std::size_t>(j)][1] / n;
  }
  return out;
}

}  // namespace popmix
