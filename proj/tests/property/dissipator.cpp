#include <cmath>

#include <Eigen/Eigenvalues>

#include "popmix/green.hpp"
#include "popmix/qmcw.hpp"
#include "property/check.hpp"

using namespace popmix;

namespace {

// Row-major vectorization: vec(A rho B) = (A kron B^T) vec(rho).
CMat kron(const CMat& a, const CMat& b) {
  CMat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

CMat lindblad_term(const CMat& left, const CMat& right_dag, const CMat& anti) {
  const CMat id = CMat::Identity(left.rows(), left.cols());
  return kron(left, right_dag.transpose()) - 0.5 * kron(anti, id) - 0.5 * kron(id, anti.transpose());
}

}  // namespace

int main() {
  prop::Suite suite("dissipator");
  const auto scheme = LevelScheme::half_to_three_halves();

  int worst_n = 1;
  double worst_d = 1.0;
  auto min_eigenvalue = [&](OnSiteDecay mode) {
    double worst = 0.0;
    for (int n : {1, 2, 5, 10, 20, 50}) {
      for (double d : {0.5, 1.0, 1.75, 2.0, 2.5, std::sqrt(2.0)}) {
        const auto c = coupling_matrices(linear_chain(n, d), scheme, mode);
        Eigen::SelfAdjointEigenSolver<CMat> es(c.dissipative, Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() < worst) {
          worst = es.eigenvalues().minCoeff();
          worst_n = n;
          worst_d = d;
        }
      }
    }
    return worst;
  };
  suite.below("psd", -min_eigenvalue(OnSiteDecay::PolarizationChannels), 1e-10);

  // Independent per-transition on-site rates are not the r -> 0 limit of the
  // pair blocks, so that matrix is indefinite; the jump decomposition must refuse it.
  const double per = min_eigenvalue(OnSiteDecay::PerTransition);
  std::printf("INFO dissipator/per_transition_min_eigenvalue: %.3e at N=%d d=%.3f\n", per, worst_n, worst_d);
  // Smallest indefinite case for the refusal check.
  int small_n = 0;
  double small_d = 0.0;
  for (int n = 2; n <= 10 && small_n == 0; ++n) {
    for (double d : {0.5, 1.0, 1.75, 2.0, 2.5, std::sqrt(2.0)}) {
      const auto c = coupling_matrices(linear_chain(n, d), scheme, OnSiteDecay::PerTransition);
      Eigen::SelfAdjointEigenSolver<CMat> es(c.dissipative, Eigen::EigenvaluesOnly);
      if (es.eigenvalues().minCoeff() < -1e-10) {
        small_n = n;
        small_d = d;
        break;
      }
    }
  }
  bool refused = false;
  if (small_n > 0) {
    try {
      jump_decomposition(coupling_matrices(linear_chain(small_n, small_d), scheme, OnSiteDecay::PerTransition),
                         TruncatedBasis(small_n, 1, scheme), scheme);
    } catch (const ModelError&) {
      refused = true;
    }
  }
  suite.check("indefinite_rates_rejected", refused, refused ? 0.0 : 1.0, 0.0);

  double recon = 0.0, decay_op = 0.0;
  for (int n : {1, 2}) {
    for (int m : {1, 2}) {
      for (double d : {0.5, 1.0, 2.0, 2.5}) {
        const auto c = coupling_matrices(linear_chain(n, d), scheme);
        const TruncatedBasis basis(n, m, scheme);
        const auto jumps = jump_decomposition(c, basis, scheme);
        std::vector<CMat> sigma;
        for (int j = 0; j < n; ++j)
          for (int t = 0; t < scheme.n_transitions(); ++t) sigma.emplace_back(CMat(lowering_operator(basis, scheme, j, t)));
        const auto dim = static_cast<Eigen::Index>(basis.dim());
        CMat direct = CMat::Zero(dim * dim, dim * dim);
        CMat decay = CMat::Zero(dim, dim);
        for (int a = 0; a < c.dim(); ++a) {
          for (int b = 0; b < c.dim(); ++b) {
            const Complex g = c.dissipative(a, b);
            if (g == 0.0) continue;
            const CMat anti = sigma[a].adjoint() * sigma[b];
            direct += g * lindblad_term(sigma[b], sigma[a].adjoint(), anti);
            decay += g * anti;
          }
        }
        CMat from_jumps = CMat::Zero(dim * dim, dim * dim);
        for (const auto& jmp : jumps.jumps) {
          const CMat op(jmp.op);
          from_jumps += jmp.rate * lindblad_term(op, op.adjoint(), op.adjoint() * op);
        }
        recon = std::max(recon, (direct - from_jumps).cwiseAbs().maxCoeff());
        decay_op = std::max(decay_op, (decay - CMat(jumps.decay_operator())).cwiseAbs().maxCoeff());
      }
    }
  }
  suite.below("jump_superoperator_reconstruction", recon, 1e-10);
  suite.below("decay_operator_reconstruction", decay_op, 1e-10);

  // Isolated atoms: eigen-rates equal the branching rates.
  const auto far = coupling_matrices(linear_chain(2, 1e6), scheme, OnSiteDecay::PerTransition);
  Eigen::SelfAdjointEigenSolver<CMat> es(far.dissipative, Eigen::EigenvaluesOnly);
  std::vector<double> want;
  for (int rep = 0; rep < 2; ++rep)
    for (const auto& t : scheme.transitions()) want.push_back(t.cg * t.cg);
  std::sort(want.begin(), want.end());
  double gap = 0.0;
  for (std::size_t i = 0; i < want.size(); ++i) gap = std::max(gap, std::abs(es.eigenvalues()(static_cast<Eigen::Index>(i)) - want[i]));
  suite.below("isolated_eigen_rates", gap, 1e-5);
  return suite.finish();
}
