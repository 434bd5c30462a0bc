#pragma once

#include "sglmm/core.hpp"
#include "sglmm/covariance.hpp"
#include "sglmm/eigs.hpp"
#include "sglmm/lattice.hpp"

namespace sglmm {

// Applies the residual projector I - X (X'X)^-1 X' to the columns of V.
// X may have zero columns, in which case V is returned unchanged.
inline MatrixXd residual_projector_apply(const MatrixXd& x, const MatrixXd& v) {
  if (x.cols() == 0) return v;
  require(x.rows() == v.rows(), Error::Kind::invalid_argument,
          "residual_projector_apply: row mismatch");
  Eigen::ColPivHouseholderQR<MatrixXd> qr(x);
  if (qr.rank() < x.cols()) {
    const auto perm = qr.colsPermutation().indices();
    const int offending = perm[qr.rank()];
    fail(Error::Kind::invalid_argument,
         "design matrix is rank deficient; column " + std::to_string(offending) +
             " is linearly dependent on the others");
  }
  return v - x * qr.solve(v);
}

// Reduced-rank random-effect basis. Continuous case: M = Pperp U D^{1/2}
// with (U, D) the leading eigenpairs of R_phi and an implicit N(0, sigma2 I)
// prior on delta. Lattice case: M holds Moran eigenvectors and Qdelta = M'QM.
struct ProjectionBasis {
  Domain domain = Domain::continuous;
  MatrixXd M;       // n x m
  MatrixXd U;       // n x m
  VectorXd D;       // length m
  MatrixXd Qdelta;  // m x m, lattice only
  int rank = 0;
  int q = 0;
  double phi = std::numeric_limits<double>::quiet_NaN();
  bool truncated = false;
  bool eig_regularized = false;
};

inline ProjectionBasis continuous_basis_from_eigs(const EigenPair& eig, const MatrixXd& x,
                                                  double phi) {
  ProjectionBasis b;
  b.domain = Domain::continuous;
  b.U = eig.vectors;
  b.D = eig.values;
  b.rank = static_cast<int>(eig.values.size());
  b.q = b.rank;
  b.phi = phi;
  b.eig_regularized = eig.regularized;
  MatrixXd ud = eig.vectors * eig.values.cwiseSqrt().asDiagonal();
  b.M = residual_projector_apply(x, ud);
  return b;
}

inline ProjectionBasis continuous_basis(const MatrixXd& coords, const MatrixXd& x,
                                        const MaternParams& params, int m,
                                        const EigSolverConfig& eig_cfg) {
  require(m >= 1 && m <= coords.rows(), Error::Kind::invalid_argument,
          "continuous_basis: rank out of range");
  const MatrixXd r = correlation_matrix(coords, params);
  return continuous_basis_from_eigs(top_eigs(r, m, eig_cfg), x, params.phi);
}

// Principal components of the Moran operator Pperp A Pperp, keeping the
// eigenvectors with the largest (positive) eigenvalues. Requesting more
// components than there are positive eigenvalues truncates with a flag.
inline ProjectionBasis moran_basis(const LatticeGraph& graph, const MatrixXd& x, int m) {
  require(m >= 1, Error::Kind::invalid_argument, "moran_basis: rank must be positive");
  require(m <= graph.n - x.cols(), Error::Kind::invalid_argument,
          "moran_basis: rank exceeds n - p");
  const int n = graph.n;
  const int p = static_cast<int>(x.cols());
  const MatrixXd a = adjacency_matrix(graph);

  // eigendecompose the operator restricted to the orthogonal complement of
  // the design, so every column is exactly orthogonal to X even on
  // degenerate eigenspaces
  MatrixXd comp;  // n x (n - p), orthonormal basis of span(X)^perp
  if (p == 0) {
    comp = MatrixXd::Identity(n, n);
  } else {
    Eigen::ColPivHouseholderQR<MatrixXd> qr(x);
    require(qr.rank() == p, Error::Kind::invalid_argument,
            "moran_basis: design matrix is rank deficient");
    Eigen::HouseholderQR<MatrixXd> full_qr(x);
    comp = full_qr.householderQ() * MatrixXd::Identity(n, n).rightCols(n - p);
  }
  MatrixXd restricted = comp.transpose() * a * comp;
  restricted = 0.5 * (restricted + restricted.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(restricted);
  require(es.info() == Eigen::Success, Error::Kind::numerical,
          "moran_basis: eigendecomposition failed");
  const int dim = n - p;
  int positive = 0;
  for (int i = 0; i < dim; ++i)
    if (es.eigenvalues()[i] > 1e-10) ++positive;

  ProjectionBasis b;
  b.domain = Domain::lattice;
  b.truncated = positive < m;
  const int keep = std::min(m, std::max(positive, 1));
  b.rank = keep;
  b.q = keep;
  b.M.resize(n, keep);
  b.D.resize(keep);
  for (int i = 0; i < keep; ++i) {
    b.D[i] = es.eigenvalues()[dim - 1 - i];
    b.M.col(i) = comp * es.eigenvectors().col(dim - 1 - i);
  }
  detail::fix_column_signs(b.M);
  b.U = b.M;
  const Eigen::SparseMatrix<double> q = icar_precision(graph);
  b.Qdelta = b.M.transpose() * (q * b.M);
  b.Qdelta = 0.5 * (b.Qdelta + b.Qdelta.transpose());
  return b;
}

}  // namespace sglmm
