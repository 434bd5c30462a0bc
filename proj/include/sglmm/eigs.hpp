#pragma once

#include "sglmm/core.hpp"
#include "sglmm/rng.hpp"

namespace sglmm {

// Leading eigencomponents of a PSD matrix: orthonormal columns and
// nonincreasing nonnegative values.
struct EigenPair {
  MatrixXd vectors;  // n x m
  VectorXd values;   // length m
  bool regularized = false;
};

struct NystromConfig {
  int rank = 1;
  int oversample = -1;  // -1 means oversample = rank
  int power = 1;        // 0, 1 or 2
  uint64_t seed = 0;

  int effective_oversample() const { return oversample < 0 ? rank : oversample; }
};

namespace detail {

inline void check_symmetric(const MatrixXd& k, const char* who) {
  require(k.rows() == k.cols(), Error::Kind::invalid_argument,
          std::string(who) + ": matrix must be square");
  const double scale = std::max(1.0, k.cwiseAbs().maxCoeff());
  const double asym = (k - k.transpose()).cwiseAbs().maxCoeff();
  require(asym <= 1e-8 * scale, Error::Kind::invalid_argument,
          std::string(who) + ": matrix is not symmetric");
}

// Fixes each column's sign so its largest-magnitude entry is positive, which
// makes bases deterministic across runs and platforms.
inline void fix_column_signs(MatrixXd& u) {
  for (Eigen::Index j = 0; j < u.cols(); ++j) {
    Eigen::Index imax;
    u.col(j).cwiseAbs().maxCoeff(&imax);
    if (u(imax, j) < 0) u.col(j) = -u.col(j);
  }
}

inline void clamp_tiny_negatives(VectorXd& values) {
  for (Eigen::Index i = 0; i < values.size(); ++i)
    if (values[i] < 0) values[i] = 0.0;
}

}  // namespace detail

// Dense decomposition, keeping the m largest eigenpairs.
inline EigenPair exact_top_eigs(const MatrixXd& k, int m) {
  detail::check_symmetric(k, "exact_top_eigs");
  const auto n = k.rows();
  require(m >= 1 && m <= n, Error::Kind::invalid_argument, "exact_top_eigs: rank out of range");
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(k);
  require(es.info() == Eigen::Success, Error::Kind::numerical,
          "exact_top_eigs: eigendecomposition failed");
  EigenPair out;
  out.vectors.resize(n, m);
  out.values.resize(m);
  for (int i = 0; i < m; ++i) {
    out.values[i] = es.eigenvalues()[n - 1 - i];
    out.vectors.col(i) = es.eigenvectors().col(n - 1 - i);
  }
  detail::clamp_tiny_negatives(out.values);
  detail::fix_column_signs(out.vectors);
  return out;
}

// Probabilistic Nystrom approximation of the leading m eigencomponents:
// project with Phi = K^a Omega, decompose the small matrix Phi' K Phi, map
// back through the Nystrom extension, then orthogonalize with a final SVD.
inline EigenPair nystrom_top_eigs(const MatrixXd& k, const NystromConfig& cfg) {
  detail::check_symmetric(k, "nystrom_top_eigs");
  const auto n = k.rows();
  const int m = cfg.rank;
  const int l = cfg.effective_oversample();
  require(m >= 1 && l >= 0, Error::Kind::invalid_argument, "nystrom_top_eigs: bad rank/oversample");
  require(cfg.power >= 0 && cfg.power <= 2, Error::Kind::invalid_argument,
          "nystrom_top_eigs: power must be 0, 1 or 2");
  const int r = m + l;
  require(n > r, Error::Kind::invalid_argument,
          "nystrom_top_eigs: need n > rank + oversample");

  Rng rng(cfg.seed);
  const double sd = 1.0 / std::sqrt(static_cast<double>(r));
  MatrixXd omega(n, r);
  for (int j = 0; j < r; ++j)
    for (Eigen::Index i = 0; i < n; ++i) omega(i, j) = sd * rng.normal();

  MatrixXd phi = omega;
  for (int a = 0; a < cfg.power; ++a) phi = k * phi;

  MatrixXd kphi = k * phi;
  MatrixXd k1 = phi.transpose() * kphi;
  k1 = 0.5 * (k1 + k1.transpose());

  EigenPair out;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(k1);
  require(es.info() == Eigen::Success, Error::Kind::numerical,
          "nystrom_top_eigs: small eigendecomposition failed");
  const double lmax = std::max(es.eigenvalues().maxCoeff(), 0.0);
  if (es.eigenvalues().minCoeff() <= 1e-12 * std::max(lmax, 1e-300)) {
    const double ridge = 1e-10 * k1.trace() / r;
    k1.diagonal().array() += ridge;
    es.compute(k1);
    require(es.info() == Eigen::Success, Error::Kind::numerical,
            "nystrom_top_eigs: regularized eigendecomposition failed");
    out.regularized = true;
  }

  VectorXd inv_sqrt = es.eigenvalues().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
  MatrixXd c = kphi * (es.eigenvectors() * inv_sqrt.asDiagonal());

  Eigen::BDCSVD<MatrixXd> svd(c, Eigen::ComputeThinU);
  out.vectors = svd.matrixU().leftCols(m);
  out.values = svd.singularValues().head(m).array().square();
  detail::clamp_tiny_negatives(out.values);
  detail::fix_column_signs(out.vectors);
  return out;
}

// Dispatch between the exact and Nystrom paths.
struct EigSolverConfig {
  enum class Method { automatic, exact, nystrom };
  Method method = Method::automatic;
  int exact_threshold = 2000;  // automatic mode: exact for n <= threshold
  int oversample = -1;
  int power = 1;
  uint64_t seed = 0;
};

inline EigSolverConfig::Method resolve_method(const EigSolverConfig& cfg, Eigen::Index n, int m) {
  if (cfg.method == EigSolverConfig::Method::automatic) {
    const int l = cfg.oversample < 0 ? m : cfg.oversample;
    if (n <= cfg.exact_threshold || n <= m + l) return EigSolverConfig::Method::exact;
    return EigSolverConfig::Method::nystrom;
  }
  return cfg.method;
}

inline EigenPair top_eigs(const MatrixXd& k, int m, const EigSolverConfig& cfg) {
  if (resolve_method(cfg, k.rows(), m) == EigSolverConfig::Method::exact)
    return exact_top_eigs(k, m);
  NystromConfig ncfg;
  ncfg.rank = m;
  ncfg.oversample = cfg.oversample;
  ncfg.power = cfg.power;
  ncfg.seed = cfg.seed;
  return nystrom_top_eigs(k, ncfg);
}

}  // namespace sglmm
