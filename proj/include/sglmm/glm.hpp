#pragma once

#include "sglmm/basis.hpp"
#include "sglmm/core.hpp"
#include "sglmm/util.hpp"

namespace sglmm {

struct GlmFit {
  VectorXd beta;
  double deviance = 0;
  double aic = 0;
  int iterations = 0;
  bool converged = false;
  VectorXd eta;  // includes offset
  VectorXd mu;
};

namespace detail {

inline double glm_deviance(Family f, const VectorXd& z, const VectorXd& mu) {
  double dev = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    if (f == Family::poisson_log) {
      double t = -(z[i] - mu[i]);
      if (z[i] > 0) t += z[i] * std::log(z[i] / mu[i]);
      dev += 2.0 * t;
    } else {
      double t = 0;
      if (z[i] > 0) t += z[i] * std::log(z[i] / mu[i]);
      if (z[i] < 1) t += (1.0 - z[i]) * std::log((1.0 - z[i]) / (1.0 - mu[i]));
      dev += 2.0 * t;
    }
  }
  return dev;
}

}  // namespace detail

// Canonical-link IRLS. Converged means the score X'(z - mu) has sup norm
// below 1e-8. AIC is deviance + 2p.
inline GlmFit irls_fit(const MatrixXd& x, const VectorXd& z, Family family,
                       const VectorXd& offset, int max_iters = 50) {
  const auto n = z.size();
  const auto p = x.cols();
  require(x.rows() == n, Error::Kind::invalid_argument, "irls_fit: dimension mismatch");
  require(offset.size() == n, Error::Kind::invalid_argument, "irls_fit: offset length mismatch");

  GlmFit fit;
  fit.beta = VectorXd::Zero(p);
  VectorXd mu(n), var(n);
  const double score_tol = 1e-8;

  for (int iter = 0; iter < max_iters; ++iter) {
    fit.iterations = iter + 1;
    fit.eta = offset;
    if (p > 0) fit.eta += x * fit.beta;
    mean_and_variance(family, fit.eta, mu, var);
    if (p == 0) {
      fit.converged = true;
      break;
    }
    VectorXd score = x.transpose() * (z - mu);
    if (score.cwiseAbs().maxCoeff() < score_tol) {
      fit.converged = true;
      break;
    }
    VectorXd w = var.cwiseMax(1e-12);
    // working response, offset removed
    VectorXd wz = (fit.eta - offset) + (z - mu).cwiseQuotient(w);
    MatrixXd xtwx = x.transpose() * w.asDiagonal() * x;
    Eigen::LDLT<MatrixXd> ldlt(xtwx);
    require(ldlt.info() == Eigen::Success, Error::Kind::numerical,
            "irls_fit: weighted normal equations are singular");
    VectorXd beta_new = ldlt.solve(x.transpose() * (w.asDiagonal() * wz));
    require(beta_new.allFinite(), Error::Kind::numerical, "irls_fit: iterate diverged");
    fit.beta = beta_new;
  }

  fit.eta = offset;
  if (p > 0) fit.eta += x * fit.beta;
  mean_and_variance(family, fit.eta, mu, var);
  fit.mu = mu;
  if (!fit.converged) {
    std::ostringstream msg;
    msg << "irls_fit: no convergence in " << max_iters << " iterations; last beta = [";
    for (Eigen::Index j = 0; j < p; ++j) msg << (j ? ", " : "") << fit.beta[j];
    msg << "]";
    fail(Error::Kind::convergence, msg.str());
  }
  fit.deviance = detail::glm_deviance(family, z, mu);
  fit.aic = fit.deviance + 2.0 * static_cast<double>(p);
  return fit;
}

struct RankSelection {
  int rank = 0;
  std::vector<std::pair<int, double>> aic_table;  // (rank, aic); failed fits carry +inf
};

// Fits the non-spatial GLM augmented with synthetic spatial columns
// U_m D_m^{1/2} for each candidate rank and returns the AIC minimizer.
// Eigencomponents come from R at the initial range value phi0.
inline RankSelection select_initial_rank(const SpatialDataset& data, double phi0, double nu,
                                         const std::vector<int>& rank_grid,
                                         const EigSolverConfig& eig_cfg, int threads = 1) {
  require(!rank_grid.empty(), Error::Kind::invalid_argument, "rank grid is empty");
  for (size_t i = 1; i < rank_grid.size(); ++i)
    require(rank_grid[i] > rank_grid[i - 1], Error::Kind::invalid_argument,
            "rank grid must be increasing");
  require(data.domain == Domain::continuous, Error::Kind::invalid_argument,
          "rank selection uses the continuous-domain eigenbasis");

  const int max_rank = rank_grid.back();
  require(max_rank <= data.n(), Error::Kind::invalid_argument, "rank exceeds data size");
  MaternParams params{1.0, phi0, nu};
  const MatrixXd r = correlation_matrix(data.coords, params);
  const EigenPair eig = top_eigs(r, max_rank, eig_cfg);
  const MatrixXd synth = eig.vectors * eig.values.cwiseSqrt().asDiagonal();

  RankSelection sel;
  sel.aic_table.resize(rank_grid.size());
  parallel_for(static_cast<int>(rank_grid.size()), threads, [&](int i) {
    const int m = rank_grid[i];
    MatrixXd xm(data.n(), data.p() + m);
    if (data.p() > 0) xm.leftCols(data.p()) = data.X;
    xm.rightCols(m) = synth.leftCols(m);
    double aic = std::numeric_limits<double>::infinity();
    try {
      aic = irls_fit(xm, data.z, data.family, data.offset).aic;
    } catch (const Error&) {
      // failed fit keeps +inf
    }
    sel.aic_table[i] = {m, aic};
  });

  double best = std::numeric_limits<double>::infinity();
  for (const auto& [m, aic] : sel.aic_table) {
    if (aic < best) {
      best = aic;
      sel.rank = m;
    }
  }
  require(std::isfinite(best), Error::Kind::numerical, "all rank-grid fits failed");
  return sel;
}

// GLM warm start: beta from the fit, sigma2 from the working-residual
// variance (floored), phi at half the maximum coordinate range, tau = 1/sigma2.
inline ModelState initial_values(const SpatialDataset& data, const GlmFit& glmfit) {
  require(glmfit.converged, Error::Kind::invalid_argument,
          "initial_values: GLM fit did not converge");
  ModelState st;
  st.domain = data.domain;
  st.beta = glmfit.beta;

  VectorXd mu(data.n()), var(data.n());
  mean_and_variance(data.family, glmfit.eta, mu, var);
  VectorXd wres = (data.z - mu).cwiseQuotient(var.cwiseMax(1e-12));
  const double mean = wres.mean();
  double s2 = (wres.array() - mean).square().sum() / std::max<double>(1, data.n() - 1);
  s2 = std::max(s2, 1e-4);

  if (data.domain == Domain::continuous) {
    st.sigma2 = s2;
    double range = 0;
    for (int d = 0; d < 2; ++d)
      range = std::max(range, data.coords.col(d).maxCoeff() - data.coords.col(d).minCoeff());
    require(range > 0, Error::Kind::data, "degenerate coordinates: zero extent");
    st.phi = 0.5 * range;
  } else {
    st.tau = 1.0 / s2;
  }
  return st;
}

}  // namespace sglmm
