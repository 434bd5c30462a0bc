#pragma once

#include "sglmm/basis.hpp"
#include "sglmm/core.hpp"
#include "sglmm/rng.hpp"

#include <fstream>

namespace sglmm {

// One block of MCMC output: draws are rows, one per kept iteration (no
// thinning, no burn-in).
struct McmcBatch {
  MatrixXd draws;  // k x m
  double accept_rate = 0;
  MatrixXd proposal_cov;
  VectorXd last_state;

  int k() const { return static_cast<int>(draws.rows()); }
  int dim() const { return static_cast<int>(draws.cols()); }
};

// Unnormalized log conditional density of delta given data and parameters:
// sum_i log f(z_i | eta_i) - quadratic prior term, constants dropped.
struct DeltaTarget {
  const SpatialDataset* data = nullptr;
  const ProjectionBasis* basis = nullptr;
  ModelState state;

  double operator()(const VectorXd& delta) const {
    double prior;
    if (basis->domain == Domain::continuous) {
      prior = -0.5 * delta.squaredNorm() / state.sigma2;
    } else {
      prior = -0.5 * state.tau * delta.dot(basis->Qdelta * delta);
    }
    if (data == nullptr || data->n() == 0) return prior;
    VectorXd eta = data->offset + basis->M * delta;
    if (data->p() > 0) eta += data->X * state.beta;
    return data_loglik(data->family, data->z, eta) + prior;
  }
};

inline double log_target(const VectorXd& delta, const SpatialDataset& data,
                         const ProjectionBasis& basis, const ModelState& state) {
  return DeltaTarget{&data, &basis, state}(delta);
}

// Adaptive proposal covariance:
//   0.95 * 2.38^2/q * Sigma + 0.05 * 0.1^2/q * I
// SPD by construction thanks to the ridge term.
inline MatrixXd adapt_proposal(const MatrixXd& sample_cov, int q) {
  require(q >= 1, Error::Kind::invalid_argument, "adapt_proposal: q must be positive");
  require(sample_cov.rows() == sample_cov.cols(), Error::Kind::invalid_argument,
          "adapt_proposal: covariance must be square");
  const double qd = static_cast<double>(q);
  MatrixXd out = (0.95 * 2.38 * 2.38 / qd) * sample_cov;
  out.diagonal().array() += 0.05 * 0.01 / qd;
  return 0.5 * (out + out.transpose());
}

// Random-walk Metropolis-Hastings with a fixed multivariate normal proposal.
// Deterministic given the seed. A Cholesky failure of the proposal is retried
// once with a small ridge.
template <class LogTarget>
McmcBatch run_chain(const VectorXd& start, int n_draws, const MatrixXd& proposal_cov,
                    LogTarget&& log_target_fn, uint64_t seed) {
  require(n_draws >= 1, Error::Kind::invalid_argument, "run_chain: need at least one draw");
  const auto m = start.size();
  require(proposal_cov.rows() == m && proposal_cov.cols() == m, Error::Kind::invalid_argument,
          "run_chain: proposal covariance dimension mismatch");

  Eigen::LLT<MatrixXd> llt(proposal_cov);
  if (llt.info() != Eigen::Success) {
    MatrixXd ridged = proposal_cov;
    ridged.diagonal().array() += 1e-10 * std::max(proposal_cov.trace(), 1e-300) / m;
    llt.compute(ridged);
    require(llt.info() == Eigen::Success, Error::Kind::numerical,
            "run_chain: proposal covariance is not positive definite");
  }
  const MatrixXd chol_l = llt.matrixL();

  Rng rng(seed);
  McmcBatch batch;
  batch.draws.resize(n_draws, m);
  batch.proposal_cov = proposal_cov;

  VectorXd current = start;
  double current_lp = log_target_fn(current);
  require(std::isfinite(current_lp), Error::Kind::numerical,
          "run_chain: log target is not finite at the start state");
  VectorXd zs(m), proposal(m);
  long accepted = 0;
  for (int t = 0; t < n_draws; ++t) {
    for (Eigen::Index i = 0; i < m; ++i) zs[i] = rng.normal();
    proposal = current + chol_l * zs;
    const double lp = log_target_fn(proposal);
    if (std::isfinite(lp) && std::log(rng.uniform()) < lp - current_lp) {
      current = proposal;
      current_lp = lp;
      ++accepted;
    }
    batch.draws.row(t) = current;
  }
  batch.accept_rate = static_cast<double>(accepted) / n_draws;
  batch.last_state = current;
  return batch;
}

// Batch-means asymptotic standard error of the series mean, with
// floor(sqrt(k)) batches of size floor(k / batches).
inline double batch_means_ase(const VectorXd& values) {
  const auto k = values.size();
  require(k >= 100, Error::Kind::invalid_argument,
          "batch_means_ase: need at least 100 values, got " + std::to_string(k));
  const auto a = static_cast<Eigen::Index>(std::floor(std::sqrt(static_cast<double>(k))));
  const auto b = k / a;
  VectorXd means(a);
  for (Eigen::Index j = 0; j < a; ++j) means[j] = values.segment(j * b, b).mean();
  const double grand = means.mean();
  const double var = (means.array() - grand).square().sum() / static_cast<double>(a - 1);
  return std::sqrt(var / static_cast<double>(a));
}

inline bool multivariate_ess_ready(Eigen::Index k, Eigen::Index m) {
  const auto a = static_cast<Eigen::Index>(std::floor(std::sqrt(static_cast<double>(k))));
  return k > m && a >= m + 2;
}

// Multivariate effective sample size,
//   mESS = k * (det Lambda / det Sigma_bm)^(1/m),
// with Lambda the sample covariance and Sigma_bm the multivariate
// batch-means long-run covariance estimate.
inline double multivariate_ess(const MatrixXd& draws) {
  const auto k = draws.rows();
  const auto m = draws.cols();
  require(k > m, Error::Kind::invalid_argument, "multivariate_ess: need more draws than dimensions");
  const auto a = static_cast<Eigen::Index>(std::floor(std::sqrt(static_cast<double>(k))));
  const auto b = k / a;
  const auto used = a * b;

  const RowVectorXd grand = draws.topRows(used).colwise().mean();
  MatrixXd centered = draws.topRows(used).rowwise() - grand;
  MatrixXd lambda = centered.transpose() * centered / static_cast<double>(used - 1);

  MatrixXd bm = MatrixXd::Zero(m, m);
  VectorXd mean_j(m);
  for (Eigen::Index j = 0; j < a; ++j) {
    mean_j = draws.middleRows(j * b, b).colwise().mean().transpose() - grand.transpose();
    bm += mean_j * mean_j.transpose();
  }
  bm *= static_cast<double>(b) / static_cast<double>(a - 1);

  Eigen::LLT<MatrixXd> llt_lambda(lambda);
  require(llt_lambda.info() == Eigen::Success, Error::Kind::numerical,
          "multivariate_ess: sample covariance is singular");
  Eigen::LLT<MatrixXd> llt_bm(bm);
  require(llt_bm.info() == Eigen::Success, Error::Kind::numerical,
          "multivariate_ess: batch-means covariance is singular");

  double logdet_lambda = 0, logdet_bm = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    logdet_lambda += 2.0 * std::log(MatrixXd(llt_lambda.matrixL())(i, i));
    logdet_bm += 2.0 * std::log(MatrixXd(llt_bm.matrixL())(i, i));
  }
  return static_cast<double>(used) *
         std::exp((logdet_lambda - logdet_bm) / static_cast<double>(m));
}

// Debug dump, one row per draw.
inline void dump_draws_csv(const McmcBatch& batch, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), Error::Kind::io, "cannot write draws to " + path);
  out.precision(17);
  for (int i = 0; i < batch.k(); ++i) {
    for (int j = 0; j < batch.dim(); ++j) out << (j ? "," : "") << batch.draws(i, j);
    out << "\n";
  }
}

}  // namespace sglmm
