#pragma once

#include "sglmm/covariance.hpp"
#include "sglmm/em_common.hpp"
#include "sglmm/rng.hpp"

#include <fstream>

namespace sglmm {

struct PredictionResult {
  VectorXd latent_mean;
  VectorXd latent_var;
  VectorXd response_mean;
  MatrixXd draws;  // n* x K, present for the Monte Carlo path
  VectorXd lo95, hi95;
};

namespace detail {

struct BlupOperator {
  MatrixXd projector;   // n* x m, maps delta to the conditional mean
  VectorXd cond_var;    // diagonal of the conditional covariance
  MatrixXd cond_chol;   // n* x n* factor for sampling
};

// Conditional mean of W* given delta is R_{*s} U D^{-1/2} delta; the
// conditional covariance is sigma2 (R_** - R_{*s} U D^{-1} U' R_{s*}).
inline BlupOperator blup_operator(const MatrixXd& new_coords, const MatrixXd& train_coords,
                                  const ProjectionBasis& basis, const ModelState& state,
                                  double nu, bool need_chol) {
  require(basis.domain == Domain::continuous, Error::Kind::invalid_argument,
          "prediction supports the continuous domain only");
  require(new_coords.allFinite(), Error::Kind::invalid_argument,
          "prediction locations contain non-finite coordinates");
  const MaternParams params{1.0, state.phi, nu};
  const MatrixXd r_cross = cross_correlation(new_coords, train_coords, params);  // n* x n
  const double floor_val = std::max(basis.D.maxCoeff(), 1e-300) * 1e-15;
  const VectorXd inv_sqrt_d =
      basis.D.cwiseMax(floor_val).cwiseSqrt().cwiseInverse();

  BlupOperator op;
  const MatrixXd ru = r_cross * basis.U;        // n* x m
  op.projector = ru * inv_sqrt_d.asDiagonal();  // R_{*s} U D^{-1/2}
  MatrixXd cond = -op.projector * op.projector.transpose();
  cond += cross_correlation(new_coords, new_coords, params);
  cond *= state.sigma2;
  op.cond_var = cond.diagonal().cwiseMax(0.0);
  if (need_chol) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(cond);
    require(es.info() == Eigen::Success, Error::Kind::numerical,
            "blup: conditional covariance decomposition failed");
    op.cond_chol =
        es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  }
  return op;
}

}  // namespace detail

// BLUP of the latent field at new locations given a realized reparameterized
// field Wtilde = U D^{1/2} delta; returns the conditional mean and the
// diagonal of the conditional covariance.
inline std::pair<VectorXd, VectorXd> blup(const MatrixXd& new_coords,
                                          const MatrixXd& train_coords,
                                          const ProjectionBasis& basis, const ModelState& state,
                                          const VectorXd& wtilde, double nu = 1.5) {
  require(wtilde.size() == train_coords.rows(), Error::Kind::invalid_argument,
          "blup: field length does not match training locations");
  const auto op = detail::blup_operator(new_coords, train_coords, basis, state, nu, false);
  // delta coordinates of the field: D^{-1/2} U' Wtilde
  const double floor_val = std::max(basis.D.maxCoeff(), 1e-300) * 1e-15;
  const VectorXd delta =
      basis.D.cwiseMax(floor_val).cwiseSqrt().cwiseInverse().asDiagonal() *
      (basis.U.transpose() * wtilde);
  return {op.projector * delta, op.cond_var};
}

// Monte Carlo prediction: one conditional-normal draw of W* per retained
// MCMC draw of delta. Latent moments combine the spread of the per-draw
// conditional means with the fixed conditional covariance.
inline PredictionResult predict_mcmc(const FitResult& fit, const SpatialDataset& train,
                                     const MatrixXd& new_coords, const MatrixXd& x_new,
                                     const VectorXd& offset_new, double nu = 1.5,
                                     uint64_t seed = 0) {
  require(fit.final_batch.k() > 0, Error::Kind::invalid_argument,
          "predict_mcmc: fit carries no Monte Carlo draws; refit with the MCMC-EM algorithm");
  require(x_new.rows() == new_coords.rows() && offset_new.size() == new_coords.rows(),
          Error::Kind::invalid_argument, "predict_mcmc: new-location design mismatch");
  const auto op =
      detail::blup_operator(new_coords, train.coords, fit.basis, fit.estimate, nu, true);
  const int k = fit.final_batch.k();
  const auto nstar = new_coords.rows();

  MatrixXd means = op.projector * fit.final_batch.draws.transpose();  // n* x k
  PredictionResult out;
  out.latent_mean = means.rowwise().mean();
  VectorXd mean_spread(nstar);
  for (Eigen::Index i = 0; i < nstar; ++i) {
    const double mu = out.latent_mean[i];
    mean_spread[i] = (means.row(i).array() - mu).square().sum() / std::max(1, k - 1);
  }
  out.latent_var = mean_spread + op.cond_var;

  Rng rng(mix_seed(seed, 0x9ced1c7ULL));
  out.draws.resize(nstar, k);
  VectorXd zvec(nstar);
  for (int j = 0; j < k; ++j) {
    for (Eigen::Index i = 0; i < nstar; ++i) zvec[i] = rng.normal();
    out.draws.col(j) = means.col(j) + op.cond_chol * zvec;
  }

  VectorXd eta_base = offset_new;
  if (x_new.cols() > 0) eta_base += x_new * fit.estimate.beta;
  out.response_mean = VectorXd::Zero(nstar);
  for (int j = 0; j < k; ++j) {
    for (Eigen::Index i = 0; i < nstar; ++i)
      out.response_mean[i] += inv_link(train.family, eta_base[i] + out.draws(i, j));
  }
  out.response_mean /= k;

  out.lo95.resize(nstar);
  out.hi95.resize(nstar);
  for (Eigen::Index i = 0; i < nstar; ++i) {
    std::vector<double> row(out.draws.row(i).begin(), out.draws.row(i).end());
    out.lo95[i] = quantile_type7(row, 0.025);
    out.hi95[i] = quantile_type7(std::move(row), 0.975);
  }
  return out;
}

// Plug-in prediction at the Laplace mode; the variance carries only the
// conditional (kriging) part, with no random-effect uncertainty.
inline PredictionResult predict_laplace(const FitResult& fit, const SpatialDataset& train,
                                        const MatrixXd& new_coords, const MatrixXd& x_new,
                                        const VectorXd& offset_new, double nu = 1.5) {
  require(fit.laplace.has_value(), Error::Kind::invalid_argument,
          "predict_laplace: fit carries no Laplace mode; refit with the LA-EM algorithm");
  require(x_new.rows() == new_coords.rows() && offset_new.size() == new_coords.rows(),
          Error::Kind::invalid_argument, "predict_laplace: new-location design mismatch");
  const auto op =
      detail::blup_operator(new_coords, train.coords, fit.basis, fit.estimate, nu, false);
  PredictionResult out;
  out.latent_mean = op.projector * fit.laplace->mode;
  out.latent_var = op.cond_var;
  VectorXd eta = offset_new + out.latent_mean;
  if (x_new.cols() > 0) eta += x_new * fit.estimate.beta;
  out.response_mean.resize(new_coords.rows());
  for (Eigen::Index i = 0; i < new_coords.rows(); ++i)
    out.response_mean[i] = inv_link(train.family, eta[i]);
  return out;
}

inline void write_prediction_csv(const PredictionResult& pred, const MatrixXd& coords,
                                 const std::string& path) {
  std::ofstream out(path);
  require(out.good(), Error::Kind::io, "cannot write predictions to " + path);
  out.precision(17);
  const bool has_quantiles = pred.lo95.size() > 0;
  out << "x,y,latent_mean,latent_sd,response_mean";
  if (has_quantiles) out << ",latent_q025,latent_q975";
  out << "\n";
  for (Eigen::Index i = 0; i < coords.rows(); ++i) {
    out << coords(i, 0) << "," << coords(i, 1) << "," << pred.latent_mean[i] << ","
        << std::sqrt(std::max(pred.latent_var[i], 0.0)) << "," << pred.response_mean[i];
    if (has_quantiles) out << "," << pred.lo95[i] << "," << pred.hi95[i];
    out << "\n";
  }
}

}  // namespace sglmm
