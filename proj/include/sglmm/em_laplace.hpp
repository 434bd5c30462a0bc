#pragma once

#include "sglmm/em_common.hpp"
#include "sglmm/glm.hpp"

#include <memory>

namespace sglmm {

// First and second derivatives of the per-observation log likelihood in the
// linear predictor. For canonical links these are b'(eta) and b''(eta):
// Poisson d1 = D2 = exp(eta); Bernoulli d1 = p, D2 = p(1-p), computed stably.
inline void likelihood_curvature(Family family, const VectorXd& eta, VectorXd& d1, VectorXd& d2) {
  mean_and_variance(family, eta, d1, d2);
}

inline double cumulant(Family family, double eta) {
  return family == Family::poisson_log ? std::exp(eta) : log1pexp(eta);
}

namespace detail {

inline MatrixXd prior_precision(const ProjectionBasis& basis, const ModelState& state) {
  if (basis.domain == Domain::continuous)
    return MatrixXd::Identity(basis.rank, basis.rank) / state.sigma2;
  return state.tau * basis.Qdelta;
}

}  // namespace detail

// Newton-Raphson mode finding for f(delta | Z, psi), re-linearizing
// delta <- Q^{-1} b until the sup-norm change falls below 1e-8. Steps that
// decrease the log posterior are halved before giving up.
inline LaplaceState gaussian_approx(const SpatialDataset& data, const ProjectionBasis& basis,
                                    const ModelState& state, VectorXd delta0,
                                    int max_iters = 100, double tol = 1e-8) {
  const int m = basis.rank;
  if (delta0.size() == 0) delta0 = VectorXd::Zero(m);
  require(delta0.size() == m, Error::Kind::invalid_argument,
          "gaussian_approx: starting value has wrong dimension");
  const MatrixXd q_prior = detail::prior_precision(basis, state);

  VectorXd xb = data.offset;
  if (data.p() > 0) xb += data.X * state.beta;

  const auto objective = [&](const VectorXd& d) {
    const double prior = -0.5 * d.dot(q_prior * d);
    if (data.n() == 0) return prior;
    return data_loglik(data.family, data.z, xb + basis.M * d) + prior;
  };

  LaplaceState lap;
  VectorXd delta = delta0;
  double obj = objective(delta);
  require(std::isfinite(obj), Error::Kind::numerical,
          "gaussian_approx: log posterior not finite at the starting value");
  VectorXd eta, d1, d2;
  MatrixXd q;
  for (int iter = 0; iter < max_iters; ++iter) {
    lap.newton_iters = iter + 1;
    eta = xb + basis.M * delta;
    likelihood_curvature(data.family, eta, d1, d2);
    q = basis.M.transpose() * d2.asDiagonal() * basis.M + q_prior;
    Eigen::LLT<MatrixXd> llt(q);
    require(llt.info() == Eigen::Success, Error::Kind::numerical,
            "gaussian_approx: precision not positive definite");
    const VectorXd b = basis.M.transpose() * (data.z - d1 + d2.cwiseProduct(basis.M * delta));
    VectorXd delta_new = llt.solve(b);

    double obj_new = objective(delta_new);
    int halvings = 0;
    while ((!std::isfinite(obj_new) || obj_new < obj - 1e-12) && halvings < 30) {
      delta_new = 0.5 * (delta_new + delta);
      obj_new = objective(delta_new);
      ++halvings;
    }
    require(std::isfinite(obj_new) && obj_new >= obj - 1e-8, Error::Kind::convergence,
            "gaussian_approx: Newton step failed to increase the log posterior at iteration " +
                std::to_string(iter + 1));

    const double change = (delta_new - delta).cwiseAbs().maxCoeff();
    delta = delta_new;
    obj = obj_new;
    if (change < tol) {
      lap.converged = true;
      break;
    }
  }
  if (!lap.converged) {
    fail(Error::Kind::convergence,
         "gaussian_approx: no convergence in " + std::to_string(max_iters) +
             " iterations; last iterate sup-norm " +
             std::to_string(delta.cwiseAbs().maxCoeff()));
  }

  eta = xb + basis.M * delta;
  likelihood_curvature(data.family, eta, d1, d2);
  lap.precision = basis.M.transpose() * d2.asDiagonal() * basis.M + q_prior;
  lap.precision = 0.5 * (lap.precision + lap.precision.transpose()).eval();
  lap.chol.compute(lap.precision);
  require(lap.chol.info() == Eigen::Success, Error::Kind::numerical,
          "gaussian_approx: precision not positive definite at the mode");
  lap.mode = delta;
  return lap;
}

// Second-order approximation to E[h(eta_i) | Z]: h at the mode plus half the
// second derivative times the conditional variance of the linear predictor.
inline double laplace_expectation(double h_at_mode, double h2_at_mode, const RowVectorXd& mi,
                                  const LaplaceState& lap) {
  return h_at_mode + 0.5 * h2_at_mode * lap.quad_inv(mi);
}

namespace detail {

// Conditional variances M_i Q^{-1} M_i' for all rows in one solve.
inline VectorXd rowwise_quad_inv(const ProjectionBasis& basis, const LaplaceState& lap) {
  MatrixXd t = lap.chol.matrixL().solve(basis.M.transpose());  // m x n
  return t.array().square().colwise().sum().transpose();
}

// E[data log likelihood] at coefficients beta under the Gaussian
// approximation, constants free of psi dropped.
inline double laplace_data_loglik(const SpatialDataset& data, const ProjectionBasis& basis,
                                  const LaplaceState& lap, const VectorXd& s2,
                                  const VectorXd& beta) {
  VectorXd eta = data.offset + basis.M * lap.mode;
  if (data.p() > 0) eta += data.X * beta;
  double out = 0;
  for (int i = 0; i < data.n(); ++i) {
    const double b2 = data.family == Family::poisson_log
                          ? std::exp(eta[i])
                          : logistic(eta[i]) * (1.0 - logistic(eta[i]));
    out += data.z[i] * eta[i] - (cumulant(data.family, eta[i]) + 0.5 * b2 * s2[i]);
  }
  return out;
}

inline McmcBatch gaussian_draws(const LaplaceState& lap, int count, uint64_t seed) {
  Rng rng(seed);
  const auto m = lap.mode.size();
  McmcBatch batch;
  batch.draws.resize(count, m);
  MatrixXd lt = lap.chol.matrixL().transpose();
  VectorXd zv(m);
  for (int i = 0; i < count; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) zv[j] = rng.normal();
    batch.draws.row(i) = (lap.mode + lt.triangularView<Eigen::Upper>().solve(zv)).transpose();
  }
  batch.accept_rate = 1.0;
  batch.last_state = batch.draws.row(count - 1);
  batch.proposal_cov = MatrixXd::Identity(m, m);
  return batch;
}

}  // namespace detail

// LA-EM driver. Deterministic: the E-step substitutes Laplace expectations
// into the same one-step Newton-Raphson updates as the Monte Carlo variant.
// Stops when the Q-function change falls below epsilon and the parameter
// change below 1e-6.
inline FitResult fit_la_em(const SpatialDataset& data, ProjectionBasis basis, const EmConfig& cfg,
                           std::shared_ptr<PhiEigCache> cache = nullptr,
                           const ModelState* start = nullptr) {
  validate_dataset(data);
  cfg.validate();
  StopWatch total;
  const int q = basis.q;
  const bool continuous = basis.domain == Domain::continuous;

  ModelState state;
  if (start != nullptr) {
    state = *start;
  } else {
    state = initial_values(data, irls_fit(data.X, data.z, data.family, data.offset));
    if (continuous && std::isfinite(basis.phi)) state.phi = basis.phi;
  }
  state.validate();

  const bool search_phi =
      continuous && cfg.estimate_phi && cfg.phi_points > 0 && cfg.phi_step > 0;
  if (search_phi && cache == nullptr) {
    cache = std::make_shared<PhiEigCache>(pairwise_distances(data.coords), basis.rank, cfg.nu,
                                          cfg.eig);
  }
  if (continuous && std::isfinite(basis.phi) && state.phi != basis.phi) {
    // basis must match the current range value
    basis = continuous_basis_from_eigs(cache ? cache->get(state.phi).eig
                                             : top_eigs(correlation_matrix(
                                                            data.coords,
                                                            {1.0, state.phi, cfg.nu}),
                                                        basis.rank, cfg.eig),
                                       data.X, state.phi);
  }

  FitResult res;
  res.algorithm = "la-em";
  VectorXd delta0 = VectorXd::Zero(basis.rank);
  bool stopped = false;

  for (int iter = 1; iter <= cfg.max_em_iters && !stopped; ++iter) {
    StopWatch sw;
    LaplaceState lap;
    try {
      lap = gaussian_approx(data, basis, state, delta0);
    } catch (const Error& e) {
      throw EmDivergence(std::string("la-em: E-step failed at iteration ") +
                             std::to_string(iter) + ": " + e.what(),
                         res.trace);
    }
    const VectorXd s2 = detail::rowwise_quad_inv(basis, lap);

    VectorXd eta = data.offset + basis.M * lap.mode;
    if (data.p() > 0) eta += data.X * state.beta;
    VectorXd e_mu(data.n()), e_var(data.n());
    for (int i = 0; i < data.n(); ++i) {
      double b1, b2;
      if (data.family == Family::poisson_log) {
        b1 = b2 = std::exp(eta[i]);
      } else {
        const double p = logistic(eta[i]);
        b1 = p;
        b2 = p * (1.0 - p);
      }
      e_mu[i] = b1 + 0.5 * cumulant_d3(data.family, eta[i]) * s2[i];
      e_var[i] = std::max(b2 + 0.5 * cumulant_d4(data.family, eta[i]) * s2[i], 1e-10);
    }

    ModelState next = state;
    if (data.p() > 0) {
      const MatrixXd xvx = data.X.transpose() * e_var.asDiagonal() * data.X;
      const VectorXd grad = data.X.transpose() * (data.z - e_mu);
      Eigen::LDLT<MatrixXd> ldlt(xvx);
      require(ldlt.info() == Eigen::Success, Error::Kind::numerical,
              "la-em: coefficient update is singular");
      next.beta = state.beta + ldlt.solve(grad);
    }

    const double e_dd = lap.mode.squaredNorm() + lap.trace_inv();
    double e_qf = 0;
    double phi_dq = 0;
    if (continuous) {
      next.sigma2 = sigma2_update(q, state.sigma2, e_dd, cfg.sigma2_floor);
      if (search_phi) {
        const auto& cur = cache->get(state.phi);
        const double g_cur = detail::laplace_eig_quadform(cur, basis.M, lap);
        for (const double cand : phi_candidates(state.phi, cfg.phi_step, cfg.phi_points)) {
          if (cand == state.phi) continue;
          try {
            const auto& e = cache->get(cand);
            const double g = detail::laplace_eig_quadform(e, basis.M, lap);
            const double dq = -0.5 * (e.sum_log_d - cur.sum_log_d) -
                              (g - g_cur) / (2.0 * next.sigma2);
            if (dq > phi_dq) {
              phi_dq = dq;
              next.phi = cand;
            }
          } catch (const Error&) {
            // candidate decomposition failed; skip
          }
        }
      }
    } else {
      e_qf = lap.mode.dot(basis.Qdelta * lap.mode) + lap.chol.solve(basis.Qdelta).trace();
      next.tau = tau_update(q, state.tau, e_qf, cfg.tau_floor);
    }

    const double ll_new = detail::laplace_data_loglik(data, basis, lap, s2, next.beta);
    const double ll_old = detail::laplace_data_loglik(data, basis, lap, s2, state.beta);
    double dq = ll_new - ll_old + phi_dq;
    double qhat = ll_new;
    if (continuous) {
      const auto prior = [&](double sig2) { return -0.5 * q * std::log(sig2) - e_dd / (2.0 * sig2); };
      dq += prior(next.sigma2) - prior(state.sigma2);
      qhat += prior(next.sigma2);
    } else {
      const auto prior = [&](double tau) { return 0.5 * q * std::log(tau) - 0.5 * tau * e_qf; };
      dq += prior(next.tau) - prior(state.tau);
      qhat += prior(next.tau);
    }

    double param_change = (next.beta - state.beta).cwiseAbs().maxCoeff();
    if (continuous) {
      param_change = std::max(param_change, std::abs(next.sigma2 - state.sigma2));
      param_change = std::max(param_change, std::abs(next.phi - state.phi));
    } else {
      param_change = std::max(param_change, std::abs(next.tau - state.tau));
    }

    if (!next.all_finite()) {
      throw EmDivergence("la-em: parameters diverged at iteration " + std::to_string(iter),
                         res.trace);
    }

    TraceRow row;
    row.iter = iter;
    row.k = 0;
    row.dQ = dq;
    row.ase = 0;
    row.Qhat = qhat;
    row.beta = next.beta;
    row.sigma2 = next.sigma2;
    row.phi = next.phi;
    row.tau = next.tau;
    row.wall_ms = sw.millis();
    res.trace.push_back(row);

    const bool moved_phi = continuous && next.phi != state.phi;
    state = next;
    delta0 = lap.mode;
    if (moved_phi) basis = continuous_basis_from_eigs(cache->get(state.phi).eig, data.X, state.phi);

    if (dq < cfg.epsilon && param_change < 1e-6) {
      res.stopped_by = StopReason::ascent_threshold;
      stopped = true;
    }
  }
  if (!stopped) res.stopped_by = StopReason::max_iters;

  LaplaceState lap_final = gaussian_approx(data, basis, state, delta0);
  res.final_batch =
      detail::gaussian_draws(lap_final, cfg.info_sample_size, mix_seed(cfg.seed, 0x1a91aceULL));
  res.laplace = std::move(lap_final);
  res.estimate = state;
  res.basis = std::move(basis);

  const ObservedInfo info =
      observed_information(res.final_batch, state, data, res.basis,
                           continuous && cfg.estimate_phi, cfg.nu, cfg.eig);
  res.observed_info = info.information;
  res.info_psd = info.psd;
  res.score_mean = info.score_mean;
  res.score_ase = info.score_ase;
  if (!info.psd) res.warnings.push_back("observed information matrix is not positive semidefinite");
  res.wall_time_s = total.seconds();
  return res;
}

inline FitResult fit_la_em(const SpatialDataset& data, int rank, const EmConfig& cfg) {
  validate_dataset(data);
  cfg.validate();
  if (data.domain == Domain::lattice) {
    return fit_la_em(data, moran_basis(data.graph, data.X, rank), cfg);
  }
  const ModelState st = initial_values(data, irls_fit(data.X, data.z, data.family, data.offset));
  auto cache = std::make_shared<PhiEigCache>(pairwise_distances(data.coords), rank, cfg.nu,
                                             cfg.eig);
  ProjectionBasis basis = continuous_basis_from_eigs(cache->get(st.phi).eig, data.X, st.phi);
  return fit_la_em(data, std::move(basis), cfg, cache, &st);
}

}  // namespace sglmm
