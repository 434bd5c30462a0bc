#pragma once

#include "sglmm/em_common.hpp"
#include "sglmm/em_laplace.hpp"
#include "sglmm/glm.hpp"

#include <memory>

namespace sglmm {

namespace detail {

inline void extend_chain(McmcBatch& batch, int extra, const DeltaTarget& target, uint64_t seed) {
  if (extra <= 0) return;
  McmcBatch more = run_chain(batch.last_state, extra, batch.proposal_cov, target, seed);
  const int old_k = batch.k();
  batch.draws.conservativeResize(old_k + extra, batch.dim());
  batch.draws.bottomRows(extra) = more.draws;
  batch.accept_rate =
      (batch.accept_rate * old_k + more.accept_rate * extra) / static_cast<double>(old_k + extra);
  batch.last_state = more.last_state;
}

inline MatrixXd sample_covariance(const MatrixXd& draws) {
  const auto k = draws.rows();
  const RowVectorXd mean = draws.colwise().mean();
  MatrixXd centered = draws.rowwise() - mean;
  return centered.transpose() * centered / static_cast<double>(k - 1);
}

// Proposal for the first chain: scaled inverse curvature of the conditional
// at delta = 0 under the warm-start parameters.
inline MatrixXd initial_proposal(const SpatialDataset& data, const ProjectionBasis& basis,
                                 const ModelState& state) {
  VectorXd eta = data.offset;
  if (data.p() > 0) eta += data.X * state.beta;
  VectorXd d1, d2;
  likelihood_curvature(data.family, eta, d1, d2);
  MatrixXd q0 = basis.M.transpose() * d2.asDiagonal() * basis.M + prior_precision(basis, state);
  Eigen::LLT<MatrixXd> llt(q0);
  if (llt.info() != Eigen::Success) {
    q0.diagonal().array() += 1e-8 * q0.trace() / basis.rank;
    llt.compute(q0);
    require(llt.info() == Eigen::Success, Error::Kind::numerical,
            "fit_mcmc_em: initial curvature is not positive definite");
  }
  const MatrixXd sigma0 = llt.solve(MatrixXd::Identity(basis.rank, basis.rank));
  return adapt_proposal(sigma0, basis.q);
}

}  // namespace detail

// Ascent-based MCMC-EM. Each iteration samples delta | Z, psi_t with a
// random-walk chain warm-started from the previous draw, applies one-step
// Newton-Raphson block updates, grows the Monte Carlo sample until the
// estimated Q-function increase clears its one-sided lower bound, and stops
// once the matching upper bound falls below epsilon.
inline FitResult fit_mcmc_em(const SpatialDataset& data, ProjectionBasis basis, const EmConfig& cfg,
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
  if (continuous && std::isfinite(basis.phi) && state.phi != basis.phi && cache != nullptr) {
    basis = continuous_basis_from_eigs(cache->get(state.phi).eig, data.X, state.phi);
  }

  FitResult res;
  res.algorithm = "mcmc-em";
  MatrixXd proposal = detail::initial_proposal(data, basis, state);
  VectorXd delta = VectorXd::Zero(basis.rank);
  int k = cfg.k0;
  uint64_t chain_counter = 0;
  int odd_acceptance_iters = 0;
  bool stopped = false;
  McmcBatch batch;

  for (int iter = 1; iter <= cfg.max_em_iters && !stopped; ++iter) {
    StopWatch sw;
    const DeltaTarget target{&data, &basis, state};
    batch = run_chain(delta, k, proposal, target, mix_seed(cfg.seed, 0xc4a1, ++chain_counter));

    double mess = std::numeric_limits<double>::quiet_NaN();
    if (iter == 1) {
      // first iteration: sample until the multivariate ESS reaches 10 q
      for (;;) {
        bool enough = false;
        if (multivariate_ess_ready(batch.k(), q)) {
          try {
            mess = multivariate_ess(batch.draws);
            enough = mess >= 10.0 * q;
          } catch (const Error&) {
            enough = false;
          }
        }
        if (enough) break;
        if (batch.k() >= cfg.max_mc_size) {
          res.warnings.push_back("first-iteration ESS target not reached before max_mc_size");
          break;
        }
        const int grow_to = std::min(batch.k() + batch.k() / 2, cfg.max_mc_size);
        detail::extend_chain(batch, grow_to - batch.k(), target,
                             mix_seed(cfg.seed, 0xe55, ++chain_counter));
      }
    }

    ModelState next = state;
    double dq = 0, ase = 0, qhat = 0;
    BatchMoments moments;
    for (;;) {
      moments = batch_moments(batch, data, basis, state.beta);
      next = state;
      if (data.p() > 0) {
        const BetaDerivs bd = beta_derivs_from_moments(data, moments);
        Eigen::LDLT<MatrixXd> ldlt(-bd.hessian);
        require(ldlt.info() == Eigen::Success, Error::Kind::numerical,
                "fit_mcmc_em: coefficient update is singular");
        next.beta = state.beta + ldlt.solve(bd.gradient);
      }
      if (continuous) {
        next.sigma2 = sigma2_update(q, state.sigma2, moments.mean_dd, cfg.sigma2_floor);
        if (search_phi) {
          const PhiSearchResult psr =
              phi_line_search(state.phi, phi_candidates(state.phi, cfg.phi_step, cfg.phi_points),
                              batch, basis, next.sigma2, *cache);
          if (psr.all_failed)
            res.warnings.push_back("all range candidates failed at iteration " +
                                   std::to_string(iter));
          next.phi = psr.phi;
        }
      } else {
        next.tau = tau_update(q, state.tau, moments.mean_qf, cfg.tau_floor);
      }

      VectorXd ll_new, ll_old;
      perdraw_data_loglik2(batch, data, basis, next.beta, state.beta, ll_new, ll_old);
      VectorXd d = ll_new - ll_old;
      if (continuous) {
        d.array() += -0.5 * q * std::log(next.sigma2 / state.sigma2);
        d -= 0.5 * (1.0 / next.sigma2 - 1.0 / state.sigma2) * moments.perdraw_dd;
        if (next.phi != state.phi) {
          const auto& e_new = cache->get(next.phi);
          const auto& e_cur = cache->get(state.phi);
          const VectorXd g_new = detail::perdraw_eig_quadform(e_new, basis.M, batch.draws);
          const VectorXd g_cur = detail::perdraw_eig_quadform(e_cur, basis.M, batch.draws);
          d.array() += -0.5 * (e_new.sum_log_d - e_cur.sum_log_d);
          d -= (g_new - g_cur) / (2.0 * next.sigma2);
        }
        qhat = ll_new.mean() - 0.5 * q * std::log(next.sigma2) -
               moments.mean_dd / (2.0 * next.sigma2);
      } else {
        d.array() += 0.5 * q * std::log(next.tau / state.tau);
        d -= 0.5 * (next.tau - state.tau) * moments.perdraw_qf;
        qhat = ll_new.mean() + 0.5 * q * std::log(next.tau) - 0.5 * next.tau * moments.mean_qf;
      }
      dq = d.mean();
      ase = batch_means_ase(d);

      const AscentDecision dec = ascent_check(dq, ase, batch.k(), cfg.alpha);
      if (dec.accept) break;
      if (batch.k() >= cfg.max_mc_size) {
        res.warnings.push_back("ascent growth capped at max_mc_size in iteration " +
                               std::to_string(iter));
        break;
      }
      const int grow_to = std::min(dec.grow_to, cfg.max_mc_size);
      detail::extend_chain(batch, grow_to - batch.k(), target,
                           mix_seed(cfg.seed, 0xa5c, ++chain_counter));
    }
    k = batch.k();  // carried into the next iteration

    if (!next.all_finite()) {
      throw EmDivergence("mcmc-em: parameters diverged at iteration " + std::to_string(iter),
                         res.trace);
    }

    TraceRow row;
    row.iter = iter;
    row.k = k;
    row.dQ = dq;
    row.ase = ase;
    row.Qhat = qhat;
    row.beta = next.beta;
    row.sigma2 = next.sigma2;
    row.phi = next.phi;
    row.tau = next.tau;
    row.accept_rate = batch.accept_rate;
    row.mess = mess;
    row.wall_ms = sw.millis();
    res.trace.push_back(row);
    if (batch.accept_rate < 0.1 || batch.accept_rate > 0.5) ++odd_acceptance_iters;

    proposal = adapt_proposal(detail::sample_covariance(batch.draws), q);
    delta = batch.last_state;
    const bool moved_phi = continuous && next.phi != state.phi;
    state = next;
    if (moved_phi) basis = continuous_basis_from_eigs(cache->get(state.phi).eig, data.X, state.phi);

    if (stopping_check(dq, ase, cfg.gamma, cfg.epsilon)) {
      res.stopped_by = StopReason::ascent_threshold;
      stopped = true;
    }
  }
  if (!stopped) res.stopped_by = StopReason::max_iters;
  if (odd_acceptance_iters > 0) {
    res.warnings.push_back("acceptance rate outside [0.1, 0.5] in " +
                           std::to_string(odd_acceptance_iters) + " iterations");
  }

  res.estimate = state;
  res.basis = std::move(basis);
  res.final_batch = std::move(batch);

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

inline FitResult fit_mcmc_em(const SpatialDataset& data, int rank, const EmConfig& cfg) {
  validate_dataset(data);
  cfg.validate();
  if (data.domain == Domain::lattice) {
    return fit_mcmc_em(data, moran_basis(data.graph, data.X, rank), cfg);
  }
  const ModelState st = initial_values(data, irls_fit(data.X, data.z, data.family, data.offset));
  auto cache = std::make_shared<PhiEigCache>(pairwise_distances(data.coords), rank, cfg.nu,
                                             cfg.eig);
  ProjectionBasis basis = continuous_basis_from_eigs(cache->get(st.phi).eig, data.X, st.phi);
  return fit_mcmc_em(data, std::move(basis), cfg, cache, &st);
}

}  // namespace sglmm
