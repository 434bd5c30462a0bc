#pragma once

#include "sglmm/basis.hpp"
#include "sglmm/core.hpp"
#include "sglmm/covariance.hpp"
#include "sglmm/eigs.hpp"
#include "sglmm/mcmc.hpp"
#include "sglmm/util.hpp"

#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>

namespace sglmm {

// Tuning knobs shared by both EM variants. alpha drives the ascent lower
// bound, gamma/epsilon the stopping rule.
struct EmConfig {
  double alpha = 0.15;
  double gamma = 0.05;
  double epsilon = 1e-3;
  int k0 = 500;
  int max_em_iters = 100;
  double phi_step = 0.05;  // relative candidate spacing
  int phi_points = 2;      // candidates per side
  bool estimate_phi = true;
  uint64_t seed = 0;
  int max_mc_size = 200000;
  int info_sample_size = 4000;  // Gaussian draws backing LA-EM information
  int threads = 1;
  double sigma2_floor = 1e-6;
  double tau_floor = 1e-6;
  double nu = 1.5;  // fixed Matern smoothness, never estimated
  EigSolverConfig eig;

  void validate() const {
    require(alpha > 0 && alpha < 0.5, Error::Kind::invalid_argument, "alpha must be in (0, 0.5)");
    require(gamma > 0 && gamma < 0.5, Error::Kind::invalid_argument, "gamma must be in (0, 0.5)");
    require(epsilon > 0, Error::Kind::invalid_argument, "epsilon must be positive");
    require(k0 >= 100, Error::Kind::invalid_argument, "k0 must be at least 100");
    require(max_em_iters >= 1, Error::Kind::invalid_argument, "max_em_iters must be positive");
    require(phi_step >= 0 && phi_step < 1, Error::Kind::invalid_argument,
            "phi_step must be in [0, 1)");
    require(phi_points >= 0, Error::Kind::invalid_argument, "phi_points must be nonnegative");
  }
};

struct TraceRow {
  int iter = 0;
  int k = 0;
  double dQ = 0;
  double ase = 0;
  double Qhat = 0;
  VectorXd beta;
  double sigma2 = std::numeric_limits<double>::quiet_NaN();
  double phi = std::numeric_limits<double>::quiet_NaN();
  double tau = std::numeric_limits<double>::quiet_NaN();
  double accept_rate = std::numeric_limits<double>::quiet_NaN();
  double mess = std::numeric_limits<double>::quiet_NaN();
  double wall_ms = 0;
};

enum class StopReason { ascent_threshold, max_iters };

inline const char* to_string(StopReason r) {
  return r == StopReason::ascent_threshold ? "ascent-threshold" : "max-iters";
}

// Gaussian approximation to f(delta | Z, psi): mean at the mode, precision
// Q = M'D2M + Qdelta evaluated there.
struct LaplaceState {
  VectorXd mode;
  MatrixXd precision;
  Eigen::LLT<MatrixXd> chol;
  bool converged = false;
  int newton_iters = 0;

  double quad_inv(const RowVectorXd& mi) const {
    VectorXd v = chol.solve(mi.transpose());
    return mi * v;
  }

  double trace_inv() const {
    const auto m = precision.rows();
    MatrixXd linv = chol.matrixL().solve(MatrixXd::Identity(m, m));
    return linv.squaredNorm();
  }
};

struct FitResult {
  ModelState estimate;
  MatrixXd observed_info;
  bool info_psd = true;
  std::vector<TraceRow> trace;
  StopReason stopped_by = StopReason::max_iters;
  McmcBatch final_batch;
  double wall_time_s = 0;
  ProjectionBasis basis;
  std::optional<LaplaceState> laplace;
  std::vector<std::string> warnings;
  VectorXd score_mean;  // Q' at the estimate, MC mean per component
  VectorXd score_ase;   // batch-means ASE per component
  std::string algorithm;
};

// Non-finite iterate; carries the trace accumulated so far.
struct EmDivergence : Error {
  std::vector<TraceRow> trace;
  EmDivergence(const std::string& msg, std::vector<TraceRow> t)
      : Error(Error::Kind::convergence, msg), trace(std::move(t)) {}
};

inline void write_trace_csv(const std::vector<TraceRow>& trace, Domain domain, int p,
                            const std::string& path) {
  std::ofstream out(path);
  require(out.good(), Error::Kind::io, "cannot write trace to " + path);
  out.precision(17);
  out << "iter,k,dQ,ase,Qhat,accept_rate,mess";
  for (int j = 0; j < p; ++j) out << ",beta" << (j + 1);
  if (domain == Domain::continuous)
    out << ",sigma2,phi";
  else
    out << ",tau";
  out << ",wall_ms\n";
  for (const auto& r : trace) {
    out << r.iter << "," << r.k << "," << r.dQ << "," << r.ase << "," << r.Qhat << ","
        << r.accept_rate << "," << r.mess;
    for (int j = 0; j < p; ++j) out << "," << r.beta[j];
    if (domain == Domain::continuous)
      out << "," << r.sigma2 << "," << r.phi;
    else
      out << "," << r.tau;
    out << "," << r.wall_ms << "\n";
  }
}

// ---- eigencomponent cache over range candidates --------------------------

// Caches (U, D) of R_phi per distinct phi. Nystrom sketches are seeded from
// (base seed, phi bits) so a revisited phi reproduces the same entry.
class PhiEigCache {
 public:
  struct Entry {
    EigenPair eig;
    double sum_log_d = 0;
    VectorXd inv_d;
  };

  PhiEigCache(MatrixXd distances, int rank, double nu, EigSolverConfig cfg)
      : dist_(std::move(distances)), rank_(rank), nu_(nu), cfg_(cfg) {}

  const Entry& get(double phi) {
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = cache_.find(phi);
      if (it != cache_.end()) return it->second;
    }
    Entry e = build(phi);
    std::lock_guard<std::mutex> lock(mu_);
    return cache_.emplace(phi, std::move(e)).first->second;
  }

  int rank() const { return rank_; }
  double nu() const { return nu_; }
  const MatrixXd& distances() const { return dist_; }
  const EigSolverConfig& config() const { return cfg_; }

 private:
  Entry build(double phi) const {
    MaternParams params{1.0, phi, nu_};
    const MatrixXd r = correlation_from_distances(dist_, params);
    EigSolverConfig cfg = cfg_;
    cfg.seed = mix_seed(cfg_.seed, std::hash<double>{}(phi), static_cast<uint64_t>(rank_));
    Entry e;
    e.eig = top_eigs(r, rank_, cfg);
    finalize_entry(e);
    return e;
  }

  static void finalize_entry(Entry& e) {
    const double top = std::max(e.eig.values.maxCoeff(), 1e-300);
    const double floor_val = top * 1e-15;
    e.inv_d.resize(e.eig.values.size());
    e.sum_log_d = 0;
    for (Eigen::Index i = 0; i < e.eig.values.size(); ++i) {
      const double d = std::max(e.eig.values[i], floor_val);
      e.sum_log_d += std::log(d);
      e.inv_d[i] = 1.0 / d;
    }
  }

  MatrixXd dist_;
  int rank_;
  double nu_;
  EigSolverConfig cfg_;
  std::map<double, Entry> cache_;
  std::mutex mu_;
};

inline std::vector<double> phi_candidates(double phi, double step, int points) {
  std::vector<double> out{phi};
  for (int j = 1; j <= points; ++j) {
    const double lo = phi * (1.0 - step * j);
    const double hi = phi * (1.0 + step * j);
    if (lo > 0) out.push_back(lo);
    out.push_back(hi);
  }
  return out;
}

// ---- Monte Carlo derivative pieces ---------------------------------------

namespace detail {

// Per-draw quadratic forms (M delta)' U D^{-1} U' (M delta) for a candidate
// eigensystem; O(k m^2) via B = U'M.
inline VectorXd perdraw_eig_quadform(const PhiEigCache::Entry& entry, const MatrixXd& m_basis,
                                     const MatrixXd& draws) {
  const MatrixXd b = entry.eig.vectors.transpose() * m_basis;  // m x m
  const MatrixXd g = draws * b.transpose();                    // k x m
  return (g.array().square().rowwise() * entry.inv_d.transpose().array()).rowwise().sum();
}

// E[(M delta)' U D^{-1} U' (M delta)] under a Gaussian N(mode, Q^{-1}).
inline double laplace_eig_quadform(const PhiEigCache::Entry& entry, const MatrixXd& m_basis,
                                   const LaplaceState& lap) {
  const MatrixXd b = entry.eig.vectors.transpose() * m_basis;  // m x m
  const VectorXd at_mode = b * lap.mode;
  double val = (at_mode.array().square() * entry.inv_d.array()).sum();
  MatrixXd t = lap.chol.matrixL().solve(b.transpose());  // m x m
  val += (t.array().square().colwise().sum() * entry.inv_d.transpose().array()).sum();
  return val;
}

}  // namespace detail

struct BatchMoments {
  VectorXd mean_mu;   // length n
  VectorXd mean_var;  // length n
  double mean_dd = 0;
  double mean_qf = 0;         // lattice quadratic form
  VectorXd perdraw_dd;        // k
  VectorXd perdraw_qf;        // k (lattice)
};

// One chunked pass over the stored draws.
inline BatchMoments batch_moments(const McmcBatch& batch, const SpatialDataset& data,
                                  const ProjectionBasis& basis, const VectorXd& beta) {
  const int k = batch.k();
  const int n = data.n();
  BatchMoments mo;
  mo.mean_mu = VectorXd::Zero(n);
  mo.mean_var = VectorXd::Zero(n);
  mo.perdraw_dd = batch.draws.rowwise().squaredNorm();
  mo.mean_dd = mo.perdraw_dd.mean();
  if (basis.domain == Domain::lattice) {
    mo.perdraw_qf = ((batch.draws * basis.Qdelta).cwiseProduct(batch.draws)).rowwise().sum();
    mo.mean_qf = mo.perdraw_qf.mean();
  }

  VectorXd xb = data.offset;
  if (data.p() > 0) xb += data.X * beta;
  const int chunk = 256;
  VectorXd eta(n), mu(n), var(n);
  for (int start = 0; start < k; start += chunk) {
    const int c = std::min(chunk, k - start);
    MatrixXd w = basis.M * batch.draws.middleRows(start, c).transpose();  // n x c
    for (int j = 0; j < c; ++j) {
      eta = xb + w.col(j);
      mean_and_variance(data.family, eta, mu, var);
      mo.mean_mu += mu;
      mo.mean_var += var;
    }
  }
  mo.mean_mu /= k;
  mo.mean_var /= k;
  return mo;
}

// Per-draw data log likelihood at two coefficient vectors in one pass;
// optionally collects per-draw score contributions X'(z - mu) at beta_a.
inline void perdraw_data_loglik2(const McmcBatch& batch, const SpatialDataset& data,
                                 const ProjectionBasis& basis, const VectorXd& beta_a,
                                 const VectorXd& beta_b, VectorXd& ll_a, VectorXd& ll_b,
                                 MatrixXd* score_a = nullptr) {
  const int k = batch.k();
  const int n = data.n();
  ll_a.resize(k);
  ll_b.resize(k);
  if (score_a) score_a->resize(k, data.p());
  VectorXd xb_a = data.offset, xb_b = data.offset;
  if (data.p() > 0) {
    xb_a += data.X * beta_a;
    xb_b += data.X * beta_b;
  }
  const int chunk = 256;
  VectorXd eta(n), mu(n), var(n);
  for (int start = 0; start < k; start += chunk) {
    const int c = std::min(chunk, k - start);
    MatrixXd w = basis.M * batch.draws.middleRows(start, c).transpose();
    for (int j = 0; j < c; ++j) {
      eta = xb_a + w.col(j);
      ll_a[start + j] = data_loglik(data.family, data.z, eta);
      if (score_a) {
        mean_and_variance(data.family, eta, mu, var);
        score_a->row(start + j) = (data.X.transpose() * (data.z - mu)).transpose();
      }
      eta = xb_b + w.col(j);
      ll_b[start + j] = data_loglik(data.family, data.z, eta);
    }
  }
}

struct BetaDerivs {
  VectorXd gradient;
  MatrixXd hessian;
};

inline BetaDerivs beta_derivs_from_moments(const SpatialDataset& data, const BatchMoments& mo) {
  BetaDerivs d;
  d.gradient = data.X.transpose() * (data.z - mo.mean_mu);
  d.hessian = -(data.X.transpose() * mo.mean_var.asDiagonal() * data.X);
  return d;
}

// MC average of the coefficient score and curvature over the batch draws.
inline BetaDerivs q_derivative_beta(const McmcBatch& batch, const SpatialDataset& data,
                                    const ProjectionBasis& basis, const VectorXd& beta) {
  return beta_derivs_from_moments(data, batch_moments(batch, data, basis, beta));
}

struct DerivPair {
  double gradient = 0;
  double hessian = 0;
};

inline DerivPair sigma2_derivs(int q, double sigma2, double mean_dd) {
  DerivPair d;
  const double s2 = sigma2;
  d.gradient = -q / (2.0 * s2) + mean_dd / (2.0 * s2 * s2);
  d.hessian = q / (2.0 * s2 * s2) - mean_dd / (s2 * s2 * s2);
  return d;
}

inline DerivPair q_derivative_sigma2(const McmcBatch& batch, double sigma2) {
  require(sigma2 > 0, Error::Kind::invalid_argument, "sigma2 must be positive");
  return sigma2_derivs(batch.dim(), sigma2, batch.draws.rowwise().squaredNorm().mean());
}

inline DerivPair tau_derivs(int q, double tau, double mean_qf) {
  DerivPair d;
  d.gradient = q / (2.0 * tau) - 0.5 * mean_qf;
  d.hessian = -q / (2.0 * tau * tau);
  return d;
}

inline DerivPair q_derivative_tau(const McmcBatch& batch, double tau, const MatrixXd& qdelta) {
  require(tau > 0, Error::Kind::invalid_argument, "tau must be positive");
  const VectorXd qf = ((batch.draws * qdelta).cwiseProduct(batch.draws)).rowwise().sum();
  return tau_derivs(batch.dim(), tau, qf.mean());
}

// One-step Newton-Raphson update for sigma2; falls back to the closed-form
// maximizer mean_dd/q when the local curvature is not negative.
inline double sigma2_update(int q, double sigma2, double mean_dd, double floor_val) {
  const DerivPair d = sigma2_derivs(q, sigma2, mean_dd);
  double next;
  if (d.hessian < -1e-12) {
    next = sigma2 - d.gradient / d.hessian;
    if (!(next > 0) || !std::isfinite(next)) next = mean_dd / q;
  } else {
    next = mean_dd / q;
  }
  return std::max(next, floor_val);
}

inline double tau_update(int q, double tau, double mean_qf, double floor_val) {
  const DerivPair d = tau_derivs(q, tau, mean_qf);
  double next = tau - d.gradient / d.hessian;
  if (!std::isfinite(next)) next = tau;
  return std::max(next, floor_val);
}

// ---- ascent sizing and stopping -------------------------------------------

struct AscentDecision {
  bool accept = false;
  int grow_to = 0;
  double lower_bound = 0;
};

// Accept when dQ - z_alpha * ASE > 0 (one-sided), else direct a growth to
// k + floor(k/2). A zero ASE with nonnegative dQ accepts.
inline AscentDecision ascent_check(double dq, double ase, int k, double alpha) {
  AscentDecision d;
  const double z = inverse_normal_cdf(1.0 - alpha);
  d.lower_bound = dq - z * ase;
  d.accept = (ase == 0.0) ? (dq >= 0.0) : (d.lower_bound > 0.0);
  d.grow_to = k + k / 2;
  return d;
}

// Stop when the upper bound dQ + z_gamma * ASE falls below epsilon.
inline bool stopping_check(double dq, double ase, double gamma, double epsilon) {
  const double z = inverse_normal_cdf(1.0 - gamma);
  return dq + z * ase < epsilon;
}

// ---- range line search -----------------------------------------------------

struct PhiSearchResult {
  double phi = 0;
  double dQ = 0;  // Q-hat improvement of the winner; 0 when keeping phi
  bool all_failed = false;
};

// Compares Q-hat across neighboring range values through the log-eigenvalue
// sums and the per-draw quadratic forms, keeping the largest strictly
// positive improvement.
inline PhiSearchResult phi_line_search(double phi_t, const std::vector<double>& candidates,
                                       const McmcBatch& batch, const ProjectionBasis& basis,
                                       double sigma2_next, PhiEigCache& cache) {
  PhiSearchResult res;
  res.phi = phi_t;
  const PhiEigCache::Entry& cur = cache.get(phi_t);
  const VectorXd g_cur = detail::perdraw_eig_quadform(cur, basis.M, batch.draws);
  const double mean_g_cur = g_cur.mean();
  int failures = 0, tried = 0;
  for (const double cand : candidates) {
    if (cand == phi_t) continue;
    ++tried;
    try {
      const PhiEigCache::Entry& e = cache.get(cand);
      const double mean_g = detail::perdraw_eig_quadform(e, basis.M, batch.draws).mean();
      const double dq = -0.5 * (e.sum_log_d - cur.sum_log_d) -
                        (mean_g - mean_g_cur) / (2.0 * sigma2_next);
      if (dq > res.dQ) {
        res.dQ = dq;
        res.phi = cand;
      }
    } catch (const Error&) {
      ++failures;
    }
  }
  res.all_failed = tried > 0 && failures == tried;
  return res;
}

// ---- observed information ---------------------------------------------------

struct ObservedInfo {
  MatrixXd information;
  bool psd = true;
  VectorXd score_mean;
  VectorXd score_ase;
  MatrixXd score_draws;  // k x dim
};

// I(psi; Z) = Ic - E[Sc Sc'] + E[Sc] E[Sc'], all expectations approximated
// over the batch draws. The range block, which has no closed-form
// derivative, uses central finite differences of the log eigen terms; the
// sketch seed is held fixed across the three evaluation points so the
// differences act on a common subspace.
inline ObservedInfo observed_information(const McmcBatch& batch, const ModelState& state,
                                         const SpatialDataset& data, const ProjectionBasis& basis,
                                         bool include_phi = true, double nu = 1.5,
                                         const EigSolverConfig& eig_cfg = {},
                                         double fd_rel_step = 1e-2) {
  const int k = batch.k();
  const int p = data.p();
  const int q = basis.q;
  const bool continuous = basis.domain == Domain::continuous;
  const bool with_phi = continuous && include_phi;
  const int dim = p + (continuous ? (with_phi ? 2 : 1) : 1);

  VectorXd ll_a, ll_b;
  MatrixXd beta_scores;
  perdraw_data_loglik2(batch, data, basis, state.beta, state.beta, ll_a, ll_b, &beta_scores);
  const BatchMoments mo = batch_moments(batch, data, basis, state.beta);

  ObservedInfo out;
  out.score_draws.resize(k, dim);
  out.score_draws.leftCols(p) = beta_scores;

  MatrixXd ic = MatrixXd::Zero(dim, dim);
  ic.topLeftCorner(p, p) = data.X.transpose() * mo.mean_var.asDiagonal() * data.X;

  if (continuous) {
    const double s2 = state.sigma2;
    out.score_draws.col(p) =
        (mo.perdraw_dd.array() / (2.0 * s2 * s2) - q / (2.0 * s2)).matrix();
    ic(p, p) = -(q / (2.0 * s2 * s2) - mo.mean_dd / (s2 * s2 * s2));
    if (with_phi) {
      const double h = fd_rel_step * state.phi;
      EigSolverConfig cfg = eig_cfg;
      cfg.seed = mix_seed(eig_cfg.seed, 0x0b5e7fedULL);
      const MatrixXd dist = pairwise_distances(data.coords);
      PhiEigCache local(dist, basis.rank, nu, cfg);
      const auto& lo = local.get(state.phi - h);
      const auto& mid = local.get(state.phi);
      const auto& hi = local.get(state.phi + h);
      const VectorXd g_lo = detail::perdraw_eig_quadform(lo, basis.M, batch.draws);
      const VectorXd g_mid = detail::perdraw_eig_quadform(mid, basis.M, batch.draws);
      const VectorXd g_hi = detail::perdraw_eig_quadform(hi, basis.M, batch.draws);
      // per-draw d/dphi of -(1/2) sum log d - g/(2 sigma2)
      out.score_draws.col(p + 1) =
          (-0.5 * (hi.sum_log_d - lo.sum_log_d) -
           (g_hi.array() - g_lo.array()) / (2.0 * s2)).matrix() /
          (2.0 * h);
      const double d2_logdet = (hi.sum_log_d - 2.0 * mid.sum_log_d + lo.sum_log_d) / (h * h);
      const double d2_quad =
          (g_hi.mean() - 2.0 * g_mid.mean() + g_lo.mean()) / (h * h);
      ic(p + 1, p + 1) = -(-0.5 * d2_logdet - d2_quad / (2.0 * s2));
      const double cross = (g_hi.mean() - g_lo.mean()) / (2.0 * h) / (2.0 * s2 * s2);
      ic(p, p + 1) = -cross;
      ic(p + 1, p) = -cross;
    }
  } else {
    const double tau = state.tau;
    out.score_draws.col(p) = (q / (2.0 * tau) - 0.5 * mo.perdraw_qf.array()).matrix();
    ic(p, p) = q / (2.0 * tau * tau);
  }

  const VectorXd mean_score = out.score_draws.colwise().mean().transpose();
  const MatrixXd second = out.score_draws.transpose() * out.score_draws / k;
  out.information = ic - second + mean_score * mean_score.transpose();
  out.information = 0.5 * (out.information + out.information.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<MatrixXd> es(out.information);
  out.psd = es.eigenvalues().minCoeff() >= -1e-10 * std::max(1.0, es.eigenvalues().maxCoeff());

  out.score_mean = mean_score;
  out.score_ase.resize(dim);
  for (int j = 0; j < dim; ++j) {
    out.score_ase[j] = k >= 100 ? batch_means_ase(out.score_draws.col(j)) : 0.0;
  }
  return out;
}

}  // namespace sglmm
