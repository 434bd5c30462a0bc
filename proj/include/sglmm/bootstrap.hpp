#pragma once

#include "sglmm/em_laplace.hpp"
#include "sglmm/em_mcmc.hpp"
#include "sglmm/simulate.hpp"
#include "sglmm/util.hpp"

namespace sglmm {

enum class Algorithm { mcmc_em, la_em };

inline const char* to_string(Algorithm a) { return a == Algorithm::mcmc_em ? "mcmc-em" : "la-em"; }

inline Algorithm algorithm_from_string(const std::string& s) {
  if (s == "mcmc-em" || s == "mcmc_em" || s == "mcmc") return Algorithm::mcmc_em;
  if (s == "la-em" || s == "la_em" || s == "laplace") return Algorithm::la_em;
  fail(Error::Kind::invalid_argument, "unknown algorithm: " + s);
}

inline FitResult fit_model(Algorithm alg, const SpatialDataset& data, int rank,
                           const EmConfig& cfg) {
  return alg == Algorithm::mcmc_em ? fit_mcmc_em(data, rank, cfg) : fit_la_em(data, rank, cfg);
}

struct BootstrapResult {
  MatrixXd estimates;  // one row per successful replicate
  VectorXd se;
  MatrixXd ci;  // dim x 2, percentile 2.5 / 97.5
  int requested = 0;
  int failed = 0;
  std::vector<std::string> warnings;
};

inline VectorXd flatten_state(const ModelState& st) {
  const int p = static_cast<int>(st.beta.size());
  VectorXd v(p + (st.domain == Domain::continuous ? 2 : 1));
  v.head(p) = st.beta;
  if (st.domain == Domain::continuous) {
    v[p] = st.sigma2;
    v[p + 1] = st.phi;
  } else {
    v[p] = st.tau;
  }
  return v;
}

// SDs and percentile intervals of point estimates; retained estimates allow
// recomputing intervals at other levels.
inline void bootstrap_summary(const MatrixXd& estimates, VectorXd& se, MatrixXd& ci) {
  const auto b = estimates.rows();
  const auto dim = estimates.cols();
  require(b >= 2, Error::Kind::invalid_argument, "bootstrap_summary: need at least two replicates");
  se.resize(dim);
  ci.resize(dim, 2);
  for (Eigen::Index j = 0; j < dim; ++j) {
    const double mean = estimates.col(j).mean();
    se[j] = std::sqrt((estimates.col(j).array() - mean).square().sum() / (b - 1));
    std::vector<double> col(estimates.col(j).begin(), estimates.col(j).end());
    ci(j, 0) = quantile_type7(col, 0.025);
    ci(j, 1) = quantile_type7(std::move(col), 0.975);
  }
}

namespace detail {

// Simulates responses from the full spatial model at the fitted parameters,
// on the observed locations / graph with the observed design and offset.
class ParametricSimulator {
 public:
  ParametricSimulator(const SpatialDataset& data, const ModelState& state, double nu)
      : data_(data), state_(state) {
    if (data.domain == Domain::continuous) {
      MatrixXd r = correlation_matrix(data.coords, MaternParams{1.0, state.phi, nu});
      Eigen::LLT<MatrixXd> llt(r);
      if (llt.info() != Eigen::Success) {
        r.diagonal().array() += 1e-10;
        llt.compute(r);
        require(llt.info() == Eigen::Success, Error::Kind::numerical,
                "bootstrap: correlation matrix is not positive definite");
      }
      chol_ = llt.matrixL();
    } else {
      // sample the intrinsic field on the non-null eigenspace of Q
      const MatrixXd q = MatrixXd(icar_precision(data.graph));
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(q);
      require(es.info() == Eigen::Success, Error::Kind::numerical,
              "bootstrap: precision eigendecomposition failed");
      const double tol = 1e-9 * es.eigenvalues().maxCoeff();
      int nz = 0;
      for (Eigen::Index i = 0; i < q.rows(); ++i)
        if (es.eigenvalues()[i] > tol) ++nz;
      icar_vectors_ = es.eigenvectors().rightCols(nz);
      icar_scale_ = es.eigenvalues().tail(nz).cwiseInverse().cwiseSqrt();
    }
  }

  SpatialDataset simulate(uint64_t seed) const {
    Rng rng(seed);
    const int n = data_.n();
    VectorXd w;
    if (data_.domain == Domain::continuous) {
      w = std::sqrt(state_.sigma2) * (chol_ * rng.normal_vector(n));
    } else {
      VectorXd zdraw = rng.normal_vector(icar_vectors_.cols());
      w = icar_vectors_ * (icar_scale_.cwiseProduct(zdraw)) / std::sqrt(state_.tau);
    }
    VectorXd eta = data_.offset + w;
    if (data_.p() > 0) eta += data_.X * state_.beta;
    SpatialDataset out = data_;
    out.z = sample_responses(data_.family, eta, rng);
    return out;
  }

 private:
  const SpatialDataset& data_;
  ModelState state_;
  MatrixXd chol_;
  MatrixXd icar_vectors_;
  VectorXd icar_scale_;
};

}  // namespace detail

// Parametric bootstrap: simulate B data sets at the fitted parameters, refit
// each with the same algorithm and rank, and summarize the point estimates.
// Individual replicate failures are skipped; more than 20% failing is an error.
inline BootstrapResult bootstrap_se(const FitResult& fitted, const SpatialDataset& data,
                                    Algorithm alg, const EmConfig& cfg, int B, uint64_t seed,
                                    int threads = 1) {
  require(B >= 2, Error::Kind::invalid_argument, "bootstrap_se: need B >= 2");
  validate_dataset(data);
  const detail::ParametricSimulator sim(data, fitted.estimate, cfg.nu);
  const int rank = fitted.basis.rank;

  std::shared_ptr<PhiEigCache> cache;
  if (data.domain == Domain::continuous) {
    cache = std::make_shared<PhiEigCache>(pairwise_distances(data.coords), rank, cfg.nu, cfg.eig);
  }
  ProjectionBasis lattice_basis;
  if (data.domain == Domain::lattice) lattice_basis = moran_basis(data.graph, data.X, rank);

  const int dim = static_cast<int>(flatten_state(fitted.estimate).size());
  MatrixXd draws(B, dim);
  std::vector<char> ok(B, 0);

  parallel_for(B, threads, [&](int b) {
    const SpatialDataset rep = sim.simulate(mix_seed(seed, 0xb007, b));
    EmConfig rep_cfg = cfg;
    rep_cfg.seed = mix_seed(seed, 0xf1f7, b);
    try {
      FitResult fit;
      if (data.domain == Domain::lattice) {
        fit = alg == Algorithm::mcmc_em ? fit_mcmc_em(rep, lattice_basis, rep_cfg)
                                        : fit_la_em(rep, lattice_basis, rep_cfg);
      } else {
        const ModelState st = initial_values(rep, irls_fit(rep.X, rep.z, rep.family, rep.offset));
        ProjectionBasis basis = continuous_basis_from_eigs(cache->get(st.phi).eig, rep.X, st.phi);
        fit = alg == Algorithm::mcmc_em
                  ? fit_mcmc_em(rep, std::move(basis), rep_cfg, cache, &st)
                  : fit_la_em(rep, std::move(basis), rep_cfg, cache, &st);
      }
      draws.row(b) = flatten_state(fit.estimate).transpose();
      ok[b] = 1;
    } catch (const Error&) {
      ok[b] = 0;
    }
  });

  BootstrapResult out;
  out.requested = B;
  int kept = 0;
  for (int b = 0; b < B; ++b)
    if (ok[b]) ++kept;
  out.failed = B - kept;
  require(out.failed <= B / 5, Error::Kind::numerical,
          "bootstrap_se: " + std::to_string(out.failed) + " of " + std::to_string(B) +
              " replicates failed");
  out.estimates.resize(kept, dim);
  int row = 0;
  for (int b = 0; b < B; ++b)
    if (ok[b]) out.estimates.row(row++) = draws.row(b);
  if (out.failed > 0)
    out.warnings.push_back(std::to_string(out.failed) + " bootstrap replicates failed and were skipped");
  bootstrap_summary(out.estimates, out.se, out.ci);
  return out;
}

}  // namespace sglmm
