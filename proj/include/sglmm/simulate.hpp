#pragma once

#include "sglmm/basis.hpp"
#include "sglmm/covariance.hpp"
#include "sglmm/lattice.hpp"
#include "sglmm/rng.hpp"

namespace sglmm {

// Generative settings for the synthetic studies: unit-square Poisson or
// Bernoulli fields with Matern random effects, or Poisson counts on a grid
// with Moran-basis random effects.
struct SimDesign {
  Domain domain = Domain::continuous;
  Family family = Family::poisson_log;
  int n_train = 1000;
  int n_test = 400;
  VectorXd beta = (VectorXd(2) << 1.0, 1.0).finished();
  double sigma2 = 1.0;
  double phi = 0.07;
  double nu = 1.5;
  double tau = 3.0;
  int sim_rank = 400;  // lattice delta dimension
  int grid_rows = 30;
  int grid_cols = 30;
  uint64_t seed = 0;
  bool orthogonalize = false;        // continuous: project W off the design
  bool literal_lattice_cov = false;  // lattice: cov(delta) = tau Qdelta^{-1}
};

struct SimResult {
  SpatialDataset train;
  SpatialDataset test;
  VectorXd w_train, w_test;
  VectorXd mu_train, mu_test;
  VectorXd delta;  // lattice only
};

namespace detail {

inline VectorXd sample_responses(Family family, const VectorXd& eta, Rng& rng) {
  VectorXd z(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    if (family == Family::poisson_log)
      z[i] = static_cast<double>(rng.poisson(std::exp(eta[i])));
    else
      z[i] = static_cast<double>(rng.bernoulli(logistic(eta[i])));
  }
  return z;
}

inline void split_sim(const SimDesign& d, const MatrixXd& coords, const VectorXd& w,
                      Family family, Rng& rng, SimResult& out) {
  const int n = d.n_train + d.n_test;
  MatrixXd x = coords;  // covariates are the coordinates
  VectorXd eta = x * d.beta + w;
  VectorXd mu(n);
  for (int i = 0; i < n; ++i) mu[i] = inv_link(family, eta[i]);
  VectorXd z = sample_responses(family, eta, rng);

  auto make = [&](int start, int count) {
    SpatialDataset ds;
    ds.domain = Domain::continuous;
    ds.family = family;
    ds.z = z.segment(start, count);
    ds.X = x.middleRows(start, count);
    ds.offset = VectorXd::Zero(count);
    ds.coords = coords.middleRows(start, count);
    ds.covariate_names = {"x", "y"};
    return ds;
  };
  out.train = make(0, d.n_train);
  out.test = make(d.n_train, d.n_test);
  out.w_train = w.head(d.n_train);
  out.w_test = w.tail(d.n_test);
  out.mu_train = mu.head(d.n_train);
  out.mu_test = mu.tail(d.n_test);
}

}  // namespace detail

// Unit-square design: n_train locations uniform at random, n_test on a
// regular grid; W is an exact draw from the Matern field (dense Cholesky);
// covariates are the coordinates.
inline SimResult simulate_continuous(const SimDesign& d) {
  require(d.n_train >= 1 && d.n_test >= 0, Error::Kind::invalid_argument,
          "simulate_continuous: sizes must be positive");
  require(d.beta.size() == 2, Error::Kind::invalid_argument,
          "simulate_continuous: expected two coefficients (coordinate covariates)");
  const int n = d.n_train + d.n_test;
  Rng rng(mix_seed(d.seed, 0x51c0ULL));

  MatrixXd coords(n, 2);
  for (int i = 0; i < d.n_train; ++i) {
    coords(i, 0) = rng.uniform();
    coords(i, 1) = rng.uniform();
  }
  if (d.n_test > 0) {
    const int g = static_cast<int>(std::round(std::sqrt(static_cast<double>(d.n_test))));
    require(g * g == d.n_test, Error::Kind::invalid_argument,
            "simulate_continuous: n_test must be a perfect square (regular grid)");
    for (int r = 0; r < g; ++r)
      for (int c = 0; c < g; ++c) {
        coords(d.n_train + r * g + c, 0) = (c + 0.5) / g;
        coords(d.n_train + r * g + c, 1) = (r + 0.5) / g;
      }
  }

  VectorXd w = VectorXd::Zero(n);
  if (d.sigma2 > 0) {
    const MaternParams params{d.sigma2, d.phi, d.nu};
    MatrixXd r = correlation_matrix(coords, params);
    Eigen::LLT<MatrixXd> llt(r);
    if (llt.info() != Eigen::Success) {
      r.diagonal().array() += 1e-10;
      llt.compute(r);
      require(llt.info() == Eigen::Success, Error::Kind::numerical,
              "simulate_continuous: correlation matrix is not positive definite");
    }
    w = std::sqrt(d.sigma2) * (MatrixXd(llt.matrixL()) * rng.normal_vector(n));
  }

  SimResult out;
  if (d.orthogonalize) {
    // remove the component aligned with the covariates (no confounding)
    w = residual_projector_apply(coords, w);
  }
  detail::split_sim(d, coords, w, d.family, rng, out);
  return out;
}

inline SimResult simulate_binary_continuous(SimDesign d) {
  d.family = Family::bernoulli_logit;
  return simulate_continuous(d);
}

// Grid design: delta is drawn in the Moran basis of the graph (orthogonal to
// intercept and coordinates), with covariance (tau Qdelta)^{-1}, or the
// literal tau Qdelta^{-1} under the override flag; W = M delta.
inline SimResult simulate_lattice(const SimDesign& d, const LatticeGraph& graph) {
  require(d.beta.size() == 2, Error::Kind::invalid_argument,
          "simulate_lattice: expected two coefficients (coordinate covariates)");
  require(graph.n == d.grid_rows * d.grid_cols, Error::Kind::invalid_argument,
          "simulate_lattice: graph does not match the grid dimensions");
  require(d.tau > 0, Error::Kind::invalid_argument, "simulate_lattice: tau must be positive");
  const int n = graph.n;
  Rng rng(mix_seed(d.seed, 0x52a7ULL));

  MatrixXd coords(n, 2);
  for (int r = 0; r < d.grid_rows; ++r)
    for (int c = 0; c < d.grid_cols; ++c) {
      coords(r * d.grid_cols + c, 0) = (c + 0.5) / d.grid_cols;
      coords(r * d.grid_cols + c, 1) = (r + 0.5) / d.grid_rows;
    }

  MatrixXd x_sim(n, 3);
  x_sim.col(0).setOnes();
  x_sim.rightCols(2) = coords;
  require(d.sim_rank >= 1 && d.sim_rank <= n - 3, Error::Kind::invalid_argument,
          "simulate_lattice: sim_rank out of range");
  ProjectionBasis sim_basis = moran_basis(graph, x_sim, d.sim_rank);

  MatrixXd qdelta = sim_basis.Qdelta;
  Eigen::LLT<MatrixXd> llt(qdelta);
  if (llt.info() != Eigen::Success) {
    qdelta.diagonal().array() += 1e-10;
    llt.compute(qdelta);
    require(llt.info() == Eigen::Success, Error::Kind::numerical,
            "simulate_lattice: reduced precision is singular");
  }
  // solve L' delta0 = z gives cov(delta0) = Qdelta^{-1}
  VectorXd zdraw = rng.normal_vector(sim_basis.rank);
  VectorXd delta = MatrixXd(llt.matrixL()).transpose().triangularView<Eigen::Upper>().solve(zdraw);
  delta *= d.literal_lattice_cov ? std::sqrt(d.tau) : 1.0 / std::sqrt(d.tau);

  const VectorXd w = sim_basis.M * delta;
  VectorXd eta = coords * d.beta + w;
  VectorXd mu(n);
  for (int i = 0; i < n; ++i) mu[i] = inv_link(d.family, eta[i]);

  SimResult out;
  out.delta = delta;
  out.train.domain = Domain::lattice;
  out.train.family = d.family;
  out.train.z = detail::sample_responses(d.family, eta, rng);
  out.train.X = coords;
  out.train.offset = VectorXd::Zero(n);
  out.train.coords = coords;  // vertex positions, kept for reporting
  out.train.graph = graph;
  out.train.covariate_names = {"x", "y"};
  out.w_train = w;
  out.mu_train = mu;
  return out;
}

inline SimResult simulate_lattice(const SimDesign& d) {
  return simulate_lattice(d, grid_graph(d.grid_rows, d.grid_cols));
}

// Named designs matching the simulation studies.
inline SimDesign sim_preset(const std::string& name) {
  SimDesign d;
  if (name == "s51-r02") {
    d.phi = 0.07;  // effective range 0.2
  } else if (name == "s51-r05") {
    d.phi = 0.18;  // effective range 0.5
  } else if (name == "s52") {
    d.domain = Domain::lattice;
    d.tau = 3.0;
    d.sim_rank = 400;
    d.n_train = 900;
    d.n_test = 0;
  } else if (name == "s3-binary") {
    d.family = Family::bernoulli_logit;
    d.phi = 0.18;
  } else {
    fail(Error::Kind::invalid_argument, "unknown simulation preset: " + name);
  }
  return d;
}

}  // namespace sglmm
