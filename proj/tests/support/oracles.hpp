#pragma once

// Test-side oracles, independent of the library implementation paths they
// check: central finite differences, a damped-Newton GLM optimizer, and an
// adaptive Gauss-Hermite evaluation of the one-dimensional marginal
// likelihood.

#include "sglmm/core.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <vector>

namespace oracles {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline double central_difference(const std::function<double(double)>& f, double x,
                                 double h = 1e-5) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double second_difference(const std::function<double(double)>& f, double x,
                                double h = 1e-4) {
  return (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
}

inline VectorXd gradient_fd(const std::function<double(const VectorXd&)>& f, const VectorXd& x,
                            double h = 1e-5) {
  VectorXd g(x.size());
  VectorXd xp = x;
  for (int i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    xp[i] = x0 + h;
    const double fp = f(xp);
    xp[i] = x0 - h;
    const double fm = f(xp);
    xp[i] = x0;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline MatrixXd hessian_fd(const std::function<double(const VectorXd&)>& f, const VectorXd& x,
                           double h = 1e-4) {
  const int n = static_cast<int>(x.size());
  MatrixXd hess(n, n);
  VectorXd xp = x;
  const double f0 = f(x);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      if (i == j) {
        xp[i] = x[i] + h;
        const double fpp = f(xp);
        xp[i] = x[i] - h;
        const double fmm = f(xp);
        xp[i] = x[i];
        hess(i, i) = (fpp - 2 * f0 + fmm) / (h * h);
      } else {
        xp[i] = x[i] + h;
        xp[j] = x[j] + h;
        const double fpp = f(xp);
        xp[j] = x[j] - h;
        const double fpm = f(xp);
        xp[i] = x[i] - h;
        xp[j] = x[j] + h;
        const double fmp = f(xp);
        xp[j] = x[j] - h;
        const double fmm = f(xp);
        xp[i] = x[i];
        xp[j] = x[j];
        hess(i, j) = hess(j, i) = (fpp - fpm - fmp + fmm) / (4 * h * h);
      }
    }
  }
  return hess;
}

// Full log likelihood of an independent-observation GLM (constants dropped).
inline double glm_loglik(sglmm::Family fam, const MatrixXd& x, const VectorXd& z,
                         const VectorXd& offset, const VectorXd& beta) {
  const VectorXd eta = offset + x * beta;
  return sglmm::data_loglik(fam, z, eta);
}

// Damped full-Newton maximizer of the GLM log likelihood, written without
// reference to the IRLS code path.
inline VectorXd glm_newton_oracle(sglmm::Family fam, const MatrixXd& x, const VectorXd& z,
                                  const VectorXd& offset) {
  VectorXd beta = VectorXd::Zero(x.cols());
  for (int it = 0; it < 200; ++it) {
    const VectorXd eta = offset + x * beta;
    VectorXd mu(z.size()), var(z.size());
    sglmm::mean_and_variance(fam, eta, mu, var);
    const VectorXd grad = x.transpose() * (z - mu);
    if (grad.cwiseAbs().maxCoeff() < 1e-10) break;
    const MatrixXd hess = x.transpose() * var.asDiagonal() * x;
    VectorXd step = hess.ldlt().solve(grad);
    double t = 1.0;
    const double f0 = glm_loglik(fam, x, z, offset, beta);
    while (t > 1e-8 && glm_loglik(fam, x, z, offset, beta + t * step) < f0) t *= 0.5;
    beta += t * step;
  }
  return beta;
}

// Gauss-Hermite nodes and weights by Golub-Welsch.
inline void gauss_hermite(int n, VectorXd& nodes, VectorXd& weights) {
  MatrixXd jac = MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    const double off = std::sqrt(i / 2.0);
    jac(i, i - 1) = off;
    jac(i - 1, i) = off;
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(jac);
  nodes = es.eigenvalues();
  weights.resize(n);
  const double sqrt_pi = std::sqrt(M_PI);
  for (int i = 0; i < n; ++i) {
    const double v = es.eigenvectors()(0, i);
    weights[i] = sqrt_pi * v * v;
  }
}

// Adaptive Gauss-Hermite evaluation of
//   log integral prod_i f(z_i | eta_i(delta)) N(delta | 0, sigma2) d delta
// for a one-column basis: center at the mode, scale by the curvature.
inline double marginal_loglik_1d(sglmm::Family fam, const VectorXd& z, const VectorXd& xb,
                                 const VectorXd& mcol, double sigma2, int n_nodes = 40) {
  const auto logpost = [&](double d) {
    const VectorXd eta = xb + mcol * d;
    return sglmm::data_loglik(fam, z, eta) - 0.5 * d * d / sigma2;
  };
  // 1-D Newton for the mode
  double mode = 0.0;
  for (int it = 0; it < 100; ++it) {
    const VectorXd eta = xb + mcol * mode;
    VectorXd mu(z.size()), var(z.size());
    sglmm::mean_and_variance(fam, eta, mu, var);
    const double g = mcol.dot(z - mu) - mode / sigma2;
    const double h = -(mcol.array().square() * var.array()).sum() - 1.0 / sigma2;
    const double step = -g / h;
    mode += step;
    if (std::abs(step) < 1e-12) break;
  }
  const VectorXd eta = xb + mcol * mode;
  VectorXd mu(z.size()), var(z.size());
  sglmm::mean_and_variance(fam, eta, mu, var);
  const double curv = (mcol.array().square() * var.array()).sum() + 1.0 / sigma2;
  const double scale = 1.0 / std::sqrt(curv);

  VectorXd nodes, weights;
  gauss_hermite(n_nodes, nodes, weights);
  double max_term = -std::numeric_limits<double>::infinity();
  std::vector<double> terms(n_nodes);
  for (int i = 0; i < n_nodes; ++i) {
    const double d = mode + std::sqrt(2.0) * scale * nodes[i];
    terms[i] = std::log(weights[i]) + nodes[i] * nodes[i] + logpost(d);
    max_term = std::max(max_term, terms[i]);
  }
  double acc = 0;
  for (double t : terms) acc += std::exp(t - max_term);
  // gaussian prior normalizer
  return max_term + std::log(acc) + std::log(std::sqrt(2.0) * scale) -
         0.5 * std::log(2.0 * M_PI * sigma2);
}

}  // namespace oracles
