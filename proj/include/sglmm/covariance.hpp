#pragma once

#include "sglmm/core.hpp"

namespace sglmm {

// Matern covariance C(h) = sigma2 * rho_nu(h/phi) with smoothness nu limited
// to {0.5, 1.5, 2.5}, where the closed forms need no Bessel evaluation.
struct MaternParams {
  double sigma2 = 1.0;
  double phi = 1.0;
  double nu = 1.5;

  void validate() const {
    require(std::isfinite(sigma2) && sigma2 > 0, Error::Kind::invalid_argument,
            "MaternParams: sigma2 must be positive");
    require(std::isfinite(phi) && phi > 0, Error::Kind::invalid_argument,
            "MaternParams: phi must be positive");
    const bool ok = std::abs(nu - 0.5) < 1e-12 || std::abs(nu - 1.5) < 1e-12 ||
                    std::abs(nu - 2.5) < 1e-12;
    require(ok, Error::Kind::invalid_argument, "MaternParams: nu must be one of 0.5, 1.5, 2.5");
  }
};

// Correlation at distance h; 1 at h = 0, strictly decreasing in h.
inline double matern_correlation(double h, const MaternParams& params) {
  params.validate();
  require(std::isfinite(h) && h >= 0, Error::Kind::invalid_argument,
          "matern_correlation: distance must be finite and nonnegative");
  if (h == 0.0) return 1.0;
  if (std::abs(params.nu - 0.5) < 1e-12) return std::exp(-h / params.phi);
  if (std::abs(params.nu - 1.5) < 1e-12) {
    const double t = std::sqrt(3.0) * h / params.phi;
    return (1.0 + t) * std::exp(-t);
  }
  const double t = std::sqrt(5.0) * h / params.phi;
  return (1.0 + t + t * t / 3.0) * std::exp(-t);
}

inline MatrixXd pairwise_distances(const MatrixXd& coords) {
  require(coords.cols() == 2, Error::Kind::invalid_argument, "coordinates must be n x 2");
  require(coords.allFinite(), Error::Kind::invalid_argument, "non-finite coordinates");
  const auto n = coords.rows();
  MatrixXd d = MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double dx = coords(i, 0) - coords(j, 0);
      const double dy = coords(i, 1) - coords(j, 1);
      const double h = std::sqrt(dx * dx + dy * dy);
      d(i, j) = h;
      d(j, i) = h;
    }
  }
  return d;
}

inline MatrixXd cross_distances(const MatrixXd& a, const MatrixXd& b) {
  require(a.cols() == 2 && b.cols() == 2, Error::Kind::invalid_argument,
          "coordinates must be n x 2");
  require(a.allFinite() && b.allFinite(), Error::Kind::invalid_argument,
          "non-finite coordinates");
  MatrixXd d(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      const double dx = a(i, 0) - b(j, 0);
      const double dy = a(i, 1) - b(j, 1);
      d(i, j) = std::sqrt(dx * dx + dy * dy);
    }
  }
  return d;
}

inline MatrixXd correlation_from_distances(const MatrixXd& dist, const MaternParams& params) {
  params.validate();
  const auto n = dist.rows();
  MatrixXd r = MatrixXd::Identity(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = matern_correlation(dist(i, j), params);
      r(i, j) = v;
      r(j, i) = v;
    }
  }
  return r;
}

// Correlation matrix R_phi over a point set; symmetric PSD with unit diagonal.
inline MatrixXd correlation_matrix(const MatrixXd& coords, const MaternParams& params) {
  require(coords.rows() >= 1, Error::Kind::invalid_argument, "need at least one location");
  return correlation_from_distances(pairwise_distances(coords), params);
}

inline MatrixXd cross_correlation(const MatrixXd& a, const MatrixXd& b,
                                  const MaternParams& params) {
  MatrixXd d = cross_distances(a, b);
  for (Eigen::Index i = 0; i < d.rows(); ++i)
    for (Eigen::Index j = 0; j < d.cols(); ++j) d(i, j) = matern_correlation(d(i, j), params);
  return d;
}

}  // namespace sglmm
