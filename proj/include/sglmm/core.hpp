#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sglmm {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

inline constexpr const char* kVersion = "0.1.0";

enum class Family { poisson_log, bernoulli_logit };
enum class Domain { continuous, lattice };

struct Error : std::runtime_error {
  enum class Kind { invalid_argument, data, numerical, convergence, io };
  Kind kind;
  Error(Kind k, std::string msg) : std::runtime_error(std::move(msg)), kind(k) {}
};

[[noreturn]] inline void fail(Error::Kind k, const std::string& msg) { throw Error(k, msg); }

inline void require(bool cond, Error::Kind k, const std::string& msg) {
  if (!cond) fail(k, msg);
}

inline const char* to_string(Family f) {
  return f == Family::poisson_log ? "poisson" : "bernoulli";
}

inline const char* to_string(Domain d) {
  return d == Domain::continuous ? "continuous" : "lattice";
}

inline Family family_from_string(const std::string& s) {
  if (s == "poisson" || s == "poisson-log") return Family::poisson_log;
  if (s == "bernoulli" || s == "bernoulli-logit" || s == "binary") return Family::bernoulli_logit;
  fail(Error::Kind::invalid_argument, "unknown family: " + s);
}

inline Domain domain_from_string(const std::string& s) {
  if (s == "continuous") return Domain::continuous;
  if (s == "lattice" || s == "discrete") return Domain::lattice;
  fail(Error::Kind::invalid_argument, "unknown domain: " + s);
}

// Undirected lattice with binary adjacency; nodes are 0..n-1, each edge
// stored once with i < j.
struct LatticeGraph {
  int n = 0;
  std::vector<std::pair<int, int>> edges;
};

// Responses, design, offset, and the spatial index (point coordinates or a
// lattice graph) for one data set.
struct SpatialDataset {
  Domain domain = Domain::continuous;
  Family family = Family::poisson_log;
  VectorXd z;
  MatrixXd X;        // n x p, p may be zero
  VectorXd offset;   // length n
  MatrixXd coords;   // n x 2 when continuous
  LatticeGraph graph;
  std::vector<std::string> covariate_names;

  int n() const { return static_cast<int>(z.size()); }
  int p() const { return static_cast<int>(X.cols()); }
};

inline void validate_dataset(const SpatialDataset& ds) {
  const int n = ds.n();
  require(n > 0, Error::Kind::data, "dataset is empty");
  require(ds.X.rows() == n || ds.X.size() == 0, Error::Kind::data,
          "design matrix row count does not match responses");
  require(ds.offset.size() == n, Error::Kind::data, "offset length does not match responses");
  if (ds.domain == Domain::continuous) {
    require(ds.coords.rows() == n && ds.coords.cols() == 2, Error::Kind::data,
            "continuous dataset needs n x 2 coordinates");
    require(ds.coords.allFinite(), Error::Kind::data, "non-finite coordinates");
  } else {
    require(ds.graph.n == n, Error::Kind::data, "lattice graph size does not match responses");
  }
  for (int i = 0; i < n; ++i) {
    const double zi = ds.z[i];
    require(std::isfinite(zi), Error::Kind::data,
            "non-finite response at row " + std::to_string(i));
    if (ds.family == Family::poisson_log) {
      require(zi >= 0 && zi == std::floor(zi), Error::Kind::data,
              "response at row " + std::to_string(i) + " is not a nonnegative count");
    } else {
      require(zi == 0.0 || zi == 1.0, Error::Kind::data,
              "response at row " + std::to_string(i) + " is not 0/1");
    }
  }
}

// Parameter bundle psi = (beta, theta); theta is (sigma2, phi) on the
// continuous domain and tau on the lattice.
struct ModelState {
  VectorXd beta;
  Domain domain = Domain::continuous;
  double sigma2 = std::numeric_limits<double>::quiet_NaN();
  double phi = std::numeric_limits<double>::quiet_NaN();
  double tau = std::numeric_limits<double>::quiet_NaN();

  void validate() const {
    if (domain == Domain::continuous) {
      require(sigma2 > 0, Error::Kind::invalid_argument, "sigma2 must be positive");
      require(phi > 0, Error::Kind::invalid_argument, "phi must be positive");
    } else {
      require(tau > 0, Error::Kind::invalid_argument, "tau must be positive");
    }
    require(beta.allFinite(), Error::Kind::invalid_argument, "non-finite beta");
  }

  bool all_finite() const {
    if (!beta.allFinite()) return false;
    if (domain == Domain::continuous) return std::isfinite(sigma2) && std::isfinite(phi);
    return std::isfinite(tau);
  }
};

// ---- canonical-family helpers ------------------------------------------

// log(1 + exp(x)) without overflow
inline double log1pexp(double x) {
  if (x > 33.3) return x;
  if (x > 18.0) return x + std::exp(-x);
  return std::log1p(std::exp(x));
}

inline double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Log density of z given linear predictor eta, dropping terms free of eta
// (the log z! term for Poisson).
inline double unit_loglik(Family f, double z, double eta) {
  if (f == Family::poisson_log) return z * eta - std::exp(eta);
  return z * eta - log1pexp(eta);
}

inline double data_loglik(Family f, const VectorXd& z, const VectorXd& eta) {
  double s = 0;
  for (int i = 0; i < z.size(); ++i) s += unit_loglik(f, z[i], eta[i]);
  return s;
}

inline double inv_link(Family f, double eta) {
  return f == Family::poisson_log ? std::exp(eta) : logistic(eta);
}

// Conditional mean b'(eta) and variance b''(eta).
inline void mean_and_variance(Family f, const VectorXd& eta, VectorXd& mu, VectorXd& var) {
  const auto n = eta.size();
  mu.resize(n);
  var.resize(n);
  if (f == Family::poisson_log) {
    mu = eta.array().exp();
    var = mu;
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p = logistic(eta[i]);
      mu[i] = p;
      var[i] = p * (1.0 - p);
    }
  }
}

// Third and fourth derivatives of the cumulant b(eta); used by second-order
// corrections to conditional expectations.
inline double cumulant_d3(Family f, double eta) {
  if (f == Family::poisson_log) return std::exp(eta);
  const double p = logistic(eta);
  return p * (1.0 - p) * (1.0 - 2.0 * p);
}

inline double cumulant_d4(Family f, double eta) {
  if (f == Family::poisson_log) return std::exp(eta);
  const double p = logistic(eta);
  return p * (1.0 - p) * (1.0 - 6.0 * p + 6.0 * p * p);
}

}  // namespace sglmm
