#include "sglmm/covariance.hpp"
#include "sglmm/eigs.hpp"
#include "sglmm/rng.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace sglmm;

namespace {

MatrixXd random_psd(int n, uint64_t seed) {
  Rng rng(seed);
  MatrixXd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = rng.normal();
  return a * a.transpose() / n;
}

MatrixXd random_points(int n, uint64_t seed) {
  Rng rng(seed);
  MatrixXd pts(n, 2);
  for (int i = 0; i < n; ++i) {
    pts(i, 0) = rng.uniform();
    pts(i, 1) = rng.uniform();
  }
  return pts;
}

}  // namespace

TEST_CASE("exact_top_eigs on identity and diagonal matrices") {
  EigenPair id = exact_top_eigs(MatrixXd::Identity(3, 3), 2);
  CHECK(id.values[0] == Catch::Approx(1.0));
  CHECK(id.values[1] == Catch::Approx(1.0));

  VectorXd d(3);
  d << 3, 2, 1;
  EigenPair diag = exact_top_eigs(d.asDiagonal(), 2);
  CHECK(diag.values[0] == Catch::Approx(3.0));
  CHECK(diag.values[1] == Catch::Approx(2.0));
  CHECK(std::abs(diag.vectors(0, 0)) == Catch::Approx(1.0));
  CHECK(std::abs(diag.vectors(1, 1)) == Catch::Approx(1.0));
}

TEST_CASE("exact_top_eigs satisfies the eigen residual equation") {
  const MatrixXd k = random_psd(20, 5);
  const EigenPair e = exact_top_eigs(k, 6);
  for (int i = 0; i < 6; ++i) {
    const VectorXd resid = k * e.vectors.col(i) - e.values[i] * e.vectors.col(i);
    CHECK(resid.cwiseAbs().maxCoeff() < 1e-8);
  }
  // values sorted nonincreasing
  for (int i = 1; i < 6; ++i) CHECK(e.values[i] <= e.values[i - 1] + 1e-12);
}

TEST_CASE("exact_top_eigs rejects asymmetric input") {
  MatrixXd k = MatrixXd::Identity(4, 4);
  k(0, 1) = 0.5;
  CHECK_THROWS_AS(exact_top_eigs(k, 2), Error);
}

TEST_CASE("nystrom on the identity recovers a flat spectrum") {
  NystromConfig cfg;
  cfg.rank = 5;
  cfg.seed = 3;
  const EigenPair e = nystrom_top_eigs(MatrixXd::Identity(100, 100), cfg);
  for (int i = 0; i < 5; ++i) CHECK(e.values[i] == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("nystrom recovers a rank-one spectrum") {
  Rng rng(11);
  VectorXd v(60);
  for (int i = 0; i < 60; ++i) v[i] = rng.normal();
  v *= std::sqrt(7.0) / v.norm();  // ||v||^2 = 7
  const MatrixXd k = v * v.transpose();
  NystromConfig cfg;
  cfg.rank = 1;
  cfg.oversample = 4;
  cfg.seed = 21;
  const EigenPair e = nystrom_top_eigs(k, cfg);
  CHECK(e.values[0] == Catch::Approx(7.0).epsilon(1e-6));
  const VectorXd unit = v / v.norm();
  const double align = std::abs(unit.dot(e.vectors.col(0)));
  CHECK(align == Catch::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("nystrom matches the dense decomposition on a Matern matrix") {
  const MatrixXd pts = random_points(500, 77);
  const MatrixXd r = correlation_matrix(pts, {1.0, 0.18, 1.5});
  const EigenPair dense = exact_top_eigs(r, 50);
  NystromConfig cfg;
  cfg.rank = 50;
  cfg.seed = 1234;
  const EigenPair approx = nystrom_top_eigs(r, cfg);
  for (int i = 0; i < 10; ++i) {
    CHECK(approx.values[i] == Catch::Approx(dense.values[i]).epsilon(0.01));
  }
}

TEST_CASE("output eigenvectors are orthonormal") {
  const MatrixXd pts = random_points(150, 8);
  const MatrixXd r = correlation_matrix(pts, {1.0, 0.2, 1.5});
  NystromConfig cfg;
  cfg.rank = 20;
  cfg.seed = 5;
  for (const EigenPair& e : {exact_top_eigs(r, 20), nystrom_top_eigs(r, cfg)}) {
    const MatrixXd gram = e.vectors.transpose() * e.vectors;
    CHECK((gram - MatrixXd::Identity(20, 20)).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(e.values.minCoeff() >= 0.0);
  }
}

TEST_CASE("power step a=1 does not do worse than a=0 on decaying spectra") {
  double err_a0 = 0, err_a1 = 0;
  const MatrixXd pts = random_points(300, 31);
  const MatrixXd r = correlation_matrix(pts, {1.0, 0.25, 1.5});
  const EigenPair dense = exact_top_eigs(r, 20);
  for (uint64_t seed = 0; seed < 20; ++seed) {
    NystromConfig cfg;
    cfg.rank = 20;
    cfg.seed = 1000 + seed;
    cfg.power = 0;
    const EigenPair e0 = nystrom_top_eigs(r, cfg);
    cfg.power = 1;
    const EigenPair e1 = nystrom_top_eigs(r, cfg);
    for (int i = 0; i < 20; ++i) {
      err_a0 += std::abs(e0.values[i] - dense.values[i]) / dense.values[i];
      err_a1 += std::abs(e1.values[i] - dense.values[i]) / dense.values[i];
    }
  }
  CHECK(err_a1 <= err_a0);
}

TEST_CASE("nystrom is deterministic given the seed") {
  const MatrixXd k = random_psd(80, 9);
  NystromConfig cfg;
  cfg.rank = 10;
  cfg.seed = 42;
  const EigenPair a = nystrom_top_eigs(k, cfg);
  const EigenPair b = nystrom_top_eigs(k, cfg);
  CHECK(a.values == b.values);
  CHECK(a.vectors == b.vectors);
  cfg.seed = 43;
  const EigenPair c = nystrom_top_eigs(k, cfg);
  CHECK(a.values != c.values);
}

TEST_CASE("nystrom regularizes a singular sketch and flags it") {
  // rank-one matrix: the sketched small matrix is singular
  VectorXd v = VectorXd::LinSpaced(40, 0.1, 1.0);
  const MatrixXd k = v * v.transpose();
  NystromConfig cfg;
  cfg.rank = 2;
  cfg.oversample = 2;
  cfg.seed = 6;
  const EigenPair e = nystrom_top_eigs(k, cfg);
  CHECK(e.regularized);
  CHECK(e.values[0] == Catch::Approx(v.squaredNorm()).epsilon(1e-4));
}

TEST_CASE("nystrom requires n > rank + oversample") {
  NystromConfig cfg;
  cfg.rank = 5;
  cfg.oversample = 5;
  CHECK_THROWS_AS(nystrom_top_eigs(MatrixXd::Identity(10, 10), cfg), Error);
}

TEST_CASE("dispatcher honors the threshold knob") {
  const MatrixXd k = random_psd(50, 15);
  EigSolverConfig cfg;
  cfg.exact_threshold = 10;  // force the Nystrom path
  cfg.seed = 8;
  CHECK(resolve_method(cfg, k.rows(), 5) == EigSolverConfig::Method::nystrom);
  cfg.exact_threshold = 2000;
  CHECK(resolve_method(cfg, k.rows(), 5) == EigSolverConfig::Method::exact);
  // automatic falls back to exact when n <= m + l
  CHECK(resolve_method(EigSolverConfig{}, 10, 5) == EigSolverConfig::Method::exact);
}
