#include "sglmm/basis.hpp"
#include "sglmm/rng.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace sglmm;

namespace {

MatrixXd random_matrix(int n, int p, uint64_t seed) {
  Rng rng(seed);
  MatrixXd x(n, p);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) x(i, j) = rng.normal();
  return x;
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

TEST_CASE("residual projector annihilates the design span") {
  const MatrixXd x = random_matrix(50, 3, 1);
  const MatrixXd px = residual_projector_apply(x, x);
  CHECK(px.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("residual projector leaves orthogonal input unchanged") {
  const MatrixXd x = random_matrix(50, 3, 2);
  MatrixXd v = random_matrix(50, 4, 3);
  v = residual_projector_apply(x, v);  // now orthogonal to x
  const MatrixXd again = residual_projector_apply(x, v);
  CHECK((again - v).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("residual projector is idempotent") {
  const MatrixXd x = random_matrix(50, 3, 4);
  const MatrixXd v = random_matrix(50, 5, 5);
  const MatrixXd once = residual_projector_apply(x, v);
  const MatrixXd twice = residual_projector_apply(x, once);
  CHECK((twice - once).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("residual projector names the offending column when rank deficient") {
  MatrixXd x = random_matrix(30, 3, 6);
  x.col(2) = 2.0 * x.col(0);  // dependent
  try {
    residual_projector_apply(x, x);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("column") != std::string::npos);
  }
}

TEST_CASE("continuous basis with no covariates is U D^{1/2}") {
  const MatrixXd pts = random_points(40, 7);
  const MatrixXd x(40, 0);
  const auto basis = continuous_basis(pts, x, {1.0, 0.2, 1.5}, 10, {});
  const MatrixXd expected =
      basis.U * basis.D.cwiseSqrt().asDiagonal();
  CHECK((basis.M - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("continuous basis is orthogonal to the design") {
  const MatrixXd pts = random_points(120, 8);
  MatrixXd x(120, 3);
  x.col(0).setOnes();
  x.rightCols(2) = pts;
  const auto basis = continuous_basis(pts, x, {1.0, 0.15, 1.5}, 25, {});
  const double scale = basis.M.cwiseAbs().maxCoeff() * x.cwiseAbs().maxCoeff();
  CHECK((basis.M.transpose() * x).cwiseAbs().maxCoeff() < 1e-8 * scale);
}

TEST_CASE("continuous basis column norms follow the eigenvalues") {
  const MatrixXd pts = random_points(200, 9);
  const MatrixXd x(200, 0);
  const auto basis = continuous_basis(pts, x, {1.0, 0.2, 1.5}, 20, {});
  for (int i = 0; i < 20; ++i) {
    CHECK(basis.M.col(i).norm() == Catch::Approx(std::sqrt(basis.D[i])).epsilon(1e-8));
  }
}

TEST_CASE("reparameterized prior covariance is sigma2 I under exact eigens") {
  const MatrixXd pts = random_points(150, 10);
  const double sigma2 = 1.7, phi = 0.2;
  const MaternParams params{sigma2, phi, 1.5};
  const MatrixXd x(150, 0);
  const auto basis = continuous_basis(pts, x, params, 25, {});
  const MatrixXd sigma_theta = sigma2 * correlation_matrix(pts, params);
  const MatrixXd t = basis.U * basis.D.cwiseSqrt().cwiseInverse().asDiagonal();
  const MatrixXd should_be_s2i = t.transpose() * sigma_theta * t;
  CHECK((should_be_s2i - sigma2 * MatrixXd::Identity(25, 25)).cwiseAbs().maxCoeff() <
        1e-6 * sigma2);
}

TEST_CASE("reparameterized prior covariance under nystrom eigens") {
  const MatrixXd pts = random_points(400, 11);
  const double sigma2 = 1.0, phi = 0.25;
  const MaternParams params{sigma2, phi, 1.5};
  const MatrixXd x(400, 0);
  EigSolverConfig cfg;
  cfg.method = EigSolverConfig::Method::nystrom;
  cfg.seed = 99;
  const auto basis = continuous_basis(pts, x, params, 20, cfg);
  const MatrixXd sigma_theta = sigma2 * correlation_matrix(pts, params);
  const MatrixXd t = basis.U * basis.D.cwiseSqrt().cwiseInverse().asDiagonal();
  const MatrixXd should_be_s2i = t.transpose() * sigma_theta * t;
  CHECK((should_be_s2i - sigma2 * MatrixXd::Identity(20, 20)).cwiseAbs().maxCoeff() < 1e-2);
}

TEST_CASE("moran basis on the 4-cycle with intercept-only design") {
  LatticeGraph g;
  g.n = 4;
  g.edges = {{0, 1}, {1, 2}, {2, 3}, {0, 3}};
  MatrixXd x = MatrixXd::Ones(4, 1);
  const auto basis = moran_basis(g, x, 1);
  CHECK(basis.rank == 1);
  CHECK(std::abs(basis.M.col(0).sum()) < 1e-10);
  CHECK(basis.M.col(0).norm() == Catch::Approx(1.0));

  // oracle: the column solves the Moran eigenproblem at the largest
  // eigenvalue attainable orthogonal to the design
  const MatrixXd a = adjacency_matrix(g);
  const MatrixXd pperp = MatrixXd::Identity(4, 4) - MatrixXd::Constant(4, 4, 0.25);
  const MatrixXd moran = pperp * a * pperp;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(moran);
  // eigenvalues of the 4-cycle Moran operator restricted to 1-perp: {-2, 0, 0}
  const double top_perp = basis.D[0];
  CHECK(top_perp == Catch::Approx(0.0).margin(1e-10));
  const VectorXd resid = moran * basis.M.col(0) - top_perp * basis.M.col(0);
  CHECK(resid.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("moran reduced precision is symmetric") {
  const auto g = grid_graph(8, 8);
  MatrixXd x(64, 1);
  x.setOnes();
  const auto basis = moran_basis(g, x, 10);
  CHECK((basis.Qdelta - basis.Qdelta.transpose()).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("moran basis on the 30x30 grid reproduces the 900 x 400 layout") {
  const auto g = grid_graph(30, 30);
  MatrixXd x(900, 3);
  x.col(0).setOnes();
  for (int r = 0; r < 30; ++r)
    for (int c = 0; c < 30; ++c) {
      x(r * 30 + c, 1) = (c + 0.5) / 30.0;
      x(r * 30 + c, 2) = (r + 0.5) / 30.0;
    }
  const auto basis = moran_basis(g, x, 400);
  CHECK(basis.M.rows() == 900);
  CHECK(basis.M.cols() == 400);
  CHECK(basis.q == 400);
  CHECK_FALSE(basis.truncated);
  const double scale = basis.M.cwiseAbs().maxCoeff() * x.cwiseAbs().maxCoeff();
  CHECK((basis.M.transpose() * x).cwiseAbs().maxCoeff() < 1e-8 * scale);
}

TEST_CASE("moran basis truncates past the positive eigenvalues with a flag") {
  LatticeGraph g;
  g.n = 4;
  g.edges = {{0, 1}, {1, 2}, {2, 3}, {0, 3}};
  MatrixXd x = MatrixXd::Ones(4, 1);
  const auto basis = moran_basis(g, x, 3);  // 4-cycle has one positive Moran eig
  CHECK(basis.truncated);
  CHECK(basis.rank < 3);
}
