#include "sglmm/covariance.hpp"
#include "sglmm/lattice.hpp"
#include "sglmm/rng.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace sglmm;

TEST_CASE("matern correlation is 1 at zero distance") {
  for (double nu : {0.5, 1.5, 2.5}) {
    CHECK(matern_correlation(0.0, {2.0, 0.3, nu}) == 1.0);
  }
}

TEST_CASE("matern nu=1.5 matches the effective-range pairings") {
  // phi = 0.18 puts the correlation near 0.05 at distance 0.5,
  // phi = 0.07 near 0.05 at distance 0.2
  CHECK(matern_correlation(0.5, {1.0, 0.18, 1.5}) == Catch::Approx(0.047336).margin(5e-4));
  CHECK(matern_correlation(0.2, {1.0, 0.07, 1.5}) == Catch::Approx(0.042265).margin(5e-4));
}

TEST_CASE("matern special cases match their closed forms") {
  const double h = 0.37, phi = 0.21;
  CHECK(matern_correlation(h, {1.0, phi, 0.5}) == Catch::Approx(std::exp(-h / phi)));
  const double t3 = std::sqrt(3.0) * h / phi;
  CHECK(matern_correlation(h, {1.0, phi, 1.5}) == Catch::Approx((1 + t3) * std::exp(-t3)));
  const double t5 = std::sqrt(5.0) * h / phi;
  CHECK(matern_correlation(h, {1.0, phi, 2.5}) ==
        Catch::Approx((1 + t5 + t5 * t5 / 3.0) * std::exp(-t5)));
}

TEST_CASE("matern correlation is strictly decreasing in distance") {
  Rng rng(7);
  for (double nu : {0.5, 1.5, 2.5}) {
    MaternParams p{1.0, 0.2, nu};
    for (int t = 0; t < 200; ++t) {
      double h1 = 2.0 * rng.uniform();
      double h2 = h1 + 1e-6 + rng.uniform();
      CHECK(matern_correlation(h1, p) > matern_correlation(h2, p));
    }
  }
}

TEST_CASE("matern rejects bad parameters and distances") {
  CHECK_THROWS_AS(matern_correlation(0.1, {1.0, -0.1, 1.5}), Error);
  CHECK_THROWS_AS(matern_correlation(0.1, {1.0, 0.0, 1.5}), Error);
  CHECK_THROWS_AS(matern_correlation(0.1, {-1.0, 0.1, 1.5}), Error);
  CHECK_THROWS_AS(matern_correlation(0.1, {1.0, 0.1, 1.0}), Error);
  CHECK_THROWS_AS(matern_correlation(-0.1, {1.0, 0.1, 1.5}), Error);
}

TEST_CASE("correlation matrix basics") {
  MaternParams p{1.0, 0.3, 1.5};
  MatrixXd single(1, 2);
  single << 0.2, 0.7;
  CHECK(correlation_matrix(single, p).isApprox(MatrixXd::Identity(1, 1)));

  MatrixXd coincident(2, 2);
  coincident << 0.4, 0.4, 0.4, 0.4;
  MatrixXd r2 = correlation_matrix(coincident, p);
  CHECK(r2(0, 1) == 1.0);
  CHECK(r2(1, 0) == 1.0);
  CHECK(r2(0, 0) == 1.0);
}

TEST_CASE("correlation matrix matches entrywise scalar evaluation") {
  Rng rng(12);
  MatrixXd pts(3, 2);
  for (int i = 0; i < 3; ++i) {
    pts(i, 0) = rng.uniform();
    pts(i, 1) = rng.uniform();
  }
  MaternParams p{1.0, 0.15, 1.5};
  const MatrixXd r = correlation_matrix(pts, p);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const double h = (pts.row(i) - pts.row(j)).norm();
      CHECK(r(i, j) == Catch::Approx(matern_correlation(h, p)).epsilon(1e-12));
    }
}

TEST_CASE("correlation matrix is PSD on random point sets") {
  Rng rng(99);
  for (int n : {20, 80, 200}) {
    MatrixXd pts(n, 2);
    for (int i = 0; i < n; ++i) {
      pts(i, 0) = rng.uniform();
      pts(i, 1) = rng.uniform();
    }
    for (double nu : {0.5, 1.5, 2.5}) {
      const MatrixXd r = correlation_matrix(pts, {1.0, 0.2, nu});
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(r);
      CHECK(es.eigenvalues().minCoeff() >= -1e-8 * es.eigenvalues().maxCoeff());
    }
  }
}

TEST_CASE("correlation matrix rejects NaN coordinates") {
  MatrixXd pts(2, 2);
  pts << 0.0, 0.1, std::nan(""), 0.2;
  CHECK_THROWS_AS(correlation_matrix(pts, {1.0, 0.3, 1.5}), Error);
}

TEST_CASE("icar precision of a 2-node path") {
  LatticeGraph g;
  g.n = 2;
  g.edges = {{0, 1}};
  const MatrixXd q = MatrixXd(icar_precision(g));
  MatrixXd expected(2, 2);
  expected << 1, -1, -1, 1;
  CHECK(q.isApprox(expected));
}

TEST_CASE("icar precision has exactly zero row sums on a 30x30 grid") {
  const auto g = grid_graph(30, 30);
  const MatrixXd q = MatrixXd(icar_precision(g));
  const VectorXd rowsums = q.rowwise().sum();
  for (int i = 0; i < g.n; ++i) CHECK(rowsums[i] == 0.0);
}

TEST_CASE("icar precision of a 4-cycle has eigenvalues 0, 2, 2, 4") {
  LatticeGraph g;
  g.n = 4;
  g.edges = {{0, 1}, {1, 2}, {2, 3}, {0, 3}};
  const MatrixXd q = MatrixXd(icar_precision(g));
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(q);
  VectorXd expected(4);
  expected << 0, 2, 2, 4;
  CHECK(es.eigenvalues().isApprox(expected, 1e-10));
}

TEST_CASE("icar rank equals n minus the number of connected components") {
  LatticeGraph g;
  g.n = 5;
  g.edges = {{0, 1}, {1, 2}, {3, 4}};  // two components
  const MatrixXd q = MatrixXd(icar_precision(g));
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(q);
  int zeros = 0;
  for (int i = 0; i < 5; ++i)
    if (std::abs(es.eigenvalues()[i]) < 1e-10) ++zeros;
  CHECK(zeros == 2);
}

TEST_CASE("graph validation rejects malformed input") {
  LatticeGraph loop;
  loop.n = 3;
  loop.edges = {{1, 1}};
  CHECK_THROWS_AS(validate_graph(loop), Error);

  LatticeGraph dup;
  dup.n = 3;
  dup.edges = {{0, 1}, {1, 0}};
  CHECK_THROWS_AS(validate_graph(dup), Error);

  LatticeGraph range;
  range.n = 3;
  range.edges = {{0, 5}};
  CHECK_THROWS_AS(validate_graph(range), Error);
}

TEST_CASE("edge list round trip") {
  const auto g = grid_graph(4, 5);
  const std::string path = "edges_test.txt";
  write_edge_list(g, path);
  const auto back = read_edge_list(path, g.n);
  REQUIRE(back.edges.size() == g.edges.size());
  CHECK(back.edges == g.edges);
  std::remove(path.c_str());
}
