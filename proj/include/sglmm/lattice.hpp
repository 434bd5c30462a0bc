#pragma once

#include "sglmm/core.hpp"

#include <Eigen/Sparse>

#include <fstream>
#include <set>
#include <sstream>

namespace sglmm {

inline void validate_graph(const LatticeGraph& g) {
  require(g.n > 0, Error::Kind::invalid_argument, "graph has no nodes");
  std::set<std::pair<int, int>> seen;
  for (const auto& [i, j] : g.edges) {
    require(i >= 0 && i < g.n && j >= 0 && j < g.n, Error::Kind::invalid_argument,
            "edge endpoint out of range: " + std::to_string(i) + " " + std::to_string(j));
    require(i != j, Error::Kind::invalid_argument, "self-loop at node " + std::to_string(i));
    const auto key = std::minmax(i, j);
    require(seen.insert(key).second, Error::Kind::invalid_argument,
            "duplicate edge " + std::to_string(key.first) + " " + std::to_string(key.second));
  }
}

// Rook adjacency on a rows x cols grid, nodes in row-major order.
inline LatticeGraph grid_graph(int rows, int cols) {
  require(rows > 0 && cols > 0, Error::Kind::invalid_argument, "grid dimensions must be positive");
  LatticeGraph g;
  g.n = rows * cols;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int id = r * cols + c;
      if (c + 1 < cols) g.edges.emplace_back(id, id + 1);
      if (r + 1 < rows) g.edges.emplace_back(id, id + cols);
    }
  }
  return g;
}

inline MatrixXd adjacency_matrix(const LatticeGraph& g) {
  validate_graph(g);
  MatrixXd a = MatrixXd::Zero(g.n, g.n);
  for (const auto& [i, j] : g.edges) {
    a(i, j) = 1.0;
    a(j, i) = 1.0;
  }
  return a;
}

// Q = diag(A 1) - A. Entries are small integers, so Q 1 = 0 holds exactly.
inline Eigen::SparseMatrix<double> icar_precision(const LatticeGraph& g) {
  validate_graph(g);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(4 * g.edges.size() + g.n);
  std::vector<double> degree(g.n, 0.0);
  for (const auto& [i, j] : g.edges) {
    degree[i] += 1.0;
    degree[j] += 1.0;
    trip.emplace_back(i, j, -1.0);
    trip.emplace_back(j, i, -1.0);
  }
  for (int i = 0; i < g.n; ++i) trip.emplace_back(i, i, degree[i]);
  Eigen::SparseMatrix<double> q(g.n, g.n);
  q.setFromTriplets(trip.begin(), trip.end());
  return q;
}

// Edge-list text format: one "i j" pair per line, 0-based, each undirected
// pair listed once. '#' starts a comment line.
inline LatticeGraph read_edge_list(const std::string& path, int n) {
  std::ifstream in(path);
  require(in.good(), Error::Kind::io, "cannot open edge list: " + path);
  LatticeGraph g;
  g.n = n;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    long i = -1, j = -1;
    ss >> i >> j;
    require(!ss.fail(), Error::Kind::data,
            path + ":" + std::to_string(lineno) + ": expected two integers");
    g.edges.emplace_back(static_cast<int>(i), static_cast<int>(j));
  }
  validate_graph(g);
  return g;
}

inline void write_edge_list(const LatticeGraph& g, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), Error::Kind::io, "cannot write edge list: " + path);
  for (const auto& [i, j] : g.edges) out << i << " " << j << "\n";
}

}  // namespace sglmm
