#pragma once

#include "sglmm/bootstrap.hpp"
#include "sglmm/core.hpp"
#include "sglmm/em_common.hpp"
#include "sglmm/simulate.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace sglmm {

using json = nlohmann::json;

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    size_t lead = 0;
    while (lead < cell.size() && cell[lead] == ' ') ++lead;
    out.push_back(cell.substr(lead));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_cell(const std::string& cell, const std::string& path, int lineno,
                         const std::string& column) {
  try {
    size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    fail(Error::Kind::data, path + ":" + std::to_string(lineno) + ": non-numeric value '" +
                                cell + "' in column " + column);
  }
}

}  // namespace detail

// Continuous schema: columns x, y, z, optional offset, remaining columns are
// covariates. Lattice schema: node_id, z, optional offset, covariates, with
// the adjacency supplied as a separate edge list. Errors carry line numbers.
inline SpatialDataset ingest_dataset(const std::string& csv_path, Domain domain, Family family,
                                     const std::string& edges_path = "") {
  std::ifstream in(csv_path);
  require(in.good(), Error::Kind::io, "cannot open dataset: " + csv_path);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), Error::Kind::data,
          csv_path + ": empty file");
  const auto header = detail::split_csv_line(line);

  auto col_of = [&](const std::string& name) {
    for (size_t j = 0; j < header.size(); ++j)
      if (header[j] == name) return static_cast<int>(j);
    return -1;
  };
  std::vector<std::string> key_cols =
      domain == Domain::continuous ? std::vector<std::string>{"x", "y", "z"}
                                   : std::vector<std::string>{"node_id", "z"};
  for (const auto& k : key_cols)
    require(col_of(k) >= 0, Error::Kind::data, csv_path + ": missing required column '" + k + "'");
  const int offset_col = col_of("offset");

  std::vector<int> cov_cols;
  std::vector<std::string> cov_names;
  for (size_t j = 0; j < header.size(); ++j) {
    const std::string& h = header[j];
    bool is_key = h == "offset";
    for (const auto& k : key_cols) is_key = is_key || h == k;
    if (!is_key) {
      cov_cols.push_back(static_cast<int>(j));
      cov_names.push_back(h);
    }
  }

  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = detail::split_csv_line(line);
    require(cells.size() == header.size(), Error::Kind::data,
            csv_path + ":" + std::to_string(lineno) + ": expected " +
                std::to_string(header.size()) + " cells, found " + std::to_string(cells.size()));
    std::vector<double> row(cells.size());
    for (size_t j = 0; j < cells.size(); ++j)
      row[j] = detail::parse_cell(cells[j], csv_path, lineno, header[j]);
    rows.push_back(std::move(row));
  }
  const int n = static_cast<int>(rows.size());
  require(n > 0, Error::Kind::data, csv_path + ": no data rows");

  SpatialDataset ds;
  ds.domain = domain;
  ds.family = family;
  ds.z.resize(n);
  ds.offset = VectorXd::Zero(n);
  ds.X.resize(n, static_cast<int>(cov_cols.size()));
  ds.covariate_names = cov_names;

  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  if (domain == Domain::lattice) {
    const int id_col = col_of("node_id");
    std::vector<char> seen(n, 0);
    for (int i = 0; i < n; ++i) {
      const double idv = rows[i][id_col];
      require(idv >= 0 && idv < n && idv == std::floor(idv), Error::Kind::data,
              csv_path + ":" + std::to_string(i + 2) + ": node_id out of range");
      const int id = static_cast<int>(idv);
      require(!seen[id], Error::Kind::data,
              csv_path + ":" + std::to_string(i + 2) + ": duplicate node_id " +
                  std::to_string(id));
      seen[id] = 1;
      order[id] = i;
    }
  } else {
    ds.coords.resize(n, 2);
  }

  const int zcol = col_of("z");
  for (int i = 0; i < n; ++i) {
    const auto& row = rows[order[i]];
    const int src_line = order[i] + 2;
    ds.z[i] = row[zcol];
    if (family == Family::poisson_log) {
      require(ds.z[i] >= 0 && ds.z[i] == std::floor(ds.z[i]), Error::Kind::data,
              csv_path + ":" + std::to_string(src_line) + ": response must be a nonnegative count");
    } else {
      require(ds.z[i] == 0.0 || ds.z[i] == 1.0, Error::Kind::data,
              csv_path + ":" + std::to_string(src_line) + ": response must be 0 or 1");
    }
    if (offset_col >= 0) ds.offset[i] = row[offset_col];
    if (domain == Domain::continuous) {
      ds.coords(i, 0) = row[col_of("x")];
      ds.coords(i, 1) = row[col_of("y")];
    }
    for (size_t j = 0; j < cov_cols.size(); ++j) ds.X(i, static_cast<int>(j)) = row[cov_cols[j]];
  }

  if (domain == Domain::lattice) {
    require(!edges_path.empty(), Error::Kind::invalid_argument,
            "lattice dataset requires an edge-list file");
    ds.graph = read_edge_list(edges_path, n);
  }
  validate_dataset(ds);
  return ds;
}

inline void write_dataset_csv(const SpatialDataset& ds, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), Error::Kind::io, "cannot write dataset to " + path);
  out.precision(17);
  const bool has_offset = ds.offset.cwiseAbs().maxCoeff() > 0;
  if (ds.domain == Domain::continuous)
    out << "x,y,z";
  else
    out << "node_id,z";
  if (has_offset) out << ",offset";
  for (size_t j = 0; j < ds.covariate_names.size(); ++j) out << "," << ds.covariate_names[j];
  out << "\n";
  for (int i = 0; i < ds.n(); ++i) {
    if (ds.domain == Domain::continuous)
      out << ds.coords(i, 0) << "," << ds.coords(i, 1) << "," << ds.z[i];
    else
      out << i << "," << ds.z[i];
    if (has_offset) out << "," << ds.offset[i];
    for (int j = 0; j < ds.p(); ++j) out << "," << ds.X(i, j);
    out << "\n";
  }
}

// Sidecar with the latent truth per location.
inline void write_truth_csv(const VectorXd& w, const VectorXd& mu, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), Error::Kind::io, "cannot write truth to " + path);
  out.precision(17);
  out << "w,mu\n";
  for (Eigen::Index i = 0; i < w.size(); ++i) out << w[i] << "," << mu[i] << "\n";
}

inline json state_to_json(const ModelState& st) {
  json j;
  j["beta"] = std::vector<double>(st.beta.begin(), st.beta.end());
  if (st.domain == Domain::continuous) {
    j["sigma2"] = st.sigma2;
    j["phi"] = st.phi;
  } else {
    j["tau"] = st.tau;
  }
  return j;
}

// Standard errors from the inverse observed information; components with
// negative implied variance come back as NaN.
inline VectorXd observed_info_se(const MatrixXd& info) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(info);
  const auto dim = info.rows();
  VectorXd se(dim);
  if (es.info() != Eigen::Success) {
    se.setConstant(std::numeric_limits<double>::quiet_NaN());
    return se;
  }
  VectorXd inv_vals(dim);
  for (Eigen::Index i = 0; i < dim; ++i)
    inv_vals[i] = std::abs(es.eigenvalues()[i]) > 1e-300 ? 1.0 / es.eigenvalues()[i] : 0.0;
  const MatrixXd cov = es.eigenvectors() * inv_vals.asDiagonal() * es.eigenvectors().transpose();
  for (Eigen::Index i = 0; i < dim; ++i)
    se[i] = cov(i, i) > 0 ? std::sqrt(cov(i, i)) : std::numeric_limits<double>::quiet_NaN();
  return se;
}

inline json fit_report_json(const FitResult& fit, const SpatialDataset& data,
                            const BootstrapResult* boot = nullptr) {
  json rep;
  rep["schema"] = "sglmm-report/1";
  rep["version"] = kVersion;
  rep["algorithm"] = fit.algorithm;
  rep["domain"] = to_string(data.domain);
  rep["family"] = to_string(data.family);
  rep["n"] = data.n();
  rep["p"] = data.p();
  rep["rank"] = fit.basis.rank;
  rep["estimate"] = state_to_json(fit.estimate);

  const VectorXd se = observed_info_se(fit.observed_info);
  const VectorXd est = flatten_state(fit.estimate);
  json obs;
  obs["psd"] = fit.info_psd;
  std::vector<std::vector<double>> info_rows;
  for (Eigen::Index i = 0; i < fit.observed_info.rows(); ++i)
    info_rows.emplace_back(fit.observed_info.row(i).begin(), fit.observed_info.row(i).end());
  obs["matrix"] = info_rows;
  std::vector<json> ses, cis;
  for (Eigen::Index i = 0; i < se.size(); ++i) {
    ses.push_back(std::isfinite(se[i]) ? json(se[i]) : json(nullptr));
    if (std::isfinite(se[i]) && i < est.size()) {
      cis.push_back(json::array({est[i] - 1.96 * se[i], est[i] + 1.96 * se[i]}));
    } else {
      cis.push_back(json(nullptr));
    }
  }
  obs["se"] = ses;
  obs["ci95"] = cis;
  rep["observed_information"] = obs;

  if (boot != nullptr) {
    json b;
    b["replicates"] = boot->requested;
    b["failed"] = boot->failed;
    b["se"] = std::vector<double>(boot->se.begin(), boot->se.end());
    std::vector<std::vector<double>> cis_b;
    for (Eigen::Index i = 0; i < boot->ci.rows(); ++i)
      cis_b.push_back({boot->ci(i, 0), boot->ci(i, 1)});
    b["ci95"] = cis_b;
    std::vector<std::vector<double>> est_rows;
    for (Eigen::Index i = 0; i < boot->estimates.rows(); ++i)
      est_rows.emplace_back(boot->estimates.row(i).begin(), boot->estimates.row(i).end());
    b["estimates"] = est_rows;
    rep["bootstrap"] = b;
  }
  // bootstrap intervals track nominal coverage far better than the
  // observed-information ones, which run much too narrow here
  rep["interval_recommendation"] = "bootstrap";

  json stopping;
  stopping["reason"] = to_string(fit.stopped_by);
  stopping["iterations"] = static_cast<int>(fit.trace.size());
  if (!fit.trace.empty()) {
    stopping["final_k"] = fit.trace.back().k;
    stopping["final_dQ"] = fit.trace.back().dQ;
    stopping["final_ase"] = fit.trace.back().ase;
  }
  rep["stopping"] = stopping;
  rep["warnings"] = fit.warnings;
  rep["timing"] = json{{"wall_time_s", fit.wall_time_s}};
  return rep;
}

inline void write_json(const json& j, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), Error::Kind::io, "cannot write " + path);
  out << j.dump(2) << "\n";
}

inline json read_json(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), Error::Kind::io, "cannot read " + path);
  json j;
  in >> j;
  return j;
}

}  // namespace sglmm
