#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "slnet/estimator.hpp"
#include "slnet/hyperloop.hpp"
#include "slnet/likelihood.hpp"
#include "slnet/model_sim.hpp"
#include "slnet/regression.hpp"

// File formats used by the command line tools.  Matrices are stored as nested
// row-major arrays; every reader validates shape before touching values.

namespace slnet {
namespace io {

using nlohmann::json;

inline json mat_to_json(const Mat& a) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < a.cols(); ++j) row.push_back(a(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Mat mat_from_json(const json& j, Eigen::Index rows = -1, Eigen::Index cols = -1) {
  if (!j.is_array()) throw std::invalid_argument("matrix field is not an array");
  const Eigen::Index r = static_cast<Eigen::Index>(j.size());
  Eigen::Index c = 0;
  if (r > 0) {
    if (!j[0].is_array()) throw std::invalid_argument("matrix rows must be arrays");
    c = static_cast<Eigen::Index>(j[0].size());
  } else if (cols >= 0) {
    c = cols;
  }
  if ((rows >= 0 && r != rows) || (cols >= 0 && c != cols))
    throw std::invalid_argument("matrix has unexpected shape");
  Mat a(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    if (static_cast<Eigen::Index>(j[i].size()) != c)
      throw std::invalid_argument("ragged matrix rows");
    for (Eigen::Index k = 0; k < c; ++k) a(i, k) = j[i][k].get<double>();
  }
  return a;
}

inline json vec_to_json(const Vec& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline Vec vec_from_json(const json& j, Eigen::Index size = -1) {
  if (!j.is_array()) throw std::invalid_argument("vector field is not an array");
  if (size >= 0 && static_cast<Eigen::Index>(j.size()) != size)
    throw std::invalid_argument("vector has unexpected length");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = j[i].get<double>();
  return v;
}

inline json model_to_json(const GroundTruthModel& model) {
  json j;
  j["m"] = model.m;
  j["n"] = model.n;
  j["T_true"] = model.T_true;
  j["decay"] = model.decay;
  j["seed"] = model.seed;
  json s = json::array();
  for (const Mat& Sk : model.S_coeffs) s.push_back(mat_to_json(Sk));
  j["S_coeffs"] = std::move(s);
  j["F"] = mat_to_json(model.F);
  json h = json::array();
  for (const Mat& Hk : model.H_coeffs) h.push_back(mat_to_json(Hk));
  j["H_coeffs"] = std::move(h);
  j["Sigma_v"] = mat_to_json(model.Sigma_v);
  j["Sigma_w"] = mat_to_json(model.Sigma_w);
  json supp = json::array();
  for (const auto& [i, jj] : model.sparsity_support) supp.push_back(json::array({i, jj}));
  j["sparsity_support"] = std::move(supp);
  return j;
}

inline GroundTruthModel model_from_json(const json& j) {
  GroundTruthModel model;
  model.m = j.at("m").get<int>();
  model.n = j.at("n").get<int>();
  model.T_true = j.at("T_true").get<int>();
  model.decay = j.at("decay").get<double>();
  model.seed = j.at("seed").get<std::uint64_t>();
  for (const json& sk : j.at("S_coeffs"))
    model.S_coeffs.push_back(mat_from_json(sk, model.m, model.m));
  model.F = mat_from_json(j.at("F"), model.m, model.n);
  for (const json& hk : j.at("H_coeffs"))
    model.H_coeffs.push_back(mat_from_json(hk, model.n, model.m));
  if (static_cast<int>(model.S_coeffs.size()) != model.T_true ||
      static_cast<int>(model.H_coeffs.size()) != model.T_true)
    throw std::invalid_argument("model file: coefficient count does not match T_true");
  model.Sigma_v = mat_from_json(j.at("Sigma_v"), model.m, model.m);
  model.Sigma_w = mat_from_json(j.at("Sigma_w"), model.n, model.n);
  for (const json& p : j.at("sparsity_support"))
    model.sparsity_support.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
  return model;
}

inline json hyper_to_json(const HyperState& hyper) {
  json j;
  j["c"] = hyper.ktilde.c;
  j["lambda"] = hyper.ktilde.lambda;
  j["T"] = hyper.ktilde.T;
  j["gamma"] = vec_to_json(hyper.gamma);
  j["alpha"] = hyper.alpha;
  j["beta"] = vec_to_json(hyper.beta);
  j["U"] = mat_to_json(hyper.U);
  return j;
}

inline HyperState hyper_from_json(const json& j) {
  HyperState hyper;
  hyper.ktilde = tc_kernel(j.at("c").get<double>(), j.at("lambda").get<double>(),
                           j.at("T").get<int>());
  hyper.gamma = vec_from_json(j.at("gamma"));
  hyper.alpha = j.at("alpha").get<double>();
  hyper.beta = vec_from_json(j.at("beta"));
  hyper.U = mat_from_json(j.at("U"));
  const int m = static_cast<int>(hyper.U.rows());
  if (m * m != static_cast<int>(hyper.gamma.size()) ||
      hyper.beta.size() != hyper.U.cols())
    throw std::invalid_argument("hyper file: inconsistent dimensions");
  return hyper;
}

inline json estimate_to_json(const PredictorEstimate& est) {
  json j;
  j["m"] = est.layout.m;
  j["T"] = est.layout.T;
  j["theta_s"] = vec_to_json(est.theta_s);
  j["theta_l"] = vec_to_json(est.theta_l);
  j["sigma"] = mat_to_json(est.sigma);
  j["diagnostics"] = {{"rel_residual", est.diagnostics.rel_residual},
                      {"jitter", est.diagnostics.jitter}};
  return j;
}

inline PredictorEstimate estimate_from_json(const json& j) {
  PredictorEstimate est;
  est.layout = ThetaLayout{j.at("m").get<int>(), j.at("T").get<int>()};
  const Eigen::Index d = est.layout.dim();
  est.theta_s = vec_from_json(j.at("theta_s"), d);
  est.theta_l = vec_from_json(j.at("theta_l"), d);
  est.sigma = mat_from_json(j.at("sigma"), est.layout.m, est.layout.m);
  if (j.contains("diagnostics")) {
    est.diagnostics.rel_residual = j["diagnostics"].value("rel_residual", 0.0);
    est.diagnostics.jitter = j["diagnostics"].value("jitter", 0.0);
  }
  return est;
}

inline json report_to_json(const Algorithm1Report& report) {
  json per_rank = json::array();
  for (const RankRecord& rec : report.per_rank)
    per_rank.push_back({{"r", rec.r},
                        {"ell_best", rec.ell_best},
                        {"inner_iters", rec.inner_iters},
                        {"sgp_iters", rec.sgp_iters}});
  return json{{"per_rank", std::move(per_rank)},
              {"selected_r", report.selected_r},
              {"wallclock_s", report.wallclock_s}};
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_json(const std::string& path, const json& j) {
  write_text(path, j.dump(2) + "\n");
}

inline json read_json(const std::string& path) {
  return json::parse(read_text(path));
}

// CSV with a "t,y1,...,ym" header; rows are 1-based time then the m channel
// values.  Leading "# key=value" lines carry provenance and are skipped on
// read (the seed line is recovered when present).
inline void write_timeseries_csv(const std::string& path, const TimeSeries& ts,
                                 const std::vector<std::string>& comments = {}) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (const std::string& c : comments) out << "# " << c << "\n";
  out << "# seed=" << ts.seed << "\n";
  out << "t";
  for (int j = 0; j < ts.m(); ++j) out << ",y" << j + 1;
  out << "\n";
  for (int t = 0; t < ts.N(); ++t) {
    out << t + 1;
    for (int j = 0; j < ts.m(); ++j) out << "," << ts.values(t, j);
    out << "\n";
  }
  write_text(path, out.str());
}

inline TimeSeries read_timeseries_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string line;
  TimeSeries ts;
  ts.seed = 0;
  std::vector<std::vector<double>> rows;
  int cols = -1;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find("seed=");
      if (eq != std::string::npos)
        ts.seed = std::stoull(line.substr(eq + 5));
      continue;
    }
    if (!header_seen) {
      header_seen = true;  // "t,y1,..." header row
      continue;
    }
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool first = true;
    while (std::getline(ss, cell, ',')) {
      if (first) {
        first = false;  // time index column
        continue;
      }
      row.push_back(std::stod(cell));
    }
    if (cols < 0) cols = static_cast<int>(row.size());
    if (static_cast<int>(row.size()) != cols)
      throw std::runtime_error("ragged row in " + path);
    rows.push_back(std::move(row));
  }
  if (rows.empty() || cols <= 0) throw std::runtime_error("no data rows in " + path);
  ts.values.resize(static_cast<Eigen::Index>(rows.size()), cols);
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (int j = 0; j < cols; ++j) ts.values(static_cast<Eigen::Index>(t), j) = rows[t][j];
  return ts;
}

inline void write_trace_csv(const std::string& path, const std::vector<SgpTraceRow>& trace) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "iter,objective,step,kkt_residual\n";
  for (const SgpTraceRow& row : trace)
    out << row.iter << "," << row.objective << "," << row.step << "," << row.kkt << "\n";
  write_text(path, out.str());
}

}  // namespace io
}  // namespace slnet
