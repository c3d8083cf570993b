#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "slnet/estimator.hpp"
#include "slnet/regression.hpp"

namespace slnet {

// Sparse-layer support: block (i,j) is an edge j -> i when its coefficient
// norm clears rel_threshold times the largest block norm.  Exact-zero blocks
// (truncated gamma) never appear.
inline std::vector<std::pair<int, int>> support(const PredictorEstimate& est,
                                                double rel_threshold = 0.05) {
  if (rel_threshold < 0.0 || rel_threshold >= 1.0)
    throw std::invalid_argument("support: rel_threshold must be in [0,1)");
  const ThetaLayout& lay = est.layout;
  Mat norms(lay.m, lay.m);
  for (int i = 0; i < lay.m; ++i)
    for (int j = 0; j < lay.m; ++j)
      norms(i, j) = est.theta_s.segment(lay.offset(i, j, 0), lay.T).norm();
  const double cut = rel_threshold * norms.maxCoeff();
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < lay.m; ++i)
    for (int j = 0; j < lay.m; ++j)
      if (norms(i, j) > cut && norms(i, j) > 0.0) edges.emplace_back(i, j);
  return edges;
}

struct AcRun {
  int support_size = 0;
  int r = 0;
  int m = 0;
  int T = 0;
};

// Free parameters of one S+L predictor: T per sparse edge, plus the rank-r
// latent part (H coefficients and F entries).
inline double ac_contribution(const AcRun& run) {
  const double n_sl = static_cast<double>(run.T) * run.support_size +
                      static_cast<double>(run.r) * run.m * run.T +
                      static_cast<double>(run.r) * run.m;
  return 100.0 * n_sl / (static_cast<double>(run.m) * run.m * run.T);
}

inline double ac(const std::vector<AcRun>& runs) {
  if (runs.empty()) throw std::invalid_argument("ac: no runs");
  double sum = 0.0;
  for (const AcRun& run : runs) sum += ac_contribution(run);
  return sum / static_cast<double>(runs.size());
}

// One-step coefficient of determination on a test series, in percent.
// Predictions cover t = T+1..N; the mean baseline uses the whole test set.
inline double cod(const TimeSeries& test, const PredictorEstimate& predictor) {
  const int T = predictor.layout.T;
  if (static_cast<int>(test.N()) <= T)
    throw std::invalid_argument("cod: test series not longer than T");
  const Regressor reg = build_regressor(test, T);
  const Mat yhat = predict(reg, predictor.theta());
  const Eigen::RowVectorXd ybar = test.values.colwise().mean();

  double num = 0.0, den = 0.0;
  for (int tau = 0; tau < reg.n_prime; ++tau) {
    num += (test.values.row(T + tau) - yhat.row(tau)).squaredNorm();
    den += (test.values.row(T + tau) - ybar).squaredNorm();
  }
  if (den <= 0.0) throw std::invalid_argument("cod: constant test data");
  return 100.0 * (1.0 - num / den);
}

namespace detail {

inline std::vector<Mat> pad_coeffs(const std::vector<Mat>& G, int T) {
  std::vector<Mat> out(static_cast<std::size_t>(T),
                       Mat::Zero(G.empty() ? 0 : G[0].rows(), G.empty() ? 0 : G[0].cols()));
  for (std::size_t k = 0; k < G.size() && k < static_cast<std::size_t>(T); ++k)
    out[k] = G[k];
  return out;
}

}  // namespace detail

// Average impulse-response fit over a run ensemble, in percent.  Per-run
// squared errors are summed over lags; the baseline is the ensemble mean
// coefficient sequence.  Runs with different truncations are zero-padded.
inline double airf(const std::vector<std::vector<Mat>>& true_coeffs,
                   const std::vector<std::vector<Mat>>& est_coeffs) {
  if (true_coeffs.empty() || true_coeffs.size() != est_coeffs.size())
    throw std::invalid_argument("airf: run count mismatch");
  const std::size_t R = true_coeffs.size();
  int T = 0;
  for (const auto& G : true_coeffs) T = std::max(T, static_cast<int>(G.size()));
  for (const auto& G : est_coeffs) T = std::max(T, static_cast<int>(G.size()));

  std::vector<std::vector<Mat>> Gt, Ge;
  Gt.reserve(R);
  Ge.reserve(R);
  for (std::size_t k = 0; k < R; ++k) {
    Gt.push_back(detail::pad_coeffs(true_coeffs[k], T));
    Ge.push_back(detail::pad_coeffs(est_coeffs[k], T));
  }

  std::vector<Mat> Gbar(static_cast<std::size_t>(T), Mat::Zero(Gt[0][0].rows(), Gt[0][0].cols()));
  for (std::size_t k = 0; k < R; ++k)
    for (int l = 0; l < T; ++l) Gbar[static_cast<std::size_t>(l)] += Gt[k][static_cast<std::size_t>(l)];
  for (int l = 0; l < T; ++l) Gbar[static_cast<std::size_t>(l)] /= static_cast<double>(R);

  double err = 0.0, base = 0.0, energy = 0.0;
  for (std::size_t k = 0; k < R; ++k)
    for (int l = 0; l < T; ++l) {
      err += (Gt[k][static_cast<std::size_t>(l)] - Ge[k][static_cast<std::size_t>(l)]).squaredNorm();
      base += (Gt[k][static_cast<std::size_t>(l)] - Gbar[static_cast<std::size_t>(l)]).squaredNorm();
      energy += Gt[k][static_cast<std::size_t>(l)].squaredNorm();
    }
  // Dispersion at rounding-noise level relative to the ensemble energy makes
  // the score meaningless, not merely extreme.
  if (base <= 1e-12 * energy)
    throw std::invalid_argument("airf: degenerate ensemble (all runs identical)");
  return 100.0 * (1.0 - err / base);
}

// Per-run fits against the same ensemble-mean baseline; medians of these are
// the box-plot statistics.
inline std::vector<double> airf_per_run(const std::vector<std::vector<Mat>>& true_coeffs,
                                        const std::vector<std::vector<Mat>>& est_coeffs) {
  if (true_coeffs.empty() || true_coeffs.size() != est_coeffs.size())
    throw std::invalid_argument("airf_per_run: run count mismatch");
  const std::size_t R = true_coeffs.size();
  int T = 0;
  for (const auto& G : true_coeffs) T = std::max(T, static_cast<int>(G.size()));
  for (const auto& G : est_coeffs) T = std::max(T, static_cast<int>(G.size()));

  std::vector<std::vector<Mat>> Gt, Ge;
  for (std::size_t k = 0; k < R; ++k) {
    Gt.push_back(detail::pad_coeffs(true_coeffs[k], T));
    Ge.push_back(detail::pad_coeffs(est_coeffs[k], T));
  }
  std::vector<Mat> Gbar(static_cast<std::size_t>(T), Mat::Zero(Gt[0][0].rows(), Gt[0][0].cols()));
  for (std::size_t k = 0; k < R; ++k)
    for (int l = 0; l < T; ++l) Gbar[static_cast<std::size_t>(l)] += Gt[k][static_cast<std::size_t>(l)];
  for (int l = 0; l < T; ++l) Gbar[static_cast<std::size_t>(l)] /= static_cast<double>(R);

  std::vector<double> out(R);
  for (std::size_t k = 0; k < R; ++k) {
    double err = 0.0, base = 0.0, energy = 0.0;
    for (int l = 0; l < T; ++l) {
      err += (Gt[k][static_cast<std::size_t>(l)] - Ge[k][static_cast<std::size_t>(l)]).squaredNorm();
      base += (Gt[k][static_cast<std::size_t>(l)] - Gbar[static_cast<std::size_t>(l)]).squaredNorm();
      energy += Gt[k][static_cast<std::size_t>(l)].squaredNorm();
    }
    if (base <= 1e-12 * energy)
      throw std::invalid_argument("airf_per_run: run coincides with the ensemble mean");
    out[k] = 100.0 * (1.0 - err / base);
  }
  return out;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median: empty");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double quartile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("quartile: empty");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// Two-layer Granger network: manifest edges from the sparse support, every
// manifest node attached to every latent node.
struct NetworkGraph {
  int m = 0;
  int r = 0;
  std::vector<std::pair<int, int>> manifest_edges;  // (i,j): y_j -> y_i
};

inline NetworkGraph network_from_estimate(const PredictorEstimate& est, int r,
                                          double rel_threshold = 0.05) {
  NetworkGraph g;
  g.m = est.layout.m;
  g.r = r;
  g.manifest_edges = support(est, rel_threshold);
  return g;
}

struct NetworkDocument {
  std::string json;
  std::string dot;
};

inline NetworkDocument export_network(const NetworkGraph& g) {
  std::ostringstream js;
  js << "{\n  \"manifest_nodes\": [";
  for (int i = 0; i < g.m; ++i) js << (i ? ", " : "") << "\"y" << i + 1 << "\"";
  js << "],\n  \"latent_nodes\": [";
  for (int q = 0; q < g.r; ++q) js << (q ? ", " : "") << "\"z" << q + 1 << "\"";
  js << "],\n  \"edges\": [";
  for (std::size_t e = 0; e < g.manifest_edges.size(); ++e) {
    const auto& [i, j] = g.manifest_edges[e];
    js << (e ? ", " : "") << "{\"from\": \"y" << j + 1 << "\", \"to\": \"y" << i + 1 << "\"}";
  }
  js << "],\n  \"latent_edges\": [";
  bool first = true;
  for (int q = 0; q < g.r; ++q)
    for (int i = 0; i < g.m; ++i) {
      if (!first) js << ", ";
      first = false;
      js << "{\"latent\": \"z" << q + 1 << "\", \"manifest\": \"y" << i + 1 << "\"}";
    }
  js << "]\n}\n";

  std::ostringstream dot;
  dot << "digraph granger {\n  rankdir=BT;\n";
  dot << "  subgraph cluster_manifest {\n    label=\"manifest\";\n";
  for (int i = 0; i < g.m; ++i) dot << "    y" << i + 1 << " [shape=circle];\n";
  dot << "  }\n";
  if (g.r > 0) {
    dot << "  subgraph cluster_latent {\n    label=\"latent\";\n    rank=same;\n";
    for (int q = 0; q < g.r; ++q) dot << "    z" << q + 1 << " [shape=diamond];\n";
    dot << "  }\n";
  }
  for (const auto& [i, j] : g.manifest_edges)
    dot << "  y" << j + 1 << " -> y" << i + 1 << ";\n";
  for (int q = 0; q < g.r; ++q)
    for (int i = 0; i < g.m; ++i)
      dot << "  z" << q + 1 << " -> y" << i + 1 << " [dir=both, style=dashed];\n";
  dot << "}\n";

  return NetworkDocument{js.str(), dot.str()};
}

}  // namespace slnet
