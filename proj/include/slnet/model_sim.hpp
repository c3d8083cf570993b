#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "slnet/estimator.hpp"
#include "slnet/linalg.hpp"
#include "slnet/regression.hpp"
#include "slnet/util.hpp"

namespace slnet {

// Ground-truth model y(t) = S(z) y(t) + F x(t) + v(t), x(t) = H(z) y(t) + w(t),
// with FIR transfer functions of length T_true.  The one-step predictor
// coefficients are G_k = S_k + F H_k.
struct GroundTruthModel {
  int m = 0;
  int n = 0;
  int T_true = 0;
  std::vector<Mat> S_coeffs;            // T_true matrices, m x m
  Mat F;                                // m x n
  std::vector<Mat> H_coeffs;            // T_true matrices, n x m
  Mat Sigma_v;                          // m x m SPD
  Mat Sigma_w;                          // n x n SPD
  std::vector<std::pair<int, int>> sparsity_support;  // 0-based (i,j)
  std::uint64_t seed = 0;
  double decay = 0.0;

  Mat innovation_cov() const {
    Mat sigma = Sigma_v;
    if (n > 0) sigma += F * Sigma_w * F.transpose();
    return sigma;
  }

  std::vector<Mat> predictor_coeffs() const {
    std::vector<Mat> G(S_coeffs.begin(), S_coeffs.end());
    for (int k = 0; k < T_true; ++k)
      if (n > 0) G[static_cast<std::size_t>(k)] += F * H_coeffs[static_cast<std::size_t>(k)];
    return G;
  }
};

namespace detail {

inline Mat random_spd(int d, RandomStream& rng) {
  if (d == 0) return Mat(0, 0);
  const Mat a = rng.normal_matrix(d, d);
  return (a * a.transpose() + static_cast<double>(d) * Mat::Identity(d, d)) /
         (2.0 * d);
}

}  // namespace detail

// Random stable S+L ground truth: nnz_s sparse entries placed off-diagonal
// first (spilling onto the diagonal only when nnz_s > m(m-1)), coefficients
// decaying geometrically per lag, whole predictor rescaled by 0.9 until the
// companion spectral radius is at most 0.95.
inline GroundTruthModel generate_sl_model(int m, int n, int nnz_s, int T_true,
                                          double decay, std::uint64_t seed) {
  if (m <= 0) throw std::invalid_argument("generate_sl_model: m must be positive");
  if (n < 0 || n >= m) throw std::invalid_argument("generate_sl_model: need 0 <= n < m");
  if (nnz_s < 0 || nnz_s > m * m)
    throw std::invalid_argument("generate_sl_model: need 0 <= nnz_s <= m^2");
  if (T_true <= 0) throw std::invalid_argument("generate_sl_model: T_true must be positive");
  if (!(decay > 0.0 && decay < 1.0))
    throw std::invalid_argument("generate_sl_model: decay must be in (0,1)");

  RandomStream rng(seed);
  GroundTruthModel model;
  model.m = m;
  model.n = n;
  model.T_true = T_true;
  model.seed = seed;
  model.decay = decay;

  std::vector<std::pair<int, int>> off_diag, diag;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) (i == j ? diag : off_diag).emplace_back(i, j);
  rng.shuffle(off_diag);
  rng.shuffle(diag);
  for (int k = 0; k < nnz_s; ++k)
    model.sparsity_support.push_back(
        k < static_cast<int>(off_diag.size())
            ? off_diag[static_cast<std::size_t>(k)]
            : diag[static_cast<std::size_t>(k) - off_diag.size()]);
  std::sort(model.sparsity_support.begin(), model.sparsity_support.end());

  model.S_coeffs.assign(static_cast<std::size_t>(T_true), Mat::Zero(m, m));
  for (const auto& [i, j] : model.sparsity_support) {
    double scale = rng.normal();
    if (std::abs(scale) < 0.3) scale = scale < 0 ? -0.3 : 0.3;  // keep edges visible
    for (int k = 0; k < T_true; ++k)
      model.S_coeffs[static_cast<std::size_t>(k)](i, j) =
          (scale + 0.5 * rng.normal()) * std::pow(decay, k + 1);
  }

  model.F = rng.normal_matrix(m, n);
  model.H_coeffs.assign(static_cast<std::size_t>(T_true), Mat::Zero(n, m));
  for (int k = 0; k < T_true; ++k)
    model.H_coeffs[static_cast<std::size_t>(k)] =
        rng.normal_matrix(n, m) * std::pow(decay, k + 1);

  model.Sigma_v = detail::random_spd(m, rng);
  model.Sigma_w = detail::random_spd(n, rng);

  int retries = 0;
  while (companion_spectral_radius(model.predictor_coeffs()) > 0.95) {
    if (++retries > 200)
      throw std::runtime_error("generate_sl_model: could not stabilize draw; reseed");
    for (auto& s : model.S_coeffs) s *= 0.9;
    for (auto& h : model.H_coeffs) h *= 0.9;
  }
  return model;
}

// Simulate y(t) = sum_k G_k y(t-k) + e(t), e ~ N(0, Sigma_v + F Sigma_w F'),
// discarding burn_in samples.  burn_in < 0 means the default 10 * T_true.
inline TimeSeries simulate(const GroundTruthModel& model, int N, std::uint64_t seed,
                           int burn_in = -1) {
  if (N <= 0) throw std::invalid_argument("simulate: N must be positive");
  if (burn_in < 0) burn_in = 10 * model.T_true;
  if (burn_in < model.T_true)
    throw std::invalid_argument("simulate: burn_in must cover T_true lags");

  const int m = model.m;
  const std::vector<Mat> G = model.predictor_coeffs();
  const Mat noise_chol = Eigen::LLT<Mat>(model.innovation_cov()).matrixL();

  RandomStream rng(seed);
  const int total = burn_in + N;
  Mat y = Mat::Zero(total, m);
  Vec acc(m);
  for (int t = 0; t < total; ++t) {
    acc.noalias() = noise_chol * rng.normal_vector(m);
    for (int k = 1; k <= model.T_true && k <= t; ++k)
      acc.noalias() += G[static_cast<std::size_t>(k - 1)] * y.row(t - k).transpose();
    if (!acc.allFinite() || acc.cwiseAbs().maxCoeff() > 1e12)
      throw std::runtime_error("simulate: trajectory diverged (unstable model?)");
    y.row(t) = acc.transpose();
  }

  TimeSeries ts;
  ts.values = y.bottomRows(N);
  ts.seed = seed;
  return ts;
}

// The exact one-step predictor of the model, stacked with truncation T_out
// (zero-padded beyond T_true; T_out < 0 means T_true).
inline PredictorEstimate true_predictor(const GroundTruthModel& model, int T_out = -1) {
  if (T_out < 0) T_out = model.T_true;
  const ThetaLayout layout{model.m, T_out};
  PredictorEstimate est;
  est.layout = layout;
  est.sigma = model.innovation_cov();
  est.theta_s = Vec::Zero(layout.dim());
  est.theta_l = Vec::Zero(layout.dim());
  for (int k = 0; k < std::min(T_out, model.T_true); ++k) {
    const Mat& S = model.S_coeffs[static_cast<std::size_t>(k)];
    const Mat L = model.n > 0
                      ? Mat(model.F * model.H_coeffs[static_cast<std::size_t>(k)])
                      : Mat(Mat::Zero(model.m, model.m));
    for (int i = 0; i < model.m; ++i)
      for (int j = 0; j < model.m; ++j) {
        est.theta_s(layout.offset(i, j, k)) = S(i, j);
        est.theta_l(layout.offset(i, j, k)) = L(i, j);
      }
  }
  return est;
}

}  // namespace slnet
