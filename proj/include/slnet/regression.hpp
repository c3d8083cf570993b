#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "slnet/util.hpp"

namespace slnet {

// Multivariate series; row t (0-based) holds y(t+1)'.
struct TimeSeries {
  Mat values;  // N x m
  std::uint64_t seed = 0;

  TimeSeries() = default;
  TimeSeries(Eigen::Index N, Eigen::Index m) : values(Mat::Zero(N, m)) {}

  Eigen::Index m() const { return values.cols(); }
  Eigen::Index N() const { return values.rows(); }

  double& operator()(Eigen::Index t, Eigen::Index i) { return values(t, i); }
  double operator()(Eigen::Index t, Eigen::Index i) const { return values(t, i); }
};

// Layout of the stacked coefficient vector theta (length m^2 T): block (i,j)
// holds the T impulse-response coefficients of entry (i,j), blocks ordered
// (1,1),...,(1,m),(2,1),...,(m,m).  Indices here are 0-based.
struct ThetaLayout {
  int m = 0;
  int T = 0;

  int block(int i, int j) const { return i * m + j; }
  int offset(int i, int j, int k) const { return block(i, j) * T + k; }
  int dim() const { return m * m * T; }

  bool operator==(const ThetaLayout&) const = default;
};

// Stacked outputs over the usable range t = T+1..N, component-major: all of
// component 1, then component 2, ...
struct StackedData {
  Vec y;  // length m * n_prime
  int m = 0;
  int n_prime = 0;
};

// Psi holds one row per usable time index; row for time t is
// [y_1(t-1)..y_1(t-T), y_2(t-1)..y_2(t-T), ...].  The full regressor
// I_m (x) Psi is never formed outside tests.
struct Regressor {
  Mat Psi;  // n_prime x (m T)
  int m = 0;
  int T = 0;
  int n_prime = 0;
};

inline StackedData stack_outputs(const TimeSeries& ts, int T) {
  const int m = static_cast<int>(ts.m());
  const int N = static_cast<int>(ts.N());
  if (N <= T) throw std::invalid_argument("stack_outputs: need N > T");
  const int np = N - T;
  StackedData out;
  out.m = m;
  out.n_prime = np;
  out.y.resize(static_cast<Eigen::Index>(m) * np);
  for (int i = 0; i < m; ++i)
    for (int tau = 0; tau < np; ++tau)
      out.y(static_cast<Eigen::Index>(i) * np + tau) = ts.values(T + tau, i);
  return out;
}

inline Regressor build_regressor(const TimeSeries& ts, int T) {
  const int m = static_cast<int>(ts.m());
  const int N = static_cast<int>(ts.N());
  if (N <= T) throw std::invalid_argument("build_regressor: need N > T");
  const int np = N - T;
  Regressor reg;
  reg.m = m;
  reg.T = T;
  reg.n_prime = np;
  reg.Psi.resize(np, static_cast<Eigen::Index>(m) * T);
  for (int tau = 0; tau < np; ++tau) {
    // row for time t = T+1+tau (1-based); lag k entry is y_j(t-k)
    for (int j = 0; j < m; ++j)
      for (int k = 0; k < T; ++k)
        reg.Psi(tau, static_cast<Eigen::Index>(j) * T + k) =
            ts.values(T + tau - 1 - k, j);
  }
  return reg;
}

// theta reshaped so that column i stacks g^{[i1]},...,g^{[im]}; then
// Psi * theta_matrix gives the predictions componentwise.
inline Mat theta_to_matrix(const Vec& theta, const ThetaLayout& layout) {
  if (theta.size() != layout.dim())
    throw std::invalid_argument("theta_to_matrix: length mismatch");
  Mat out(static_cast<Eigen::Index>(layout.m) * layout.T, layout.m);
  for (int i = 0; i < layout.m; ++i)
    out.col(i) = theta.segment(static_cast<Eigen::Index>(i) * layout.m * layout.T,
                               static_cast<Eigen::Index>(layout.m) * layout.T);
  return out;
}

inline Vec matrix_to_theta(const Mat& theta_mat, const ThetaLayout& layout) {
  Vec theta(layout.dim());
  for (int i = 0; i < layout.m; ++i)
    theta.segment(static_cast<Eigen::Index>(i) * layout.m * layout.T,
                  static_cast<Eigen::Index>(layout.m) * layout.T) = theta_mat.col(i);
  return theta;
}

// One-step-ahead predictions over the usable range, n_prime x m.
inline Mat predict(const Regressor& reg, const Vec& theta) {
  const ThetaLayout layout{reg.m, reg.T};
  return reg.Psi * theta_to_matrix(theta, layout);
}

inline std::vector<Mat> unstack_theta(const Vec& theta, const ThetaLayout& layout) {
  if (theta.size() != layout.dim())
    throw std::invalid_argument("unstack_theta: length mismatch");
  std::vector<Mat> G(static_cast<std::size_t>(layout.T),
                     Mat::Zero(layout.m, layout.m));
  for (int i = 0; i < layout.m; ++i)
    for (int j = 0; j < layout.m; ++j)
      for (int k = 0; k < layout.T; ++k)
        G[static_cast<std::size_t>(k)](i, j) = theta(layout.offset(i, j, k));
  return G;
}

inline Vec stack_theta(const std::vector<Mat>& G, const ThetaLayout& layout) {
  if (static_cast<int>(G.size()) != layout.T)
    throw std::invalid_argument("stack_theta: lag count mismatch");
  Vec theta(layout.dim());
  for (int i = 0; i < layout.m; ++i)
    for (int j = 0; j < layout.m; ++j)
      for (int k = 0; k < layout.T; ++k)
        theta(layout.offset(i, j, k)) = G[static_cast<std::size_t>(k)](i, j);
  return theta;
}

// Phi' u for a stacked vector u, exploiting Phi = I_m (x) Psi.
inline Vec phi_transpose_apply(const Regressor& reg, const Vec& u) {
  const Eigen::Index np = reg.n_prime;
  const Eigen::Index mt = static_cast<Eigen::Index>(reg.m) * reg.T;
  if (u.size() != static_cast<Eigen::Index>(reg.m) * np)
    throw std::invalid_argument("phi_transpose_apply: length mismatch");
  Vec out(static_cast<Eigen::Index>(reg.m) * mt);
  for (int i = 0; i < reg.m; ++i)
    out.segment(i * mt, mt).noalias() = reg.Psi.transpose() * u.segment(i * np, np);
  return out;
}

// || y - Phi theta ||^2 weighted by Sigma^{-1} (x) I, computed blockwise.
inline double weighted_residual_sq(const StackedData& data, const Regressor& reg,
                                   const Vec& theta, const Mat& sigma_inv) {
  const Eigen::Index np = reg.n_prime;
  Mat resid(np, reg.m);
  const Mat yhat = predict(reg, theta);
  for (int i = 0; i < reg.m; ++i)
    resid.col(i) = data.y.segment(i * np, np) - yhat.col(i);
  return (resid * sigma_inv).cwiseProduct(resid).sum();
}

}  // namespace slnet
