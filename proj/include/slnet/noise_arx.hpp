#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <stdexcept>

#include "slnet/regression.hpp"
#include "slnet/util.hpp"

namespace slnet {

struct SigmaEstimate {
  Mat Sigma;      // m x m, sample covariance of the residuals
  int arx_order = 0;
  Mat residuals;  // (N - order) x m

  // SPD version for use as a weight downstream.
  Mat regularized(double eps = 1e-8) const {
    const Eigen::Index m = Sigma.rows();
    return Sigma +
           eps * (Sigma.trace() / static_cast<double>(m)) * Mat::Identity(m, m);
  }
};

inline int default_arx_order(int N, int m, int T) {
  return std::max(1, std::min(2 * T, N / (4 * m)));
}

// Low-bias ARX fit: regress y(t) on [y(t-1) ... y(t-order)] by least squares
// (small ridge only on rank deficiency), innovation covariance from the
// residuals.
inline SigmaEstimate estimate_sigma(const TimeSeries& ts, int order) {
  const int m = static_cast<int>(ts.m());
  const int N = static_cast<int>(ts.N());
  if (order <= 0) throw std::invalid_argument("estimate_sigma: order must be positive");
  if (N <= m * order + m)
    throw std::invalid_argument("estimate_sigma: need N > m*order + m");

  const int rows = N - order;
  const Eigen::Index cols = static_cast<Eigen::Index>(m) * order;
  Mat X(rows, cols);
  Mat Y(rows, m);
  for (int t = 0; t < rows; ++t) {
    Y.row(t) = ts.values.row(order + t);
    for (int k = 1; k <= order; ++k)
      X.block(t, static_cast<Eigen::Index>(k - 1) * m, 1, m) =
          ts.values.row(order + t - k);
  }

  Eigen::ColPivHouseholderQR<Mat> qr(X);
  Mat coeffs;
  if (qr.rank() < cols) {
    const Mat gram = X.transpose() * X;
    const double ridge = 1e-8 * gram.trace() / static_cast<double>(cols);
    Mat reg = gram;
    reg.diagonal().array() += ridge;
    coeffs = Eigen::LLT<Mat>(reg).solve(X.transpose() * Y);
  } else {
    coeffs = qr.solve(Y);
  }

  SigmaEstimate out;
  out.arx_order = order;
  out.residuals = Y - X * coeffs;
  out.Sigma = out.residuals.transpose() * out.residuals / static_cast<double>(rows);
  out.Sigma = 0.5 * (out.Sigma + out.Sigma.transpose());
  return out;
}

}  // namespace slnet
