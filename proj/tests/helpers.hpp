#pragma once

#include <cmath>
#include <cstdint>
#include <utility>

#include "slnet/slnet.hpp"

// Dense, structure-free reference computations the library must agree with.
// Everything here is brute force on purpose.

namespace testutil {

using slnet::KernelTilde;
using slnet::LowRankKernel;
using slnet::Mat;
using slnet::RandomStream;
using slnet::Regressor;
using slnet::SparseKernel;
using slnet::StackedData;
using slnet::TimeSeries;
using slnet::Vec;

inline Mat dense_phi(const Regressor& reg) {
  return slnet::kron(Mat::Identity(reg.m, reg.m), reg.Psi);
}

inline Mat random_orthonormal(int m, int r, RandomStream& rng) {
  if (r == 0) return Mat(m, 0);
  const Mat a = rng.normal_matrix(m, r);
  Eigen::HouseholderQR<Mat> qr(a);
  return qr.householderQ() * Mat::Identity(m, r);
}

inline TimeSeries random_series(int N, int m, std::uint64_t seed) {
  RandomStream rng(seed);
  TimeSeries ts;
  ts.values = rng.normal_matrix(N, m);
  ts.seed = seed;
  return ts;
}

inline Mat random_spd(int d, std::uint64_t seed) {
  RandomStream rng(seed);
  return slnet::detail::random_spd(d, rng);
}

inline slnet::HyperState random_hyper(int m, int r, const KernelTilde& kt,
                                      std::uint64_t seed) {
  RandomStream rng(seed);
  slnet::HyperState h;
  h.gamma = Vec(m * m);
  for (int b = 0; b < m * m; ++b) h.gamma(b) = 0.2 + 1.8 * rng.uniform();
  h.alpha = 0.1 + 0.9 * rng.uniform();
  h.beta = Vec(r);
  for (int q = 0; q < r; ++q) h.beta(q) = 0.2 + 1.8 * rng.uniform();
  h.U = random_orthonormal(m, r, rng);
  h.ktilde = kt;
  return h;
}

inline Mat dense_v(const Regressor& reg, const Mat& K_dense, const Mat& Sigma) {
  const Mat Phi = dense_phi(reg);
  Mat V = Phi * K_dense * Phi.transpose();
  V += slnet::kron(Sigma, Mat::Identity(reg.n_prime, reg.n_prime));
  return V;
}

// theta_hat = K Phi' V^{-1} y, fully dense.
inline Vec dense_posterior(const StackedData& data, const Regressor& reg,
                           const Mat& K_dense, const Mat& Sigma) {
  const Mat V = dense_v(reg, K_dense, Sigma);
  return K_dense * dense_phi(reg).transpose() * Eigen::LLT<Mat>(V).solve(data.y);
}

// ell = 1/2 log det V + 1/2 y' V^{-1} y, fully dense.
inline double dense_marglik(const StackedData& data, const Regressor& reg,
                            const Mat& K_dense, const Mat& Sigma) {
  const Mat V = dense_v(reg, K_dense, Sigma);
  const Eigen::LLT<Mat> llt(V);
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return 0.5 * logdet + 0.5 * data.y.dot(llt.solve(data.y));
}

// Joint S+L regularized least squares solved by plain normal equations after
// the square-root substitutions theta_s = Ks^{1/2} v, theta_l = Kl^{1/2} u
// (which make both penalties plain identity ridges and absorb singular
// kernels exactly).
inline std::pair<Vec, Vec> normal_equation_sl(const StackedData& data, const Regressor& reg,
                                              const SparseKernel& Ks, const LowRankKernel& Kl,
                                              const Mat& Sigma) {
  const Mat Phi = dense_phi(reg);
  const Mat Ks_half = slnet::symmetric_sqrt(Ks.dense());
  const Mat Kl_half = slnet::symmetric_sqrt(Kl.dense());
  const Mat W = slnet::kron(Sigma.inverse(), Mat::Identity(reg.n_prime, reg.n_prime));
  const Eigen::Index d = Ks_half.cols();

  Mat A(Phi.rows(), 2 * d);
  A.leftCols(d) = Phi * Ks_half;
  A.rightCols(d) = Phi * Kl_half;
  Mat G = A.transpose() * W * A;
  G.diagonal().array() += 1.0;
  const Vec vu = Eigen::LLT<Mat>(G).solve(A.transpose() * (W * data.y));
  return {Ks_half * vu.head(d), Kl_half * vu.tail(d)};
}

template <typename F>
Vec fd_gradient(F&& f, const Vec& x, double h_rel = 1e-5) {
  Vec g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = h_rel * (1.0 + std::abs(x(i)));
    Vec xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    g(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

inline double rel_error(const Vec& got, const Vec& want) {
  const double scale = want.norm();
  return scale > 0 ? (got - want).norm() / scale : got.norm();
}

inline double rel_error(const Mat& got, const Mat& want) {
  const double scale = want.norm();
  return scale > 0 ? (got - want).norm() / scale : got.norm();
}

}  // namespace testutil
