#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "slnet/linalg.hpp"
#include "slnet/util.hpp"

namespace slnet {

// TC stability kernel, entries c * lambda^{max(k,l)} with 1-based lags.
struct KernelTilde {
  double c = 1.0;
  double lambda = 0.5;
  int T = 0;
  Mat K;  // T x T

  Mat chol() const {
    Eigen::LLT<Mat> llt(K);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("KernelTilde: not positive definite");
    return llt.matrixL();
  }
};

inline KernelTilde tc_kernel(double c, double lambda, int T) {
  if (!(c > 0.0)) throw std::invalid_argument("tc_kernel: c must be positive");
  if (!(lambda > 0.0 && lambda < 1.0))
    throw std::invalid_argument("tc_kernel: lambda must be in (0,1)");
  if (T <= 0) throw std::invalid_argument("tc_kernel: T must be positive");
  KernelTilde kt;
  kt.c = c;
  kt.lambda = lambda;
  kt.T = T;
  kt.K.resize(T, T);
  for (int k = 0; k < T; ++k)
    for (int l = 0; l < T; ++l)
      kt.K(k, l) = c * std::pow(lambda, std::max(k, l) + 1);
  return kt;
}

// Lambda = alpha (I - U U') + U diag(beta) U'.  r = 0 gives alpha * I.
inline Mat build_lambda(double alpha, const Vec& beta, const Mat& U) {
  const Eigen::Index m = U.rows();
  const Eigen::Index r = U.cols();
  if (beta.size() != r) throw std::invalid_argument("build_lambda: beta size != r");
  Mat lam = alpha * (Mat::Identity(m, m) - U * U.transpose());
  if (r > 0) lam += U * beta.asDiagonal() * U.transpose();
  return lam;
}

// Prior covariance of theta_s: blockdiag of gamma_b * Ktilde over the m^2
// layout blocks.
struct SparseKernel {
  Vec gamma;  // m^2, ordered like ThetaLayout blocks
  KernelTilde ktilde;
  int m = 0;

  Vec matvec(const Vec& v) const {
    const int T = ktilde.T;
    const Eigen::Index nb = gamma.size();
    Vec out(nb * T);
    for (Eigen::Index b = 0; b < nb; ++b)
      out.segment(b * T, T).noalias() = gamma(b) * (ktilde.K * v.segment(b * T, T));
    return out;
  }

  Mat dense() const {
    Mat g = gamma.asDiagonal();
    return kron(g, ktilde.K);
  }

  // m^2 x m^2 coefficient-block covariance factor (the kernel is this (x) Ktilde)
  Mat coeff_cov() const { return Mat(gamma.asDiagonal()); }

  Vec sample_prior(RandomStream& rng) const {
    const int T = ktilde.T;
    const Mat L = ktilde.chol();
    Vec theta(gamma.size() * T);
    for (Eigen::Index b = 0; b < gamma.size(); ++b)
      theta.segment(b * T, T).noalias() =
          std::sqrt(gamma(b)) * (L * rng.normal_vector(T));
    return theta;
  }
};

inline SparseKernel build_sparse_kernel(const Vec& gamma, const KernelTilde& kt) {
  const auto m = static_cast<int>(std::lround(std::sqrt(double(gamma.size()))));
  if (static_cast<Eigen::Index>(m) * m != gamma.size())
    throw std::invalid_argument("build_sparse_kernel: gamma length must be m^2");
  if ((gamma.array() < 0.0).any())
    throw std::invalid_argument("build_sparse_kernel: negative gamma entry");
  return SparseKernel{gamma, kt, m};
}

// Prior covariance of theta_l: Lambda (x) I_m (x) Ktilde, with Lambda held in
// the (alpha, beta, U) parametrization.
struct LowRankKernel {
  double alpha = 0.0;
  Vec beta;  // r entries
  Mat U;     // m x r, orthonormal columns
  KernelTilde ktilde;
  int m = 0;

  Mat lambda() const { return build_lambda(alpha, beta, U); }

  Vec matvec(const Vec& v) const {
    const int T = ktilde.T;
    const Eigen::Index mt = static_cast<Eigen::Index>(m) * T;
    // columns of V index the leading (row) block; (I (x) Ktilde) acts per j-block
    Mat V(mt, m);
    for (int i = 0; i < m; ++i) V.col(i) = v.segment(i * mt, mt);
    Mat KV(mt, m);
    for (int j = 0; j < m; ++j)
      KV.middleRows(static_cast<Eigen::Index>(j) * T, T).noalias() =
          ktilde.K * V.middleRows(static_cast<Eigen::Index>(j) * T, T);
    Mat out_mat = KV * lambda();
    Vec out(v.size());
    for (int i = 0; i < m; ++i) out.segment(i * mt, mt) = out_mat.col(i);
    return out;
  }

  Mat dense() const { return kron(lambda(), kron(Mat::Identity(m, m), ktilde.K)); }

  Mat coeff_cov() const { return kron(lambda(), Mat::Identity(m, m)); }

  Vec sample_prior(RandomStream& rng) const {
    const int T = ktilde.T;
    const Eigen::Index mt = static_cast<Eigen::Index>(m) * T;
    const Mat L = ktilde.chol();
    const Mat lam_half = symmetric_sqrt(lambda());
    Mat Z = rng.normal_matrix(mt, m);
    for (int j = 0; j < m; ++j)
      Z.middleRows(static_cast<Eigen::Index>(j) * T, T) =
          L * Z.middleRows(static_cast<Eigen::Index>(j) * T, T);
    Mat theta_mat = Z * lam_half;
    Vec theta(static_cast<Eigen::Index>(m) * mt);
    for (int i = 0; i < m; ++i) theta.segment(i * mt, mt) = theta_mat.col(i);
    return theta;
  }
};

template <typename Kernel>
Vec sample_prior(const Kernel& kernel, std::uint64_t seed) {
  RandomStream rng(seed);
  return kernel.sample_prior(rng);
}

inline LowRankKernel build_lowrank_kernel(double alpha, const Vec& beta,
                                          const Mat& U, const KernelTilde& kt) {
  if (alpha < 0.0) throw std::invalid_argument("build_lowrank_kernel: alpha < 0");
  if ((beta.array() < 0.0).any())
    throw std::invalid_argument("build_lowrank_kernel: negative beta entry");
  if (beta.size() != U.cols())
    throw std::invalid_argument("build_lowrank_kernel: beta size != columns of U");
  const Eigen::Index r = U.cols();
  if (r > 0) {
    const Mat gram = U.transpose() * U;
    if ((gram - Mat::Identity(r, r)).cwiseAbs().maxCoeff() > 1e-10)
      throw std::invalid_argument("build_lowrank_kernel: U not orthonormal");
  }
  return LowRankKernel{alpha, beta, U, kt, static_cast<int>(U.rows())};
}

}  // namespace slnet
