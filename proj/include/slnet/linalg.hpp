#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <stdexcept>
#include <vector>

#include "slnet/util.hpp"

namespace slnet {

inline Mat kron(const Mat& a, const Mat& b) {
  Mat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

// Symmetric PSD square root; eigenvalues below clip (absolute) are treated as 0.
inline Mat symmetric_sqrt(const Mat& a, double clip = 0.0) {
  Eigen::SelfAdjointEigenSolver<Mat> es(a);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("symmetric_sqrt: eigendecomposition failed");
  Vec d = es.eigenvalues();
  for (Eigen::Index i = 0; i < d.size(); ++i)
    d(i) = d(i) > clip ? std::sqrt(d(i)) : 0.0;
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

struct SpdSolveInfo {
  double jitter = 0.0;  // added to the diagonal, 0 if the first attempt held
};

// Cholesky with one jitter retry: symmetrize, factor, on failure add
// 1e-10 * trace/dim to the diagonal and try once more.
inline Eigen::LLT<Mat> safe_llt(const Mat& a, SpdSolveInfo* info = nullptr) {
  Mat s = 0.5 * (a + a.transpose());
  Eigen::LLT<Mat> llt(s);
  if (llt.info() == Eigen::Success) {
    if (info) info->jitter = 0.0;
    return llt;
  }
  const double jitter = 1e-10 * s.trace() / static_cast<double>(s.rows());
  s.diagonal().array() += jitter;
  llt.compute(s);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("safe_llt: matrix not positive definite after jitter");
  if (info) info->jitter = jitter;
  return llt;
}

// Spectral radius of the VAR companion matrix built from coefficient
// matrices G_1..G_T (y(t) = sum_k G_k y(t-k)).
inline double companion_spectral_radius(const std::vector<Mat>& coeffs) {
  if (coeffs.empty()) return 0.0;
  const Eigen::Index m = coeffs[0].rows();
  const Eigen::Index T = static_cast<Eigen::Index>(coeffs.size());
  Mat companion = Mat::Zero(m * T, m * T);
  for (Eigen::Index k = 0; k < T; ++k)
    companion.block(0, k * m, m, m) = coeffs[static_cast<std::size_t>(k)];
  if (T > 1)
    companion.block(m, 0, m * (T - 1), m * (T - 1)) =
        Mat::Identity(m * (T - 1), m * (T - 1));
  Eigen::EigenSolver<Mat> es(companion, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("companion_spectral_radius: eigensolver failed");
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace slnet
