#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

#include "slnet/kernel.hpp"
#include "slnet/linalg.hpp"
#include "slnet/regression.hpp"

namespace slnet {

struct SolveDiagnostics {
  double rel_residual = 0.0;  // ||V c - y|| / ||y||
  double jitter = 0.0;
};

struct PredictorEstimate {
  Vec theta_s;
  Vec theta_l;
  ThetaLayout layout;
  Mat sigma;
  SolveDiagnostics diagnostics;

  Vec theta() const { return theta_s + theta_l; }
};

// Precomputed pieces shared by every posterior-mean solve on one
// (regressor, Ktilde) pair: R_j = Psi_j Ltilde, M_j = Psi_j Ktilde Psi_j',
// P_L = sum_j M_j.  Cross products P_{jj'} are filled on first use by the
// generic-kernel path.
class SlWorkspace {
public:
  SlWorkspace(const Regressor& reg, const KernelTilde& kt)
      : reg_(&reg), kt_(kt), Ltilde_(kt.chol()) {
    const int m = reg.m;
    const int T = reg.T;
    if (kt.T != T) throw std::invalid_argument("SlWorkspace: Ktilde lags != regressor lags");
    R_.reserve(m);
    M_.reserve(m);
    for (int j = 0; j < m; ++j) {
      R_.push_back(reg.Psi.middleCols(static_cast<Eigen::Index>(j) * T, T) * Ltilde_);
      M_.push_back(R_[static_cast<std::size_t>(j)] * R_[static_cast<std::size_t>(j)].transpose());
    }
    P_L_ = Mat::Zero(reg.n_prime, reg.n_prime);
    for (int j = 0; j < m; ++j) P_L_ += M_[static_cast<std::size_t>(j)];
  }

  const Regressor& reg() const { return *reg_; }
  const KernelTilde& ktilde() const { return kt_; }
  const Mat& M(int j) const { return M_[static_cast<std::size_t>(j)]; }
  const Mat& P_L() const { return P_L_; }

  const Mat& P(int j, int jp) {
    if (P_pairs_.empty()) build_pairs();
    return P_pairs_[static_cast<std::size_t>(j * reg_->m + jp)];
  }

private:
  void build_pairs() {
    const int m = reg_->m;
    P_pairs_.resize(static_cast<std::size_t>(m) * m);
    for (int j = 0; j < m; ++j)
      for (int jp = 0; jp < m; ++jp) {
        if (jp < j) {
          P_pairs_[static_cast<std::size_t>(j * m + jp)] =
              P_pairs_[static_cast<std::size_t>(jp * m + j)].transpose();
          continue;
        }
        if (jp == j) {
          P_pairs_[static_cast<std::size_t>(j * m + jp)] = M_[static_cast<std::size_t>(j)];
          continue;
        }
        P_pairs_[static_cast<std::size_t>(j * m + jp)] =
            R_[static_cast<std::size_t>(j)] * R_[static_cast<std::size_t>(jp)].transpose();
      }
  }

  const Regressor* reg_;
  KernelTilde kt_;
  Mat Ltilde_;
  std::vector<Mat> R_;
  std::vector<Mat> M_;
  Mat P_L_;
  std::vector<Mat> P_pairs_;
};

namespace detail {

// c = V^{-1} y and Ztilde = (I_m (x) Ktilde) Psi' C, the common tail of both
// posterior-mean forms.  V is passed fully assembled (m N' x m N').
inline Mat solve_dual_and_project(const Mat& V, const StackedData& data,
                                  SlWorkspace& ws, SolveDiagnostics* diag) {
  SpdSolveInfo info;
  const Eigen::LLT<Mat> llt = safe_llt(V, &info);
  const Vec c = llt.solve(data.y);
  if (diag) {
    diag->jitter = info.jitter;
    const double ynorm = data.y.norm();
    diag->rel_residual = ynorm > 0 ? (V.selfadjointView<Eigen::Lower>() * c - data.y).norm() / ynorm : 0.0;
  }
  const Regressor& reg = ws.reg();
  const Eigen::Index np = reg.n_prime;
  const int T = reg.T;
  Mat C(np, reg.m);
  for (int i = 0; i < reg.m; ++i) C.col(i) = c.segment(i * np, np);
  Mat W = reg.Psi.transpose() * C;  // (mT) x m
  for (int j = 0; j < reg.m; ++j)
    W.middleRows(static_cast<Eigen::Index>(j) * T, T) =
        ws.ktilde().K * W.middleRows(static_cast<Eigen::Index>(j) * T, T);
  return W;  // Ztilde: column i, row block j = Ktilde Psi_j' c_i
}

}  // namespace detail

// Joint S+L posterior mean: one SPD solve of the dual system, then the two
// kernel back-multiplications.  theta_s blocks scale by gamma entries, so
// truncated gamma gives exactly zero blocks.
inline PredictorEstimate posterior_mean_sl(const StackedData& data, SlWorkspace& ws,
                                           const SparseKernel& Ks,
                                           const LowRankKernel& Kl, const Mat& Sigma) {
  const Regressor& reg = ws.reg();
  const int m = reg.m;
  const int T = reg.T;
  const Eigen::Index np = reg.n_prime;
  if (Ks.gamma.size() != static_cast<Eigen::Index>(m) * m)
    throw std::invalid_argument("posterior_mean_sl: gamma length != m^2");
  const Mat lam = Kl.lambda();

  Mat V(static_cast<Eigen::Index>(m) * np, static_cast<Eigen::Index>(m) * np);
  for (int i = 0; i < m; ++i)
    for (int ip = 0; ip < m; ++ip) {
      auto block = V.block(i * np, ip * np, np, np);
      block = lam(i, ip) * ws.P_L();
      if (i == ip)
        for (int j = 0; j < m; ++j) block += Ks.gamma(i * m + j) * ws.M(j);
      block.diagonal().array() += Sigma(i, ip);
    }

  PredictorEstimate est;
  est.layout = ThetaLayout{m, T};
  est.sigma = Sigma;
  const Mat Zt = detail::solve_dual_and_project(V, data, ws, &est.diagnostics);
  const Mat Zl = Zt * lam;

  est.theta_s.resize(est.layout.dim());
  est.theta_l.resize(est.layout.dim());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      const Eigen::Index off = est.layout.offset(i, j, 0);
      est.theta_s.segment(off, T) =
          Ks.gamma(i * m + j) * Zt.col(i).segment(static_cast<Eigen::Index>(j) * T, T);
      est.theta_l.segment(off, T) = Zl.col(i).segment(static_cast<Eigen::Index>(j) * T, T);
    }
  return est;
}

// Posterior mean under a single kernel theta_cov (x) Ktilde, where theta_cov
// is any PSD m^2 x m^2 coefficient-block covariance.
inline Vec posterior_mean_g(const StackedData& data, SlWorkspace& ws,
                            const Mat& theta_cov, const Mat& Sigma,
                            SolveDiagnostics* diag = nullptr) {
  const Regressor& reg = ws.reg();
  const int m = reg.m;
  const int T = reg.T;
  const Eigen::Index np = reg.n_prime;
  if (theta_cov.rows() != static_cast<Eigen::Index>(m) * m ||
      theta_cov.cols() != theta_cov.rows())
    throw std::invalid_argument("posterior_mean_g: theta_cov must be m^2 x m^2");

  Mat V(static_cast<Eigen::Index>(m) * np, static_cast<Eigen::Index>(m) * np);
  for (int i = 0; i < m; ++i)
    for (int ip = 0; ip < m; ++ip) {
      auto block = V.block(i * np, ip * np, np, np);
      block.setZero();
      for (int j = 0; j < m; ++j)
        for (int jp = 0; jp < m; ++jp) {
          const double w = theta_cov(i * m + j, ip * m + jp);
          if (w != 0.0) block += w * ws.P(j, jp);
        }
      block.diagonal().array() += Sigma(i, ip);
    }

  SolveDiagnostics local;
  const Mat Zt = detail::solve_dual_and_project(V, data, ws, &local);
  if (diag) *diag = local;

  // theta block b = sum_{b'} theta_cov(b,b') Ztilde-block b'
  Mat Z2(T, static_cast<Eigen::Index>(m) * m);
  for (int ip = 0; ip < m; ++ip)
    for (int jp = 0; jp < m; ++jp)
      Z2.col(ip * m + jp) = Zt.col(ip).segment(static_cast<Eigen::Index>(jp) * T, T);
  Mat theta_blocks = Z2 * theta_cov;  // theta_cov symmetric
  const ThetaLayout layout{m, T};
  Vec theta(layout.dim());
  for (int b = 0; b < m * m; ++b)
    theta.segment(static_cast<Eigen::Index>(b) * T, T) = theta_blocks.col(b);
  return theta;
}

inline Vec posterior_mean_g(const StackedData& data, SlWorkspace& ws,
                            const SparseKernel& K, const Mat& Sigma,
                            SolveDiagnostics* diag = nullptr) {
  return posterior_mean_g(data, ws, K.coeff_cov(), Sigma, diag);
}

inline Vec posterior_mean_g(const StackedData& data, SlWorkspace& ws,
                            const LowRankKernel& K, const Mat& Sigma,
                            SolveDiagnostics* diag = nullptr) {
  return posterior_mean_g(data, ws, K.coeff_cov(), Sigma, diag);
}

// Convenience overloads that build a fresh workspace.
inline PredictorEstimate posterior_mean_sl(const StackedData& data, const Regressor& reg,
                                           const SparseKernel& Ks, const LowRankKernel& Kl,
                                           const Mat& Sigma) {
  SlWorkspace ws(reg, Ks.ktilde);
  return posterior_mean_sl(data, ws, Ks, Kl, Sigma);
}

namespace detail {

// Pseudo-inverse norm theta' (theta_cov (x) Ktilde)^+ theta.  Components of
// theta outside the kernel range are an error (tolerance rel_null).
inline double pseudo_norm(const Vec& theta, const Mat& theta_cov, const KernelTilde& kt,
                          double rel_null = 1e-8) {
  const Eigen::Index nb = theta_cov.rows();
  const int T = kt.T;
  Eigen::SelfAdjointEigenSolver<Mat> es(theta_cov);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("pseudo_norm: eigendecomposition failed");
  const Vec d = es.eigenvalues();
  const double dmax = d.size() > 0 ? std::max(d.maxCoeff(), 0.0) : 0.0;
  const double cut = dmax * 1e-12;
  const Eigen::LLT<Mat> kt_llt(kt.K);
  const double scale = theta.norm();

  double out = 0.0;
  for (Eigen::Index q = 0; q < nb; ++q) {
    Vec tq = Vec::Zero(T);
    for (Eigen::Index b = 0; b < nb; ++b)
      tq += es.eigenvectors()(b, q) * theta.segment(b * T, T);
    if (d(q) <= cut) {
      if (tq.norm() > rel_null * (scale + 1e-300))
        throw std::invalid_argument("pseudo_norm: theta has a component outside the kernel range");
      continue;
    }
    out += tq.dot(kt_llt.solve(tq)) / d(q);
  }
  return out;
}

}  // namespace detail

// The regularized least-squares objective whose minimizer the posterior mean
// is: fit term weighted by Sigma^{-1} (x) I plus the two kernel norms
// (pseudo-inverse norms when a kernel is singular).
inline double tikhonov_objective(const Vec& theta_s, const Vec& theta_l,
                                 const StackedData& data, const Regressor& reg,
                                 const SparseKernel& Ks, const LowRankKernel& Kl,
                                 const Mat& Sigma) {
  const Eigen::LLT<Mat> sig_llt(Sigma);
  if (sig_llt.info() != Eigen::Success)
    throw std::invalid_argument("tikhonov_objective: Sigma not SPD");
  const Mat sigma_inv = sig_llt.solve(Mat::Identity(Sigma.rows(), Sigma.cols()));
  const double fit = weighted_residual_sq(data, reg, theta_s + theta_l, sigma_inv);
  const double pen_s = detail::pseudo_norm(theta_s, Ks.coeff_cov(), Ks.ktilde);
  const double pen_l = detail::pseudo_norm(theta_l, Kl.coeff_cov(), Kl.ktilde);
  return fit + pen_s + pen_l;
}

}  // namespace slnet
