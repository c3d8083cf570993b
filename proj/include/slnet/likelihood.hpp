#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "slnet/kernel.hpp"
#include "slnet/linalg.hpp"
#include "slnet/regression.hpp"

namespace slnet {

// Hyperparameter state for the marginal likelihood: the free vector
// xi = [gamma (m^2), alpha, beta (r)], with U and Ktilde held fixed during
// any one minimization.
struct HyperState {
  Vec gamma;
  double alpha = 0.0;
  Vec beta;
  Mat U;  // m x r
  KernelTilde ktilde;

  int m() const { return static_cast<int>(U.rows()); }
  int r() const { return static_cast<int>(U.cols()); }

  Mat lambda() const { return build_lambda(alpha, beta, U); }

  // m^2 x m^2 coefficient-block covariance: diag(gamma) + Lambda (x) I_m.
  Mat theta_cov() const {
    Mat out = kron(lambda(), Mat::Identity(m(), m()));
    out.diagonal() += gamma;
    return out;
  }

  Vec xi() const {
    Vec out(gamma.size() + 1 + beta.size());
    out << gamma, alpha, beta;
    return out;
  }

  HyperState with_xi(const Vec& xi_new) const {
    if (xi_new.size() != gamma.size() + 1 + beta.size())
      throw std::invalid_argument("HyperState: xi length mismatch");
    HyperState out = *this;
    out.gamma = xi_new.head(gamma.size());
    out.alpha = xi_new(gamma.size());
    out.beta = xi_new.tail(beta.size());
    return out;
  }
};

namespace detail {

// Y = (A (x) I_T) X for symmetric A acting on the block index of the rows.
// Columns are independent; each is reshaped (T x nb) and right-multiplied.
inline void block_mix(const Mat& A, int T, const Mat& X, Mat& Y) {
  const Eigen::Index nb = A.rows();
  Y.resize(X.rows(), X.cols());
  for (Eigen::Index c = 0; c < X.cols(); ++c) {
    Eigen::Map<const Mat> xm(X.col(c).data(), T, nb);
    Eigen::Map<Mat> ym(Y.col(c).data(), T, nb);
    ym.noalias() = xm * A;
  }
}

inline Vec block_mix_vec(const Mat& A, int T, const Vec& x) {
  const Eigen::Index nb = A.rows();
  Vec y(x.size());
  Eigen::Map<const Mat> xm(x.data(), T, nb);
  Eigen::Map<Mat> ym(y.data(), T, nb);
  ym.noalias() = xm * A;
  return y;
}

}  // namespace detail

// Precomputed data for repeated evaluations of the negative log marginal
// likelihood ell = 1/2 log det V + 1/2 y' V^{-1} y (constant term dropped),
// V = Phi (K_S + K_L) Phi' + Sigma (x) I.  Evaluation runs in the m^2 T
// dimensional core S = I + K^{1/2} (Sigma^{-1} (x) Psi'Psi) K^{1/2}, whose
// determinant and quadratic form match the V form exactly; nothing of size
// m N' is ever factored here.
class MarglikWorkspace {
public:
  MarglikWorkspace(const StackedData& data, const Regressor& reg, const Mat& Sigma)
      : m_(reg.m), T_(reg.T), np_(reg.n_prime) {
    if (data.m != reg.m || data.n_prime != reg.n_prime)
      throw std::invalid_argument("MarglikWorkspace: data/regressor mismatch");
    Eigen::SelfAdjointEigenSolver<Mat> es(Sigma);
    if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 0.0)
      throw std::invalid_argument("MarglikWorkspace: Sigma not SPD");
    sigma_ = Sigma;
    sigma_inv_ = es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() *
                 es.eigenvectors().transpose();
    logdet_sigma_ = es.eigenvalues().array().log().sum();

    Q_.noalias() = reg.Psi.transpose() * reg.Psi;

    Mat Y(np_, m_);
    for (int i = 0; i < m_; ++i) Y.col(i) = data.y.segment(i * static_cast<Eigen::Index>(np_), np_);
    const Mat YS = Y * sigma_inv_;
    y_quad_ = YS.cwiseProduct(Y).sum();
    Zmat_.noalias() = reg.Psi.transpose() * YS;  // (mT) x m, column i = z block i

    z_.resize(static_cast<Eigen::Index>(m_) * m_ * T_);
    for (int i = 0; i < m_; ++i)
      z_.segment(static_cast<Eigen::Index>(i) * m_ * T_, static_cast<Eigen::Index>(m_) * T_) = Zmat_.col(i);

    N_ = kron(sigma_inv_, Q_);
  }

  void set_ktilde(const KernelTilde& kt) {
    if (kt.T != T_) throw std::invalid_argument("MarglikWorkspace: Ktilde lag mismatch");
    kt_ = kt;
    kt_half_ = symmetric_sqrt(kt.K);
    const int nb = m_ * m_;
    // N_K = N (I (x) Kt^{1/2}); N_B = (I (x) Kt^{1/2}) N_K
    NK_.resize(N_.rows(), N_.cols());
    for (int b = 0; b < nb; ++b)
      NK_.middleCols(static_cast<Eigen::Index>(b) * T_, T_).noalias() =
          N_.middleCols(static_cast<Eigen::Index>(b) * T_, T_) * kt_half_;
    NB_.resize(N_.rows(), N_.cols());
    for (int b = 0; b < nb; ++b)
      NB_.middleRows(static_cast<Eigen::Index>(b) * T_, T_).noalias() =
          kt_half_ * NK_.middleRows(static_cast<Eigen::Index>(b) * T_, T_);
    zK_ = Vec(z_.size());
    for (int b = 0; b < nb; ++b)
      zK_.segment(static_cast<Eigen::Index>(b) * T_, T_).noalias() =
          kt_half_ * z_.segment(static_cast<Eigen::Index>(b) * T_, T_);
    tq_.resize(m_, m_);
    for (int j = 0; j < m_; ++j)
      for (int jp = 0; jp < m_; ++jp)
        tq_(j, jp) = kt_.K
                         .cwiseProduct(Q_.block(static_cast<Eigen::Index>(j) * T_,
                                                static_cast<Eigen::Index>(jp) * T_, T_, T_))
                         .sum();
    has_ktilde_ = true;
    cache_valid_ = false;
  }

  int m() const { return m_; }
  int T() const { return T_; }
  int n_prime() const { return np_; }
  const Mat& sigma() const { return sigma_; }
  const KernelTilde& ktilde() const { return kt_; }

  double eval(const HyperState& hyper) const {
    const Core& core = factor_core(hyper);
    return core.ell;
  }

  // Value plus d ell / d xi, xi = [gamma, alpha, beta].
  double eval_grad(const HyperState& hyper, Vec& grad) const {
    const Core& core = factor_core(hyper);
    const int nb = m_ * m_;
    const int r = hyper.r();

    // h = Phi' V^{-1} y = z - M S^{-1} b, with M' = (Th (x) I) N_K'
    Mat MT;
    detail::block_mix(core.theta_half, T_, NK_.transpose(), MT);
    const Vec w = core.llt.solve(core.b);
    const Vec h = z_ - MT.transpose() * w;

    // C = L^{-1} M'; then tr(Kt H_{b'b}) = Sinv(i',i) tq(j,j) - <C_b' Kt, C_b>
    core.llt.matrixL().solveInPlace(MT);
    const Mat& C = MT;

    Vec grad_gamma(nb);
    Mat TrS = Mat::Zero(m_, m_), QuadS = Mat::Zero(m_, m_);
    Mat Chat(C.rows(), static_cast<Eigen::Index>(m_) * T_);
    Mat Hhat(T_, m_);
    for (int j = 0; j < m_; ++j) {
      for (int i = 0; i < m_; ++i) {
        Chat.middleCols(static_cast<Eigen::Index>(i) * T_, T_).noalias() =
            C.middleCols(static_cast<Eigen::Index>(i * m_ + j) * T_, T_) * kt_.K;
        Hhat.col(i).noalias() =
            kt_.K * h.segment(static_cast<Eigen::Index>(i * m_ + j) * T_, T_);
      }
      for (int i = 0; i < m_; ++i)
        for (int ip = 0; ip < m_; ++ip) {
          const double tr_term =
              sigma_inv_(ip, i) * tq_(j, j) -
              Chat.middleCols(static_cast<Eigen::Index>(ip) * T_, T_)
                  .cwiseProduct(C.middleCols(static_cast<Eigen::Index>(i * m_ + j) * T_, T_))
                  .sum();
          const double quad_term =
              h.segment(static_cast<Eigen::Index>(i * m_ + j) * T_, T_).dot(Hhat.col(ip));
          TrS(i, ip) += tr_term;
          QuadS(i, ip) += quad_term;
          if (i == ip) grad_gamma(i * m_ + j) = 0.5 * (tr_term - quad_term);
        }
    }

    const Mat D = TrS - QuadS;
    const Mat P = Mat::Identity(m_, m_) - hyper.U * hyper.U.transpose();
    grad.resize(nb + 1 + r);
    grad.head(nb) = grad_gamma;
    grad(nb) = 0.5 * P.cwiseProduct(D).sum();
    for (int q = 0; q < r; ++q)
      grad(nb + 1 + q) = 0.5 * hyper.U.col(q).dot(D * hyper.U.col(q));
    return core.ell;
  }

private:
  struct Core {
    Mat theta_half;
    Mat S;              // core matrix, factored in place
    Eigen::LLT<Mat> llt;
    Vec b;
    double ell = 0.0;
  };

  // The optimizer's line search evaluates the objective at the point it then
  // asks a gradient for, so one cached factorization (keyed on the exact
  // hyperparameters) removes every duplicate core solve.
  const Core& factor_core(const HyperState& hyper) const {
    if (!has_ktilde_)
      throw std::logic_error("MarglikWorkspace: set_ktilde before eval");
    if (hyper.m() != m_ || hyper.gamma.size() != static_cast<Eigen::Index>(m_) * m_)
      throw std::invalid_argument("MarglikWorkspace: hyper dimension mismatch");
    if (hyper.ktilde.T != T_ || hyper.ktilde.c != kt_.c || hyper.ktilde.lambda != kt_.lambda)
      throw std::invalid_argument("MarglikWorkspace: hyper Ktilde differs from workspace");
    if ((hyper.gamma.array() < 0.0).any() || hyper.alpha < 0.0 ||
        (hyper.beta.array() < 0.0).any())
      throw std::invalid_argument("MarglikWorkspace: negative hyperparameter");

    if (cache_valid_ && cache_gamma_.size() == hyper.gamma.size() &&
        (cache_gamma_.array() == hyper.gamma.array()).all() &&
        cache_alpha_ == hyper.alpha && cache_beta_.size() == hyper.beta.size() &&
        (cache_beta_.array() == hyper.beta.array()).all() &&
        cache_U_.rows() == hyper.U.rows() && cache_U_.cols() == hyper.U.cols() &&
        (cache_U_.array() == hyper.U.array()).all())
      return cache_core_;

    cache_valid_ = false;
    Core& core = cache_core_;
    core.theta_half = symmetric_sqrt(hyper.theta_cov());
    Mat X1;
    detail::block_mix(core.theta_half, T_, NB_, X1);
    Mat X1t = X1.transpose();
    detail::block_mix(core.theta_half, T_, X1t, core.S);
    core.S.diagonal().array() += 1.0;

    core.llt.compute(core.S);
    if (core.llt.info() != Eigen::Success) {
      core.S.diagonal().array() += 1e-10 * core.S.trace() / static_cast<double>(core.S.rows());
      core.llt.compute(core.S);
      if (core.llt.info() != Eigen::Success) {
        std::ostringstream msg;
        msg << "neg_log_marglik: core factorization failed (alpha=" << hyper.alpha
            << ", max gamma=" << hyper.gamma.maxCoeff() << ")";
        throw std::runtime_error(msg.str());
      }
    }

    const double logdet_core =
        2.0 * core.llt.matrixLLT().diagonal().array().log().sum();
    core.b = detail::block_mix_vec(core.theta_half, T_, zK_);
    const Vec u = core.llt.matrixL().solve(core.b);
    const double quad = y_quad_ - u.squaredNorm();
    core.ell = 0.5 * (np_ * logdet_sigma_ + logdet_core) + 0.5 * quad;

    cache_gamma_ = hyper.gamma;
    cache_alpha_ = hyper.alpha;
    cache_beta_ = hyper.beta;
    cache_U_ = hyper.U;
    cache_valid_ = true;
    return core;
  }

  int m_, T_, np_;
  Mat sigma_, sigma_inv_;
  double logdet_sigma_ = 0.0;
  Mat Q_;
  Mat Zmat_;
  Vec z_;
  double y_quad_ = 0.0;
  Mat N_;

  bool has_ktilde_ = false;
  KernelTilde kt_;
  Mat kt_half_;
  Mat NK_, NB_;
  Vec zK_;
  Mat tq_;

  mutable bool cache_valid_ = false;
  mutable Core cache_core_;
  mutable Vec cache_gamma_, cache_beta_;
  mutable double cache_alpha_ = 0.0;
  mutable Mat cache_U_;
};

inline double neg_log_marglik(const StackedData& data, const Regressor& reg,
                              const HyperState& hyper, const Mat& Sigma) {
  MarglikWorkspace ws(data, reg, Sigma);
  ws.set_ktilde(hyper.ktilde);
  return ws.eval(hyper);
}

inline Vec marglik_gradient(const StackedData& data, const Regressor& reg,
                            const HyperState& hyper, const Mat& Sigma) {
  MarglikWorkspace ws(data, reg, Sigma);
  ws.set_ktilde(hyper.ktilde);
  Vec grad;
  ws.eval_grad(hyper, grad);
  return grad;
}

struct KtildeGridOptions {
  double lambda_min = 0.30;
  double lambda_max = 0.95;
  double lambda_step = 0.05;
  double log10_c_min = -6.0;
  double log10_c_max = 2.0;
  double log10_c_step = 0.25;
  double c_rel_tol = 1e-3;  // golden-section refinement width
};

struct KtildeChoice {
  double c = 1.0;
  double lambda = 0.5;
  double ell = 0.0;
};

// Preliminary kernel-scale search: minimizes ell with the unstructured prior
// K = I_{m^2} (x) Ktilde(c, lambda) over a lambda grid, c optimized per
// lambda by grid + golden-section scalar search.  With K of this form the
// core eigendecomposes as Sigma^{-1} (x) Qt, so each c costs O(m^2 T).
inline KtildeChoice estimate_ktilde_hyper(const StackedData& data, const Regressor& reg,
                                          const Mat& Sigma,
                                          const KtildeGridOptions& opts = {}) {
  const int m = reg.m;
  const int T = reg.T;
  const Eigen::Index np = reg.n_prime;
  const Eigen::Index mt = static_cast<Eigen::Index>(m) * T;

  Eigen::SelfAdjointEigenSolver<Mat> sig_es(Sigma);
  if (sig_es.info() != Eigen::Success || sig_es.eigenvalues().minCoeff() <= 0.0)
    throw std::invalid_argument("estimate_ktilde_hyper: Sigma not SPD");
  const Vec ds = sig_es.eigenvalues().cwiseInverse();  // eigenvalues of Sigma^{-1}
  const Mat Es = sig_es.eigenvectors();
  const double logdet_sigma = sig_es.eigenvalues().array().log().sum();

  const Mat sigma_inv = sig_es.eigenvectors() * ds.asDiagonal() *
                        sig_es.eigenvectors().transpose();
  Mat Y(np, m);
  for (int i = 0; i < m; ++i) Y.col(i) = data.y.segment(i * np, np);
  const Mat YS = Y * sigma_inv;
  const double y_quad = YS.cwiseProduct(Y).sum();
  const Mat Zmat = reg.Psi.transpose() * YS;
  const Mat Q = reg.Psi.transpose() * reg.Psi;

  KtildeChoice best;
  best.ell = std::numeric_limits<double>::infinity();

  const int lambda_steps = static_cast<int>(
      std::lround((opts.lambda_max - opts.lambda_min) / opts.lambda_step));
  for (int li = 0; li <= lambda_steps; ++li) {
    // Clamp so accumulated rounding never pushes the last point past the bound.
    const double lambda = std::min(opts.lambda_min + li * opts.lambda_step, opts.lambda_max);
    const KernelTilde kt1 = tc_kernel(1.0, lambda, T);
    const Mat kt1_half = symmetric_sqrt(kt1.K);
    Mat Qt(mt, mt);
    for (int j = 0; j < m; ++j)
      Qt.middleRows(static_cast<Eigen::Index>(j) * T, T).noalias() =
          kt1_half * Q.middleRows(static_cast<Eigen::Index>(j) * T, T);
    for (int j = 0; j < m; ++j)
      Qt.middleCols(static_cast<Eigen::Index>(j) * T, T) =
          Qt.middleCols(static_cast<Eigen::Index>(j) * T, T) * kt1_half;
    Eigen::SelfAdjointEigenSolver<Mat> q_es(Qt);
    const Vec dq = q_es.eigenvalues().cwiseMax(0.0);

    Mat B1(mt, m);
    for (int j = 0; j < m; ++j)
      B1.middleRows(static_cast<Eigen::Index>(j) * T, T).noalias() =
          kt1_half * Zmat.middleRows(static_cast<Eigen::Index>(j) * T, T);
    const Mat W = q_es.eigenvectors().transpose() * B1 * Es;  // (mt) x m
    const Mat W2 = W.cwiseProduct(W);

    const auto ell_of_c = [&](double c) {
      double logdet = 0.0, quad_drop = 0.0;
      for (int a = 0; a < m; ++a)
        for (Eigen::Index q = 0; q < mt; ++q) {
          const double dd = ds(a) * dq(q);
          logdet += std::log1p(c * dd);
          quad_drop += c * W2(q, a) / (1.0 + c * dd);
        }
      return 0.5 * (np * logdet_sigma + logdet) + 0.5 * (y_quad - quad_drop);
    };

    // coarse log grid, then golden-section refinement between the neighbors
    std::vector<double> cs;
    const int c_steps = static_cast<int>(
        std::lround((opts.log10_c_max - opts.log10_c_min) / opts.log10_c_step));
    for (int ci = 0; ci <= c_steps; ++ci)
      cs.push_back(std::pow(10.0, opts.log10_c_min + ci * opts.log10_c_step));
    std::size_t best_i = 0;
    double best_f = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < cs.size(); ++i) {
      const double f = ell_of_c(cs[i]);
      if (f < best_f) {
        best_f = f;
        best_i = i;
      }
    }
    double lo = cs[best_i > 0 ? best_i - 1 : 0];
    double hi = cs[std::min(best_i + 1, cs.size() - 1)];
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
    double f1 = ell_of_c(x1), f2 = ell_of_c(x2);
    while ((hi - lo) > opts.c_rel_tol * lo) {
      if (f1 <= f2) {
        hi = x2;
        x2 = x1;
        f2 = f1;
        x1 = hi - gr * (hi - lo);
        f1 = ell_of_c(x1);
      } else {
        lo = x1;
        x1 = x2;
        f1 = f2;
        x2 = lo + gr * (hi - lo);
        f2 = ell_of_c(x2);
      }
    }
    const double c_star = f1 <= f2 ? x1 : x2;
    const double f_star = std::min(f1, f2);
    if (f_star < best.ell) best = KtildeChoice{c_star, lambda, f_star};
  }
  return best;
}

}  // namespace slnet
