#pragma once

#include <Eigen/Dense>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "slnet/estimator.hpp"
#include "slnet/likelihood.hpp"
#include "slnet/util.hpp"

namespace slnet {

struct SgpOptions {
  double tol = 1e-6;       // on the projected-gradient residual, inf norm
  int max_iter = 500;
  double armijo_sigma = 1e-4;
  int max_halvings = 60;
  Vec initial_scale;       // warm-start diagonal scaling; empty = 1/max|g|
};

struct SgpTraceRow {
  int iter = 0;
  double objective = 0.0;
  double step = 0.0;
  double kkt = 0.0;
};

struct SgpResult {
  Vec x;
  double f = 0.0;
  int iters = 0;
  double kkt = 0.0;
  bool line_search_failed = false;
  std::vector<SgpTraceRow> trace;
  Vec scale;  // final diagonal scaling, reusable as a warm start
};

// Scaled projected gradient over the nonnegative orthant: diagonal secant
// scaling clipped to [1e-6, 1e6], Armijo backtracking (halving), projection
// by clamping at zero.  The recorded trace is the accepted iterates, so it is
// nonincreasing by construction.
inline SgpResult sgp_minimize(const std::function<double(const Vec&)>& objective,
                              const std::function<Vec(const Vec&)>& gradient,
                              const Vec& x0, const SgpOptions& opts = {}) {
  SgpResult res;
  Vec x = x0.cwiseMax(0.0);
  double f = objective(x);
  Vec g = gradient(x);
  const auto kkt_of = [](const Vec& x_, const Vec& g_) {
    return ((x_ - g_).cwiseMax(0.0) - x_).cwiseAbs().maxCoeff();
  };

  Vec scale = opts.initial_scale.size() == x.size()
                  ? opts.initial_scale.cwiseMax(1e-6).cwiseMin(1e6).eval()
                  : Vec::Constant(x.size(), 1.0 / std::max(1.0, g.cwiseAbs().maxCoeff()));
  double last_step = 0.0;
  double t_accept = 1.0;  // last accepted step; next trial starts at min(1, 2x)
  int iter = 0;
  for (;; ++iter) {
    res.kkt = kkt_of(x, g);
    res.trace.push_back({iter, f, last_step, res.kkt});
    if (res.kkt <= opts.tol || iter >= opts.max_iter) break;

    const Vec d = (x - scale.cwiseProduct(g)).cwiseMax(0.0) - x;
    const double gd = g.dot(d);
    if (!(gd < 0.0)) break;  // stationary up to roundoff

    double t = std::min(1.0, 2.0 * t_accept);
    double f_try = objective(x + t * d);
    bool accepted = f_try <= f + opts.armijo_sigma * t * gd;
    int halvings = 0;
    while (!accepted && halvings < opts.max_halvings) {
      t *= 0.5;
      ++halvings;
      f_try = objective(x + t * d);
      accepted = f_try <= f + opts.armijo_sigma * t * gd;
    }
    if (!accepted) {
      res.line_search_failed = true;
      break;
    }

    const Vec x_new = x + t * d;
    const Vec g_new = gradient(x_new);
    const Vec s = x_new - x;
    const Vec yv = g_new - g;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double sy = s(i) * yv(i);
      if (sy > 0.0) scale(i) = s(i) / yv(i);
      scale(i) = std::clamp(scale(i), 1e-6, 1e6);
    }
    x = x_new;
    f = f_try;
    g = g_new;
    last_step = t;
    t_accept = t;
  }
  res.x = x;
  res.f = f;
  res.iters = iter;
  res.scale = scale;
  return res;
}

// A_l = [L_1 ... L_T] rearranged from a stacked theta_l.
inline Mat extract_al(const Vec& theta_l, const ThetaLayout& layout) {
  if (theta_l.size() != layout.dim())
    throw std::invalid_argument("extract_al: length mismatch");
  Mat A(layout.m, static_cast<Eigen::Index>(layout.m) * layout.T);
  for (int i = 0; i < layout.m; ++i)
    for (int j = 0; j < layout.m; ++j)
      for (int k = 0; k < layout.T; ++k)
        A(i, k * layout.m + j) = theta_l(layout.offset(i, j, k));
  return A;
}

inline Mat extract_al(const PredictorEstimate& est) {
  return extract_al(est.theta_l, est.layout);
}

// Top-r left singular vectors of A via the eigendecomposition of A A',
// descending, each column signed so its largest-magnitude entry is positive.
// A = 0 falls back to the leading canonical basis vectors (degenerate flag).
inline Mat leading_singular_vectors(const Mat& A, int r, bool* degenerate = nullptr) {
  const int m = static_cast<int>(A.rows());
  if (r > m) throw std::invalid_argument("leading_singular_vectors: r > m");
  if (degenerate) *degenerate = false;
  Mat U(m, r);
  if (r == 0) return U;
  const Mat gram = A * A.transpose();
  if (gram.cwiseAbs().maxCoeff() == 0.0) {
    if (degenerate) *degenerate = true;
    U.setZero();
    for (int q = 0; q < r; ++q) U(q, q) = 1.0;
    return U;
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(gram);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("leading_singular_vectors: eigensolver failed");
  for (int q = 0; q < r; ++q) {
    Vec u = es.eigenvectors().col(m - 1 - q);
    Eigen::Index imax = 0;
    u.cwiseAbs().maxCoeff(&imax);
    if (u(imax) < 0.0) u = -u;
    U.col(q) = u;
  }
  return U;
}

// Entries below rel_tol * max(gamma) go to exactly zero (the limiting sparse
// prior), so downstream theta_s blocks vanish identically.
inline Vec truncate_gamma(const Vec& gamma, double rel_tol = 1e-8) {
  Vec out = gamma;
  if (gamma.size() == 0) return out;
  const double cut = rel_tol * gamma.maxCoeff();
  for (Eigen::Index i = 0; i < out.size(); ++i)
    if (out(i) < cut) out(i) = 0.0;
  return out;
}

// All-ones hyperparameters scaled so the prior predictor variance is O(1).
inline HyperState initial_hyper(int m, int r, const KernelTilde& kt) {
  const double s = 1.0 / (static_cast<double>(m) * kt.T * kt.K.diagonal().mean());
  HyperState h;
  h.gamma = Vec::Constant(static_cast<Eigen::Index>(m) * m, s);
  h.alpha = s;
  h.beta = Vec::Constant(r, s);
  h.U = Mat::Zero(m, r);
  h.ktilde = kt;
  return h;
}

struct RankRecord {
  int r = 0;
  double ell_best = 0.0;
  int inner_iters = 0;
  int sgp_iters = 0;
};

struct Algorithm1Report {
  std::vector<RankRecord> per_rank;
  int selected_r = 0;
  double wallclock_s = 0.0;
};

struct Algorithm1Options {
  int r_max = -1;  // default m
  SgpOptions sgp;
  int inner_cap = 25;       // safety bound; strict decrease terminates well before
  int sgp_iter_budget = -1;  // total optimizer iterations across all ranks; -1 unbounded
};

struct Algorithm1Result {
  HyperState hyper;  // gamma untruncated; U and beta sized to the selected rank
  double ell = 0.0;
  Algorithm1Report report;
};

// Rank / subspace / hyperparameter selection: sparse-only start, then for
// each candidate rank bootstrap A_l (from the unstructured estimate at r=1,
// from the previous rank's S+L estimate afterwards), take U from its leading
// singular vectors, minimize ell over xi with U fixed, and refine U from the
// newest accepted theta_l while ell strictly decreases (tolerance
// 1e-9 |ell|).  Stops at the first rank that fails to improve on the
// previous one and returns the previous optimum.  A nonnegative
// sgp_iter_budget additionally caps the summed optimizer iterations, after
// which no further minimization starts and the best rank so far stands.
inline Algorithm1Result run_algorithm1(const StackedData& data, const Regressor& reg,
                                       const KernelTilde& kt, const Mat& Sigma,
                                       const Algorithm1Options& opts = {}) {
  WallClock clock;
  const int m = reg.m;
  const int r_max = opts.r_max < 0 ? m : std::min(opts.r_max, m);

  MarglikWorkspace ws_lik(data, reg, Sigma);
  ws_lik.set_ktilde(kt);
  SlWorkspace ws_est(reg, kt);

  struct RankBest {
    HyperState hyper;
    double ell = std::numeric_limits<double>::infinity();
    Vec theta_l;  // S+L posterior theta_l at (hyper), bootstrap for rank+1
  };

  int total_sgp_iters = 0;
  // On instances where the optimizer cannot reach its tolerance, strict-decrease
  // alone never stops iterating (each extra chunk of descent counts as an
  // improvement); the budget bounds the total effort so a run always terminates
  // in predictable time.  A converging run stays far below any sane budget.
  int iters_left = opts.sgp_iter_budget < 0 ? std::numeric_limits<int>::max()
                                            : opts.sgp_iter_budget;
  Vec warm_scale;  // carried diagonal scaling; one beta coordinate joins per rank
  const auto minimize = [&](const HyperState& start) {
    const auto obj = [&](const Vec& xi) { return ws_lik.eval(start.with_xi(xi)); };
    const auto grd = [&](const Vec& xi) {
      Vec g;
      ws_lik.eval_grad(start.with_xi(xi), g);
      return g;
    };
    SgpOptions sopts = opts.sgp;
    sopts.max_iter = std::min(sopts.max_iter, iters_left);
    const Eigen::Index n = start.xi().size();
    if (warm_scale.size() == n) {
      sopts.initial_scale = warm_scale;
    } else if (warm_scale.size() == n - 1) {
      // the new beta coordinate starts from alpha; borrow alpha's scale too
      sopts.initial_scale.resize(n);
      sopts.initial_scale.head(n - 1) = warm_scale;
      sopts.initial_scale(n - 1) = warm_scale(static_cast<Eigen::Index>(m) * m);
    }
    SgpResult res = sgp_minimize(obj, grd, start.xi(), sopts);
    warm_scale = res.scale;
    total_sgp_iters += res.iters;
    iters_left -= res.iters;
    return std::pair<HyperState, double>(start.with_xi(res.x), res.f);
  };

  const auto sl_theta_l = [&](const HyperState& h) {
    const SparseKernel Ks = build_sparse_kernel(h.gamma, kt);
    const LowRankKernel Kl = build_lowrank_kernel(h.alpha, h.beta, h.U, kt);
    return posterior_mean_sl(data, ws_est, Ks, Kl, Sigma).theta_l;
  };

  const auto improved = [](double ell_new, double ell_ref) {
    return ell_new < ell_ref - 1e-9 * std::abs(ell_ref);
  };

  Algorithm1Result out;
  std::vector<RankBest> best(static_cast<std::size_t>(r_max) + 1);

  // rank 0: Lambda = alpha I, no subspace to refine
  {
    total_sgp_iters = 0;
    auto [h0, ell0] = minimize(initial_hyper(m, 0, kt));
    best[0].hyper = h0;
    best[0].ell = ell0;
    best[0].theta_l = sl_theta_l(h0);
    out.report.per_rank.push_back({0, ell0, 0, total_sgp_iters});
  }

  int selected = 0;
  for (int r = 1; r <= r_max && iters_left > 0; ++r) {
    total_sgp_iters = 0;
    Mat A_boot;
    if (r == 1) {
      // unstructured estimate (K = I (x) Ktilde) via the sparse path, gamma = 1
      const SparseKernel Ks_tc =
          build_sparse_kernel(Vec::Ones(static_cast<Eigen::Index>(m) * m), kt);
      const LowRankKernel Kl_zero = build_lowrank_kernel(0.0, Vec(0), Mat::Zero(m, 0), kt);
      const PredictorEstimate tc = posterior_mean_sl(data, ws_est, Ks_tc, Kl_zero, Sigma);
      A_boot = extract_al(tc.theta(), tc.layout);
    } else {
      A_boot = extract_al(best[static_cast<std::size_t>(r - 1)].theta_l, ThetaLayout{m, reg.T});
    }

    HyperState start = best[static_cast<std::size_t>(r - 1)].hyper;
    start.U = leading_singular_vectors(A_boot, r);
    Vec beta_new(r);
    beta_new.head(r - 1) = start.beta;
    beta_new(r - 1) = start.alpha;
    start.beta = beta_new;

    auto [h_acc, ell_acc] = minimize(start);
    Vec theta_l_acc = sl_theta_l(h_acc);

    int inner = 0;
    while (inner < opts.inner_cap && iters_left > 0) {
      HyperState trial = h_acc;
      trial.U = leading_singular_vectors(extract_al(theta_l_acc, ThetaLayout{m, reg.T}), r);
      auto [h_new, ell_new] = minimize(trial);
      if (!improved(ell_new, ell_acc)) break;
      h_acc = h_new;
      ell_acc = ell_new;
      theta_l_acc = sl_theta_l(h_acc);
      ++inner;
    }

    best[static_cast<std::size_t>(r)] = {h_acc, ell_acc, theta_l_acc};
    out.report.per_rank.push_back({r, ell_acc, inner, total_sgp_iters});

    if (!improved(ell_acc, best[static_cast<std::size_t>(r - 1)].ell)) {
      selected = r - 1;
      break;
    }
    selected = r;  // improved through r_max
  }

  out.hyper = best[static_cast<std::size_t>(selected)].hyper;
  out.ell = best[static_cast<std::size_t>(selected)].ell;
  out.report.selected_r = selected;
  out.report.wallclock_s = clock.seconds();
  return out;
}

}  // namespace slnet
