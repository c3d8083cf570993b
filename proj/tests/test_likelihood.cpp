#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"
#include "slnet/likelihood.hpp"
#include "slnet/model_sim.hpp"

using namespace slnet;

namespace {

HyperState feasible_hyper(int m, int r, const KernelTilde& kt, std::uint64_t seed) {
  return testutil::random_hyper(m, r, kt, seed);
}

}  // namespace

TEST_CASE("scalar negative log marginal likelihood has its closed-form value") {
  // m=1, T=1, series (1, 2): Phi = [1], y = 2, Ktilde = 2 * 0.5 = 1,
  // Sigma = 1 -> V = 2 -> ell = 1/2 log 2 + 1/2 * 4/2.
  TimeSeries ts(2, 1);
  ts.values << 1.0, 2.0;
  StackedData data = stack_outputs(ts, 1);
  Regressor reg = build_regressor(ts, 1);
  KernelTilde kt = tc_kernel(2.0, 0.5, 1);

  HyperState h;
  h.gamma = Vec::Ones(1);
  h.alpha = 0.0;
  h.beta = Vec(0);
  h.U = Mat(1, 0);
  h.ktilde = kt;

  const double got = neg_log_marglik(data, reg, h, Mat::Identity(1, 1));
  CHECK(got == Catch::Approx(0.5 * std::log(2.0) + 1.0).epsilon(1e-14));
}

TEST_CASE("core-space evaluation equals the dense covariance form") {
  const int m = 3, T = 4, N = 34;
  TimeSeries ts = testutil::random_series(N, m, 131);
  StackedData data = stack_outputs(ts, T);
  Regressor reg = build_regressor(ts, T);
  KernelTilde kt = tc_kernel(0.9, 0.6, T);
  Mat sigma = testutil::random_spd(m, 132);

  MarglikWorkspace ws(data, reg, sigma);
  ws.set_ktilde(kt);

  for (int r : {0, 1, 2}) {
    HyperState h = feasible_hyper(m, r, kt, 140 + r);
    const double fast = ws.eval(h);
    const Mat K = kron(h.theta_cov(), kt.K);
    const double dense = testutil::dense_marglik(data, reg, K, sigma);
    CHECK(fast == Catch::Approx(dense).epsilon(1e-10));
  }
}

TEST_CASE("free functions agree with the workspace") {
  const int m = 2, T = 3, N = 24;
  TimeSeries ts = testutil::random_series(N, m, 151);
  StackedData data = stack_outputs(ts, T);
  Regressor reg = build_regressor(ts, T);
  KernelTilde kt = tc_kernel(1.1, 0.5, T);
  Mat sigma = testutil::random_spd(m, 152);
  HyperState h = feasible_hyper(m, 1, kt, 153);

  MarglikWorkspace ws(data, reg, sigma);
  ws.set_ktilde(kt);
  CHECK(neg_log_marglik(data, reg, h, sigma) == Catch::Approx(ws.eval(h)).epsilon(1e-14));

  Vec g1 = marglik_gradient(data, reg, h, sigma);
  Vec g2;
  const double ell = ws.eval_grad(h, g2);
  CHECK(ell == Catch::Approx(ws.eval(h)).epsilon(1e-14));
  CHECK((g1 - g2).norm() == 0.0);
}

TEST_CASE("analytic gradient matches central finite differences") {
  const int m = 3, T = 4, N = 34;  // n_prime = 30
  TimeSeries ts = testutil::random_series(N, m, 161);
  StackedData data = stack_outputs(ts, T);
  Regressor reg = build_regressor(ts, T);
  REQUIRE(reg.n_prime == 30);
  KernelTilde kt = tc_kernel(1.0, 0.55, T);
  Mat sigma = testutil::random_spd(m, 162);

  MarglikWorkspace ws(data, reg, sigma);
  ws.set_ktilde(kt);

  for (int point = 0; point < 10; ++point) {
    HyperState h = feasible_hyper(m, point % 3, kt, 170 + point);
    const auto f = [&](const Vec& xi) { return ws.eval(h.with_xi(xi)); };
    Vec grad;
    ws.eval_grad(h, grad);
    Vec fd = testutil::fd_gradient(f, h.xi());
    CHECK(testutil::rel_error(grad, fd) <= 1e-4);
  }
}

TEST_CASE("gradient components carry the rank structure") {
  // At beta_q = alpha the Lambda surface is smooth across the split, so the
  // alpha and beta partials must sum to the r=0 alpha partial.
  const int m = 3, T = 3, N = 26;
  TimeSeries ts = testutil::random_series(N, m, 181);
  StackedData data = stack_outputs(ts, T);
  Regressor reg = build_regressor(ts, T);
  KernelTilde kt = tc_kernel(1.0, 0.5, T);
  Mat sigma = testutil::random_spd(m, 182);

  MarglikWorkspace ws(data, reg, sigma);
  ws.set_ktilde(kt);

  HyperState flat = feasible_hyper(m, 0, kt, 183);
  Vec g_flat;
  ws.eval_grad(flat, g_flat);

  RandomStream rng(184);
  HyperState split = flat;
  split.U = testutil::random_orthonormal(m, 1, rng);
  split.beta = Vec::Constant(1, flat.alpha);
  Vec g_split;
  const double ell_split = ws.eval_grad(split, g_split);

  CHECK(ell_split == Catch::Approx(ws.eval(flat)).epsilon(1e-12));
  CHECK(g_split.head(m * m).isApprox(g_flat.head(m * m), 1e-10));
  CHECK(g_split(m * m) + g_split(m * m + 1) ==
        Catch::Approx(g_flat(m * m)).epsilon(1e-9));
}

TEST_CASE("kernel scale search tracks the decay of the predictor coefficients") {
  // Two scalar processes with opposite one-step-predictor profiles.  An AR(1)
  // predictor is a single spike at lag one, so evidence favours the fastest
  // decay on the grid; an MA(1) with parameter -0.9 has same-sign predictor
  // weights shrinking like 0.9^k, which demands a slow decay.  Together they
  // rule out a search stuck at either end of its grid.
  const int N = 400, T = 10;

  RandomStream rng_ar(191);
  TimeSeries ar(N, 1);
  double y = 0.0;
  for (int t = 0; t < N; ++t) {
    y = 0.9 * y + 0.3 * rng_ar.normal();
    ar(t, 0) = y;
  }
  StackedData data_ar = stack_outputs(ar, T);
  Regressor reg_ar = build_regressor(ar, T);
  KtildeChoice fast = estimate_ktilde_hyper(data_ar, reg_ar, Mat::Constant(1, 1, 0.09));
  CHECK(fast.lambda <= 0.5);
  CHECK(fast.c > 0.0);

  RandomStream rng_ma(193);
  TimeSeries ma(N, 1);
  double e_prev = rng_ma.normal();
  for (int t = 0; t < N; ++t) {
    const double e = rng_ma.normal();
    ma(t, 0) = e - 0.9 * e_prev;
    e_prev = e;
  }
  StackedData data_ma = stack_outputs(ma, T);
  Regressor reg_ma = build_regressor(ma, T);
  KtildeChoice slow = estimate_ktilde_hyper(data_ma, reg_ma, Mat::Constant(1, 1, 1.0));
  CHECK(slow.lambda >= 0.5);
  CHECK(slow.c > 0.0);

  // The reported objective must equal the generic evaluator at the same
  // unstructured prior gamma = 1, Lambda = 0.
  HyperState h;
  h.gamma = Vec::Ones(1);
  h.alpha = 0.0;
  h.beta = Vec(0);
  h.U = Mat(1, 0);
  h.ktilde = tc_kernel(slow.c, slow.lambda, T);
  const double check = neg_log_marglik(data_ma, reg_ma, h, Mat::Constant(1, 1, 1.0));
  CHECK(slow.ell == Catch::Approx(check).epsilon(1e-8));
}

TEST_CASE("kernel scale search is deterministic and bounded by its grid") {
  const int m = 2, T = 5, N = 60;
  TimeSeries ts = testutil::random_series(N, m, 201);
  StackedData data = stack_outputs(ts, T);
  Regressor reg = build_regressor(ts, T);
  Mat sigma = testutil::random_spd(m, 202);

  KtildeChoice a = estimate_ktilde_hyper(data, reg, sigma);
  KtildeChoice b = estimate_ktilde_hyper(data, reg, sigma);
  CHECK(a.c == b.c);
  CHECK(a.lambda == b.lambda);
  CHECK(a.ell == b.ell);
  CHECK(a.lambda >= 0.30);
  CHECK(a.lambda <= 0.95);
  CHECK(a.c >= std::pow(10.0, -6.0));
  CHECK(a.c <= std::pow(10.0, 2.0));

  // multi-output consistency against the generic evaluator
  HyperState h;
  h.gamma = Vec::Ones(m * m);
  h.alpha = 0.0;
  h.beta = Vec(0);
  h.U = Mat(m, 0);
  h.ktilde = tc_kernel(a.c, a.lambda, T);
  CHECK(a.ell == Catch::Approx(neg_log_marglik(data, reg, h, sigma)).epsilon(1e-8));
}

TEST_CASE("likelihood workspace rejects malformed inputs") {
  const int m = 2, T = 3, N = 20;
  TimeSeries ts = testutil::random_series(N, m, 211);
  StackedData data = stack_outputs(ts, T);
  Regressor reg = build_regressor(ts, T);
  KernelTilde kt = tc_kernel(1.0, 0.5, T);

  CHECK_THROWS_AS(MarglikWorkspace(data, reg, Mat::Zero(m, m)), std::invalid_argument);

  MarglikWorkspace ws(data, reg, Mat::Identity(m, m));
  HyperState h = feasible_hyper(m, 0, kt, 212);
  CHECK_THROWS_AS(ws.eval(h), std::logic_error);  // Ktilde not set yet

  CHECK_THROWS_AS(ws.set_ktilde(tc_kernel(1.0, 0.5, T + 1)), std::invalid_argument);
  ws.set_ktilde(kt);

  HyperState wrong_kt = h;
  wrong_kt.ktilde = tc_kernel(2.0, 0.5, T);
  CHECK_THROWS_AS(ws.eval(wrong_kt), std::invalid_argument);

  HyperState negative = h;
  negative.gamma(0) = -1.0;
  CHECK_THROWS_AS(ws.eval(negative), std::invalid_argument);

  HyperState short_gamma = h;
  short_gamma.gamma = Vec::Ones(m);
  CHECK_THROWS_AS(ws.eval(short_gamma), std::invalid_argument);

  CHECK_THROWS_AS(h.with_xi(Vec::Ones(2)), std::invalid_argument);
}
