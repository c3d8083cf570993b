#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"
#include "slnet/noise_arx.hpp"

using namespace slnet;

TEST_CASE("white noise recovers its covariance at long horizons") {
  const int m = 3, N = 10000;
  Mat sigma_true = testutil::random_spd(m, 7);
  Mat L = sigma_true.llt().matrixL();
  RandomStream rng(8);
  TimeSeries ts(N, m);
  for (int t = 0; t < N; ++t) {
    Vec w(m);
    for (int i = 0; i < m; ++i) w(i) = rng.normal();
    ts.values.row(t) = (L * w).transpose();
  }

  SigmaEstimate est = estimate_sigma(ts, 4);
  REQUIRE(est.arx_order == 4);
  REQUIRE(est.residuals.rows() == N - 4);
  CHECK(testutil::rel_error(est.Sigma, sigma_true) < 0.05);
}

TEST_CASE("noise-free autoregression leaves numerically zero residuals") {
  const int m = 2, N = 400;
  Mat A(m, m);
  A << 0.5, 0.1, -0.2, 0.4;
  TimeSeries ts(N, m);
  ts.values.row(0) << 1.0, -1.0;
  for (int t = 1; t < N; ++t)
    ts.values.row(t) = (A * ts.values.row(t - 1).transpose()).transpose();

  SigmaEstimate est = estimate_sigma(ts, 1);
  const double scale = ts.values.squaredNorm() / static_cast<double>(N);
  CHECK(est.Sigma.norm() <= 1e-16 * std::max(1.0, scale));
}

TEST_CASE("sigma estimate is symmetric positive semidefinite") {
  TimeSeries ts = testutil::random_series(300, 3, 17);
  SigmaEstimate est = estimate_sigma(ts, 5);
  CHECK((est.Sigma - est.Sigma.transpose()).norm() == 0.0);
  Eigen::SelfAdjointEigenSolver<Mat> es(est.Sigma);
  CHECK(es.eigenvalues().minCoeff() >= -1e-12);
}

TEST_CASE("residuals satisfy the least-squares normal equations") {
  TimeSeries ts = testutil::random_series(250, 2, 23);
  const int order = 6;
  SigmaEstimate est = estimate_sigma(ts, order);

  const int m = 2;
  const int rows = 250 - order;
  Mat X(rows, m * order);
  for (int t = 0; t < rows; ++t)
    for (int k = 1; k <= order; ++k)
      X.block(t, (k - 1) * m, 1, m) = ts.values.row(order + t - k);
  Mat cross = X.transpose() * est.residuals;
  CHECK(cross.norm() <= 1e-8 * X.norm() * ts.values.norm());
}

TEST_CASE("sigma divisor is the residual count") {
  TimeSeries ts = testutil::random_series(120, 2, 29);
  const int order = 3;
  SigmaEstimate est = estimate_sigma(ts, order);
  Mat sample = est.residuals.transpose() * est.residuals / static_cast<double>(120 - order);
  CHECK(testutil::rel_error(est.Sigma, 0.5 * (sample + sample.transpose())) < 1e-14);
}

TEST_CASE("regularized sigma adds a trace-scaled ridge") {
  TimeSeries ts = testutil::random_series(200, 3, 31);
  SigmaEstimate est = estimate_sigma(ts, 4);
  Mat reg = est.regularized();
  Mat want = est.Sigma + 1e-8 * (est.Sigma.trace() / 3.0) * Mat::Identity(3, 3);
  CHECK((reg - want).norm() == 0.0);
  CHECK(Eigen::LLT<Mat>(reg).info() == Eigen::Success);
}

TEST_CASE("rank-deficient regressors fall back to a ridge solve") {
  // Two identical channels make X rank deficient; the fit must still succeed
  // and reproduce the (perfectly predictable) series.
  const int N = 100;
  TimeSeries one = testutil::random_series(N, 1, 37);
  TimeSeries ts(N, 2);
  ts.values.col(0) = one.values.col(0);
  ts.values.col(1) = one.values.col(0);
  SigmaEstimate est = estimate_sigma(ts, 3);
  CHECK(est.Sigma.allFinite());
}

TEST_CASE("default order tracks the lag budget and the data budget") {
  CHECK(default_arx_order(500, 6, 40) == 20);   // N/(4m) binds
  CHECK(default_arx_order(10000, 6, 40) == 80); // 2T binds
  CHECK(default_arx_order(30, 6, 40) == 1);     // floor at 1
}

TEST_CASE("sigma estimation rejects impossible fits") {
  TimeSeries ts = testutil::random_series(50, 2, 41);
  CHECK_THROWS_AS(estimate_sigma(ts, 0), std::invalid_argument);
  CHECK_THROWS_AS(estimate_sigma(ts, -2), std::invalid_argument);
  TimeSeries tiny = testutil::random_series(9, 2, 43);
  CHECK_THROWS_AS(estimate_sigma(tiny, 4), std::invalid_argument);  // N <= m*order+m
}
