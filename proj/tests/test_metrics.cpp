#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include "json.hpp"

#include "helpers.hpp"
#include "slnet/metrics.hpp"
#include "slnet/model_sim.hpp"

using namespace slnet;

namespace {

PredictorEstimate estimate_with_blocks(int m, int T, const Mat& block_norms) {
  // theta_s block (i,j) is a single spike of the requested norm in lag 0
  PredictorEstimate est;
  est.layout = ThetaLayout{m, T};
  est.theta_s = Vec::Zero(est.layout.dim());
  est.theta_l = Vec::Zero(est.layout.dim());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) est.theta_s(est.layout.offset(i, j, 0)) = block_norms(i, j);
  return est;
}

}  // namespace

TEST_CASE("support keeps blocks above the relative cut and never exact zeros") {
  const int m = 3, T = 4;
  Mat norms = Mat::Zero(m, m);
  norms(0, 1) = 1.0;   // strongest block: edge y2 -> y1
  norms(2, 0) = 0.5;
  norms(1, 2) = 0.04;  // below 5% of max
  PredictorEstimate est = estimate_with_blocks(m, T, norms);

  auto edges = support(est, 0.05);
  REQUIRE(edges.size() == 2);
  CHECK(edges[0] == std::make_pair(0, 1));
  CHECK(edges[1] == std::make_pair(2, 0));

  // tighter threshold drops the weaker block; looser keeps all three
  CHECK(support(est, 0.6).size() == 1);
  CHECK(support(est, 0.01).size() == 3);

  // an all-zero sparse layer has no support at any threshold
  PredictorEstimate zero = estimate_with_blocks(m, T, Mat::Zero(m, m));
  CHECK(support(zero, 0.05).empty());
  CHECK(support(zero, 0.0).empty());

  CHECK_THROWS_AS(support(est, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(support(est, 1.0), std::invalid_argument);
}

TEST_CASE("support is monotone in the threshold") {
  RandomStream rng(401);
  Mat norms(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) norms(i, j) = std::abs(rng.normal());
  PredictorEstimate est = estimate_with_blocks(4, 3, norms);
  std::size_t last = 16;
  for (double thr : {0.0, 0.1, 0.3, 0.6, 0.9}) {
    const std::size_t count = support(est, thr).size();
    CHECK(count <= last);
    last = count;
  }
}

TEST_CASE("complexity contributions count sparse and latent parameters") {
  // dense sparse layer, no latent part: exactly 100 percent
  AcRun dense{9, 0, 3, 5};
  CHECK(ac_contribution(dense) == 100.0);

  // empty model: zero
  AcRun empty{0, 0, 3, 5};
  CHECK(ac_contribution(empty) == 0.0);

  // 4 edges of 40 lags plus one rank on m=6: 100*(160+246)/1440
  AcRun exp1{4, 1, 6, 40};
  CHECK(ac_contribution(exp1) ==
        Catch::Approx(100.0 * (4.0 * 40 + 6 * 40 + 6) / (36.0 * 40)));

  CHECK(ac({dense, empty}) == 50.0);
  CHECK_THROWS_AS(ac({}), std::invalid_argument);
}

TEST_CASE("coefficient of determination spans its scale anchors") {
  GroundTruthModel model = generate_sl_model(3, 1, 3, 6, 0.75, 411);
  TimeSeries test = simulate(model, 120, 412);
  PredictorEstimate truth = true_predictor(model, 10);

  // the exact predictor scores high on its own data
  const double cod_true = cod(test, truth);
  CHECK(cod_true > 0.0);
  CHECK(cod_true <= 100.0);

  // the zero predictor on centered data matches the mean baseline up to the
  // boundary rows the predictions skip
  TimeSeries centered = test;
  centered.values.rowwise() -= test.values.colwise().mean();
  PredictorEstimate zero;
  zero.layout = ThetaLayout{3, 4};
  zero.theta_s = Vec::Zero(zero.layout.dim());
  zero.theta_l = Vec::Zero(zero.layout.dim());
  CHECK(std::abs(cod(centered, zero)) < 5.0);

  // constant test data has no variance to explain
  TimeSeries constant(20, 1);
  constant.values.setOnes();
  PredictorEstimate lag1;
  lag1.layout = ThetaLayout{1, 1};
  lag1.theta_s = Vec::Constant(1, 1.0);
  lag1.theta_l = Vec::Zero(1);
  CHECK_THROWS_AS(cod(constant, lag1), std::invalid_argument);

  // the test series must be longer than the lag window
  TimeSeries short_series(3, 3);
  short_series.values.setRandom();
  CHECK_THROWS_AS(cod(short_series, truth), std::invalid_argument);
}

TEST_CASE("perfect predictions score one hundred percent") {
  // build a series that follows y(t) = 0.5 y(t-1) + 0.2 y(t-2) exactly from
  // a random start, then score the matching predictor
  TimeSeries ts(40, 1);
  ts(0, 0) = 1.0;
  ts(1, 0) = -0.7;
  for (int t = 2; t < 40; ++t) ts(t, 0) = 0.5 * ts(t - 1, 0) + 0.2 * ts(t - 2, 0);
  PredictorEstimate est;
  est.layout = ThetaLayout{1, 2};
  est.theta_s = Vec::Zero(2);
  est.theta_l = Vec::Zero(2);
  est.theta_s(0) = 0.5;
  est.theta_s(1) = 0.2;
  CHECK(cod(ts, est) == Catch::Approx(100.0).margin(1e-9));
}

TEST_CASE("impulse-response fit is anchored by exact recovery and the ensemble mean") {
  const int m = 2;
  RandomStream rng(421);
  std::vector<std::vector<Mat>> truth;
  for (int run = 0; run < 5; ++run) {
    std::vector<Mat> G;
    for (int l = 0; l < 3; ++l) G.push_back(rng.normal_matrix(m, m));
    truth.push_back(G);
  }

  // exact estimates: 100
  CHECK(airf(truth, truth) == 100.0);

  // estimating every run by the ensemble mean: 0
  std::vector<Mat> mean(3, Mat::Zero(m, m));
  for (const auto& G : truth)
    for (int l = 0; l < 3; ++l) mean[static_cast<std::size_t>(l)] += G[static_cast<std::size_t>(l)] / 5.0;
  std::vector<std::vector<Mat>> mean_est(5, mean);
  CHECK(airf(truth, mean_est) == Catch::Approx(0.0).margin(1e-12));

  // per-run fits average to something consistent with the pooled number
  std::vector<double> per = airf_per_run(truth, mean_est);
  REQUIRE(per.size() == 5);
  for (double v : per) CHECK(std::abs(v) < 1e-9);

  // ragged truncations are zero-padded, not an error
  std::vector<std::vector<Mat>> est = truth;
  est[0].resize(2);  // shorter run
  CHECK(airf(truth, est) < 100.0);
  CHECK_NOTHROW(airf_per_run(truth, est));

  // degenerate ensemble: every run equal to the mean
  std::vector<std::vector<Mat>> flat(3, truth[0]);
  CHECK_THROWS_AS(airf(flat, flat), std::invalid_argument);
  CHECK_THROWS_AS(airf({}, {}), std::invalid_argument);
  std::vector<std::vector<Mat>> fewer(truth.begin(), truth.begin() + 3);
  CHECK_THROWS_AS(airf(truth, fewer), std::invalid_argument);
}

TEST_CASE("order statistics interpolate") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 3.0, 2.0}) == 2.5);
  CHECK(quartile({1.0, 2.0, 3.0, 4.0, 5.0}, 0.25) == 2.0);
  CHECK(quartile({1.0, 2.0, 3.0, 4.0}, 0.25) == 1.75);
  CHECK(quartile({1.0, 2.0, 3.0, 4.0}, 0.5) == median({1.0, 2.0, 3.0, 4.0}));
  CHECK_THROWS_AS(median({}), std::invalid_argument);
  CHECK_THROWS_AS(quartile({}, 0.5), std::invalid_argument);
}

TEST_CASE("network export mirrors the estimated structure") {
  NetworkGraph g;
  g.m = 3;
  g.r = 1;
  g.manifest_edges = {{0, 1}, {2, 0}};

  NetworkDocument doc = export_network(g);

  // the JSON side must parse and carry every node and edge
  auto parsed = nlohmann::json::parse(doc.json);
  REQUIRE(parsed["manifest_nodes"].size() == 3);
  CHECK(parsed["manifest_nodes"][0] == "y1");
  REQUIRE(parsed["latent_nodes"].size() == 1);
  CHECK(parsed["latent_nodes"][0] == "z1");
  REQUIRE(parsed["edges"].size() == 2);
  CHECK(parsed["edges"][0]["from"] == "y2");
  CHECK(parsed["edges"][0]["to"] == "y1");
  REQUIRE(parsed["latent_edges"].size() == 3);
  CHECK(parsed["latent_edges"][0]["latent"] == "z1");

  // the DOT side: both clusters, directed manifest edges, dashed
  // double-headed latent attachments
  CHECK(doc.dot.find("digraph granger") != std::string::npos);
  CHECK(doc.dot.find("cluster_manifest") != std::string::npos);
  CHECK(doc.dot.find("cluster_latent") != std::string::npos);
  CHECK(doc.dot.find("rank=same") != std::string::npos);
  CHECK(doc.dot.find("y2 -> y1;") != std::string::npos);
  CHECK(doc.dot.find("y1 -> y3;") != std::string::npos);
  CHECK(doc.dot.find("z1 -> y1 [dir=both, style=dashed];") != std::string::npos);
  CHECK(doc.dot.find("shape=circle") != std::string::npos);
  CHECK(doc.dot.find("shape=diamond") != std::string::npos);

  // no latent layer: no latent cluster, no latent edges
  NetworkGraph flat;
  flat.m = 2;
  flat.r = 0;
  NetworkDocument doc_flat = export_network(flat);
  CHECK(doc_flat.dot.find("cluster_latent") == std::string::npos);
  auto parsed_flat = nlohmann::json::parse(doc_flat.json);
  CHECK(parsed_flat["latent_nodes"].empty());
  CHECK(parsed_flat["latent_edges"].empty());
  CHECK(parsed_flat["edges"].empty());
}

TEST_CASE("network of a ground-truth model lists its planted edges") {
  GroundTruthModel model = generate_sl_model(6, 1, 4, 20, 0.8, 1);
  PredictorEstimate truth = true_predictor(model);
  // keep only the sparse layer's support: the latent layer lives in theta_l
  NetworkGraph g = network_from_estimate(truth, model.n, 0.0);
  CHECK(g.m == 6);
  CHECK(g.r == 1);
  // every planted support cell appears as an edge (threshold 0 keeps all
  // nonzero blocks)
  REQUIRE(g.manifest_edges.size() == model.sparsity_support.size());
  for (const auto& cell : model.sparsity_support)
    CHECK(std::find(g.manifest_edges.begin(), g.manifest_edges.end(), cell) !=
          g.manifest_edges.end());

  NetworkDocument doc = export_network(g);
  auto parsed = nlohmann::json::parse(doc.json);
  CHECK(parsed["manifest_nodes"].size() == 6);
  CHECK(parsed["latent_nodes"].size() == 1);
  CHECK(parsed["edges"].size() == 4);
  CHECK(parsed["latent_edges"].size() == 6);
}
