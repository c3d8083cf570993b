#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "slnet/estimator.hpp"
#include "slnet/hyperloop.hpp"
#include "slnet/io.hpp"
#include "slnet/likelihood.hpp"
#include "slnet/metrics.hpp"
#include "slnet/model_sim.hpp"
#include "slnet/noise_arx.hpp"
#include "slnet/util.hpp"

namespace slnet {

// One reproducible experiment: model/data parameters, identification
// parameters, and output plumbing.  The config hash covers everything that
// affects numbers (not the output paths), and is embedded in every artifact.
struct RunConfig {
  int m = 6;
  int n = 1;
  int nnz_s = 4;
  int T_true = 20;
  double decay = 0.8;
  int N = 500;  // train and test length
  int T = 40;   // predictor lags
  std::uint64_t seed = 1;
  int seeds = 1;  // Monte Carlo runs use seed, seed+1, ...
  double threshold = 0.05;
  int rmax = -1;  // cap on the latent rank; -1 means m
  double sgp_tol = 1e-5;
  int sgp_max_iter = 200;
  std::string out = "out";
  std::string format = "json";  // network export: json, csv, or dot

  void validate() const {
    if (m <= 0 || n < 0 || n >= m) throw std::invalid_argument("config: need 0 <= n < m, m > 0");
    if (nnz_s < 0 || nnz_s > m * m) throw std::invalid_argument("config: need 0 <= nnz <= m^2");
    if (T_true <= 0 || T <= 0) throw std::invalid_argument("config: lag counts must be positive");
    if (!(decay > 0.0 && decay < 1.0)) throw std::invalid_argument("config: decay must be in (0,1)");
    if (N <= T) throw std::invalid_argument("config: need N > T");
    if (seeds <= 0) throw std::invalid_argument("config: seeds must be positive");
    if (threshold < 0.0 || threshold >= 1.0)
      throw std::invalid_argument("config: threshold must be in [0,1)");
    if (rmax < -1 || rmax > m) throw std::invalid_argument("config: rmax must be in [-1, m]");
    if (!(sgp_tol > 0.0) || sgp_max_iter <= 0)
      throw std::invalid_argument("config: optimizer options must be positive");
    if (format != "json" && format != "csv" && format != "dot")
      throw std::invalid_argument("config: format must be json, csv, or dot");
  }

  std::string canonical() const {
    std::ostringstream ss;
    ss.precision(17);
    ss << "m=" << m << ";n=" << n << ";nnz=" << nnz_s << ";T_true=" << T_true
       << ";decay=" << decay << ";N=" << N << ";T=" << T << ";seed=" << seed
       << ";seeds=" << seeds << ";threshold=" << threshold << ";rmax=" << rmax
       << ";sgp_tol=" << sgp_tol << ";sgp_max_iter=" << sgp_max_iter;
    return ss.str();
  }

  std::uint64_t hash() const { return fnv1a64(canonical()); }
};

struct SimArtifacts {
  GroundTruthModel model;
  TimeSeries train;
  TimeSeries test;
};

// Disjoint noise streams per run: the model uses the run seed itself, the
// train and test innovations use 2*seed+1 and 2*seed+2.
inline SimArtifacts simulate_run(const RunConfig& cfg, std::uint64_t seed) {
  SimArtifacts sim;
  sim.model = generate_sl_model(cfg.m, cfg.n, cfg.nnz_s, cfg.T_true, cfg.decay, seed);
  sim.train = simulate(sim.model, cfg.N, 2 * seed + 1);
  sim.test = simulate(sim.model, cfg.N, 2 * seed + 2);
  return sim;
}

struct IdentifyOutput {
  PredictorEstimate est_sl;  // posterior mean with truncated gamma
  PredictorEstimate est_tc;  // unstructured comparator, same Ktilde
  HyperState hyper;          // selected optimum, gamma untruncated
  KtildeChoice kt_choice;
  Algorithm1Report report;
  double ell = 0.0;
  int arx_order = 0;
  std::vector<std::pair<int, int>> edges;
  double wallclock_s = 0.0;
};

// Full identification chain on one training series: innovation covariance
// from a long ARX fit, kernel scale/decay from the unstructured evidence,
// rank/subspace/hyperparameters from the marginal-likelihood loop, then the
// final posterior means (gamma truncated so pruned blocks are exact zeros).
inline IdentifyOutput identify(const TimeSeries& train, const RunConfig& cfg) {
  WallClock clock;
  IdentifyOutput out;
  const int m = static_cast<int>(train.m());

  const int order = default_arx_order(static_cast<int>(train.N()), m, cfg.T);
  const SigmaEstimate se = estimate_sigma(train, order);
  const Mat Sigma = se.regularized();
  out.arx_order = se.arx_order;

  const StackedData data = stack_outputs(train, cfg.T);
  const Regressor reg = build_regressor(train, cfg.T);

  out.kt_choice = estimate_ktilde_hyper(data, reg, Sigma);
  const KernelTilde kt = tc_kernel(out.kt_choice.c, out.kt_choice.lambda, cfg.T);

  Algorithm1Options aopts;
  aopts.r_max = cfg.rmax;
  aopts.sgp.tol = cfg.sgp_tol;
  aopts.sgp.max_iter = cfg.sgp_max_iter;
  const Algorithm1Result alg = run_algorithm1(data, reg, kt, Sigma, aopts);
  out.hyper = alg.hyper;
  out.report = alg.report;
  out.ell = alg.ell;

  SlWorkspace ws(reg, kt);
  const SparseKernel Ks = build_sparse_kernel(truncate_gamma(alg.hyper.gamma), kt);
  const LowRankKernel Kl =
      build_lowrank_kernel(alg.hyper.alpha, alg.hyper.beta, alg.hyper.U, kt);
  out.est_sl = posterior_mean_sl(data, ws, Ks, Kl, Sigma);

  const SparseKernel Ks_tc =
      build_sparse_kernel(Vec::Ones(static_cast<Eigen::Index>(m) * m), kt);
  const LowRankKernel Kl_zero = build_lowrank_kernel(0.0, Vec(0), Mat::Zero(m, 0), kt);
  out.est_tc = posterior_mean_sl(data, ws, Ks_tc, Kl_zero, Sigma);

  out.edges = support(out.est_sl, cfg.threshold);
  out.wallclock_s = clock.seconds();
  return out;
}

// Everything one Monte Carlo seed contributes: the two estimates plus scalar
// metrics.  AIRF columns are filled in after the whole ensemble exists.
struct RunRecord {
  int run_id = 0;
  std::uint64_t seed = 0;
  int selected_r = 0;
  int support_size = 0;
  double cod_sl = 0.0;
  double cod_tc = 0.0;
  double cod_true = 0.0;
  double airf_sl = 0.0;
  double airf_tc = 0.0;
  double ac_contrib = 0.0;
  double wallclock_s = 0.0;
  PredictorEstimate est_sl;
  PredictorEstimate est_tc;
  std::vector<std::pair<int, int>> edges;
  Algorithm1Report report;
  KtildeChoice kt_choice;
};

namespace detail {

inline nlohmann::json run_record_to_json(const RunRecord& rec, std::uint64_t config_hash) {
  nlohmann::json j;
  j["_meta"] = {{"config_hash", config_hash}, {"seed", rec.seed}};
  j["run_id"] = rec.run_id;
  j["selected_r"] = rec.selected_r;
  j["support_size"] = rec.support_size;
  j["cod_sl"] = rec.cod_sl;
  j["cod_tc"] = rec.cod_tc;
  j["cod_true"] = rec.cod_true;
  j["ac_contrib"] = rec.ac_contrib;
  j["wallclock_s"] = rec.wallclock_s;
  j["estimate_sl"] = io::estimate_to_json(rec.est_sl);
  j["estimate_tc"] = io::estimate_to_json(rec.est_tc);
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [i, jj] : rec.edges) edges.push_back(nlohmann::json::array({i, jj}));
  j["edges"] = std::move(edges);
  j["report"] = io::report_to_json(rec.report);
  j["ktilde"] = {{"c", rec.kt_choice.c}, {"lambda", rec.kt_choice.lambda}, {"ell", rec.kt_choice.ell}};
  return j;
}

inline std::optional<RunRecord> run_record_from_json(const nlohmann::json& j,
                                                     std::uint64_t config_hash) {
  if (!j.contains("_meta") || j["_meta"].value("config_hash", std::uint64_t{0}) != config_hash)
    return std::nullopt;
  RunRecord rec;
  rec.run_id = j.at("run_id").get<int>();
  rec.seed = j.at("_meta").at("seed").get<std::uint64_t>();
  rec.selected_r = j.at("selected_r").get<int>();
  rec.support_size = j.at("support_size").get<int>();
  rec.cod_sl = j.at("cod_sl").get<double>();
  rec.cod_tc = j.at("cod_tc").get<double>();
  rec.cod_true = j.at("cod_true").get<double>();
  rec.ac_contrib = j.at("ac_contrib").get<double>();
  rec.wallclock_s = j.value("wallclock_s", 0.0);
  rec.est_sl = io::estimate_from_json(j.at("estimate_sl"));
  rec.est_tc = io::estimate_from_json(j.at("estimate_tc"));
  for (const auto& e : j.at("edges")) rec.edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
  return rec;
}

}  // namespace detail

// One end-to-end seeded run: simulate, identify, score against the test set
// and the exact predictor of the generating model.
inline RunRecord process_seed(const RunConfig& cfg, int run_id, std::uint64_t seed) {
  WallClock clock;
  const SimArtifacts sim = simulate_run(cfg, seed);
  const IdentifyOutput ident = identify(sim.train, cfg);

  RunRecord rec;
  rec.run_id = run_id;
  rec.seed = seed;
  rec.selected_r = ident.report.selected_r;
  rec.est_sl = ident.est_sl;
  rec.est_tc = ident.est_tc;
  rec.edges = ident.edges;
  rec.support_size = static_cast<int>(ident.edges.size());
  rec.report = ident.report;
  rec.kt_choice = ident.kt_choice;

  const PredictorEstimate truth = true_predictor(sim.model, cfg.T);
  rec.cod_sl = cod(sim.test, ident.est_sl);
  rec.cod_tc = cod(sim.test, ident.est_tc);
  rec.cod_true = cod(sim.test, truth);
  rec.ac_contrib = ac_contribution({rec.support_size, rec.selected_r, cfg.m, cfg.T});
  rec.wallclock_s = clock.seconds();
  return rec;
}

struct MonteCarloSummary {
  std::vector<RunRecord> runs;  // seed order
  double ac = 0.0;
  double airf_sl = 0.0;
  double airf_tc = 0.0;
  std::uint64_t config_hash = 0;
  double wallclock_s = 0.0;
};

// Monte Carlo driver: seeds dispatched to a pool sized by the hardware, each
// worker running the single-threaded pipeline; slots are merged in seed order
// so the schedule cannot affect any output.  Completed seeds found on disk
// under the same config hash are reused instead of recomputed.
inline MonteCarloSummary run_montecarlo(const RunConfig& cfg, bool resume = true) {
  cfg.validate();
  WallClock clock;
  MonteCarloSummary summary;
  summary.config_hash = cfg.hash();
  const std::filesystem::path outdir(cfg.out);
  std::filesystem::create_directories(outdir);

  const int R = cfg.seeds;
  std::vector<std::optional<RunRecord>> slots(static_cast<std::size_t>(R));

  const auto checkpoint_path = [&](std::uint64_t seed) {
    return outdir / ("run_" + std::to_string(seed) + ".json");
  };

  for (int k = 0; k < R; ++k) {
    const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(k);
    if (!resume) continue;
    const auto path = checkpoint_path(seed);
    if (!std::filesystem::exists(path)) continue;
    try {
      auto rec = detail::run_record_from_json(io::read_json(path.string()), summary.config_hash);
      if (rec && rec->seed == seed) {
        rec->run_id = k;
        slots[static_cast<std::size_t>(k)] = std::move(*rec);
      }
    } catch (const std::exception&) {
      // unreadable checkpoint: recompute the seed
    }
  }

  std::atomic<int> next{0};
  std::mutex io_mutex;
  std::exception_ptr first_error;
  const auto worker = [&] {
    for (;;) {
      const int k = next.fetch_add(1);
      if (k >= R) return;
      if (slots[static_cast<std::size_t>(k)].has_value()) continue;
      const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(k);
      try {
        RunRecord rec = process_seed(cfg, k, seed);
        const auto j = detail::run_record_to_json(rec, summary.config_hash);
        {
          std::lock_guard<std::mutex> lock(io_mutex);
          io::write_json(checkpoint_path(seed).string(), j);
        }
        slots[static_cast<std::size_t>(k)] = std::move(rec);
      } catch (...) {
        std::lock_guard<std::mutex> lock(io_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const unsigned n_workers = std::min<unsigned>(hw, static_cast<unsigned>(R));
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  summary.runs.reserve(static_cast<std::size_t>(R));
  for (int k = 0; k < R; ++k) summary.runs.push_back(std::move(*slots[static_cast<std::size_t>(k)]));

  // ensemble metrics need every run's coefficient sequences; truth is
  // regenerated from the seeds (cheap and exact)
  std::vector<std::vector<Mat>> g_true, g_sl, g_tc;
  std::vector<AcRun> ac_runs;
  for (const RunRecord& rec : summary.runs) {
    const GroundTruthModel model =
        generate_sl_model(cfg.m, cfg.n, cfg.nnz_s, cfg.T_true, cfg.decay, rec.seed);
    const PredictorEstimate truth = true_predictor(model, cfg.T);
    g_true.push_back(unstack_theta(truth.theta(), truth.layout));
    g_sl.push_back(unstack_theta(rec.est_sl.theta(), rec.est_sl.layout));
    g_tc.push_back(unstack_theta(rec.est_tc.theta(), rec.est_tc.layout));
    ac_runs.push_back({rec.support_size, rec.selected_r, cfg.m, cfg.T});
  }
  summary.ac = ac(ac_runs);
  summary.airf_sl = airf(g_true, g_sl);
  summary.airf_tc = airf(g_true, g_tc);
  const std::vector<double> airf_sl_runs = airf_per_run(g_true, g_sl);
  const std::vector<double> airf_tc_runs = airf_per_run(g_true, g_tc);
  for (int k = 0; k < R; ++k) {
    summary.runs[static_cast<std::size_t>(k)].airf_sl = airf_sl_runs[static_cast<std::size_t>(k)];
    summary.runs[static_cast<std::size_t>(k)].airf_tc = airf_tc_runs[static_cast<std::size_t>(k)];
  }
  summary.wallclock_s = clock.seconds();
  return summary;
}

namespace detail {

inline std::string csv_meta_line(const RunConfig& cfg) {
  std::ostringstream ss;
  ss << "# config_hash=" << cfg.hash() << " " << cfg.canonical() << "\n";
  return ss.str();
}

}  // namespace detail

// Wide per-run CSV, long-format CSV for box plots, and a summary JSON with
// medians and quartiles.
inline void write_montecarlo_outputs(const RunConfig& cfg, const MonteCarloSummary& summary) {
  const std::filesystem::path outdir(cfg.out);
  std::filesystem::create_directories(outdir);

  std::ostringstream wide;
  wide.precision(17);
  wide << detail::csv_meta_line(cfg);
  wide << "run_id,seed,cod_sl,cod_tc,cod_true,airf_sl,airf_tc,ac_contrib,selected_r\n";
  for (const RunRecord& rec : summary.runs)
    wide << rec.run_id << "," << rec.seed << "," << rec.cod_sl << "," << rec.cod_tc << ","
         << rec.cod_true << "," << rec.airf_sl << "," << rec.airf_tc << "," << rec.ac_contrib
         << "," << rec.selected_r << "\n";
  io::write_text((outdir / "metrics_wide.csv").string(), wide.str());

  std::ostringstream lng;
  lng.precision(17);
  lng << detail::csv_meta_line(cfg);
  lng << "run_id,method,metric,value\n";
  for (const RunRecord& rec : summary.runs) {
    lng << rec.run_id << ",sl,cod," << rec.cod_sl << "\n";
    lng << rec.run_id << ",tc,cod," << rec.cod_tc << "\n";
    lng << rec.run_id << ",true,cod," << rec.cod_true << "\n";
    lng << rec.run_id << ",sl,airf," << rec.airf_sl << "\n";
    lng << rec.run_id << ",tc,airf," << rec.airf_tc << "\n";
    lng << rec.run_id << ",sl,ac," << rec.ac_contrib << "\n";
    lng << rec.run_id << ",sl,selected_r," << rec.selected_r << "\n";
  }
  io::write_text((outdir / "metrics_long.csv").string(), lng.str());

  const auto column = [&](auto&& get) {
    std::vector<double> v;
    v.reserve(summary.runs.size());
    for (const RunRecord& rec : summary.runs) v.push_back(get(rec));
    return v;
  };
  const auto stats = [&](std::vector<double> v) {
    return nlohmann::json{{"median", median(v)},
                          {"q25", quartile(v, 0.25)},
                          {"q75", quartile(v, 0.75)}};
  };

  nlohmann::json j;
  j["_meta"] = {{"config_hash", summary.config_hash},
                {"config", cfg.canonical()},
                {"wallclock_s", summary.wallclock_s}};
  j["runs"] = summary.runs.size();
  j["ac"] = summary.ac;
  j["airf_sl"] = summary.airf_sl;
  j["airf_tc"] = summary.airf_tc;
  j["cod_sl"] = stats(column([](const RunRecord& r) { return r.cod_sl; }));
  j["cod_tc"] = stats(column([](const RunRecord& r) { return r.cod_tc; }));
  j["cod_true"] = stats(column([](const RunRecord& r) { return r.cod_true; }));
  j["airf_sl_runs"] = stats(column([](const RunRecord& r) { return r.airf_sl; }));
  j["airf_tc_runs"] = stats(column([](const RunRecord& r) { return r.airf_tc; }));
  j["ac_runs"] = stats(column([](const RunRecord& r) { return r.ac_contrib; }));
  nlohmann::json r_counts = nlohmann::json::object();
  for (const RunRecord& rec : summary.runs) {
    const std::string key = std::to_string(rec.selected_r);
    r_counts[key] = r_counts.value(key, 0) + 1;
  }
  j["selected_r_counts"] = std::move(r_counts);
  io::write_json((outdir / "summary.json").string(), j);
}

// Identification artifacts for one data set: estimates, hyperparameters,
// network (in the configured format), and the rank-selection report.
inline void write_identify_outputs(const RunConfig& cfg, const IdentifyOutput& ident) {
  const std::filesystem::path outdir(cfg.out);
  std::filesystem::create_directories(outdir);
  const nlohmann::json meta = {{"config_hash", cfg.hash()}, {"config", cfg.canonical()}};

  nlohmann::json je = io::estimate_to_json(ident.est_sl);
  je["_meta"] = meta;
  io::write_json((outdir / "estimate_sl.json").string(), je);

  nlohmann::json jt = io::estimate_to_json(ident.est_tc);
  jt["_meta"] = meta;
  io::write_json((outdir / "estimate_tc.json").string(), jt);

  nlohmann::json jh = io::hyper_to_json(ident.hyper);
  jh["_meta"] = meta;
  jh["ktilde_search"] = {{"c", ident.kt_choice.c},
                         {"lambda", ident.kt_choice.lambda},
                         {"ell", ident.kt_choice.ell}};
  jh["arx_order"] = ident.arx_order;
  io::write_json((outdir / "hyper.json").string(), jh);

  nlohmann::json jr = io::report_to_json(ident.report);
  jr["_meta"] = meta;
  jr["ell"] = ident.ell;
  jr["wallclock_s"] = ident.wallclock_s;
  io::write_json((outdir / "report.json").string(), jr);

  const NetworkGraph graph = network_from_estimate(ident.est_sl, ident.report.selected_r,
                                                   cfg.threshold);
  const NetworkDocument doc = export_network(graph);
  if (cfg.format == "dot") {
    io::write_text((outdir / "network.dot").string(), doc.dot);
  } else if (cfg.format == "csv") {
    std::ostringstream csv;
    csv << detail::csv_meta_line(cfg) << "from,to\n";
    for (const auto& [i, j] : graph.manifest_edges) csv << "y" << j + 1 << ",y" << i + 1 << "\n";
    io::write_text((outdir / "network.csv").string(), csv.str());
  } else {
    io::write_text((outdir / "network.json").string(), doc.json);
  }
}

}  // namespace slnet
