#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "slnet/slnet.hpp"

namespace fs = std::filesystem;
using namespace slnet;

namespace {

void add_config_options(CLI::App* cmd, RunConfig& cfg) {
  cmd->add_option("--m", cfg.m, "manifest variables");
  cmd->add_option("--n", cfg.n, "latent variables in the generator");
  cmd->add_option("--nnz", cfg.nnz_s, "nonzero sparse transfer functions");
  cmd->add_option("--T-true", cfg.T_true, "generator impulse-response length");
  cmd->add_option("--decay", cfg.decay, "per-lag coefficient decay in (0,1)");
  cmd->add_option("--N", cfg.N, "train/test series length");
  cmd->add_option("--T", cfg.T, "predictor lags");
  cmd->add_option("--seed", cfg.seed, "first seed");
  cmd->add_option("--seeds", cfg.seeds, "number of Monte Carlo seeds");
  cmd->add_option("--threshold", cfg.threshold, "relative support threshold");
  cmd->add_option("--rmax", cfg.rmax, "latent rank cap (-1 means m)");
  cmd->add_option("--sgp-tol", cfg.sgp_tol, "optimizer KKT tolerance");
  cmd->add_option("--sgp-max-iter", cfg.sgp_max_iter, "optimizer iteration cap");
  cmd->add_option("--out", cfg.out, "output directory");
  cmd->add_option("--format", cfg.format, "network export format: json|csv|dot");
  cmd->set_config("--config", "", "key=value config file; command line overrides");
}

int cmd_simulate(const RunConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out);
  const std::string hash_line = "config_hash=" + std::to_string(cfg.hash());
  for (int k = 0; k < cfg.seeds; ++k) {
    const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(k);
    const SimArtifacts sim = simulate_run(cfg, seed);
    nlohmann::json jm = io::model_to_json(sim.model);
    jm["_meta"] = {{"config_hash", cfg.hash()}, {"config", cfg.canonical()}};
    const fs::path outdir(cfg.out);
    io::write_json((outdir / ("model_" + std::to_string(seed) + ".json")).string(), jm);
    io::write_timeseries_csv((outdir / ("train_" + std::to_string(seed) + ".csv")).string(),
                             sim.train, {hash_line});
    io::write_timeseries_csv((outdir / ("test_" + std::to_string(seed) + ".csv")).string(),
                             sim.test, {hash_line});
  }
  std::cout << "wrote " << cfg.seeds << " model/train/test set(s) to " << cfg.out << "\n";
  return 0;
}

int cmd_identify(RunConfig cfg, const std::string& data_path) {
  const TimeSeries train = io::read_timeseries_csv(data_path);
  cfg.m = static_cast<int>(train.m());
  cfg.n = 0;
  cfg.nnz_s = 0;
  cfg.N = static_cast<int>(train.N());
  cfg.validate();
  const IdentifyOutput ident = identify(train, cfg);
  write_identify_outputs(cfg, ident);
  std::cout << "selected rank " << ident.report.selected_r << ", "
            << ident.edges.size() << " sparse edge(s), outputs in " << cfg.out << "\n";
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& estimate_path,
                 const std::string& test_path, const std::string& model_path) {
  const PredictorEstimate est = io::estimate_from_json(io::read_json(estimate_path));
  const TimeSeries test = io::read_timeseries_csv(test_path);
  if (test.m() != est.layout.m)
    throw std::invalid_argument("evaluate: test series and estimate disagree on m");

  std::ostringstream csv;
  csv.precision(17);
  csv << "# config_hash=" << cfg.hash() << "\n";
  csv << "metric,value\n";
  csv << "cod," << cod(test, est) << "\n";

  if (!model_path.empty()) {
    const GroundTruthModel model = io::model_from_json(io::read_json(model_path));
    const PredictorEstimate truth = true_predictor(model, est.layout.T);
    csv << "cod_true," << cod(test, truth) << "\n";
    // single-run impulse-response fit, baseline = zero predictor
    double err = 0.0, base = 0.0;
    const auto g_true = unstack_theta(truth.theta(), truth.layout);
    const auto g_est = unstack_theta(est.theta(), est.layout);
    for (std::size_t l = 0; l < g_true.size(); ++l) {
      err += (g_true[l] - g_est[l]).squaredNorm();
      base += g_true[l].squaredNorm();
    }
    if (base <= 0.0) throw std::invalid_argument("evaluate: true predictor is zero");
    csv << "airf_vs_truth," << 100.0 * (1.0 - err / base) << "\n";
  }

  fs::create_directories(cfg.out);
  const std::string path = (fs::path(cfg.out) / "evaluate.csv").string();
  io::write_text(path, csv.str());
  std::cout << "wrote " << path << "\n";
  return 0;
}

int cmd_montecarlo(const RunConfig& cfg, bool resume) {
  const MonteCarloSummary summary = run_montecarlo(cfg, resume);
  write_montecarlo_outputs(cfg, summary);
  std::vector<double> cods, airfs;
  for (const RunRecord& rec : summary.runs) {
    cods.push_back(rec.cod_sl);
    airfs.push_back(rec.airf_sl);
  }
  std::cout << summary.runs.size() << " run(s): AC " << summary.ac << ", median COD(SL) "
            << median(cods) << ", median AIRF(SL) " << median(airfs) << ", wallclock "
            << summary.wallclock_s << " s; outputs in " << cfg.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparse plus low-rank Granger network identification"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string data_path, estimate_path, test_path, model_path;
  bool no_resume = false;

  CLI::App* sim = app.add_subcommand("simulate", "generate seeded model/train/test sets");
  add_config_options(sim, cfg);

  CLI::App* ident = app.add_subcommand("identify", "identify an S+L predictor from a series");
  add_config_options(ident, cfg);
  ident->add_option("--data", data_path, "training series CSV")->required();

  CLI::App* eval = app.add_subcommand("evaluate", "score an estimate on a test series");
  add_config_options(eval, cfg);
  eval->add_option("--estimate", estimate_path, "estimate JSON")->required();
  eval->add_option("--test", test_path, "test series CSV")->required();
  eval->add_option("--model", model_path, "ground-truth model JSON (optional)");

  CLI::App* mc = app.add_subcommand("montecarlo", "seeded end-to-end benchmark ensemble");
  add_config_options(mc, cfg);
  mc->add_flag("--no-resume", no_resume, "ignore existing per-seed checkpoints");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed()) return cmd_simulate(cfg);
    if (ident->parsed()) return cmd_identify(cfg, data_path);
    if (eval->parsed()) return cmd_evaluate(cfg, estimate_path, test_path, model_path);
    if (mc->parsed()) return cmd_montecarlo(cfg, !no_resume);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
