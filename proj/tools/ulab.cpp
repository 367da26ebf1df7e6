// ulab: train / unlearn / eval / sweep / report on desk-scale toy data.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "ulab/experiment.hpp"

namespace fs = std::filesystem;
namespace ex = ulab::experiment;
using ulab::unlearn::Method;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;
constexpr int kPartialSweep = 3;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string method;
  std::optional<double> gamma;
  std::optional<double> forget_ratio;
  std::vector<std::string> set;
  bool verbose = false;
};

ex::ExperimentConfig build_config(const Globals& g) {
  ex::ExperimentConfig cfg = g.config.empty() ? ex::ExperimentConfig{} : ex::load_config(g.config);
  for (const auto& kv : g.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ex::ConfigError("--set expects key=value, got '" + kv + "'");
    ex::apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (g.seed) cfg.seeds = {*g.seed};
  if (!g.out_dir.empty()) cfg.output_dir = g.out_dir;
  if (!g.method.empty()) ex::apply_setting(cfg, "methods", g.method);
  if (g.gamma) cfg.gammas = {*g.gamma};
  if (g.forget_ratio) cfg.forget_ratio = *g.forget_ratio;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << s;
}

void print_metrics(const std::string& name, const ulab::eval::MetricSet& m) {
  std::cout << name << ": FA=" << ex::format_double(m.fa) << " RA=" << ex::format_double(m.ra)
            << " TA=" << ex::format_double(m.ta) << " MIA=" << ex::format_double(m.mia) << '\n';
}

int cmd_train(const ex::ExperimentConfig& cfg, const ex::RunOptions& opts) {
  fs::create_directories(cfg.output_dir);
  const auto seed = cfg.seeds.front();
  const auto m = ex::materialize(cfg, cfg.gammas.front(), seed);
  const auto model = ex::original_model(cfg, m, seed, opts);
  const auto path = cfg.output_dir / ("original_s" + std::to_string(seed) + ".ulab");
  ulab::nn::save_checkpoint(path, model);
  std::cout << "train accuracy " << ex::format_double(ulab::eval::accuracy(model, m.sets.train)) << '\n'
            << "test accuracy " << ex::format_double(ulab::eval::accuracy(model, m.sets.test)) << '\n'
            << "wrote " << path.string() << '\n';
  return kOk;
}

int cmd_unlearn(const ex::ExperimentConfig& cfg, const ex::RunOptions& opts) {
  fs::create_directories(cfg.output_dir);
  const auto seed = cfg.seeds.front();
  const auto gamma = cfg.gammas.front();
  const auto method = cfg.methods.front();
  auto res = ex::run_pipeline(cfg, gamma, method, seed, opts);
  const auto id = ex::cell_id(res.report.method, gamma, seed);
  ulab::nn::save_checkpoint(cfg.output_dir / (id + ".ulab"), res.unlearned);
  std::string log;
  for (const auto& e : res.log) log += ulab::unlearn::to_json_line(e) + '\n';
  write_text(cfg.output_dir / (id + ".jsonl"), log);
  ex::emit_report({res.report}, cfg.output_dir);
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
  print_metrics(res.report.method, res.report.metrics);
  print_metrics("retrain", res.report.retrain_metrics);
  std::cout << "avg_gap " << ex::format_double(res.report.avg_gap) << '\n';
  return kOk;
}

int cmd_eval(const ex::ExperimentConfig& cfg, const ex::RunOptions& opts, const std::string& checkpoint) {
  const auto seed = cfg.seeds.front();
  const auto m = ex::materialize(cfg, cfg.gammas.front(), seed);
  const auto model = ulab::nn::load_checkpoint(checkpoint);
  if (!(model.arch == ex::arch_for(cfg, m.sets.train))) {
    throw std::runtime_error("checkpoint architecture does not match the configured model");
  }
  const auto retrained = ex::retrain_model(cfg, m, seed, opts);
  const auto data = ulab::unlearn::make_unlearn_data(m.sets.train, m.split, m.relabeled, m.sets.val);
  const auto probe = ulab::eval::probe_subsample(data.retain, cfg.mia_probe_fraction, seed);
  const auto mu = ex::evaluate_metrics(model, data.forget, data.retain, m.sets.test, probe);
  const auto mr = ex::evaluate_metrics(retrained, data.forget, data.retain, m.sets.test, probe);
  print_metrics("model", mu);
  print_metrics("retrain", mr);
  std::cout << "avg_gap " << ex::format_double(ulab::eval::avg_gap(mu, mr)) << '\n';
  return kOk;
}

int cmd_sweep(const ex::ExperimentConfig& cfg, const ex::RunOptions& opts) {
  const auto res = ex::run_sweep(cfg, opts);
  for (const auto& f : res.failures) std::cerr << "failed " << f.cell << ": " << f.error << '\n';
  std::cout << res.rows.size() << " rows, " << res.summary.size() << " summary rows, " << res.failures.size()
            << " failures -> " << cfg.output_dir.string() << '\n';
  if (!res.failures.empty()) return res.rows.empty() ? kRuntimeError : kPartialSweep;
  return kOk;
}

int cmd_report(const fs::path& input, const fs::path& out_dir) {
  std::ifstream f(input, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + input.string());
  std::stringstream buf;
  buf << f.rdbuf();
  const auto rows = ex::parse_report_csv(buf.str());
  ex::emit_report(rows, out_dir);
  std::cout << rows.size() << " rows -> " << out_dir.string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Long-tailed machine unlearning experiments (FaLW and baselines)"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "key = value config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "run a single seed");
  app.add_option("--out-dir", g.out_dir, "output directory");
  app.add_option("--method", g.method, "method or comma-separated list");
  app.add_option("--gamma", g.gamma, "forget-set imbalance exponent");
  app.add_option("--forget-ratio", g.forget_ratio, "forget fraction of the training set");
  app.add_option("--set", g.set, "override a config key (key=value), repeatable");
  app.add_flag("-v,--verbose", g.verbose, "stage timings on stderr");

  auto* train = app.add_subcommand("train", "train the original model");
  auto* unl = app.add_subcommand("unlearn", "run one unlearning pipeline");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint against the retrain oracle");
  std::string checkpoint;
  eval->add_option("checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  auto* sweep = app.add_subcommand("sweep", "gamma x method x seed sweep");
  auto* report = app.add_subcommand("report", "rebuild summary and charts from a detail CSV");
  std::string input;
  report->add_option("input", input, "report.csv")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (*report) return cmd_report(input, g.out_dir.empty() ? fs::path(input).parent_path() : fs::path(g.out_dir));
    const auto cfg = build_config(g);
    ex::RunOptions opts;
    if (g.verbose) opts.stage_log = &std::cerr;
    if (*train) return cmd_train(cfg, opts);
    if (*unl) return cmd_unlearn(cfg, opts);
    if (*eval) return cmd_eval(cfg, opts, checkpoint);
    if (*sweep) return cmd_sweep(cfg, opts);
  } catch (const ex::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kOk;
}
