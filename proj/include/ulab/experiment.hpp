#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ulab/data.hpp"
#include "ulab/eval.hpp"
#include "ulab/falw.hpp"
#include "ulab/nn.hpp"
#include "ulab/unlearn.hpp"

namespace ulab::experiment {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A failure inside one pipeline stage; what() carries "stage: cause".
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& cause)
      : std::runtime_error(stage + ": " + cause), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct DatasetSpec {
  std::string source = "synth";  // synth | csv
  std::filesystem::path csv_path;
  int classes = 10;
  std::size_t per_class = 400;
  std::size_t dim = 256;
  double spread = 0.25;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  double val_fraction = 0.1;
  double test_fraction = 0.2;
  std::vector<std::size_t> hidden = {256};
  double forget_ratio = 0.3;
  std::vector<double> gammas = {2.0};
  std::vector<unlearn::Method> methods = {unlearn::Method::rl, unlearn::Method::falw};
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  nn::SgdConfig train_sgd;
  nn::SgdConfig unlearn_sgd;
  std::map<unlearn::Method, double> method_lr;
  unlearn::ObjectiveConfig objective;
  falw::FalwConfig falw;
  double saliency_fraction = 0.5;
  std::vector<double> tau_grid;  // empty = no tau sweep
  double deviation_threshold = 0.05;
  double mia_probe_fraction = 0.5;
  std::size_t histogram_bins = 20;
  bool histograms = false;
  bool target_dumps = false;
  std::filesystem::path output_dir = "ulab_out";

  ExperimentConfig();
  void validate() const;
};

// `key = value` lines, '#' comments, comma-separated lists.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
// Applies one dotted key; throws ConfigError on unknown keys or bad values.
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value);

struct RunOptions {
  std::optional<std::filesystem::path> cache_dir;  // retrain-oracle cache
  std::ostream* stage_log = nullptr;               // stage timings, cache hits
};

// Resolves the oracle cache: ULAB_CACHE_DIR, else <output_dir>/oracle_cache.
std::filesystem::path default_cache_dir(const ExperimentConfig& cfg);

struct PipelineResult {
  eval::UnlearnReport report;
  std::vector<unlearn::EpochLog> log;
  std::vector<std::string> warnings;
  std::vector<double> balance;
  std::vector<std::size_t> forget_counts;
  std::vector<falw::TargetDistribution> distributions;
  eval::Histogram unlearned_hist;
  eval::Histogram retrain_hist;
  nn::ModelState original;
  nn::ModelState retrained;
  nn::ModelState unlearned;
};

struct Materialized {
  data::TrainValTest sets;
  data::ForgetSplit split;
  data::RelabeledForgetSet relabeled;
};

nn::ArchSpec arch_for(const ExperimentConfig& cfg, const data::LabeledDataset& train);
data::LabeledDataset make_dataset(const ExperimentConfig& cfg, std::uint64_t seed);
Materialized materialize(const ExperimentConfig& cfg, double gamma, std::uint64_t seed);
unlearn::UnlearnConfig unlearn_config_for(const ExperimentConfig& cfg, unlearn::Method method, std::uint64_t seed);

// Original model and retrain oracle, trained or fetched from the cache.
nn::ModelState original_model(const ExperimentConfig& cfg, const Materialized& m, std::uint64_t seed,
                              const RunOptions& opts);
nn::ModelState retrain_model(const ExperimentConfig& cfg, const Materialized& m, std::uint64_t seed,
                             const RunOptions& opts);

eval::MetricSet evaluate_metrics(const nn::ModelState& model, const data::LabeledDataset& forget,
                                 const data::LabeledDataset& retain, const data::LabeledDataset& test,
                                 const data::LabeledDataset& retain_probe);

PipelineResult run_pipeline(const ExperimentConfig& cfg, double gamma, unlearn::Method method, std::uint64_t seed,
                            const RunOptions& opts = {});

struct SummaryRow {
  std::string method;
  std::optional<double> tau_balance;
  double gamma = 0.0;
  double forget_ratio = 0.0;
  std::size_t n = 0;
  // mean, std (population) for fa, ra, ta, mia, avg_gap, gap head, mid, tail.
  std::vector<double> stats;
};

struct Failure {
  std::string cell;
  std::string method;
  double gamma = 0.0;
  std::uint64_t seed = 0;
  std::string error;
};

struct SweepResult {
  std::vector<eval::UnlearnReport> rows;
  std::vector<SummaryRow> summary;
  std::vector<Failure> failures;
};

std::vector<SummaryRow> summarize(const std::vector<eval::UnlearnReport>& rows);

// Runs gamma x method x seed (x tau grid for FaLW-family methods) and writes
// every artifact into cfg.output_dir.
SweepResult run_sweep(const ExperimentConfig& cfg, const RunOptions& opts = {});

// Detail CSV, summary CSV and SVG charts. Overwrites existing files.
void emit_report(const std::vector<eval::UnlearnReport>& rows, const std::filesystem::path& out_dir);

std::string report_csv(const std::vector<eval::UnlearnReport>& rows);
std::vector<eval::UnlearnReport> parse_report_csv(const std::string& text);
std::string summary_csv(const std::vector<SummaryRow>& rows);

std::string cell_id(const std::string& method_label, double gamma, std::uint64_t seed);
std::string format_double(double v);

}  // namespace ulab::experiment
