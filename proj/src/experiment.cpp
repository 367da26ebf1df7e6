#include "ulab/experiment.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "ulab/rng.hpp"

namespace ulab::experiment {

namespace fs = std::filesystem;
using unlearn::Method;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = v.find(',', start);
    auto item = trim(std::string_view(v).substr(start, comma - start));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double d = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), d);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    throw ConfigError("config: " + key + ": expected a number, got '" + v + "'");
  }
  return d;
}

template <typename Int>
Int to_int(const std::string& key, const std::string& v) {
  Int i = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), i);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    throw ConfigError("config: " + key + ": expected an integer, got '" + v + "'");
  }
  return i;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: " + key + ": expected true/false, got '" + v + "'");
}

bool apply_sgd(nn::SgdConfig& sgd, const std::string& key, const std::string& field, const std::string& v) {
  if (field == "lr") sgd.learning_rate = to_double(key, v);
  else if (field == "momentum") sgd.momentum = to_double(key, v);
  else if (field == "weight_decay") sgd.weight_decay = to_double(key, v);
  else if (field == "batch_size") sgd.batch_size = to_int<std::size_t>(key, v);
  else if (field == "epochs") sgd.epochs = to_int<int>(key, v);
  else if (field == "lr_decay_factor") sgd.lr_decay_factor = to_double(key, v);
  else if (field == "lr_decay_epochs") {
    sgd.lr_decay_epochs.clear();
    for (const auto& item : split_list(v)) sgd.lr_decay_epochs.push_back(to_int<int>(key, item));
  } else {
    return false;
  }
  return true;
}

// FNV-1a over everything that determines a trained model.
class Hasher {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::uint64_t training_key(const std::string& role, const nn::ArchSpec& arch, const data::LabeledDataset& ds,
                           const nn::SgdConfig& sgd, std::uint64_t seed) {
  Hasher h;
  h.str(role);
  for (auto d : arch.layer_dims()) h.u64(d);
  h.f64(sgd.learning_rate);
  h.f64(sgd.momentum);
  h.f64(sgd.weight_decay);
  h.u64(sgd.batch_size);
  h.u64(static_cast<std::uint64_t>(sgd.epochs));
  for (int e : sgd.lr_decay_epochs) h.u64(static_cast<std::uint64_t>(e));
  h.f64(sgd.lr_decay_factor);
  h.u64(seed);
  h.u64(ds.dim);
  h.u64(ds.size());
  for (double f : ds.features) h.f64(f);
  for (int y : ds.labels) h.u64(static_cast<std::uint64_t>(y));
  return h.value();
}

class StageTimer {
 public:
  StageTimer(const RunOptions& opts, std::string stage) : opts_(opts), stage_(std::move(stage)) {}
  void done(const std::string& extra = {}) {
    if (!opts_.stage_log) return;
    const auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    *opts_.stage_log << "stage=" << stage_ << (extra.empty() ? "" : " ") << extra << " seconds=" << dt << '\n';
  }

 private:
  const RunOptions& opts_;
  std::string stage_;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

template <typename F>
auto stage(const std::string& name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

nn::ModelState cached_training(const std::string& role, const nn::ArchSpec& arch, const data::LabeledDataset& ds,
                               const nn::SgdConfig& sgd, std::uint64_t seed, const fs::path& cache_dir,
                               const RunOptions& opts) {
  StageTimer timer(opts, role);
  const auto key = training_key(role, arch, ds, sgd, seed);
  const fs::path file = cache_dir / (role + "-" + hex64(key) + ".ulab");
  std::error_code ec;
  if (fs::exists(file, ec)) {
    try {
      auto m = nn::load_checkpoint(file);
      if (m.arch == arch) {
        timer.done("cache=hit");
        return m;
      }
    } catch (const std::exception&) {
      // unreadable entry: retrain and overwrite
    }
  }
  auto m = unlearn::train_model(arch, ds, sgd, seed);
  fs::create_directories(cache_dir, ec);
  const fs::path tmp = file.string() + ".tmp";
  nn::save_checkpoint(tmp, m);
  fs::rename(tmp, file);
  timer.done("cache=miss");
  return m;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << content;
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::stringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

bool is_falw_family(Method m) { return m == Method::falw || m == Method::ga_falw || m == Method::rl_falw; }

std::string tau_label(Method m, double tau) {
  return std::string(unlearn::method_name(m)) + "[tau=" + format_double(tau) + "]";
}

std::optional<double> tau_from_label(const std::string& label) {
  const auto p = label.find("[tau=");
  if (p == std::string::npos || label.back() != ']') return std::nullopt;
  const auto v = label.substr(p + 5, label.size() - p - 6);
  double d = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), d);
  if (ec != std::errc() || ptr != v.data() + v.size()) return std::nullopt;
  return d;
}

const char* kReportHeader =
    "method,seed,gamma,forget_ratio,fa,ra,ta,mia,avg_gap,fa_gap_head,fa_gap_mid,fa_gap_tail,n_under,n_faithful,"
    "n_over";

void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  mean = 0.0;
  sd = 0.0;
  if (v.empty()) return;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  for (double x : v) sd += (x - mean) * (x - mean);
  sd = std::sqrt(sd / static_cast<double>(v.size()));
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string cell_id(const std::string& method_label, double gamma, std::uint64_t seed) {
  std::string m;
  for (char c : method_label) {
    if (c == '[') m += '-';
    else if (c == ']' || c == '=') continue;
    else m += c;
  }
  return m + "_g" + format_double(gamma) + "_s" + std::to_string(seed);
}

ExperimentConfig::ExperimentConfig() {
  train_sgd.learning_rate = 0.01;
  train_sgd.momentum = 0.9;
  train_sgd.weight_decay = 5e-4;
  train_sgd.batch_size = 64;
  train_sgd.epochs = 60;
  train_sgd.lr_decay_epochs = {36, 48};
  train_sgd.lr_decay_factor = 10.0;

  unlearn_sgd = train_sgd;
  unlearn_sgd.epochs = 15;
  // Tuned on the toy blobs. Rates of 0.02 and below are too
  // weak for the MLP to fit random labels in 15 epochs.
  unlearn_sgd.learning_rate = 0.08;
  unlearn_sgd.lr_decay_epochs.clear();
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
  if (dataset.source != "synth" && dataset.source != "csv") fail("data.source must be synth or csv");
  if (dataset.source == "csv" && dataset.csv_path.empty()) fail("data.path is required for csv data");
  if (gammas.empty()) fail("gammas must be nonempty");
  if (methods.empty()) fail("methods must be nonempty");
  if (seeds.empty()) fail("seeds must be nonempty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) fail("seeds must be distinct");
  if (!(forget_ratio > 0.0 && forget_ratio < 1.0)) fail("forget_ratio must be in (0, 1)");
  for (double g : gammas) {
    if (!(g >= 0.0)) fail("gammas must be >= 0");
  }
  for (double t : tau_grid) {
    if (!(t >= 0.0)) fail("tau_grid values must be >= 0");
  }
  if (!(deviation_threshold > 0.0)) fail("eval.deviation_threshold must be > 0");
  if (!(mia_probe_fraction > 0.0 && mia_probe_fraction <= 1.0)) fail("eval.mia_probe_fraction must be in (0, 1]");
  if (histogram_bins < 2) fail("eval.histogram_bins must be >= 2");
  try {
    train_sgd.validate();
    unlearn_sgd.validate();
    objective.validate();
    falw.validate();
    unlearn::UnlearnConfig u;
    u.sgd = unlearn_sgd;
    u.objective = objective;
    u.falw = falw;
    u.saliency_fraction = saliency_fraction;
    u.validate();
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  for (const auto& [m, lr] : method_lr) {
    if (!(lr > 0.0)) fail("per-method learning rates must be > 0");
  }
}

void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& v) {
  auto starts = [&key](const char* prefix) { return key.rfind(prefix, 0) == 0; };
  if (key == "data.source") cfg.dataset.source = v;
  else if (key == "data.path") cfg.dataset.csv_path = v;
  else if (key == "data.classes") cfg.dataset.classes = to_int<int>(key, v);
  else if (key == "data.per_class") cfg.dataset.per_class = to_int<std::size_t>(key, v);
  else if (key == "data.dim") cfg.dataset.dim = to_int<std::size_t>(key, v);
  else if (key == "data.spread") cfg.dataset.spread = to_double(key, v);
  else if (key == "split.val_fraction") cfg.val_fraction = to_double(key, v);
  else if (key == "split.test_fraction") cfg.test_fraction = to_double(key, v);
  else if (key == "model.hidden") {
    cfg.hidden.clear();
    for (const auto& item : split_list(v)) cfg.hidden.push_back(to_int<std::size_t>(key, item));
  } else if (key == "forget_ratio") cfg.forget_ratio = to_double(key, v);
  else if (key == "gammas") {
    cfg.gammas.clear();
    for (const auto& item : split_list(v)) cfg.gammas.push_back(to_double(key, item));
  } else if (key == "methods") {
    cfg.methods.clear();
    try {
      for (const auto& item : split_list(v)) cfg.methods.push_back(unlearn::parse_method(item));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: methods: ") + e.what());
    }
  } else if (key == "seeds") {
    cfg.seeds.clear();
    for (const auto& item : split_list(v)) cfg.seeds.push_back(to_int<std::uint64_t>(key, item));
  } else if (key == "tau_grid") {
    cfg.tau_grid.clear();
    for (const auto& item : split_list(v)) cfg.tau_grid.push_back(to_double(key, item));
  } else if (starts("train.")) {
    if (!apply_sgd(cfg.train_sgd, key, key.substr(6), v)) throw ConfigError("config: unknown key '" + key + "'");
  } else if (key == "unlearn.alpha") cfg.objective.alpha = to_double(key, v);
  else if (key == "unlearn.beta") cfg.objective.beta = to_double(key, v);
  else if (key == "unlearn.lambda") cfg.objective.lambda = to_double(key, v);
  else if (key == "unlearn.constraint") {
    try {
      cfg.objective.constraint = unlearn::parse_constraint(v);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  } else if (key == "unlearn.saliency_fraction") cfg.saliency_fraction = to_double(key, v);
  else if (key == "unlearn.falw.eta") cfg.falw.eta = to_double(key, v);
  else if (key == "unlearn.falw.tau_balance") cfg.falw.tau_balance = to_double(key, v);
  else if (key == "unlearn.falw.sigma_min") cfg.falw.sigma_min = to_double(key, v);
  else if (key == "unlearn.falw.use_balance_factor") cfg.falw.use_balance_factor = to_bool(key, v);
  else if (key == "unlearn.falw.refresh") {
    if (v == "epoch") cfg.falw.refresh = falw::Refresh::epoch;
    else if (v == "batch") cfg.falw.refresh = falw::Refresh::batch;
    else throw ConfigError("config: unlearn.falw.refresh must be epoch or batch");
  } else if (starts("unlearn.")) {
    const std::string rest = key.substr(8);
    if (apply_sgd(cfg.unlearn_sgd, key, rest, v)) return;
    // unlearn.<method>.lr
    const auto dot = rest.find('.');
    if (dot != std::string::npos && rest.substr(dot + 1) == "lr") {
      try {
        cfg.method_lr[unlearn::parse_method(rest.substr(0, dot))] = to_double(key, v);
        return;
      } catch (const std::invalid_argument&) {
      }
    }
    throw ConfigError("config: unknown key '" + key + "'");
  } else if (key == "eval.deviation_threshold") cfg.deviation_threshold = to_double(key, v);
  else if (key == "eval.mia_probe_fraction") cfg.mia_probe_fraction = to_double(key, v);
  else if (key == "eval.histogram_bins") cfg.histogram_bins = to_int<std::size_t>(key, v);
  else if (key == "output.histograms") cfg.histograms = to_bool(key, v);
  else if (key == "output.target_dumps") cfg.target_dumps = to_bool(key, v);
  else if (key == "output.dir") cfg.output_dir = v;
  else throw ConfigError("config: unknown key '" + key + "'");
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string t = trim(std::string_view(line).substr(0, hash));
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    apply_setting(cfg, trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
  }
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return parse_config(text);
}

fs::path default_cache_dir(const ExperimentConfig& cfg) {
  if (const char* env = std::getenv("ULAB_CACHE_DIR"); env && *env) return env;
  return cfg.output_dir / "oracle_cache";
}

nn::ArchSpec arch_for(const ExperimentConfig& cfg, const data::LabeledDataset& train) {
  nn::ArchSpec a;
  a.input_dim = train.dim;
  a.hidden_dims = cfg.hidden;
  a.num_classes = static_cast<std::size_t>(train.num_classes);
  return a;
}

data::LabeledDataset make_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (cfg.dataset.source == "csv") return data::load_csv(cfg.dataset.csv_path);
  return data::synth_blobs(cfg.dataset.classes, cfg.dataset.per_class, cfg.dataset.dim, cfg.dataset.spread,
                           derive_seed(seed, "dataset"));
}

Materialized materialize(const ExperimentConfig& cfg, double gamma, std::uint64_t seed) {
  Materialized m;
  auto ds = stage("data", [&] { return make_dataset(cfg, seed); });
  m.sets = stage("split", [&] { return data::split(ds, cfg.val_fraction, cfg.test_fraction, seed); });
  m.split = stage("forget_set",
                  [&] { return data::build_long_tailed_forget_set(m.sets.train, cfg.forget_ratio, gamma, seed); });
  m.relabeled = stage("relabel", [&] { return data::relabel_forget_set(m.split, m.sets.train, seed); });
  return m;
}

unlearn::UnlearnConfig unlearn_config_for(const ExperimentConfig& cfg, Method method, std::uint64_t seed) {
  unlearn::UnlearnConfig u;
  u.method = method;
  u.sgd = cfg.unlearn_sgd;
  if (auto it = cfg.method_lr.find(method); it != cfg.method_lr.end()) u.sgd.learning_rate = it->second;
  u.objective = cfg.objective;
  u.falw = cfg.falw;
  u.saliency_fraction = cfg.saliency_fraction;
  u.seed = seed;
  return u;
}

nn::ModelState original_model(const ExperimentConfig& cfg, const Materialized& m, std::uint64_t seed,
                              const RunOptions& opts) {
  const auto arch = arch_for(cfg, m.sets.train);
  const auto dir = opts.cache_dir.value_or(default_cache_dir(cfg));
  return stage("train_original",
               [&] { return cached_training("original", arch, m.sets.train, cfg.train_sgd, seed, dir, opts); });
}

nn::ModelState retrain_model(const ExperimentConfig& cfg, const Materialized& m, std::uint64_t seed,
                             const RunOptions& opts) {
  const auto arch = arch_for(cfg, m.sets.train);
  const auto dir = opts.cache_dir.value_or(default_cache_dir(cfg));
  const auto retain = m.sets.train.subset(m.split.retain_indices);
  return stage("retrain_oracle",
               [&] { return cached_training("retrain", arch, retain, cfg.train_sgd, seed, dir, opts); });
}

eval::MetricSet evaluate_metrics(const nn::ModelState& model, const data::LabeledDataset& forget,
                                 const data::LabeledDataset& retain, const data::LabeledDataset& test,
                                 const data::LabeledDataset& retain_probe) {
  return {eval::accuracy(model, forget), eval::accuracy(model, retain), eval::accuracy(model, test),
          eval::mia_score(model, retain_probe, test, forget)};
}

PipelineResult run_pipeline(const ExperimentConfig& cfg, double gamma, Method method, std::uint64_t seed,
                            const RunOptions& opts) {
  stage("config", [&] {
    cfg.validate();
    return 0;
  });
  PipelineResult out;
  const auto m = materialize(cfg, gamma, seed);
  out.original = original_model(cfg, m, seed, opts);
  out.retrained = retrain_model(cfg, m, seed, opts);
  out.forget_counts = m.split.per_class_forget_counts;

  const auto data = unlearn::make_unlearn_data(m.sets.train, m.split, m.relabeled, m.sets.val);
  if (method == Method::retrain) {
    out.unlearned = out.retrained;
  } else {
    StageTimer timer(opts, "unlearn");
    auto res = stage("unlearn", [&] {
      return unlearn::run_method(out.original, data, unlearn_config_for(cfg, method, seed));
    });
    timer.done("method=" + std::string(unlearn::method_name(method)));
    out.unlearned = std::move(res.model);
    out.log = std::move(res.log);
    out.warnings = std::move(res.warnings);
    out.balance = std::move(res.balance);
    out.distributions = std::move(res.distributions);
  }

  StageTimer timer(opts, "evaluate");
  stage("evaluate", [&] {
    const auto probe = eval::probe_subsample(data.retain, cfg.mia_probe_fraction, seed);
    auto& r = out.report;
    r.method = std::string(unlearn::method_name(method));
    r.seed = seed;
    r.gamma = gamma;
    r.forget_ratio = cfg.forget_ratio;
    r.metrics = evaluate_metrics(out.unlearned, data.forget, data.retain, m.sets.test, probe);
    r.retrain_metrics = method == Method::retrain
                            ? r.metrics
                            : evaluate_metrics(out.retrained, data.forget, data.retain, m.sets.test, probe);
    r.avg_gap = eval::avg_gap(r.metrics, r.retrain_metrics);
    try {
      const auto groups = data::partition_head_mid_tail(m.split);
      r.group_fa_gaps = eval::group_fa_gaps(out.unlearned, out.retrained, data.forget, groups);
    } catch (const std::invalid_argument& e) {
      const double nan = std::nan("");
      r.group_fa_gaps = {nan, nan, nan};
      out.warnings.push_back(std::string("group gaps unavailable: ") + e.what());
    }
    const auto labels = eval::deviation_labels(out.unlearned, out.retrained, data.forget, cfg.deviation_threshold);
    r.deviation_counts = eval::count_deviations(labels);
    out.unlearned_hist = eval::probability_histogram(out.unlearned, data.forget, cfg.histogram_bins);
    out.retrain_hist = eval::probability_histogram(out.retrained, data.forget, cfg.histogram_bins);
    return 0;
  });
  timer.done();
  return out;
}

std::string report_csv(const std::vector<eval::UnlearnReport>& rows) {
  std::string out = std::string(kReportHeader) + '\n';
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    out += r.method + ',' + std::to_string(r.seed) + ',' + format_double(r.gamma) + ',' +
           format_double(r.forget_ratio) + ',' + format_double(m.fa) + ',' + format_double(m.ra) + ',' +
           format_double(m.ta) + ',' + format_double(m.mia) + ',' + format_double(r.avg_gap) + ',' +
           format_double(r.group_fa_gaps.head) + ',' + format_double(r.group_fa_gaps.mid) + ',' +
           format_double(r.group_fa_gaps.tail) + ',' + std::to_string(r.deviation_counts.under) + ',' +
           std::to_string(r.deviation_counts.faithful) + ',' + std::to_string(r.deviation_counts.over) + '\n';
  }
  return out;
}

std::vector<eval::UnlearnReport> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<eval::UnlearnReport> rows;
  std::size_t line_no = 0;
  auto num = [&](const std::string& s) {
    if (s == "nan") return std::nan("");
    double d = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), d);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw std::runtime_error("report line " + std::to_string(line_no) + ": bad number '" + s + "'");
    }
    return d;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != kReportHeader) throw std::runtime_error("report: unexpected header");
      continue;
    }
    std::vector<std::string> f;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      f.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (f.size() != 15) throw std::runtime_error("report line " + std::to_string(line_no) + ": expected 15 fields");
    eval::UnlearnReport r;
    r.method = f[0];
    r.seed = to_int<std::uint64_t>("seed", f[1]);
    r.gamma = num(f[2]);
    r.forget_ratio = num(f[3]);
    r.metrics = {num(f[4]), num(f[5]), num(f[6]), num(f[7])};
    r.avg_gap = num(f[8]);
    r.group_fa_gaps = {num(f[9]), num(f[10]), num(f[11])};
    r.deviation_counts = {to_int<std::size_t>("n_under", f[12]), to_int<std::size_t>("n_faithful", f[13]),
                          to_int<std::size_t>("n_over", f[14])};
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<SummaryRow> summarize(const std::vector<eval::UnlearnReport>& rows) {
  std::vector<SummaryRow> out;
  std::vector<std::vector<const eval::UnlearnReport*>> members;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const SummaryRow& s) {
      return s.method == r.method && s.gamma == r.gamma && s.forget_ratio == r.forget_ratio;
    });
    if (it == out.end()) {
      SummaryRow s;
      s.method = r.method;
      s.tau_balance = tau_from_label(r.method);
      s.gamma = r.gamma;
      s.forget_ratio = r.forget_ratio;
      out.push_back(s);
      members.emplace_back();
      it = out.end() - 1;
    }
    members[static_cast<std::size_t>(it - out.begin())].push_back(&r);
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto& mem = members[i];
    out[i].n = mem.size();
    std::vector<double (*)(const eval::UnlearnReport&)> fields = {
        [](const eval::UnlearnReport& r) { return r.metrics.fa; },
        [](const eval::UnlearnReport& r) { return r.metrics.ra; },
        [](const eval::UnlearnReport& r) { return r.metrics.ta; },
        [](const eval::UnlearnReport& r) { return r.metrics.mia; },
        [](const eval::UnlearnReport& r) { return r.avg_gap; },
        [](const eval::UnlearnReport& r) { return r.group_fa_gaps.head; },
        [](const eval::UnlearnReport& r) { return r.group_fa_gaps.mid; },
        [](const eval::UnlearnReport& r) { return r.group_fa_gaps.tail; },
    };
    for (auto get : fields) {
      std::vector<double> v;
      for (const auto* r : mem) v.push_back(get(*r));
      double mean = 0.0, sd = 0.0;
      mean_std(v, mean, sd);
      out[i].stats.push_back(mean);
      out[i].stats.push_back(sd);
    }
  }
  return out;
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::string out =
      "method,tau_balance,gamma,forget_ratio,n,fa_mean,fa_std,ra_mean,ra_std,ta_mean,ta_std,mia_mean,mia_std,"
      "avg_gap_mean,avg_gap_std,fa_gap_head_mean,fa_gap_head_std,fa_gap_mid_mean,fa_gap_mid_std,"
      "fa_gap_tail_mean,fa_gap_tail_std\n";
  for (const auto& s : rows) {
    out += s.method + ',' + (s.tau_balance ? format_double(*s.tau_balance) : std::string()) + ',' +
           format_double(s.gamma) + ',' + format_double(s.forget_ratio) + ',' + std::to_string(s.n);
    for (double v : s.stats) out += ',' + format_double(v);
    out += '\n';
  }
  return out;
}

void emit_report(const std::vector<eval::UnlearnReport>& rows, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw std::runtime_error("cannot create output directory " + out_dir.string());
  write_file(out_dir / "report.csv", report_csv(rows));
  const auto summary = summarize(rows);
  write_file(out_dir / "summary.csv", summary_csv(summary));

  std::vector<std::string> methods;
  std::vector<double> gammas;
  for (const auto& s : summary) {
    if (std::find(methods.begin(), methods.end(), s.method) == methods.end()) methods.push_back(s.method);
    if (std::find(gammas.begin(), gammas.end(), s.gamma) == gammas.end()) gammas.push_back(s.gamma);
  }
  auto find = [&](const std::string& m, double g) -> const SummaryRow* {
    for (const auto& s : summary) {
      if (s.method == m && s.gamma == g) return &s;
    }
    return nullptr;
  };
  std::vector<eval::BarSeries> gap_series;
  for (double g : gammas) {
    eval::BarSeries bs{"gamma=" + format_double(g), {}};
    for (const auto& m : methods) {
      const auto* s = find(m, g);
      bs.values.push_back(s ? s->stats[8] : 0.0);
    }
    gap_series.push_back(std::move(bs));
  }
  write_file(out_dir / "avg_gap.svg", eval::grouped_bar_svg("Avg. Gap vs retrain (mean over seeds)", methods, gap_series));

  const std::vector<std::string> groups = {"head", "mid", "tail"};
  std::vector<eval::BarSeries> group_series;
  for (const auto& s : summary) {
    auto clean = [](double v) { return std::isnan(v) ? 0.0 : v; };
    group_series.push_back({s.method + " gamma=" + format_double(s.gamma),
                            {clean(s.stats[10]), clean(s.stats[12]), clean(s.stats[14])}});
  }
  write_file(out_dir / "group_fa_gaps.svg",
             eval::grouped_bar_svg("FA gap to retrain by forget-count group (mean over seeds)", groups, group_series));
}

SweepResult run_sweep(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  struct Cell {
    Method method;
    std::string label;
    std::optional<double> tau;
    double gamma;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (double g : cfg.gammas) {
    for (auto m : cfg.methods) {
      std::vector<std::optional<double>> taus = {std::nullopt};
      if (is_falw_family(m) && !cfg.tau_grid.empty()) taus.assign(cfg.tau_grid.begin(), cfg.tau_grid.end());
      for (const auto& tau : taus) {
        for (auto s : cfg.seeds) {
          cells.push_back({m, tau ? tau_label(m, *tau) : std::string(unlearn::method_name(m)), tau, g, s});
        }
      }
    }
  }

  std::error_code ec;
  fs::create_directories(cfg.output_dir / "logs", ec);
  fs::create_directories(cfg.output_dir / "diagnostics", ec);
  if (cfg.histograms) fs::create_directories(cfg.output_dir / "histograms", ec);
  if (!fs::is_directory(cfg.output_dir)) {
    throw std::runtime_error("cannot create output directory " + cfg.output_dir.string());
  }
  RunOptions run_opts = opts;
  if (!run_opts.cache_dir) run_opts.cache_dir = default_cache_dir(cfg);

  SweepResult res;
  for (const auto& c : cells) {
    const auto id = cell_id(c.label, c.gamma, c.seed);
    ExperimentConfig cell_cfg = cfg;
    if (c.tau) cell_cfg.falw.tau_balance = *c.tau;
    try {
      auto out = run_pipeline(cell_cfg, c.gamma, c.method, c.seed, run_opts);
      out.report.method = c.label;
      std::string log;
      for (auto e : out.log) {
        e.method = c.label;
        log += unlearn::to_json_line(e) + '\n';
      }
      write_file(cfg.output_dir / "logs" / (id + ".jsonl"), log);
      if (is_falw_family(c.method)) {
        std::string b = "class,forget_count,balance_factor\n";
        for (std::size_t k = 0; k < out.balance.size(); ++k) {
          b += std::to_string(k) + ',' + std::to_string(out.forget_counts[k]) + ',' + format_double(out.balance[k]) +
               '\n';
        }
        write_file(cfg.output_dir / "diagnostics" / (id + "_balance.csv"), b);
        if (cfg.target_dumps) {
          for (std::size_t e = 0; e < out.distributions.size(); ++e) {
            write_file(cfg.output_dir / "diagnostics" / (id + "_target_epoch" + std::to_string(e) + ".csv"),
                       falw::target_distribution_csv(out.distributions[e]));
          }
        }
      }
      if (!out.warnings.empty()) {
        std::string w;
        for (const auto& line : out.warnings) w += line + '\n';
        write_file(cfg.output_dir / "diagnostics" / (id + "_warnings.txt"), w);
      }
      if (cfg.histograms) {
        const auto dir = cfg.output_dir / "histograms";
        write_file(dir / (id + ".csv"), eval::histogram_csv(out.unlearned_hist));
        write_file(dir / (id + ".svg"), eval::histogram_svg(out.unlearned_hist, c.label + " p(y|x) on forget set"));
        write_file(dir / (id + "_retrain.csv"), eval::histogram_csv(out.retrain_hist));
        write_file(dir / (id + "_retrain.svg"), eval::histogram_svg(out.retrain_hist, "retrain p(y|x) on forget set"));
      }
      res.rows.push_back(std::move(out.report));
    } catch (const std::exception& e) {
      res.failures.push_back({id, c.label, c.gamma, c.seed, e.what()});
    }
  }

  emit_report(res.rows, cfg.output_dir);
  res.summary = summarize(res.rows);
  std::string f = "cell,method,gamma,seed,error\n";
  for (const auto& x : res.failures) {
    std::string err = x.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    f += x.cell + ',' + x.method + ',' + format_double(x.gamma) + ',' + std::to_string(x.seed) + ',' + err + '\n';
  }
  write_file(cfg.output_dir / "failures.csv", f);
  return res;
}

}  // namespace ulab::experiment
