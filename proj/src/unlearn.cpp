#include "ulab/unlearn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "ulab/rng.hpp"

namespace ulab::unlearn {

namespace {

struct Entry {
  bool forget = false;
  std::size_t row = 0;
};

struct Stat {
  double sum = 0.0;
  std::size_t n = 0;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    sum += v;
    ++n;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::optional<double> mean() const { return n ? std::optional(sum / static_cast<double>(n)) : std::nullopt; }
  std::optional<double> min() const { return n ? std::optional(lo) : std::nullopt; }
  std::optional<double> max() const { return n ? std::optional(hi) : std::nullopt; }
};

void add_constraint_grad(std::vector<double>& grad, const nn::ModelState& model, const nn::ModelState& origin,
                         const ObjectiveConfig& obj) {
  if (obj.lambda == 0.0 || obj.constraint == Constraint::none) return;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (obj.constraint == Constraint::l2_to_origin) {
      grad[i] += obj.lambda * (model.params[i] - origin.params[i]);
    } else {
      const double p = model.params[i];
      grad[i] += obj.lambda * static_cast<double>((p > 0.0) - (p < 0.0));
    }
  }
}

void require_nonempty(const data::LabeledDataset& ds, const char* what) {
  if (ds.empty()) throw std::invalid_argument(std::string("unlearn: empty ") + what);
}

void check_targets(const data::LabeledDataset& forget, std::span<const int> targets) {
  if (targets.size() != forget.size()) {
    throw std::invalid_argument("unlearn: relabeled targets do not match forget set size");
  }
}

EngineTask relabel_task(std::string name, const data::LabeledDataset& forget, std::span<const int> new_labels,
                        const data::LabeledDataset& retain) {
  require_nonempty(forget, "forget set");
  require_nonempty(retain, "retain set");
  check_targets(forget, new_labels);
  EngineTask t;
  t.method = std::move(name);
  t.forget = &forget;
  t.forget_targets.assign(new_labels.begin(), new_labels.end());
  t.retain = &retain;
  return t;
}

EngineTask ascent_task(std::string name, const data::LabeledDataset& forget) {
  require_nonempty(forget, "forget set");
  EngineTask t;
  t.method = std::move(name);
  t.forget = &forget;
  t.forget_targets = forget.labels;
  t.forget_sign = -1.0;
  return t;
}

}  // namespace

std::string_view method_name(Method m) {
  switch (m) {
    case Method::retrain: return "retrain";
    case Method::ft: return "ft";
    case Method::ga: return "ga";
    case Method::rl: return "rl";
    case Method::salun_lite: return "salun_lite";
    case Method::falw: return "falw";
    case Method::ga_falw: return "ga_falw";
    case Method::rl_falw: return "rl_falw";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  for (auto m : {Method::retrain, Method::ft, Method::ga, Method::rl, Method::salun_lite, Method::falw,
                 Method::ga_falw, Method::rl_falw}) {
    if (method_name(m) == name) return m;
  }
  throw std::invalid_argument("unknown method '" + std::string(name) + "'");
}

std::string_view constraint_name(Constraint c) {
  switch (c) {
    case Constraint::none: return "none";
    case Constraint::l2_to_origin: return "l2_to_origin";
    case Constraint::l1_sparsity: return "l1_sparsity";
  }
  return "?";
}

Constraint parse_constraint(std::string_view name) {
  for (auto c : {Constraint::none, Constraint::l2_to_origin, Constraint::l1_sparsity}) {
    if (constraint_name(c) == name) return c;
  }
  throw std::invalid_argument("unknown constraint '" + std::string(name) + "'");
}

void ObjectiveConfig::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0) || !(lambda >= 0.0)) {
    throw std::invalid_argument("objective: alpha, beta and lambda must be >= 0");
  }
  if (!(alpha > 0.0 || beta > 0.0)) throw std::invalid_argument("objective: alpha or beta must be positive");
}

void UnlearnConfig::validate() const {
  sgd.validate();
  objective.validate();
  falw.validate();
  if (!(saliency_fraction > 0.0 && saliency_fraction <= 1.0)) {
    throw std::invalid_argument("unlearn: saliency_fraction must be in (0, 1]");
  }
}

std::string to_json_line(const EpochLog& log) {
  nlohmann::ordered_json j;
  j["epoch"] = log.epoch;
  j["method"] = log.method;
  auto put = [&j](const char* key, const std::optional<double>& v) {
    if (v) {
      j[key] = *v;
    } else {
      j[key] = nullptr;
    }
  };
  put("loss_f", log.loss_f);
  put("loss_r", log.loss_r);
  put("mean_w", log.mean_w);
  put("min_w", log.min_w);
  put("max_w", log.max_w);
  return j.dump();
}

FalwWeighting::FalwWeighting(const data::LabeledDataset& forget, const data::LabeledDataset& val,
                             std::vector<double> balance, falw::FalwConfig cfg)
    : forget_(forget), val_(val), balance_(std::move(balance)), cfg_(cfg) {
  cfg_.validate();
  if (val_.empty()) throw std::invalid_argument("falw: validation set is empty");
}

void FalwWeighting::refresh(const nn::ModelState& model) {
  dist_ = falw::estimate_target_distribution(model, val_, cfg_.sigma_min);
  if (warned_coverage_) return;
  for (int c : dist_.fallback_classes) {
    const bool in_forget = std::find(forget_.labels.begin(), forget_.labels.end(), c) != forget_.labels.end();
    if (in_forget) {
      warnings_.push_back("validation set has no samples of forget class " + std::to_string(c) +
                          "; using global target statistics");
      warned_coverage_ = true;
    }
  }
}

void FalwWeighting::on_epoch_start(const nn::ModelState& model, int /*epoch*/) {
  if (cfg_.refresh == falw::Refresh::epoch || dist_.mu.empty()) refresh(model);
  history_.push_back(dist_);
}

void FalwWeighting::on_batch_start(const nn::ModelState& model) {
  if (cfg_.refresh == falw::Refresh::batch) refresh(model);
}

std::vector<double> FalwWeighting::weights(const nn::ModelState& model, std::span<const std::size_t> forget_rows) {
  std::vector<std::span<const double>> xs;
  std::vector<int> ys;
  xs.reserve(forget_rows.size());
  ys.reserve(forget_rows.size());
  for (auto r : forget_rows) {
    xs.push_back(forget_.row(r));
    ys.push_back(forget_.labels[r]);
  }
  return falw::batch_weights(model, xs, ys, dist_, balance_, cfg_);
}

UnlearnResult run_engine(const nn::ModelState& origin, const EngineTask& task, const UnlearnConfig& cfg) {
  cfg.validate();
  const auto& obj = cfg.objective;

  std::vector<Entry> entries;
  if (task.forget && obj.alpha > 0.0) {
    if (task.forget_targets.size() != task.forget->size()) {
      throw std::invalid_argument("engine: forget targets do not match forget set");
    }
    for (std::size_t i = 0; i < task.forget->size(); ++i) entries.push_back({true, i});
  }
  if (task.retain && obj.beta > 0.0) {
    for (std::size_t i = 0; i < task.retain->size(); ++i) entries.push_back({false, i});
  }

  UnlearnResult res;
  res.model = origin;
  res.model.momentum.assign(res.model.params.size(), 0.0);
  if (entries.empty() && cfg.sgd.epochs > 0) throw std::invalid_argument("engine: nothing to train on");

  Rng rng(derive_seed(cfg.seed, "unlearn-shuffle"));
  std::vector<nn::Example> batch;
  std::vector<std::size_t> forget_rows;
  std::vector<std::size_t> batch_forget_pos;
  const std::size_t bs = cfg.sgd.batch_size;

  for (int epoch = 0; epoch < cfg.sgd.epochs; ++epoch) {
    if (task.weighting) task.weighting->on_epoch_start(res.model, epoch);
    rng.shuffle(std::span<Entry>(entries));
    Stat loss_f, loss_r, weight;
    for (std::size_t start = 0; start < entries.size(); start += bs) {
      const std::size_t end = std::min(entries.size(), start + bs);
      if (task.weighting) task.weighting->on_batch_start(res.model);

      forget_rows.clear();
      for (std::size_t k = start; k < end; ++k) {
        if (entries[k].forget) forget_rows.push_back(entries[k].row);
      }
      std::vector<double> w;
      if (task.weighting && !forget_rows.empty()) {
        w = task.weighting->weights(res.model, forget_rows);
        if (w.size() != forget_rows.size()) throw std::logic_error("engine: weighting returned wrong count");
      }

      batch.clear();
      std::size_t fi = 0;
      for (std::size_t k = start; k < end; ++k) {
        const auto& e = entries[k];
        if (e.forget) {
          const double wi = w.empty() ? 1.0 : w[fi];
          if (!std::isfinite(wi)) throw std::runtime_error("engine: nonfinite forget weight");
          weight.add(wi);
          ++fi;
          batch.push_back({task.forget->row(e.row), task.forget_targets[e.row], task.forget_sign * obj.alpha * wi});
        } else {
          batch.push_back({task.retain->row(e.row), task.retain->labels[e.row], obj.beta});
        }
      }

      auto lg = nn::weighted_sum_loss_and_grad(res.model, batch);
      const double n = static_cast<double>(batch.size());
      for (auto& g : lg.grad) g /= n;
      for (std::size_t k = start; k < end; ++k) {
        (entries[k].forget ? loss_f : loss_r).add(lg.sample_losses[k - start]);
      }
      add_constraint_grad(lg.grad, res.model, origin, obj);
      nn::sgd_step(res.model, lg.grad, cfg.sgd, epoch, task.mask);
    }
    res.log.push_back({epoch, task.method, loss_f.mean(), loss_r.mean(), weight.mean(), weight.min(), weight.max()});
  }
  return res;
}

nn::ModelState train_model(const nn::ArchSpec& arch, const data::LabeledDataset& dataset, const nn::SgdConfig& sgd,
                           std::uint64_t seed, std::vector<EpochLog>* log) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  UnlearnConfig cfg;
  cfg.sgd = sgd;
  cfg.seed = derive_seed(seed, "train");
  EngineTask task;
  task.method = "train";
  task.retain = &dataset;
  auto res = run_engine(nn::init_model(arch, seed), task, cfg);
  if (log) *log = std::move(res.log);
  return std::move(res.model);
}

nn::ModelState retrain_oracle(const data::LabeledDataset& retain, const nn::ArchSpec& arch, const nn::SgdConfig& sgd,
                              std::uint64_t seed) {
  if (retain.empty()) throw std::invalid_argument("retrain: empty retain set");
  return train_model(arch, retain, sgd, seed);
}

UnlearnResult ft_unlearn(const nn::ModelState& original, const data::LabeledDataset& retain, const UnlearnConfig& cfg) {
  require_nonempty(retain, "retain set");
  EngineTask t;
  t.method = "ft";
  t.retain = &retain;
  return run_engine(original, t, cfg);
}

UnlearnResult ga_unlearn(const nn::ModelState& original, const data::LabeledDataset& forget, const UnlearnConfig& cfg) {
  return run_engine(original, ascent_task("ga", forget), cfg);
}

UnlearnResult rl_unlearn(const nn::ModelState& original, const data::LabeledDataset& forget,
                         std::span<const int> new_labels, const data::LabeledDataset& retain,
                         const UnlearnConfig& cfg) {
  return run_engine(original, relabel_task("rl", forget, new_labels, retain), cfg);
}

std::vector<std::uint8_t> saliency_mask(const nn::ModelState& model, const data::LabeledDataset& forget,
                                        double fraction) {
  require_nonempty(forget, "forget set");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("saliency: fraction must be in (0, 1]");
  std::vector<nn::Example> batch;
  batch.reserve(forget.size());
  for (std::size_t i = 0; i < forget.size(); ++i) batch.push_back({forget.row(i), forget.labels[i], 1.0});
  const auto g = nn::loss_and_grad(model, batch).grad;

  const std::size_t p = g.size();
  const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(p)));
  std::vector<std::size_t> order(p);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(g[a]) > std::abs(g[b]); });
  std::vector<std::uint8_t> mask(p, 0);
  for (std::size_t i = 0; i < std::min(keep, p); ++i) mask[order[i]] = 1;
  return mask;
}

UnlearnResult salun_lite_unlearn(const nn::ModelState& original, const data::LabeledDataset& forget,
                                 std::span<const int> new_labels, const data::LabeledDataset& retain,
                                 const UnlearnConfig& cfg) {
  auto t = relabel_task("salun_lite", forget, new_labels, retain);
  t.mask = saliency_mask(original, forget, cfg.saliency_fraction);
  return run_engine(original, t, cfg);
}

UnlearnResult attach_falw_weights(BaseMethod base, const nn::ModelState& original,
                                  const data::LabeledDataset& forget, std::span<const int> new_labels,
                                  const data::LabeledDataset& retain, const data::LabeledDataset& val,
                                  const data::ForgetSplit& split, const UnlearnConfig& cfg) {
  EngineTask t = base == BaseMethod::ga ? ascent_task("ga_falw", forget)
                                        : relabel_task("rl_falw", forget, new_labels, retain);
  if (cfg.falw.use_balance_factor && split.per_class_forget_counts.size() != original.arch.num_classes) {
    throw std::invalid_argument("falw: split class count does not match the model");
  }
  FalwWeighting weighting(forget, val, falw::class_balance_factors(split, cfg.falw.tau_balance), cfg.falw);
  t.weighting = &weighting;
  auto res = run_engine(original, t, cfg);
  res.warnings = weighting.warnings();
  res.distributions = weighting.epoch_distributions();
  res.balance = weighting.balance();
  return res;
}

UnlearnResult falw_unlearn(const nn::ModelState& original, const data::LabeledDataset& forget,
                           std::span<const int> new_labels, const data::LabeledDataset& retain,
                           const data::LabeledDataset& val, const data::ForgetSplit& split,
                           const UnlearnConfig& cfg) {
  auto res = attach_falw_weights(BaseMethod::rl, original, forget, new_labels, retain, val, split, cfg);
  for (auto& e : res.log) e.method = "falw";
  return res;
}

UnlearnData make_unlearn_data(const data::LabeledDataset& train, const data::ForgetSplit& split,
                              const data::RelabeledForgetSet& relabeled, const data::LabeledDataset& val) {
  if (relabeled.indices != split.forget_indices) {
    throw std::invalid_argument("unlearn: relabeled set does not match the forget split");
  }
  UnlearnData d;
  d.forget = train.subset(split.forget_indices);
  d.forget_new_labels = relabeled.new_labels;
  d.retain = train.subset(split.retain_indices);
  d.val = val;
  d.split = split;
  return d;
}

UnlearnResult run_method(const nn::ModelState& original, const UnlearnData& d, const UnlearnConfig& cfg) {
  switch (cfg.method) {
    case Method::retrain:
      throw std::invalid_argument("run_method: use retrain_oracle for the retrain method");
    case Method::ft: return ft_unlearn(original, d.retain, cfg);
    case Method::ga: return ga_unlearn(original, d.forget, cfg);
    case Method::rl: return rl_unlearn(original, d.forget, d.forget_new_labels, d.retain, cfg);
    case Method::salun_lite: return salun_lite_unlearn(original, d.forget, d.forget_new_labels, d.retain, cfg);
    case Method::falw: return falw_unlearn(original, d.forget, d.forget_new_labels, d.retain, d.val, d.split, cfg);
    case Method::ga_falw:
      return attach_falw_weights(BaseMethod::ga, original, d.forget, d.forget_new_labels, d.retain, d.val,
                                 d.split, cfg);
    case Method::rl_falw:
      return attach_falw_weights(BaseMethod::rl, original, d.forget, d.forget_new_labels, d.retain, d.val,
                                 d.split, cfg);
  }
  throw std::logic_error("run_method: unhandled method");
}

}  // namespace ulab::unlearn
