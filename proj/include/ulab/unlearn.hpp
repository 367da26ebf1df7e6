#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ulab/data.hpp"
#include "ulab/falw.hpp"
#include "ulab/nn.hpp"

namespace ulab::unlearn {

enum class Method { retrain, ft, ga, rl, salun_lite, falw, ga_falw, rl_falw };

std::string_view method_name(Method m);
Method parse_method(std::string_view name);

enum class Constraint { none, l2_to_origin, l1_sparsity };

std::string_view constraint_name(Constraint c);
Constraint parse_constraint(std::string_view name);

// alpha scales the forgetting term, beta the retain term, lambda the
// parameter constraint. A zero alpha (beta) drops the forget (retain)
// samples from the unlearning set entirely.
struct ObjectiveConfig {
  double alpha = 1.0;
  double beta = 1.0;
  double lambda = 0.0;
  Constraint constraint = Constraint::none;

  void validate() const;
};

struct UnlearnConfig {
  Method method = Method::rl;
  nn::SgdConfig sgd;
  ObjectiveConfig objective;
  falw::FalwConfig falw;
  double saliency_fraction = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  std::string method;
  std::optional<double> loss_f;
  std::optional<double> loss_r;
  std::optional<double> mean_w;
  std::optional<double> min_w;
  std::optional<double> max_w;
};

std::string to_json_line(const EpochLog& log);

struct UnlearnResult {
  nn::ModelState model;
  std::vector<EpochLog> log;
  std::vector<std::string> warnings;
  // Target distributions in effect at the start of each epoch (FaLW only).
  std::vector<falw::TargetDistribution> distributions;
  // Per-class balance factors (FaLW only).
  std::vector<double> balance;
};

// Hook deciding per-sample weights of the forget part of each batch.
class ForgetWeighting {
 public:
  virtual ~ForgetWeighting() = default;
  virtual void on_epoch_start(const nn::ModelState& /*model*/, int /*epoch*/) {}
  virtual void on_batch_start(const nn::ModelState& /*model*/) {}
  // `forget_rows` index the forget set passed to the engine.
  virtual std::vector<double> weights(const nn::ModelState& model, std::span<const std::size_t> forget_rows) = 0;
};

// FaLW weights: z-scores of p(y_i|x_i) on the original class against the
// validation target distribution, mapped through the balanced tanh weight.
class FalwWeighting final : public ForgetWeighting {
 public:
  FalwWeighting(const data::LabeledDataset& forget, const data::LabeledDataset& val,
                std::vector<double> balance, falw::FalwConfig cfg);

  void on_epoch_start(const nn::ModelState& model, int epoch) override;
  void on_batch_start(const nn::ModelState& model) override;
  std::vector<double> weights(const nn::ModelState& model, std::span<const std::size_t> forget_rows) override;

  const std::vector<double>& balance() const { return balance_; }
  const std::vector<falw::TargetDistribution>& epoch_distributions() const { return history_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  void refresh(const nn::ModelState& model);

  const data::LabeledDataset& forget_;
  const data::LabeledDataset& val_;
  std::vector<double> balance_;
  falw::FalwConfig cfg_;
  falw::TargetDistribution dist_;
  std::vector<falw::TargetDistribution> history_;
  std::vector<std::string> warnings_;
  bool warned_coverage_ = false;
};

// Description of one unlearning run for the shared SGD engine.
struct EngineTask {
  std::string method;
  const data::LabeledDataset* forget = nullptr;  // features and true labels of D_f
  std::vector<int> forget_targets;               // labels used in the forget loss
  double forget_sign = 1.0;                      // -1 for gradient ascent
  const data::LabeledDataset* retain = nullptr;
  ForgetWeighting* weighting = nullptr;
  std::vector<std::uint8_t> mask;  // empty = every parameter trainable
};

UnlearnResult run_engine(const nn::ModelState& origin, const EngineTask& task, const UnlearnConfig& cfg);

// Fresh initialization followed by SGD on `dataset`.
nn::ModelState train_model(const nn::ArchSpec& arch, const data::LabeledDataset& dataset,
                           const nn::SgdConfig& sgd, std::uint64_t seed, std::vector<EpochLog>* log = nullptr);

nn::ModelState retrain_oracle(const data::LabeledDataset& retain, const nn::ArchSpec& arch,
                              const nn::SgdConfig& sgd, std::uint64_t seed);

UnlearnResult ft_unlearn(const nn::ModelState& original, const data::LabeledDataset& retain,
                         const UnlearnConfig& cfg);

UnlearnResult ga_unlearn(const nn::ModelState& original, const data::LabeledDataset& forget,
                         const UnlearnConfig& cfg);

UnlearnResult rl_unlearn(const nn::ModelState& original, const data::LabeledDataset& forget,
                         std::span<const int> new_labels, const data::LabeledDataset& retain,
                         const UnlearnConfig& cfg);

// Top `fraction` of parameters by |grad of mean CE over `forget`|; ties by index.
std::vector<std::uint8_t> saliency_mask(const nn::ModelState& model, const data::LabeledDataset& forget,
                                        double fraction);

UnlearnResult salun_lite_unlearn(const nn::ModelState& original, const data::LabeledDataset& forget,
                                 std::span<const int> new_labels, const data::LabeledDataset& retain,
                                 const UnlearnConfig& cfg);

UnlearnResult falw_unlearn(const nn::ModelState& original, const data::LabeledDataset& forget,
                           std::span<const int> new_labels, const data::LabeledDataset& retain,
                           const data::LabeledDataset& val, const data::ForgetSplit& split,
                           const UnlearnConfig& cfg);

enum class BaseMethod { ga, rl };

// Runs GA or RL with each forget-sample loss multiplied by its FaLW weight.
UnlearnResult attach_falw_weights(BaseMethod base, const nn::ModelState& original,
                                  const data::LabeledDataset& forget, std::span<const int> new_labels,
                                  const data::LabeledDataset& retain, const data::LabeledDataset& val,
                                  const data::ForgetSplit& split, const UnlearnConfig& cfg);

// Everything a method may need, materialized from a training set and split.
struct UnlearnData {
  data::LabeledDataset forget;
  std::vector<int> forget_new_labels;
  data::LabeledDataset retain;
  data::LabeledDataset val;
  data::ForgetSplit split;
};

UnlearnData make_unlearn_data(const data::LabeledDataset& train, const data::ForgetSplit& split,
                              const data::RelabeledForgetSet& relabeled, const data::LabeledDataset& val);

// Dispatch on cfg.method. Method::retrain is rejected here; the retrain
// oracle needs the architecture and training schedule instead.
UnlearnResult run_method(const nn::ModelState& original, const UnlearnData& d, const UnlearnConfig& cfg);

}  // namespace ulab::unlearn
