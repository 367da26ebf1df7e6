#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ulab::nn {

enum class Activation { relu };

// Layer widths of a fully connected classifier: input -> hidden... -> classes.
struct ArchSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t num_classes = 0;
  Activation activation = Activation::relu;

  std::vector<std::size_t> layer_dims() const;
  std::size_t param_count() const;
  void validate() const;

  bool operator==(const ArchSpec&) const = default;
};

// Parameters are stored flat, layer by layer: W (out x in, row major) then b.
struct ModelState {
  ArchSpec arch;
  std::vector<double> params;
  std::vector<double> momentum;
};

struct SgdConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 64;
  int epochs = 60;
  std::vector<int> lr_decay_epochs;
  double lr_decay_factor = 10.0;

  void validate() const;
  // Learning rate in effect for a 0-based epoch: the base rate divided by
  // lr_decay_factor once for every decay epoch <= epoch.
  double lr_at(int epoch) const;
};

// One training example. The weight multiplies the sample's cross-entropy.
struct Example {
  std::span<const double> x;
  int label = 0;
  double weight = 1.0;
};

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
  std::vector<double> sample_losses;  // unweighted CE per example
};

ModelState init_model(const ArchSpec& arch, std::uint64_t seed);

// A model whose parameters are all zero (uniform predictions).
ModelState zero_model(const ArchSpec& arch);

std::vector<double> logits(const ModelState& model, std::span<const double> x);

// Softmax class probabilities p(.|x).
std::vector<double> forward(const ModelState& model, std::span<const double> x);

// Probability assigned to `label`.
double true_class_probability(const ModelState& model, std::span<const double> x, int label);

// Mean weighted cross-entropy over the batch and its exact gradient.
// Weights must be nonnegative; the mean divides by the batch size.
LossAndGrad loss_and_grad(const ModelState& model, std::span<const Example> batch);

// Sum of weight_i * CE_i and its gradient, with no sign restriction on the
// weights. Building block for ascent and mixed objectives.
LossAndGrad weighted_sum_loss_and_grad(const ModelState& model, std::span<const Example> batch);

// Weighted mean cross-entropy evaluated through forward() only.
double batch_loss(const ModelState& model, std::span<const Example> batch);

// v <- m*v + g + wd*theta; theta <- theta - lr(epoch)*v.
// Entries with mask[i] == 0 are left untouched (both theta and v).
void sgd_step(ModelState& model, std::span<const double> grad, const SgdConfig& cfg, int epoch,
              std::span<const std::uint8_t> mask = {});

// Central-difference gradient of batch_loss; a test oracle.
std::vector<double> fd_gradient(const ModelState& model, std::span<const Example> batch, double h);

// Smallest |pre-activation| over hidden units for the batch. Values close to
// zero mean a finite-difference probe may straddle a ReLU kink.
double min_abs_preactivation(const ModelState& model, std::span<const Example> batch);

// Checkpoint record: "ULAB1", u32 dim count, u32 dims..., f64 params.
std::string encode_checkpoint(const ModelState& model);
ModelState decode_checkpoint(const std::string& bytes);
void save_checkpoint(const std::filesystem::path& path, const ModelState& model);
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace ulab::nn
