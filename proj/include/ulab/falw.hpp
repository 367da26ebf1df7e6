#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ulab/data.hpp"
#include "ulab/nn.hpp"

namespace ulab::falw {

inline constexpr double kDefaultSigmaMin = 1e-3;

// Class-wise Gaussian summary of true-class probabilities on held-out data.
struct TargetDistribution {
  std::vector<double> mu;
  std::vector<double> sigma;
  std::vector<std::size_t> support_counts;
  // Classes with no validation support, filled from the global statistics.
  std::vector<int> fallback_classes;
};

enum class Refresh { epoch, batch };

struct FalwConfig {
  double eta = 1.0;
  double tau_balance = 0.15;
  double sigma_min = kDefaultSigmaMin;
  Refresh refresh = Refresh::epoch;
  bool use_balance_factor = true;

  void validate() const;
};

// Per-class mean and population standard deviation of p(c|x) over the
// validation samples of class c. sigma is clamped to sigma_min.
TargetDistribution estimate_target_distribution(const nn::ModelState& model,
                                                const data::LabeledDataset& val,
                                                double sigma_min = kDefaultSigmaMin);

double zscore(double p, double mu, double sigma, double sigma_min = kDefaultSigmaMin);

// 1 + sign(z) * tanh(|z|)^(1/exponent). Shared by the forgetting-aware weight
// (exponent = eta) and the balanced weight (exponent = B). The negative branch
// is formed as 2 - (1 + t) so that w(-z) == 2 - w(z) holds bit for bit.
double tanh_weight(double z, double exponent);

double forgetting_aware_weight(double z, double eta);

// (N_f / (C * N_fk))^tau.
double balance_factor(std::size_t n_forget, std::size_t n_forget_class, std::size_t num_classes, double tau);

double final_weight(double z, double balance);

// Balance factor for every class present in the forget split; classes with
// no forget samples get 1.
std::vector<double> class_balance_factors(const data::ForgetSplit& split, double tau);

// One FaLW weight per forget example. `true_labels` are the original classes;
// the probabilities are taken on them, not on any relabeled target.
std::vector<double> batch_weights(const nn::ModelState& model, std::span<const std::span<const double>> xs,
                                  std::span<const int> true_labels, const TargetDistribution& dist,
                                  std::span<const double> balance, const FalwConfig& cfg);

// CSV `class,mu,sigma,support`.
std::string target_distribution_csv(const TargetDistribution& dist);

}  // namespace ulab::falw
