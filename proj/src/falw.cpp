#include "ulab/falw.hpp"

#include <charconv>
#include <cmath>
#include <stdexcept>

namespace ulab::falw {

namespace {

std::string fmt(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

void mean_std(std::span<const double> v, double& mean, double& sd) {
  double s = 0.0;
  for (double x : v) s += x;
  mean = s / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  sd = std::sqrt(ss / static_cast<double>(v.size()));
}

}  // namespace

void FalwConfig::validate() const {
  if (!(eta > 0.0)) throw std::invalid_argument("falw: eta must be > 0");
  if (!(tau_balance >= 0.0)) throw std::invalid_argument("falw: tau_balance must be >= 0");
  if (!(sigma_min > 0.0)) throw std::invalid_argument("falw: sigma_min must be > 0");
}

TargetDistribution estimate_target_distribution(const nn::ModelState& model, const data::LabeledDataset& val,
                                                double sigma_min) {
  if (val.empty()) throw std::invalid_argument("target distribution: empty validation set");
  const auto num_classes = model.arch.num_classes;
  std::vector<std::vector<double>> probs(num_classes);
  std::vector<double> all;
  all.reserve(val.size());
  for (std::size_t i = 0; i < val.size(); ++i) {
    const auto y = static_cast<std::size_t>(val.labels[i]);
    const double p = nn::forward(model, val.row(i))[y];
    probs[y].push_back(p);
    all.push_back(p);
  }
  double global_mu = 0.0, global_sd = 0.0;
  mean_std(all, global_mu, global_sd);

  TargetDistribution d;
  d.mu.resize(num_classes);
  d.sigma.resize(num_classes);
  d.support_counts.resize(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    d.support_counts[c] = probs[c].size();
    if (probs[c].empty()) {
      d.mu[c] = global_mu;
      d.sigma[c] = global_sd;
      d.fallback_classes.push_back(static_cast<int>(c));
    } else {
      mean_std(probs[c], d.mu[c], d.sigma[c]);
    }
    if (d.sigma[c] < sigma_min) d.sigma[c] = sigma_min;
  }
  return d;
}

double zscore(double p, double mu, double sigma, double sigma_min) {
  if (!(sigma >= sigma_min)) {
    throw std::invalid_argument("zscore: sigma " + fmt(sigma) + " below clamp " + fmt(sigma_min));
  }
  return (p - mu) / sigma;
}

double tanh_weight(double z, double exponent) {
  if (!std::isfinite(z)) throw std::invalid_argument("weight: nonfinite z-score");
  if (!(exponent > 0.0)) throw std::invalid_argument("weight: exponent must be > 0");
  if (z == 0.0) return 1.0;
  const double t = std::exp(std::log(std::tanh(std::abs(z))) / exponent);
  const double up = 1.0 + t;
  return z > 0.0 ? up : 2.0 - up;
}

double forgetting_aware_weight(double z, double eta) { return tanh_weight(z, eta); }

double balance_factor(std::size_t n_forget, std::size_t n_forget_class, std::size_t num_classes, double tau) {
  if (n_forget_class == 0) throw std::invalid_argument("balance_factor: class has no forget samples");
  if (num_classes == 0) throw std::invalid_argument("balance_factor: zero classes");
  if (!(tau >= 0.0)) throw std::invalid_argument("balance_factor: tau must be >= 0");
  const double base = static_cast<double>(n_forget) /
                      (static_cast<double>(num_classes) * static_cast<double>(n_forget_class));
  return std::pow(base, tau);
}

double final_weight(double z, double balance) {
  if (!(balance > 0.0)) throw std::invalid_argument("final_weight: balance factor must be > 0");
  return tanh_weight(z, balance);
}

std::vector<double> class_balance_factors(const data::ForgetSplit& split, double tau) {
  const auto& counts = split.per_class_forget_counts;
  std::vector<double> b(counts.size(), 1.0);
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] > 0) b[c] = balance_factor(split.forget_size(), counts[c], counts.size(), tau);
  }
  return b;
}

std::vector<double> batch_weights(const nn::ModelState& model, std::span<const std::span<const double>> xs,
                                  std::span<const int> true_labels, const TargetDistribution& dist,
                                  std::span<const double> balance, const FalwConfig& cfg) {
  if (xs.size() != true_labels.size()) throw std::invalid_argument("batch_weights: size mismatch");
  std::vector<double> w(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto c = static_cast<std::size_t>(true_labels[i]);
    if (c >= dist.mu.size()) throw std::invalid_argument("batch_weights: class outside target distribution");
    const double p = nn::forward(model, xs[i])[c];
    const double z = zscore(p, dist.mu[c], dist.sigma[c], cfg.sigma_min);
    w[i] = cfg.use_balance_factor ? final_weight(z, balance[c]) : forgetting_aware_weight(z, cfg.eta);
    if (!std::isfinite(w[i])) throw std::runtime_error("batch_weights: nonfinite weight");
  }
  return w;
}

std::string target_distribution_csv(const TargetDistribution& dist) {
  std::string out = "class,mu,sigma,support\n";
  for (std::size_t c = 0; c < dist.mu.size(); ++c) {
    out += std::to_string(c) + ',' + fmt(dist.mu[c]) + ',' + fmt(dist.sigma[c]) + ',' +
           std::to_string(dist.support_counts[c]) + '\n';
  }
  return out;
}

}  // namespace ulab::falw
