// Independent reference computations for the tests. Nothing here calls into
// the library code it checks.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_dec_float.hpp>
#include <boost/multiprecision/cpp_int.hpp>
#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "ulab/data.hpp"

namespace oracle {

using hp = boost::multiprecision::cpp_dec_float_50;
using rational = boost::multiprecision::cpp_rational;

// 1 + sign(z) tanh(|z|)^(1/e) in 50 digits.
inline double weight(double z, double exponent) {
  if (z == 0.0) return 1.0;
  const hp az = boost::multiprecision::abs(hp(z));
  const hp t = boost::multiprecision::tanh(az);
  const hp p = boost::multiprecision::pow(t, hp(1) / hp(exponent));
  return static_cast<double>(z > 0 ? hp(1) + p : hp(1) - p);
}

inline double balance(double n_forget, double n_class, double classes, double tau) {
  return static_cast<double>(boost::multiprecision::pow(hp(n_forget) / (hp(classes) * hp(n_class)), hp(tau)));
}

// Largest remainder with exact rational quotas; ties go to the lower index.
inline std::vector<std::size_t> largest_remainder(const std::vector<rational>& weights, std::size_t total) {
  rational sum = 0;
  for (const auto& w : weights) sum += w;
  std::vector<std::size_t> out(weights.size());
  std::vector<rational> frac(weights.size());
  std::size_t used = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const rational q = weights[i] * total / sum;
    const boost::multiprecision::cpp_int fl = numerator(q) / denominator(q);
    out[i] = static_cast<std::size_t>(fl);
    frac[i] = q - rational(fl);
    used += out[i];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t k = 0; k < total - used; ++k) ++out[order[k]];
  return out;
}

// Same rule with 50-digit quotas, for weights that are not rational.
inline std::vector<std::size_t> largest_remainder(const std::vector<hp>& weights, std::size_t total) {
  hp sum = 0;
  for (const auto& w : weights) sum += w;
  std::vector<std::size_t> out(weights.size());
  std::vector<hp> frac(weights.size());
  std::size_t used = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const hp q = weights[i] * total / sum;
    const hp fl = boost::multiprecision::floor(q);
    out[i] = static_cast<std::size_t>(fl);
    frac[i] = q - fl;
    used += out[i];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t k = 0; k < total - used; ++k) ++out[order[k]];
  return out;
}

// Power-law rank counts k^-gamma, exact for integer gamma.
inline std::vector<std::size_t> power_law(std::size_t classes, std::size_t total, double gamma) {
  if (gamma == std::floor(gamma) && gamma <= 8) {
    std::vector<rational> w;
    const auto g = static_cast<unsigned>(gamma);
    for (std::size_t k = 1; k <= classes; ++k) {
      boost::multiprecision::cpp_int den = 1;
      for (unsigned j = 0; j < g; ++j) den *= k;
      w.emplace_back(rational(1, den));
    }
    return largest_remainder(w, total);
  }
  std::vector<hp> w;
  for (std::size_t k = 1; k <= classes; ++k) w.push_back(boost::multiprecision::pow(hp(k), hp(-gamma)));
  return largest_remainder(w, total);
}

// Exhaustive threshold search: every observed probe confidence is tried and
// balanced accuracy is compared as an exact fraction.
inline double mia(const std::vector<double>& mem, const std::vector<double>& non, const std::vector<double>& target) {
  std::vector<double> cand = mem;
  cand.insert(cand.end(), non.begin(), non.end());
  bool have = false;
  double best_t = 0.0;
  rational best = 0;
  for (double t : cand) {
    std::size_t tp = 0, tn = 0;
    for (double c : mem) tp += c >= t;
    for (double c : non) tn += c < t;
    const rational ba = rational(tp, mem.size()) + rational(tn, non.size());
    if (!have || ba > best || (ba == best && t < best_t)) {
      best = ba;
      best_t = t;
      have = true;
    }
  }
  std::size_t below = 0;
  for (double c : target) below += c < best_t;
  return 100.0 * static_cast<double>(below) / static_cast<double>(target.size());
}

// Two-pass mean and population standard deviation.
inline void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  hp m = 0;
  for (double x : v) m += x;
  m /= v.size();
  hp s = 0;
  for (double x : v) s += (hp(x) - m) * (hp(x) - m);
  mean = static_cast<double>(m);
  sd = static_cast<double>(boost::multiprecision::sqrt(s / v.size()));
}

inline bool well_formed_xml(const std::string& text) {
  try {
    std::istringstream in(text);
    boost::property_tree::ptree pt;
    boost::property_tree::read_xml(in, pt);
    return pt.count("svg") == 1;
  } catch (const std::exception&) {
    return false;
  }
}

// Dataset of `counts[c]` one-dimensional points per class, all at x = c.
inline ulab::data::LabeledDataset labels_only(const std::vector<std::size_t>& counts) {
  ulab::data::LabeledDataset ds;
  ds.dim = 1;
  ds.num_classes = static_cast<int>(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) {
    for (std::size_t i = 0; i < counts[c]; ++i) {
      ds.labels.push_back(static_cast<int>(c));
      ds.features.push_back(static_cast<double>(c));
    }
  }
  return ds;
}

}  // namespace oracle
