#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ulab/data.hpp"
#include "ulab/nn.hpp"

namespace ulab::eval {

// All four values are percentages in [0, 100].
struct MetricSet {
  double fa = 0.0;
  double ra = 0.0;
  double ta = 0.0;
  double mia = 0.0;

  bool operator==(const MetricSet&) const = default;
};

enum class Deviation { under, faithful, over };

struct DeviationLabel {
  Deviation label = Deviation::faithful;
  double p_u = 0.0;
  double p_star = 0.0;
  double threshold = 0.0;
};

struct GroupGaps {
  double head = 0.0;
  double mid = 0.0;
  double tail = 0.0;

  bool operator==(const GroupGaps&) const = default;
};

struct DeviationCounts {
  std::size_t under = 0;
  std::size_t faithful = 0;
  std::size_t over = 0;

  std::size_t total() const { return under + faithful + over; }
  bool operator==(const DeviationCounts&) const = default;
};

struct UnlearnReport {
  std::string method;
  std::uint64_t seed = 0;
  double gamma = 0.0;
  double forget_ratio = 0.0;
  MetricSet metrics;
  MetricSet retrain_metrics;
  double avg_gap = 0.0;
  GroupGaps group_fa_gaps;
  DeviationCounts deviation_counts;
};

// 100 * fraction of argmax hits; argmax ties resolve to the lowest class id.
double accuracy(const nn::ModelState& model, const data::LabeledDataset& ds);

std::vector<double> true_class_confidences(const nn::ModelState& model, const data::LabeledDataset& ds);

// Confidence threshold t maximizing the balanced accuracy of "member iff
// confidence >= t". Candidates are the observed probe confidences; the lowest
// optimal candidate wins.
double mia_threshold(std::span<const double> member_conf, std::span<const double> nonmember_conf);

// Percentage of `target_conf` classified non-member by the fitted threshold.
double mia_score_from_confidences(std::span<const double> member_conf, std::span<const double> nonmember_conf,
                                  std::span<const double> target_conf);

double mia_score(const nn::ModelState& model, const data::LabeledDataset& retain_probe,
                 const data::LabeledDataset& test_probe, const data::LabeledDataset& forget);

// Seeded subsample of `fraction` of the rows (at least one).
data::LabeledDataset probe_subsample(const data::LabeledDataset& ds, double fraction, std::uint64_t seed);

double avg_gap(const MetricSet& m, const MetricSet& r);

DeviationLabel classify_deviation(double p_u, double p_star, double threshold);

std::vector<DeviationLabel> deviation_labels(const nn::ModelState& unlearned, const nn::ModelState& retrained,
                                             const data::LabeledDataset& forget, double threshold);

DeviationCounts count_deviations(std::span<const DeviationLabel> labels);

// Signed FA_u - FA_* per group over the forget samples of that group.
GroupGaps group_fa_gaps(const nn::ModelState& unlearned, const nn::ModelState& retrained,
                        const data::LabeledDataset& forget, const data::GroupPartition& partition);

struct Histogram {
  std::vector<double> edges;  // bins + 1 edges over [0, 1]
  std::vector<std::size_t> counts;
};

Histogram histogram(std::span<const double> values, std::size_t bins);
Histogram probability_histogram(const nn::ModelState& model, const data::LabeledDataset& forget, std::size_t bins);

// CSV `bin_lo,bin_hi,count`.
std::string histogram_csv(const Histogram& h);
std::string histogram_svg(const Histogram& h, const std::string& title);

struct BarSeries {
  std::string name;
  std::vector<double> values;  // one per category
};

std::string grouped_bar_svg(const std::string& title, std::span<const std::string> categories,
                            std::span<const BarSeries> series);

}  // namespace ulab::eval
