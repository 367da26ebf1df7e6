#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ulab::data {

struct LabeledDataset {
  std::size_t dim = 0;
  int num_classes = 0;
  std::vector<double> features;  // row major, size() * dim
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::span<const double> row(std::size_t i) const { return {features.data() + i * dim, dim}; }

  std::vector<std::size_t> class_counts() const;
  LabeledDataset subset(std::span<const std::size_t> indices) const;
  void validate() const;
};

// Partition of a training set into forget (D_f) and retain (D_r) indices.
struct ForgetSplit {
  std::vector<std::size_t> forget_indices;  // ascending
  std::vector<std::size_t> retain_indices;  // ascending
  std::vector<std::size_t> per_class_forget_counts;
  // class_order[k] is the class that received power-law rank k+1.
  std::vector<int> class_order;
  double gamma = 0.0;
  double forget_ratio = 0.0;

  std::size_t forget_size() const { return forget_indices.size(); }
  int num_classes() const { return static_cast<int>(per_class_forget_counts.size()); }
};

struct GroupPartition {
  std::vector<int> head;
  std::vector<int> mid;
  std::vector<int> tail;
};

enum class Group { head, mid, tail, none };
Group group_of(const GroupPartition& p, int cls);

struct RelabeledForgetSet {
  std::vector<std::size_t> indices;  // into the training set, same order as ForgetSplit
  std::vector<int> original_labels;
  std::vector<int> new_labels;
};

struct TrainValTest {
  LabeledDataset train;
  LabeledDataset val;
  LabeledDataset test;
};

LabeledDataset synth_blobs(int num_classes, std::size_t per_class, std::size_t dim, double spread,
                           std::uint64_t seed);

LabeledDataset load_csv(const std::filesystem::path& path);
LabeledDataset parse_csv(const std::string& text);
void save_csv(const std::filesystem::path& path, const LabeledDataset& ds);

TrainValTest split(const LabeledDataset& ds, double val_fraction, double test_fraction,
                   std::uint64_t seed);

// Largest-remainder apportionment of `total` units over `weights`, ties
// resolved toward the lower index.
std::vector<std::size_t> largest_remainder(std::span<const double> weights, std::size_t total);

// Target per-rank counts k^-gamma, normalized to `total`, clamped to
// availability. Deficits from saturated ranks are re-apportioned over the
// unsaturated ranks in proportion to their power-law weights.
std::vector<std::size_t> power_law_counts(std::span<const std::size_t> availability,
                                          std::size_t total, double gamma);

ForgetSplit build_long_tailed_forget_set(const LabeledDataset& train, double forget_ratio,
                                         double gamma, std::uint64_t seed);

GroupPartition partition_head_mid_tail(const ForgetSplit& split);

RelabeledForgetSet relabel_forget_set(const ForgetSplit& split, const LabeledDataset& train,
                                      std::uint64_t seed);

// CSV `index,label,partition` with partition in {forget,retain}.
std::string forget_split_csv(const ForgetSplit& split, const LabeledDataset& train);

}  // namespace ulab::data
