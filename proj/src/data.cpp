#include "ulab/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "ulab/rng.hpp"

namespace ulab::data {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::vector<std::size_t> LabeledDataset::class_counts() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  LabeledDataset out;
  out.dim = dim;
  out.num_classes = num_classes;
  out.labels.reserve(indices.size());
  out.features.reserve(indices.size() * dim);
  for (auto i : indices) {
    if (i >= size()) throw std::out_of_range("subset: index " + std::to_string(i) + " out of range");
    out.labels.push_back(labels[i]);
    const auto r = row(i);
    out.features.insert(out.features.end(), r.begin(), r.end());
  }
  return out;
}

void LabeledDataset::validate() const {
  if (features.size() != labels.size() * dim) {
    throw std::invalid_argument("dataset: feature matrix does not match label count");
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes) {
      throw std::invalid_argument("dataset: label " + std::to_string(y) + " outside [0, C)");
    }
  }
}

Group group_of(const GroupPartition& p, int cls) {
  auto in = [cls](const std::vector<int>& g) { return std::find(g.begin(), g.end(), cls) != g.end(); };
  if (in(p.head)) return Group::head;
  if (in(p.mid)) return Group::mid;
  if (in(p.tail)) return Group::tail;
  return Group::none;
}

LabeledDataset synth_blobs(int num_classes, std::size_t per_class, std::size_t dim, double spread,
                           std::uint64_t seed) {
  if (num_classes < 2) throw std::invalid_argument("synth_blobs: need at least 2 classes");
  if (per_class < 1) throw std::invalid_argument("synth_blobs: per_class must be >= 1");
  if (dim < 1) throw std::invalid_argument("synth_blobs: dim must be >= 1");
  if (!(spread >= 0.0)) throw std::invalid_argument("synth_blobs: spread must be >= 0");

  // Class means are random unit directions, which for dim >= C are close to
  // an orthogonal (simplex-like) layout.
  Rng mean_rng(derive_seed(seed, "blob-means"));
  std::vector<double> means(static_cast<std::size_t>(num_classes) * dim);
  for (int c = 0; c < num_classes; ++c) {
    double norm = 0.0;
    double* m = means.data() + static_cast<std::size_t>(c) * dim;
    while (norm == 0.0) {
      for (std::size_t j = 0; j < dim; ++j) m[j] = mean_rng.normal();
      norm = 0.0;
      for (std::size_t j = 0; j < dim; ++j) norm += m[j] * m[j];
    }
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < dim; ++j) m[j] /= norm;
  }

  LabeledDataset ds;
  ds.dim = dim;
  ds.num_classes = num_classes;
  ds.labels.reserve(per_class * static_cast<std::size_t>(num_classes));
  ds.features.reserve(ds.labels.capacity() * dim);
  Rng rng(derive_seed(seed, "blob-points"));
  for (int c = 0; c < num_classes; ++c) {
    const double* m = means.data() + static_cast<std::size_t>(c) * dim;
    for (std::size_t i = 0; i < per_class; ++i) {
      ds.labels.push_back(c);
      for (std::size_t j = 0; j < dim; ++j) ds.features.push_back(m[j] + spread * rng.normal());
    }
  }
  return ds;
}

LabeledDataset parse_csv(const std::string& text) {
  LabeledDataset ds;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  int max_label = -1;
  bool have_dim = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto comma = t.find(',', start);
      fields.push_back(trim(std::string_view(t).substr(start, comma - start)));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    const std::string where = "line " + std::to_string(line_no);
    if (fields.size() < 2) throw std::runtime_error("csv " + where + ": expected label and features");

    int label = 0;
    const auto& lf = fields[0];
    auto [lp, lec] = std::from_chars(lf.data(), lf.data() + lf.size(), label);
    if (lec != std::errc() || lp != lf.data() + lf.size()) {
      throw std::runtime_error("csv " + where + ": non-integer label '" + lf + "'");
    }
    if (label < 0) throw std::runtime_error("csv " + where + ": negative label");

    const std::size_t d = fields.size() - 1;
    if (!have_dim) {
      ds.dim = d;
      have_dim = true;
    } else if (d != ds.dim) {
      throw std::runtime_error("csv " + where + ": dimension mismatch, expected " +
                               std::to_string(ds.dim) + " features, found " + std::to_string(d));
    }
    for (std::size_t j = 1; j < fields.size(); ++j) {
      const auto& f = fields[j];
      double v = 0.0;
      auto [fp, fec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (fec != std::errc() || fp != f.data() + f.size() || f.empty()) {
        throw std::runtime_error("csv " + where + ": malformed value '" + f + "'");
      }
      ds.features.push_back(v);
    }
    ds.labels.push_back(label);
    max_label = std::max(max_label, label);
  }
  if (ds.labels.empty()) throw std::runtime_error("empty dataset");
  ds.num_classes = max_label + 1;
  return ds;
}

LabeledDataset load_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("csv: cannot open " + path.string());
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_csv(buf.str());
}

void save_csv(const std::filesystem::path& path, const LabeledDataset& ds) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("csv: cannot write " + path.string());
  char buf[64];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    f << ds.labels[i];
    for (double v : ds.row(i)) {
      auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
      f << ',' << std::string_view(buf, static_cast<std::size_t>(p - buf));
    }
    f << '\n';
  }
}

TrainValTest split(const LabeledDataset& ds, double val_fraction, double test_fraction,
                   std::uint64_t seed) {
  if (!(val_fraction >= 0.0) || !(test_fraction >= 0.0) || !(val_fraction + test_fraction < 1.0)) {
    throw std::invalid_argument("split: fractions must be >= 0 with sum < 1");
  }
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

  std::vector<std::size_t> train_idx, val_idx, test_idx;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.empty()) continue;
    const auto n = members.size();
    auto part = [n](double f) -> std::size_t {
      if (f == 0.0) return 0;
      return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(f * static_cast<double>(n))));
    };
    const std::size_t nv = part(val_fraction);
    const std::size_t nt = part(test_fraction);
    if (nv + nt >= n) {
      throw std::invalid_argument("split: class " + std::to_string(c) + " has " + std::to_string(n) +
                                  " samples, too small to stratify");
    }
    Rng rng(derive_seed(seed, "split", c));
    rng.shuffle(std::span<std::size_t>(members));
    val_idx.insert(val_idx.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(nv));
    test_idx.insert(test_idx.end(), members.begin() + static_cast<std::ptrdiff_t>(nv),
                    members.begin() + static_cast<std::ptrdiff_t>(nv + nt));
    train_idx.insert(train_idx.end(), members.begin() + static_cast<std::ptrdiff_t>(nv + nt), members.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  return {ds.subset(train_idx), ds.subset(val_idx), ds.subset(test_idx)};
}

std::vector<std::size_t> largest_remainder(std::span<const double> weights, std::size_t total) {
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0L);
  if (weights.empty() || !(sum > 0.0)) throw std::invalid_argument("largest_remainder: weights must sum > 0");
  std::vector<std::size_t> counts(weights.size());
  std::vector<long double> frac(weights.size());
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    const long double q = static_cast<long double>(total) * weights[k] / static_cast<long double>(sum);
    long double fl = std::floor(q);
    // Quotas a hair below an integer are that integer.
    if (q - fl > 1.0L - 1e-12L) fl += 1.0L;
    counts[k] = static_cast<std::size_t>(fl);
    frac[k] = std::max(0.0L, q - fl);
    assigned += counts[k];
  }
  if (assigned > total) throw std::logic_error("largest_remainder: over-assignment");
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (std::abs(frac[a] - frac[b]) <= 1e-12L) return a < b;
    return frac[a] > frac[b];
  });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++counts[order[i % order.size()]];
  return counts;
}

std::vector<std::size_t> power_law_counts(std::span<const std::size_t> availability, std::size_t total,
                                          double gamma) {
  const std::size_t c = availability.size();
  const std::size_t avail = std::accumulate(availability.begin(), availability.end(), std::size_t{0});
  if (total > avail) throw std::invalid_argument("power_law_counts: total exceeds availability");
  std::vector<double> weights(c);
  for (std::size_t k = 0; k < c; ++k) weights[k] = std::pow(static_cast<double>(k + 1), -gamma);

  std::vector<std::size_t> counts(c, 0);
  std::vector<bool> saturated(c, false);
  while (true) {
    std::size_t fixed = 0;
    std::vector<double> w(c, 0.0);
    for (std::size_t k = 0; k < c; ++k) {
      if (saturated[k]) {
        fixed += availability[k];
      } else {
        w[k] = weights[k];
      }
    }
    const std::size_t rest = total - fixed;
    bool any_open = std::any_of(w.begin(), w.end(), [](double v) { return v > 0.0; });
    std::vector<std::size_t> share(c, 0);
    if (any_open && rest > 0) share = largest_remainder(w, rest);
    bool changed = false;
    for (std::size_t k = 0; k < c; ++k) {
      if (saturated[k]) {
        counts[k] = availability[k];
      } else if (share[k] > availability[k]) {
        saturated[k] = true;
        changed = true;
      } else {
        counts[k] = share[k];
      }
    }
    if (!changed) break;
  }
  return counts;
}

ForgetSplit build_long_tailed_forget_set(const LabeledDataset& train, double forget_ratio, double gamma,
                                         std::uint64_t seed) {
  if (train.empty()) throw std::invalid_argument("forget set: empty training set");
  if (!(forget_ratio > 0.0 && forget_ratio < 1.0)) {
    throw std::invalid_argument("forget set: forget_ratio must be in (0, 1)");
  }
  if (!(gamma >= 0.0)) throw std::invalid_argument("forget set: gamma must be >= 0");

  const auto num_classes = static_cast<std::size_t>(train.num_classes);
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < train.size(); ++i) by_class[static_cast<std::size_t>(train.labels[i])].push_back(i);

  ForgetSplit out;
  out.gamma = gamma;
  out.forget_ratio = forget_ratio;
  out.class_order.resize(num_classes);
  std::iota(out.class_order.begin(), out.class_order.end(), 0);
  Rng perm_rng(derive_seed(seed, "class-permutation"));
  perm_rng.shuffle(std::span<int>(out.class_order));

  const auto n_f = static_cast<std::size_t>(std::llround(forget_ratio * static_cast<double>(train.size())));
  std::vector<std::size_t> availability(num_classes);
  for (std::size_t k = 0; k < num_classes; ++k) {
    availability[k] = by_class[static_cast<std::size_t>(out.class_order[k])].size();
  }
  const auto ranked = power_law_counts(availability, n_f, gamma);

  out.per_class_forget_counts.assign(num_classes, 0);
  std::vector<bool> forgotten(train.size(), false);
  for (std::size_t k = 0; k < num_classes; ++k) {
    const auto cls = static_cast<std::size_t>(out.class_order[k]);
    out.per_class_forget_counts[cls] = ranked[k];
    auto members = by_class[cls];
    Rng rng(derive_seed(seed, "forget-pick", cls));
    rng.shuffle(std::span<std::size_t>(members));
    for (std::size_t i = 0; i < ranked[k]; ++i) forgotten[members[i]] = true;
  }
  for (std::size_t i = 0; i < train.size(); ++i) {
    (forgotten[i] ? out.forget_indices : out.retain_indices).push_back(i);
  }
  return out;
}

GroupPartition partition_head_mid_tail(const ForgetSplit& split) {
  std::vector<int> classes;
  for (std::size_t c = 0; c < split.per_class_forget_counts.size(); ++c) {
    if (split.per_class_forget_counts[c] > 0) classes.push_back(static_cast<int>(c));
  }
  if (classes.size() < 3) {
    throw std::invalid_argument("partition: need at least 3 classes with nonzero forget count, have " +
                                std::to_string(classes.size()));
  }
  std::stable_sort(classes.begin(), classes.end(), [&](int a, int b) {
    return split.per_class_forget_counts[static_cast<std::size_t>(a)] >
           split.per_class_forget_counts[static_cast<std::size_t>(b)];
  });
  const std::size_t n = classes.size();
  const std::size_t head = (n + 2) / 3;
  const std::size_t mid = (n - head + 1) / 2;
  GroupPartition p;
  p.head.assign(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(head));
  p.mid.assign(classes.begin() + static_cast<std::ptrdiff_t>(head),
               classes.begin() + static_cast<std::ptrdiff_t>(head + mid));
  p.tail.assign(classes.begin() + static_cast<std::ptrdiff_t>(head + mid), classes.end());
  return p;
}

RelabeledForgetSet relabel_forget_set(const ForgetSplit& split, const LabeledDataset& train, std::uint64_t seed) {
  if (train.num_classes < 2) throw std::invalid_argument("relabel: need at least 2 classes");
  RelabeledForgetSet out;
  out.indices = split.forget_indices;
  out.original_labels.reserve(out.indices.size());
  out.new_labels.reserve(out.indices.size());
  Rng rng(derive_seed(seed, "relabel"));
  const auto others = static_cast<std::uint64_t>(train.num_classes - 1);
  for (auto i : out.indices) {
    const int y = train.labels.at(i);
    const int r = static_cast<int>(rng.below(others));
    out.original_labels.push_back(y);
    out.new_labels.push_back(r < y ? r : r + 1);
  }
  return out;
}

std::string forget_split_csv(const ForgetSplit& split, const LabeledDataset& train) {
  std::vector<bool> forgotten(train.size(), false);
  for (auto i : split.forget_indices) forgotten.at(i) = true;
  std::string out = "index,label,partition\n";
  for (std::size_t i = 0; i < train.size(); ++i) {
    out += std::to_string(i) + ',' + std::to_string(train.labels[i]) + ',' +
           (forgotten[i] ? "forget" : "retain") + '\n';
  }
  return out;
}

}  // namespace ulab::data
