#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "oracles.hpp"
#include "ulab/data.hpp"
#include "ulab/eval.hpp"
#include "ulab/rng.hpp"
#include "ulab/unlearn.hpp"

using namespace ulab;
using namespace ulab::data;

namespace {

std::vector<std::size_t> rank_counts(const ForgetSplit& s) {
  std::vector<std::size_t> out;
  for (int c : s.class_order) out.push_back(s.per_class_forget_counts[static_cast<std::size_t>(c)]);
  return out;
}

ForgetSplit split_with_counts(std::vector<std::size_t> counts) {
  ForgetSplit s;
  s.per_class_forget_counts = std::move(counts);
  return s;
}

}  // namespace

TEST_CASE("synth_blobs") {
  const auto ds = synth_blobs(3, 10, 4, 0.5, 1);
  CHECK(ds.size() == 30);
  CHECK(ds.num_classes == 3);
  CHECK(ds.features.size() == 120);
  CHECK(ds.class_counts() == std::vector<std::size_t>{10, 10, 10});
  const auto again = synth_blobs(3, 10, 4, 0.5, 1);
  CHECK(again.features == ds.features);
  CHECK(again.labels == ds.labels);
  CHECK(synth_blobs(3, 10, 4, 0.5, 2).features != ds.features);
  CHECK_NOTHROW(ds.validate());
}

TEST_CASE("synth_blobs with tiny spread is linearly separable") {
  const auto ds = synth_blobs(4, 30, 6, 1e-3, 3);
  nn::ArchSpec a;
  a.input_dim = 6;
  a.num_classes = 4;
  nn::SgdConfig sgd;
  sgd.learning_rate = 0.1;
  sgd.epochs = 60;
  sgd.batch_size = 16;
  const auto m = unlearn::train_model(a, ds, sgd, 1);
  CHECK(eval::accuracy(m, ds) == 100.0);
}

TEST_CASE("csv parsing") {
  const auto ds = parse_csv("0,1.0,2.0\n1,3.0,4.0\n");
  CHECK(ds.size() == 2);
  CHECK(ds.dim == 2);
  CHECK(ds.num_classes == 2);
  CHECK(ds.features == std::vector<double>{1.0, 2.0, 3.0, 4.0});

  CHECK_THROWS_WITH(parse_csv(""), "empty dataset");
  CHECK_THROWS_WITH(parse_csv("\n\n"), "empty dataset");
  CHECK_THROWS_WITH(parse_csv("0,1,2\n1,3\n"), doctest::Contains("line 2: dimension mismatch"));
  CHECK_THROWS_WITH(parse_csv("0,1,2\n1.5,3,4\n"), doctest::Contains("line 2: non-integer label"));
  CHECK_THROWS_WITH(parse_csv("0,1,x\n"), doctest::Contains("line 1: malformed value"));

  const auto path = std::filesystem::temp_directory_path() / "ulab_test_data.csv";
  const auto blobs = synth_blobs(3, 5, 3, 0.7, 9);
  save_csv(path, blobs);
  const auto back = load_csv(path);
  CHECK(back.labels == blobs.labels);
  CHECK(back.features == blobs.features);
  std::filesystem::remove(path);
  CHECK_THROWS(load_csv(path));
}

TEST_CASE("stratified split") {
  const auto ds = synth_blobs(2, 10, 2, 1.0, 4);
  const auto none = split(ds, 0.0, 0.0, 1);
  CHECK(none.train.features == ds.features);
  CHECK(none.train.labels == ds.labels);
  CHECK(none.val.empty());

  const auto s = split(ds, 0.2, 0.2, 1);
  CHECK(s.val.class_counts() == std::vector<std::size_t>{2, 2});
  CHECK(s.test.class_counts() == std::vector<std::size_t>{2, 2});
  CHECK(s.train.class_counts() == std::vector<std::size_t>{6, 6});
  const auto s2 = split(ds, 0.2, 0.2, 1);
  CHECK(s2.val.features == s.val.features);
  CHECK(s2.test.features == s.test.features);
  CHECK(split(ds, 0.2, 0.2, 2).val.features != s.val.features);

  CHECK_THROWS_AS(split(synth_blobs(2, 2, 2, 1.0, 1), 0.2, 0.2, 1), std::invalid_argument);
  CHECK_THROWS_AS(split(ds, 0.6, 0.5, 1), std::invalid_argument);
}

TEST_CASE("forget set examples") {
  SUBCASE("gamma 0 is balanced") {
    const auto s = build_long_tailed_forget_set(oracle::labels_only({100, 100, 100, 100}), 0.2, 0.0, 3);
    CHECK(s.per_class_forget_counts == std::vector<std::size_t>{20, 20, 20, 20});
  }
  SUBCASE("gamma 1, two classes") {
    const auto s = build_long_tailed_forget_set(oracle::labels_only({100, 100}), 0.15, 1.0, 3);
    CHECK(rank_counts(s) == std::vector<std::size_t>{20, 10});
  }
  SUBCASE("gamma 2, five classes, exact oracle") {
    const auto s = build_long_tailed_forget_set(oracle::labels_only({200, 200, 200, 200, 200}), 0.1, 2.0, 3);
    CHECK(s.forget_size() == 100);
    CHECK(rank_counts(s) == oracle::power_law(5, 100, 2.0));
  }
  CHECK_THROWS_AS(build_long_tailed_forget_set(oracle::labels_only({10, 10}), 1.0, 1.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(build_long_tailed_forget_set(LabeledDataset{}, 0.2, 1.0, 1), std::invalid_argument);
}

TEST_CASE("forget set invariants") {
  Rng rng(77);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t c = 3 + rng.below(8);
    std::vector<std::size_t> counts(c);
    for (auto& n : counts) n = 5 + rng.below(60);
    const auto train = oracle::labels_only(counts);
    const double ratio = rng.uniform(0.05, 0.6);
    const double gamma = rng.uniform(0.0, 3.0);
    const auto s = build_long_tailed_forget_set(train, ratio, gamma, rng.next_u64());

    std::set<std::size_t> f(s.forget_indices.begin(), s.forget_indices.end());
    CHECK(f.size() == s.forget_indices.size());
    for (auto i : s.retain_indices) CHECK(f.count(i) == 0);
    CHECK(s.forget_indices.size() + s.retain_indices.size() == train.size());
    CHECK(std::is_sorted(s.forget_indices.begin(), s.forget_indices.end()));

    std::size_t sum = 0;
    std::vector<std::size_t> seen(c, 0);
    for (auto i : s.forget_indices) ++seen[static_cast<std::size_t>(train.labels[i])];
    for (std::size_t k = 0; k < c; ++k) {
      CHECK(seen[k] == s.per_class_forget_counts[k]);
      CHECK(s.per_class_forget_counts[k] <= counts[k]);
      sum += s.per_class_forget_counts[k];
    }
    CHECK(sum == s.forget_size());
    CHECK(sum == static_cast<std::size_t>(std::llround(ratio * static_cast<double>(train.size()))));
    std::set<int> perm(s.class_order.begin(), s.class_order.end());
    CHECK(perm.size() == c);
  }
}

TEST_CASE("forget set skew") {
  const std::vector<std::size_t> ample(5, 400);
  const auto train = oracle::labels_only(ample);
  std::size_t prev_first = 0, prev_last = SIZE_MAX;
  for (double gamma : {0.0, 0.5, 1.0, 1.5, 2.0, 3.0}) {
    const auto r = rank_counts(build_long_tailed_forget_set(train, 0.1, gamma, 5));
    CHECK(std::is_sorted(r.rbegin(), r.rend()));
    CHECK(r.front() >= prev_first);
    CHECK(r.back() <= prev_last);
    prev_first = r.front();
    prev_last = r.back();
  }
  const auto flat = rank_counts(build_long_tailed_forget_set(train, 0.1, 0.0, 5));
  CHECK(static_cast<double>(flat.front()) / static_cast<double>(flat.back()) <= 2.0);
  const auto skew = rank_counts(build_long_tailed_forget_set(train, 0.1, 2.0, 5));
  CHECK(static_cast<double>(skew.front()) / static_cast<double>(skew.back()) > 25.0 / 2.0);
}

TEST_CASE("availability clamping redistributes the deficit") {
  // Rank order is seeded, so give every class the same small supply.
  const auto c = power_law_counts(std::vector<std::size_t>{10, 50, 50, 50}, 60, 2.0);
  CHECK(c[0] == 10);
  std::size_t sum = 0;
  for (auto v : c) sum += v;
  CHECK(sum == 60);
  CHECK(c[1] >= c[2]);
  CHECK(c[2] >= c[3]);
  const auto full = power_law_counts(std::vector<std::size_t>{5, 5, 5}, 15, 1.0);
  CHECK(full == std::vector<std::size_t>{5, 5, 5});
  CHECK_THROWS_AS(power_law_counts(std::vector<std::size_t>{5, 5}, 11, 1.0), std::invalid_argument);
}

TEST_CASE("largest remainder") {
  CHECK(largest_remainder(std::vector<double>{1, 1, 1}, 10) == std::vector<std::size_t>{4, 3, 3});
  CHECK(largest_remainder(std::vector<double>{1, 2}, 30) == std::vector<std::size_t>{10, 20});
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(9);
    std::vector<double> w;
    std::vector<oracle::rational> wr;
    for (std::size_t i = 0; i < n; ++i) {
      const auto v = 1 + rng.below(50);
      w.push_back(static_cast<double>(v));
      wr.emplace_back(v);
    }
    const std::size_t total = rng.below(500);
    CHECK(largest_remainder(w, total) == oracle::largest_remainder(wr, total));
  }
}

TEST_CASE("head/mid/tail partition") {
  auto p = partition_head_mid_tail(split_with_counts({50, 20, 10}));
  CHECK(p.head == std::vector<int>{0});
  CHECK(p.mid == std::vector<int>{1});
  CHECK(p.tail == std::vector<int>{2});

  p = partition_head_mid_tail(split_with_counts({7, 7, 7, 7}));
  CHECK(p.head == std::vector<int>{0, 1});
  CHECK(p.mid == std::vector<int>{2});
  CHECK(p.tail == std::vector<int>{3});

  p = partition_head_mid_tail(split_with_counts({1, 9, 0, 4, 6, 2, 3}));
  CHECK(p.head == std::vector<int>{1, 4});
  CHECK(p.mid == std::vector<int>{3, 6});
  CHECK(p.tail == std::vector<int>{5, 0});
  CHECK(group_of(p, 2) == Group::none);
  CHECK(group_of(p, 4) == Group::head);

  CHECK_THROWS_AS(partition_head_mid_tail(split_with_counts({5, 0, 3})), std::invalid_argument);
}

TEST_CASE("relabeling") {
  const auto two = oracle::labels_only({30, 30});
  const auto s2 = build_long_tailed_forget_set(two, 0.5, 1.0, 4);
  const auto r2 = relabel_forget_set(s2, two, 4);
  for (std::size_t i = 0; i < r2.indices.size(); ++i) CHECK(r2.new_labels[i] == 1 - r2.original_labels[i]);

  const auto many = oracle::labels_only({40, 40, 40, 40, 40});
  const auto s = build_long_tailed_forget_set(many, 0.4, 1.0, 8);
  const auto r = relabel_forget_set(s, many, 8);
  CHECK(r.indices == s.forget_indices);
  std::set<int> used;
  for (std::size_t i = 0; i < r.indices.size(); ++i) {
    CHECK(r.new_labels[i] != r.original_labels[i]);
    CHECK(r.new_labels[i] >= 0);
    CHECK(r.new_labels[i] < 5);
    CHECK(r.original_labels[i] == many.labels[r.indices[i]]);
    used.insert(r.new_labels[i]);
  }
  CHECK(used.size() == 5);
  CHECK(relabel_forget_set(s, many, 8).new_labels == r.new_labels);
  CHECK(relabel_forget_set(s, many, 9).new_labels != r.new_labels);

  auto one = oracle::labels_only({10});
  CHECK_THROWS_AS(relabel_forget_set(ForgetSplit{}, one, 1), std::invalid_argument);
}

TEST_CASE("forget split csv") {
  const auto train = oracle::labels_only({3, 3});
  const auto s = build_long_tailed_forget_set(train, 0.5, 0.0, 1);
  const auto csv = forget_split_csv(s, train);
  CHECK(csv.rfind("index,label,partition\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
}
