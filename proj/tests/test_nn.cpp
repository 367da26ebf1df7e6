#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "ulab/nn.hpp"
#include "ulab/rng.hpp"

using namespace ulab;
using namespace ulab::nn;

namespace {

ArchSpec arch(std::size_t in, std::vector<std::size_t> hidden, std::size_t classes) {
  ArchSpec a;
  a.input_dim = in;
  a.hidden_dims = std::move(hidden);
  a.num_classes = classes;
  return a;
}

struct Batch {
  std::vector<std::vector<double>> xs;
  std::vector<Example> ex;
};

Batch random_batch(Rng& rng, std::size_t n, std::size_t dim, std::size_t classes) {
  Batch b;
  b.xs.resize(n);
  for (auto& x : b.xs) {
    x.resize(dim);
    for (auto& v : x) v = rng.normal();
  }
  for (std::size_t i = 0; i < n; ++i) {
    b.ex.push_back({b.xs[i], static_cast<int>(rng.below(classes)), rng.uniform(0.1, 2.0)});
  }
  return b;
}

double max_rel_err(const std::vector<double>& a, const std::vector<double>& f) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double den = std::max({std::abs(a[i]), std::abs(f[i]), 1e-6});
    worst = std::max(worst, std::abs(a[i] - f[i]) / den);
  }
  return worst;
}

}  // namespace

TEST_CASE("init_model is seeded and sized") {
  const auto a = arch(2, {4}, 3);
  CHECK(a.param_count() == 27);
  const auto m1 = init_model(a, 7);
  const auto m2 = init_model(a, 7);
  const auto m3 = init_model(a, 8);
  CHECK(m1.params.size() == 27);
  CHECK(m1.params == m2.params);
  CHECK(m1.params != m3.params);
  // Glorot-uniform bounds per layer.
  const double b1 = std::sqrt(6.0 / 6.0), b2 = std::sqrt(6.0 / 7.0);
  for (std::size_t i = 0; i < 12; ++i) CHECK(std::abs(m1.params[i]) <= b1);
  for (std::size_t i = 12; i < 27; ++i) CHECK(std::abs(m1.params[i]) <= b2);
  CHECK_THROWS_AS(init_model(arch(2, {0}, 3), 1), std::invalid_argument);
  CHECK_THROWS_AS(init_model(arch(0, {}, 3), 1), std::invalid_argument);
  CHECK_THROWS_AS(init_model(arch(2, {}, 1), 1), std::invalid_argument);
}

TEST_CASE("forward: softmax normalization and reference values") {
  const auto z = zero_model(arch(3, {5}, 4));
  const std::vector<double> x = {0.3, -1.0, 2.0};
  for (double p : forward(z, x)) CHECK(p == 0.25);

  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = init_model(arch(4, {6, 5}, 7), rng.next_u64());
    std::vector<double> xi(4);
    for (auto& v : xi) v = 10.0 * rng.normal();
    const auto p = forward(m, xi);
    double s = 0.0;
    for (double v : p) s += v;
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }

  // Single layer with logits (2, 0, 0).
  auto lin = zero_model(arch(1, {}, 3));
  lin.params[3] = 2.0;  // bias of class 0
  const auto p = forward(lin, std::vector<double>{0.0});
  using oracle::hp;
  const hp e2 = boost::multiprecision::exp(hp(2));
  CHECK(p[0] == doctest::Approx(static_cast<double>(e2 / (e2 + 2))).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(static_cast<double>(1 / (e2 + 2))).epsilon(1e-15));

  // Large logits stay finite.
  lin.params[3] = 1000.0;
  const auto big = forward(lin, std::vector<double>{0.0});
  CHECK(big[0] == 1.0);
  CHECK(std::isfinite(big[1]));

  CHECK_THROWS_AS(forward(z, std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("loss_and_grad: annihilation, linearity, contracts") {
  Rng rng(5);
  const auto m = init_model(arch(3, {4}, 3), 2);
  auto b = random_batch(rng, 6, 3, 3);

  auto zero = b.ex;
  for (auto& e : zero) e.weight = 0.0;
  const auto lz = loss_and_grad(m, zero);
  CHECK(lz.loss == 0.0);
  for (double g : lz.grad) CHECK(g == 0.0);

  const auto l1 = loss_and_grad(m, b.ex);
  auto doubled = b.ex;
  for (auto& e : doubled) e.weight *= 2.0;
  const auto l2 = loss_and_grad(m, doubled);
  CHECK(l2.loss == 2.0 * l1.loss);
  for (std::size_t i = 0; i < l1.grad.size(); ++i) CHECK(l2.grad[i] == 2.0 * l1.grad[i]);

  CHECK(l1.loss == doctest::Approx(batch_loss(m, b.ex)).epsilon(1e-13));

  CHECK_THROWS_AS(loss_and_grad(m, std::vector<Example>{}), std::invalid_argument);
  auto neg = b.ex;
  neg[0].weight = -1.0;
  CHECK_THROWS_AS(loss_and_grad(m, neg), std::invalid_argument);
  std::vector<double> bad = {1.0, std::numeric_limits<double>::quiet_NaN(), 0.0};
  std::vector<Example> nan_batch = {{bad, 0, 1.0}};
  CHECK_THROWS_WITH(loss_and_grad(m, nan_batch), doctest::Contains("nonfinite"));
  std::vector<Example> bad_label = {{b.xs[0], 3, 1.0}};
  CHECK_THROWS_AS(loss_and_grad(m, bad_label), std::invalid_argument);
}

TEST_CASE("loss_and_grad matches central differences") {
  Rng rng(21);
  int checked = 0;
  for (int trial = 0; checked < 20; ++trial) {
    const auto m = init_model(arch(3, {5}, 4), rng.next_u64());
    auto b = random_batch(rng, trial % 2 ? 1 : 4, 3, 4);
    if (min_abs_preactivation(m, b.ex) < 1e-3) continue;
    const auto g = loss_and_grad(m, b.ex).grad;
    CHECK(max_rel_err(g, fd_gradient(m, b.ex, 1e-5)) < 1e-4);
    ++checked;
  }
}

TEST_CASE("weighted_sum_loss_and_grad accepts signed weights") {
  Rng rng(3);
  const auto m = init_model(arch(2, {3}, 3), 9);
  auto b = random_batch(rng, 3, 2, 3);
  const auto pos = weighted_sum_loss_and_grad(m, b.ex);
  auto flip = b.ex;
  for (auto& e : flip) e.weight = -e.weight;
  const auto neg = weighted_sum_loss_and_grad(m, flip);
  CHECK(neg.loss == -pos.loss);
  for (std::size_t i = 0; i < pos.grad.size(); ++i) CHECK(neg.grad[i] == -pos.grad[i]);
  const auto mean = loss_and_grad(m, b.ex);
  CHECK(mean.loss == doctest::Approx(pos.loss / 3.0).epsilon(1e-14));
  REQUIRE(pos.sample_losses.size() == 3);
  CHECK(pos.sample_losses[0] == doctest::Approx(-std::log(true_class_probability(m, b.xs[0], b.ex[0].label))));
}

TEST_CASE("fd_gradient converges at second order") {
  // Linear softmax model: smooth everywhere.
  Rng rng(8);
  const auto m = init_model(arch(3, {}, 3), 4);
  auto b = random_batch(rng, 5, 3, 3);
  const auto g = loss_and_grad(m, b.ex).grad;
  auto err = [&](double h) {
    const auto f = fd_gradient(m, b.ex, h);
    double e = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) e = std::max(e, std::abs(f[i] - g[i]));
    return e;
  };
  const double e1 = err(2e-2), e2 = err(1e-2);
  CHECK(e2 < e1);
  CHECK(e1 / e2 == doctest::Approx(4.0).epsilon(0.15));
  CHECK(err(1e-5) < 1e-9);
}

TEST_CASE("sgd_step") {
  auto m = init_model(arch(2, {3}, 2), 1);
  const auto theta = m.params;
  SgdConfig cfg;
  cfg.weight_decay = 0.0;
  std::vector<double> zero(theta.size(), 0.0);
  sgd_step(m, zero, cfg, 0);
  CHECK(m.params == theta);

  cfg.momentum = 0.0;
  cfg.learning_rate = 0.1;
  std::vector<double> g(theta.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = 0.01 * static_cast<double>(i) - 0.05;
  sgd_step(m, g, cfg, 0);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(m.params[i] == theta[i] - 0.1 * g[i]);

  // Momentum and weight decay: v = m v + g + wd theta.
  auto mm = init_model(arch(2, {3}, 2), 1);
  SgdConfig c2;
  c2.learning_rate = 0.5;
  c2.momentum = 0.9;
  c2.weight_decay = 0.01;
  sgd_step(mm, g, c2, 0);
  const auto after1 = mm.params;
  sgd_step(mm, g, c2, 0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double v1 = g[i] + 0.01 * theta[i];
    CHECK(after1[i] == doctest::Approx(theta[i] - 0.5 * v1).epsilon(1e-15));
    const double v2 = 0.9 * v1 + g[i] + 0.01 * after1[i];
    CHECK(mm.params[i] == doctest::Approx(after1[i] - 0.5 * v2).epsilon(1e-15));
  }

  // Mask freezes both parameters and momentum.
  auto masked = init_model(arch(2, {3}, 2), 1);
  std::vector<std::uint8_t> mask(theta.size(), 1);
  mask[0] = mask[5] = 0;
  sgd_step(masked, g, c2, 0, mask);
  CHECK(masked.params[0] == theta[0]);
  CHECK(masked.params[5] == theta[5]);
  CHECK(masked.momentum[0] == 0.0);
  CHECK(masked.params[1] != theta[1]);

  std::vector<double> nan_grad(theta.size(), 0.0);
  nan_grad[2] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(sgd_step(m, nan_grad, cfg, 0), std::runtime_error);
  CHECK_THROWS_AS(sgd_step(m, std::vector<double>(3, 0.0), cfg, 0), std::invalid_argument);
}

TEST_CASE("learning-rate schedule") {
  SgdConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.epochs = 150;
  cfg.lr_decay_epochs = {90, 120};
  cfg.lr_decay_factor = 10.0;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.lr_at(0) == 0.01);
  CHECK(cfg.lr_at(89) == 0.01);
  CHECK(cfg.lr_at(90) == doctest::Approx(0.001).epsilon(1e-15));
  CHECK(cfg.lr_at(100) == doctest::Approx(0.001).epsilon(1e-15));
  CHECK(cfg.lr_at(130) == doctest::Approx(0.0001).epsilon(1e-15));

  cfg.lr_decay_epochs = {120, 90};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.lr_decay_epochs = {90, 150};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("checkpoint round trip") {
  auto m = init_model(arch(3, {4, 2}, 3), 12);
  const auto bytes = encode_checkpoint(m);
  CHECK(bytes.substr(0, 5) == "ULAB1");
  CHECK(bytes.size() == 5 + 4 + 4 * 4 + 8 * m.params.size());
  const auto back = decode_checkpoint(bytes);
  CHECK(back.arch == m.arch);
  CHECK(back.params == m.params);
  CHECK(encode_checkpoint(back) == bytes);

  CHECK_THROWS(decode_checkpoint("ULAB2"));
  CHECK_THROWS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)));
  CHECK_THROWS(decode_checkpoint(bytes + "x"));

  const auto path = std::filesystem::temp_directory_path() / "ulab_test_ckpt.ulab";
  save_checkpoint(path, m);
  CHECK(load_checkpoint(path).params == m.params);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
}
