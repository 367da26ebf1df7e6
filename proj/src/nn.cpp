#include "ulab/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "ulab/rng.hpp"

namespace ulab::nn {

namespace {

constexpr char kMagic[] = "ULAB1";
constexpr std::size_t kMagicLen = 5;

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double a) { return std::isfinite(a); });
}

// Per-sample forward pass that keeps every layer's pre-activation and output.
struct Trace {
  std::vector<std::vector<double>> pre;   // z_l for l = 1..L
  std::vector<std::vector<double>> post;  // a_l for l = 0..L-1 (a_0 = x)
};

Trace run_layers(const ModelState& model, std::span<const double> x) {
  const auto dims = model.arch.layer_dims();
  if (x.size() != dims.front()) {
    throw std::invalid_argument("forward: input has dimension " + std::to_string(x.size()) +
                                ", model expects " + std::to_string(dims.front()));
  }
  const std::size_t layers = dims.size() - 1;
  Trace t;
  t.pre.resize(layers);
  t.post.resize(layers);
  t.post[0].assign(x.begin(), x.end());
  std::size_t offset = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = dims[l];
    const std::size_t out = dims[l + 1];
    const double* w = model.params.data() + offset;
    const double* b = w + in * out;
    const auto& a = t.post[l];
    auto& z = t.pre[l];
    z.resize(out);
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      const double* row = w + o * in;
      for (std::size_t i = 0; i < in; ++i) s += row[i] * a[i];
      z[o] = s;
    }
    if (l + 1 < layers) {
      auto& next = t.post[l + 1];
      next.resize(out);
      for (std::size_t o = 0; o < out; ++o) next[o] = z[o] > 0.0 ? z[o] : 0.0;
    }
    offset += in * out + out;
  }
  return t;
}

std::vector<double> softmax(std::span<const double> z) {
  const double zmax = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double sum = 0.0;
  for (std::size_t c = 0; c < z.size(); ++c) {
    p[c] = std::exp(z[c] - zmax);
    sum += p[c];
  }
  for (auto& v : p) v /= sum;
  return p;
}

void check_label(const ModelState& model, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= model.arch.num_classes) {
    throw std::invalid_argument("label " + std::to_string(label) + " outside [0, " +
                                std::to_string(model.arch.num_classes) + ")");
  }
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw std::runtime_error("checkpoint: truncated header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  pos += 4;
  return v;
}

void put_f64(std::string& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

double get_f64(const std::string& in, std::size_t& pos) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) {
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  pos += 8;
  return std::bit_cast<double>(bits);
}

}  // namespace

std::vector<std::size_t> ArchSpec::layer_dims() const {
  std::vector<std::size_t> dims;
  dims.reserve(hidden_dims.size() + 2);
  dims.push_back(input_dim);
  dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
  dims.push_back(num_classes);
  return dims;
}

std::size_t ArchSpec::param_count() const {
  const auto dims = layer_dims();
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) n += dims[l] * dims[l + 1] + dims[l + 1];
  return n;
}

void ArchSpec::validate() const {
  if (num_classes < 2) throw std::invalid_argument("arch: num_classes must be >= 2");
  if (input_dim == 0) throw std::invalid_argument("arch: input_dim must be >= 1");
  for (auto h : hidden_dims) {
    if (h == 0) throw std::invalid_argument("arch: zero-width hidden layer");
  }
}

void SgdConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("sgd: learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("sgd: momentum must be in [0,1)");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("sgd: weight_decay must be >= 0");
  if (batch_size == 0) throw std::invalid_argument("sgd: batch_size must be >= 1");
  if (epochs < 0) throw std::invalid_argument("sgd: epochs must be >= 0");
  if (!(lr_decay_factor > 0.0)) throw std::invalid_argument("sgd: lr_decay_factor must be > 0");
  for (std::size_t i = 0; i < lr_decay_epochs.size(); ++i) {
    if (i > 0 && lr_decay_epochs[i] <= lr_decay_epochs[i - 1]) {
      throw std::invalid_argument("sgd: lr_decay_epochs must be strictly increasing");
    }
    if (lr_decay_epochs[i] >= epochs) {
      throw std::invalid_argument("sgd: lr decay epoch " + std::to_string(lr_decay_epochs[i]) +
                                  " is not below epochs=" + std::to_string(epochs));
    }
  }
}

double SgdConfig::lr_at(int epoch) const {
  double lr = learning_rate;
  for (int e : lr_decay_epochs) {
    if (epoch >= e) lr /= lr_decay_factor;
  }
  return lr;
}

ModelState init_model(const ArchSpec& arch, std::uint64_t seed) {
  arch.validate();
  ModelState m;
  m.arch = arch;
  m.params.resize(arch.param_count());
  m.momentum.assign(m.params.size(), 0.0);
  Rng rng(derive_seed(seed, "init"));
  const auto dims = arch.layer_dims();
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t in = dims[l];
    const std::size_t out = dims[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    for (std::size_t i = 0; i < in * out; ++i) m.params[offset + i] = rng.uniform(-bound, bound);
    for (std::size_t i = 0; i < out; ++i) m.params[offset + in * out + i] = rng.uniform(-bound, bound);
    offset += in * out + out;
  }
  return m;
}

ModelState zero_model(const ArchSpec& arch) {
  arch.validate();
  ModelState m;
  m.arch = arch;
  m.params.assign(arch.param_count(), 0.0);
  m.momentum.assign(m.params.size(), 0.0);
  return m;
}

std::vector<double> logits(const ModelState& model, std::span<const double> x) {
  return std::move(run_layers(model, x).pre.back());
}

std::vector<double> forward(const ModelState& model, std::span<const double> x) {
  const auto z = logits(model, x);
  return softmax(z);
}

double true_class_probability(const ModelState& model, std::span<const double> x, int label) {
  check_label(model, label);
  return forward(model, x)[static_cast<std::size_t>(label)];
}

LossAndGrad weighted_sum_loss_and_grad(const ModelState& model, std::span<const Example> batch) {
  if (batch.empty()) throw std::invalid_argument("loss_and_grad: empty batch");
  const auto dims = model.arch.layer_dims();
  const std::size_t layers = dims.size() - 1;

  std::vector<std::size_t> offsets(layers);
  {
    std::size_t off = 0;
    for (std::size_t l = 0; l < layers; ++l) {
      offsets[l] = off;
      off += dims[l] * dims[l + 1] + dims[l + 1];
    }
  }

  LossAndGrad out;
  out.grad.assign(model.params.size(), 0.0);
  out.sample_losses.reserve(batch.size());
  std::vector<double> delta;
  std::vector<double> prev;
  for (const auto& ex : batch) {
    check_label(model, ex.label);
    if (!std::isfinite(ex.weight) || !all_finite(ex.x)) {
      throw std::invalid_argument("loss_and_grad: nonfinite input");
    }
    const Trace t = run_layers(model, ex.x);
    const auto& z = t.pre.back();
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - zmax);
    const double lse = zmax + std::log(sum);
    const auto y = static_cast<std::size_t>(ex.label);
    out.sample_losses.push_back(lse - z[y]);
    out.loss += ex.weight * (lse - z[y]);
    if (ex.weight == 0.0) continue;

    delta.resize(z.size());
    for (std::size_t c = 0; c < z.size(); ++c) {
      const double p = std::exp(z[c] - lse);
      delta[c] = ex.weight * (p - (c == y ? 1.0 : 0.0));
    }
    for (std::size_t l = layers; l-- > 0;) {
      const std::size_t in = dims[l];
      const std::size_t outd = dims[l + 1];
      double* gw = out.grad.data() + offsets[l];
      double* gb = gw + in * outd;
      const auto& a = t.post[l];
      for (std::size_t o = 0; o < outd; ++o) {
        const double d = delta[o];
        gb[o] += d;
        double* row = gw + o * in;
        for (std::size_t i = 0; i < in; ++i) row[i] += d * a[i];
      }
      if (l == 0) break;
      const double* w = model.params.data() + offsets[l];
      const auto& zin = t.pre[l - 1];
      prev.assign(in, 0.0);
      for (std::size_t o = 0; o < outd; ++o) {
        const double d = delta[o];
        const double* row = w + o * in;
        for (std::size_t i = 0; i < in; ++i) prev[i] += row[i] * d;
      }
      // ReLU derivative, with the subgradient at 0 taken as 0.
      for (std::size_t i = 0; i < in; ++i) {
        if (!(zin[i] > 0.0)) prev[i] = 0.0;
      }
      delta.swap(prev);
    }
  }
  return out;
}

LossAndGrad loss_and_grad(const ModelState& model, std::span<const Example> batch) {
  if (batch.empty()) throw std::invalid_argument("loss_and_grad: empty batch");
  for (const auto& ex : batch) {
    if (ex.weight < 0.0) throw std::invalid_argument("loss_and_grad: negative sample weight");
  }
  auto r = weighted_sum_loss_and_grad(model, batch);
  const double n = static_cast<double>(batch.size());
  r.loss /= n;
  for (auto& g : r.grad) g /= n;
  return r;
}

double batch_loss(const ModelState& model, std::span<const Example> batch) {
  if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
  double s = 0.0;
  for (const auto& ex : batch) {
    check_label(model, ex.label);
    const auto z = logits(model, ex.x);
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - zmax);
    s += ex.weight * (zmax + std::log(sum) - z[static_cast<std::size_t>(ex.label)]);
  }
  return s / static_cast<double>(batch.size());
}

void sgd_step(ModelState& model, std::span<const double> grad, const SgdConfig& cfg, int epoch,
              std::span<const std::uint8_t> mask) {
  if (grad.size() != model.params.size()) {
    throw std::invalid_argument("sgd_step: gradient length " + std::to_string(grad.size()) +
                                " != parameter count " + std::to_string(model.params.size()));
  }
  if (!mask.empty() && mask.size() != model.params.size()) {
    throw std::invalid_argument("sgd_step: mask length mismatch");
  }
  if (!all_finite(grad)) throw std::runtime_error("sgd_step: nonfinite gradient");
  if (model.momentum.size() != model.params.size()) model.momentum.assign(model.params.size(), 0.0);
  const double lr = cfg.lr_at(epoch);
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    if (!mask.empty() && mask[i] == 0) continue;
    double& v = model.momentum[i];
    v = cfg.momentum * v + grad[i] + cfg.weight_decay * model.params[i];
    model.params[i] -= lr * v;
  }
  if (!all_finite(model.params)) throw std::runtime_error("sgd_step: parameters became nonfinite");
}

std::vector<double> fd_gradient(const ModelState& model, std::span<const Example> batch, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("fd_gradient: h must be > 0");
  ModelState probe = model;
  std::vector<double> g(model.params.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double orig = probe.params[i];
    probe.params[i] = orig + h;
    const double up = batch_loss(probe, batch);
    probe.params[i] = orig - h;
    const double down = batch_loss(probe, batch);
    probe.params[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

double min_abs_preactivation(const ModelState& model, std::span<const Example> batch) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& ex : batch) {
    const Trace t = run_layers(model, ex.x);
    for (std::size_t l = 0; l + 1 < t.pre.size(); ++l) {
      for (double z : t.pre[l]) m = std::min(m, std::abs(z));
    }
  }
  return m;
}

std::string encode_checkpoint(const ModelState& model) {
  std::string out(kMagic, kMagicLen);
  const auto dims = model.arch.layer_dims();
  put_u32(out, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) put_u32(out, static_cast<std::uint32_t>(d));
  for (double p : model.params) put_f64(out, p);
  return out;
}

ModelState decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < kMagicLen || bytes.compare(0, kMagicLen, kMagic) != 0) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  std::size_t pos = kMagicLen;
  const std::uint32_t count = get_u32(bytes, pos);
  if (count < 2) throw std::runtime_error("checkpoint: need at least 2 layer dims");
  std::vector<std::size_t> dims(count);
  for (auto& d : dims) d = get_u32(bytes, pos);
  ArchSpec arch;
  arch.input_dim = dims.front();
  arch.num_classes = dims.back();
  arch.hidden_dims.assign(dims.begin() + 1, dims.end() - 1);
  arch.validate();
  ModelState m = zero_model(arch);
  if (bytes.size() - pos != 8 * m.params.size()) {
    throw std::runtime_error("checkpoint: expected " + std::to_string(m.params.size()) +
                             " parameters, found " + std::to_string((bytes.size() - pos) / 8));
  }
  for (auto& p : m.params) p = get_f64(bytes, pos);
  return m;
}

void save_checkpoint(const std::filesystem::path& path, const ModelState& model) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint: cannot write " + path.string());
  const auto bytes = encode_checkpoint(model);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace ulab::nn
