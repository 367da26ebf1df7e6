#include "ulab/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "ulab/rng.hpp"

namespace ulab::eval {

namespace {

std::string num(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::size_t argmax(std::span<const double> p) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < p.size(); ++c) {
    if (p[c] > p[best]) best = c;
  }
  return best;
}

double accuracy_on(const nn::ModelState& model, const data::LabeledDataset& ds, const std::vector<int>& classes,
                   bool filter) {
  std::size_t hits = 0, n = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (filter && std::find(classes.begin(), classes.end(), ds.labels[i]) == classes.end()) continue;
    ++n;
    const auto p = nn::forward(model, ds.row(i));
    if (argmax(p) == static_cast<std::size_t>(ds.labels[i])) ++hits;
  }
  if (n == 0) throw std::invalid_argument("accuracy: empty dataset or group");
  return 100.0 * static_cast<double>(hits) / static_cast<double>(n);
}

const char* kPalette[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
                          "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"};

}  // namespace

double accuracy(const nn::ModelState& model, const data::LabeledDataset& ds) {
  return accuracy_on(model, ds, {}, false);
}

std::vector<double> true_class_confidences(const nn::ModelState& model, const data::LabeledDataset& ds) {
  std::vector<double> out(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out[i] = nn::forward(model, ds.row(i))[static_cast<std::size_t>(ds.labels[i])];
  }
  return out;
}

double mia_threshold(std::span<const double> member_conf, std::span<const double> nonmember_conf) {
  if (member_conf.empty() || nonmember_conf.empty()) throw std::invalid_argument("mia: empty probe set");
  std::vector<double> mem(member_conf.begin(), member_conf.end());
  std::vector<double> non(nonmember_conf.begin(), nonmember_conf.end());
  std::sort(mem.begin(), mem.end());
  std::sort(non.begin(), non.end());
  std::vector<double> cand;
  cand.reserve(mem.size() + non.size());
  std::merge(mem.begin(), mem.end(), non.begin(), non.end(), std::back_inserter(cand));
  cand.erase(std::unique(cand.begin(), cand.end()), cand.end());

  // Balanced accuracy scaled by |members| * |non-members| stays integral.
  const auto n_mem = static_cast<unsigned long long>(mem.size());
  const auto n_non = static_cast<unsigned long long>(non.size());
  std::size_t im = 0, in = 0;  // counts strictly below the candidate
  unsigned long long best_score = 0;
  double best_t = cand.front();
  bool have = false;
  for (double t : cand) {
    while (im < mem.size() && mem[im] < t) ++im;
    while (in < non.size() && non[in] < t) ++in;
    const unsigned long long tp = n_mem - im;
    const unsigned long long tn = in;
    const unsigned long long score = tp * n_non + tn * n_mem;
    if (!have || score > best_score) {
      best_score = score;
      best_t = t;
      have = true;
    }
  }
  return best_t;
}

double mia_score_from_confidences(std::span<const double> member_conf, std::span<const double> nonmember_conf,
                                  std::span<const double> target_conf) {
  if (target_conf.empty()) throw std::invalid_argument("mia: empty forget set");
  const double t = mia_threshold(member_conf, nonmember_conf);
  const auto non = std::count_if(target_conf.begin(), target_conf.end(), [t](double c) { return c < t; });
  return 100.0 * static_cast<double>(non) / static_cast<double>(target_conf.size());
}

double mia_score(const nn::ModelState& model, const data::LabeledDataset& retain_probe,
                 const data::LabeledDataset& test_probe, const data::LabeledDataset& forget) {
  return mia_score_from_confidences(true_class_confidences(model, retain_probe),
                                    true_class_confidences(model, test_probe),
                                    true_class_confidences(model, forget));
}

data::LabeledDataset probe_subsample(const data::LabeledDataset& ds, double fraction, std::uint64_t seed) {
  if (ds.empty()) throw std::invalid_argument("probe: empty dataset");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("probe: fraction must be in (0, 1]");
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, "mia-probe"));
  rng.shuffle(std::span<std::size_t>(idx));
  const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ds.size()))));
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  return ds.subset(idx);
}

double avg_gap(const MetricSet& m, const MetricSet& r) {
  return (std::abs(m.fa - r.fa) + std::abs(m.ra - r.ra) + std::abs(m.ta - r.ta) + std::abs(m.mia - r.mia)) / 4.0;
}

DeviationLabel classify_deviation(double p_u, double p_star, double threshold) {
  if (!(threshold > 0.0)) throw std::invalid_argument("deviation: threshold must be > 0");
  DeviationLabel d{Deviation::faithful, p_u, p_star, threshold};
  if (p_u > p_star + threshold) {
    d.label = Deviation::under;
  } else if (p_u < p_star - threshold) {
    d.label = Deviation::over;
  }
  return d;
}

std::vector<DeviationLabel> deviation_labels(const nn::ModelState& unlearned, const nn::ModelState& retrained,
                                             const data::LabeledDataset& forget, double threshold) {
  const auto pu = true_class_confidences(unlearned, forget);
  const auto ps = true_class_confidences(retrained, forget);
  std::vector<DeviationLabel> out;
  out.reserve(pu.size());
  for (std::size_t i = 0; i < pu.size(); ++i) out.push_back(classify_deviation(pu[i], ps[i], threshold));
  return out;
}

DeviationCounts count_deviations(std::span<const DeviationLabel> labels) {
  DeviationCounts c;
  for (const auto& d : labels) {
    switch (d.label) {
      case Deviation::under: ++c.under; break;
      case Deviation::faithful: ++c.faithful; break;
      case Deviation::over: ++c.over; break;
    }
  }
  return c;
}

GroupGaps group_fa_gaps(const nn::ModelState& unlearned, const nn::ModelState& retrained,
                        const data::LabeledDataset& forget, const data::GroupPartition& partition) {
  auto gap = [&](const std::vector<int>& group, const char* name) {
    if (group.empty()) throw std::invalid_argument(std::string("group gaps: empty ") + name + " group");
    return accuracy_on(unlearned, forget, group, true) - accuracy_on(retrained, forget, group, true);
  };
  return {gap(partition.head, "head"), gap(partition.mid, "mid"), gap(partition.tail, "tail")};
}

Histogram histogram(std::span<const double> values, std::size_t bins) {
  if (bins < 2) throw std::invalid_argument("histogram: need at least 2 bins");
  Histogram h;
  h.edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) h.edges[b] = static_cast<double>(b) / static_cast<double>(bins);
  h.counts.assign(bins, 0);
  for (double v : values) {
    const double c = std::clamp(v, 0.0, 1.0);
    auto b = static_cast<std::size_t>(c * static_cast<double>(bins));
    if (b >= bins) b = bins - 1;
    ++h.counts[b];
  }
  return h;
}

Histogram probability_histogram(const nn::ModelState& model, const data::LabeledDataset& forget, std::size_t bins) {
  if (forget.empty()) throw std::invalid_argument("histogram: empty forget set");
  return histogram(true_class_confidences(model, forget), bins);
}

std::string histogram_csv(const Histogram& h) {
  std::string out = "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    out += num(h.edges[b]) + ',' + num(h.edges[b + 1]) + ',' + std::to_string(h.counts[b]) + '\n';
  }
  return out;
}

std::string histogram_svg(const Histogram& h, const std::string& title) {
  const double width = 480, height = 280, left = 48, bottom = 36, top = 32;
  const double plot_w = width - left - 16, plot_h = height - top - bottom;
  const std::size_t peak = h.counts.empty() ? 0 : *std::max_element(h.counts.begin(), h.counts.end());
  const double scale = peak > 0 ? plot_h / static_cast<double>(peak) : 0.0;
  const double bar_w = plot_w / static_cast<double>(std::max<std::size_t>(1, h.counts.size()));

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  os << "<text x=\"" << left << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\">" << xml_escape(title)
     << "</text>\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    const double bh = static_cast<double>(h.counts[b]) * scale;
    os << "<rect x=\"" << fixed(left + static_cast<double>(b) * bar_w, 2) << "\" y=\""
       << fixed(top + plot_h - bh, 2) << "\" width=\"" << fixed(bar_w - 1, 2) << "\" height=\"" << fixed(bh, 2)
       << "\" fill=\"" << kPalette[0] << "\"/>\n";
  }
  os << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\""
     << top + plot_h << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << left << "\" y=\"" << height - 12 << "\" font-family=\"sans-serif\" font-size=\"11\">0</text>\n";
  os << "<text x=\"" << left + plot_w - 8 << "\" y=\"" << height - 12
     << "\" font-family=\"sans-serif\" font-size=\"11\">1</text>\n";
  os << "<text x=\"4\" y=\"" << top + 10 << "\" font-family=\"sans-serif\" font-size=\"11\">" << peak << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

std::string grouped_bar_svg(const std::string& title, std::span<const std::string> categories,
                            std::span<const BarSeries> series) {
  const double width = 640, height = 320, left = 56, bottom = 48, top = 36;
  const double plot_w = width - left - 140, plot_h = height - top - bottom;
  double lo = 0.0, hi = 0.0;
  for (const auto& s : series) {
    for (double v : s.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (hi - lo <= 0.0) hi = lo + 1.0;
  const double scale = plot_h / (hi - lo);
  const double zero_y = top + hi * scale;
  const double group_w = plot_w / static_cast<double>(std::max<std::size_t>(1, categories.size()));
  const double bar_w = group_w * 0.8 / static_cast<double>(std::max<std::size_t>(1, series.size()));

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  os << "<text x=\"" << left << "\" y=\"22\" font-family=\"sans-serif\" font-size=\"13\">" << xml_escape(title)
     << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % std::size(kPalette)];
    for (std::size_t c = 0; c < categories.size() && c < series[s].values.size(); ++c) {
      const double v = series[s].values[c];
      const double x = left + static_cast<double>(c) * group_w + group_w * 0.1 + static_cast<double>(s) * bar_w;
      const double y = v >= 0 ? zero_y - v * scale : zero_y;
      os << "<rect x=\"" << fixed(x, 2) << "\" y=\"" << fixed(y, 2) << "\" width=\"" << fixed(bar_w, 2)
         << "\" height=\"" << fixed(std::abs(v) * scale, 2) << "\" fill=\"" << color << "\"><title>"
         << xml_escape(series[s].name) << ": " << fixed(v, 4) << "</title></rect>\n";
    }
    const double ly = top + 14.0 * static_cast<double>(s);
    os << "<rect x=\"" << left + plot_w + 12 << "\" y=\"" << fixed(ly, 2) << "\" width=\"10\" height=\"10\" fill=\""
       << color << "\"/>\n";
    os << "<text x=\"" << left + plot_w + 26 << "\" y=\"" << fixed(ly + 9, 2)
       << "\" font-family=\"sans-serif\" font-size=\"11\">" << xml_escape(series[s].name) << "</text>\n";
  }
  os << "<line x1=\"" << left << "\" y1=\"" << fixed(zero_y, 2) << "\" x2=\"" << left + plot_w << "\" y2=\""
     << fixed(zero_y, 2) << "\" stroke=\"black\"/>\n";
  for (std::size_t c = 0; c < categories.size(); ++c) {
    os << "<text x=\"" << fixed(left + (static_cast<double>(c) + 0.5) * group_w, 2) << "\" y=\""
       << height - 20 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
       << xml_escape(categories[c]) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace ulab::eval
