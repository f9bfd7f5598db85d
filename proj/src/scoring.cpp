#include "anomseg/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "anomseg/error.hpp"
#include "anomseg/rng.hpp"

namespace anomseg {
namespace {

AnomalyMap make_map(int h, int w, std::string method) { return {Grid<double>(h, w, 1), std::move(method), {}}; }

double clamped_entropy(std::span<const double> p) {
  double e = 0.0;
  for (double v : p) e -= v * std::log(std::max(v, kLogClamp));
  return e;
}

}  // namespace

AnomalyMap score_msp(const ProbMap& probs) {
  auto out = make_map(probs.height(), probs.width(), "msp");
  for (int i = 0; i < probs.pixels(); ++i) {
    const auto p = probs.pixel(i);
    out.scores.data()[i] = 1.0 - *std::max_element(p.begin(), p.end());
  }
  return out;
}

AnomalyMap score_odin(const NetParams& params, const Image& image, const OdinOptions& options) {
  if (!(options.temperature > 0.0)) throw ConfigError("odin: temperature must be positive");
  if (options.epsilon < 0.0) throw ConfigError("odin: epsilon must be nonnegative");
  const double t = options.temperature;
  auto scaled = [t](const LogitMap& y) {
    LogitMap s = y;
    for (auto& v : s.data()) v /= t;
    return s;
  };

  Image input = image;
  if (options.epsilon > 0.0) {
    // scalar = sum_i log max_s softmax(y_i / t); d/dy_j = (onehot(argmax) - p_j) / t.
    const auto grad = input_gradient(params, image, [&](const LogitMap& y) {
      const auto p = softmax_map(scaled(y));
      LogitLoss l{0.0, LogitMap(y.height(), y.width(), y.channels())};
      for (int i = 0; i < p.pixels(); ++i) {
        const auto row = p.pixel(i);
        const auto top = std::max_element(row.begin(), row.end()) - row.begin();
        l.value += std::log(std::max(row[top], kLogClamp));
        auto g = l.grad.pixel(i);
        for (int s = 0; s < p.channels(); ++s) g[s] = ((s == top ? 1.0 : 0.0) - row[s]) / t;
      }
      return l;
    });
    // x - eps * sign(-grad) = x + eps * sign(grad)
    for (std::size_t i = 0; i < input.size(); ++i) {
      const double g = grad.data()[i];
      const double sign = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
      input.data()[i] += options.epsilon * sign;
    }
  }
  const auto fwd = forward(params, input);
  auto out = score_msp(softmax_map(scaled(fwd.logits)));
  out.method = "odin";
  out.params = {{"temperature", t}, {"epsilon", options.epsilon}};
  return out;
}

AnomalyMap score_mahalanobis(const FeatureMap& features, std::span<const GaussianModel> class_gaussians) {
  if (class_gaussians.empty()) throw DataError("mahalanobis: no fitted class models");
  for (const auto& g : class_gaussians) {
    if (g.dim() != features.channels()) throw DataError("mahalanobis: unfitted class or feature dimension mismatch");
  }
  auto out = make_map(features.height(), features.width(), "mahalanobis");
  for (int i = 0; i < features.pixels(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& g : class_gaussians) best = std::min(best, g.quadratic_form(features.pixel(i)));
    out.scores.data()[i] = best;
  }
  return out;
}

AnomalyMap score_mc_dropout(std::span<const ProbMap> samples) {
  if (samples.size() < 2) throw ConfigError("mc dropout: need at least 2 samples");
  for (const auto& s : samples) {
    if (!s.same_shape(samples[0])) throw DataError("mc dropout: sample shapes differ");
  }
  const auto& first = samples[0];
  auto out = make_map(first.height(), first.width(), "mcdropout");
  const double inv_r = 1.0 / static_cast<double>(samples.size());
  std::vector<double> mean(first.channels());
  for (int i = 0; i < first.pixels(); ++i) {
    std::fill(mean.begin(), mean.end(), 0.0);
    double mean_entropy = 0.0;
    bool identical = true;
    for (const auto& s : samples) {
      const auto p = s.pixel(i);
      for (int c = 0; c < first.channels(); ++c) {
        mean[c] += p[c] * inv_r;
        identical = identical && p[c] == first.pixel(i)[c];
      }
      mean_entropy += clamped_entropy(p) * inv_r;
    }
    // Rounding can push the difference to or below zero when samples barely
    // differ; the true value is then positive but below double resolution.
    out.scores.data()[i] =
        identical ? 0.0 : std::max(clamped_entropy(mean) - mean_entropy, std::numeric_limits<double>::denorm_min());
  }
  out.params = {{"rounds", static_cast<double>(samples.size())}};
  return out;
}

AnomalyMap score_void(const ProbMap& probs, int trained_classes) {
  if (probs.channels() != trained_classes + 1) throw DataError("void: expected S+1 channels");
  auto out = make_map(probs.height(), probs.width(), "void");
  for (int i = 0; i < probs.pixels(); ++i) out.scores.data()[i] = probs.pixel(i)[trained_classes];
  return out;
}

double bilinear_sample(const Grid<double>& map, double y, double x) {
  const int h = map.height();
  const int w = map.width();
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const int y0 = std::min(static_cast<int>(std::floor(y)), h - 1);
  const int x0 = std::min(static_cast<int>(std::floor(x)), w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const double fy = y - y0;
  const double fx = x - x0;
  return (1 - fy) * ((1 - fx) * map(y0, x0) + fx * map(y0, x1)) + fy * ((1 - fx) * map(y1, x0) + fx * map(y1, x1));
}

Grid<double> upsample_bilinear(const Grid<double>& map, int out_height, int out_width) {
  if (map.channels() != 1) throw DataError("upsample: single-channel map expected");
  if (out_height < 1 || out_width < 1 || map.empty()) throw DataError("upsample: empty size");
  Grid<double> out(out_height, out_width, 1);
  const double sy = out_height > 1 ? static_cast<double>(map.height() - 1) / (out_height - 1) : 0.0;
  const double sx = out_width > 1 ? static_cast<double>(map.width() - 1) / (out_width - 1) : 0.0;
  for (int y = 0; y < out_height; ++y)
    for (int x = 0; x < out_width; ++x) out(y, x) = bilinear_sample(map, y * sy, x * sx);
  return out;
}

AnomalyMap score_embedding_density(const FeatureMap& features, const GaussianModel& model, int factor) {
  if (model.dim() != features.channels()) throw DataError("density: unfitted model or dimension mismatch");
  if (factor < 1) throw ConfigError("density: upsampling factor must be >= 1");
  Grid<double> nll(features.height(), features.width(), 1);
  for (int i = 0; i < features.pixels(); ++i) nll.data()[i] = gaussian_information(model, features.pixel(i));
  auto out = make_map(0, 0, "density");
  out.scores = factor == 1 ? std::move(nll)
                           : upsample_bilinear(nll, features.height() * factor, features.width() * factor);
  out.params = {{"factor", static_cast<double>(factor)}};
  return out;
}

AnomalyMap score_entropy(const ProbMap& probs, bool normalized) {
  auto out = make_map(probs.height(), probs.width(), "entropy");
  const double scale = normalized ? 1.0 / std::log(static_cast<double>(probs.channels())) : 1.0;
  for (int i = 0; i < probs.pixels(); ++i) out.scores.data()[i] = clamped_entropy(probs.pixel(i)) * scale;
  out.params = {{"normalized", normalized ? 1.0 : 0.0}};
  return out;
}

AnomalyMap score_margin(const ProbMap& probs) {
  if (probs.channels() < 2) throw DataError("margin: need at least 2 classes");
  auto out = make_map(probs.height(), probs.width(), "margin");
  for (int i = 0; i < probs.pixels(); ++i) {
    const auto p = probs.pixel(i);
    double first = -1.0;
    double second = -1.0;
    for (double v : p) {
      if (v > first) {
        second = first;
        first = v;
      } else if (v > second) {
        second = v;
      }
    }
    out.scores.data()[i] = 1.0 - first + second;
  }
  return out;
}

std::vector<GaussianModel> fit_class_gaussians(std::span<const FeatureMap> features, std::span<const LabelMap> labels,
                                               int classes) {
  if (features.size() != labels.size()) throw DataError("class gaussians: features/labels count mismatch");
  if (features.empty()) throw DataError("class gaussians: no data");
  const int dim = features[0].channels();
  std::vector<GaussianAccumulator> acc(classes, GaussianAccumulator(dim));
  for (std::size_t n = 0; n < features.size(); ++n) {
    if (!features[n].same_plane(labels[n])) throw DataError("class gaussians: shape mismatch");
    for (int i = 0; i < features[n].pixels(); ++i) {
      const auto l = labels[n].data()[i];
      if (l < classes) acc[l].add(features[n].pixel(i));
    }
  }
  std::vector<GaussianModel> out;
  for (int s = 0; s < classes; ++s) {
    if (acc[s].count() == 0) throw DataError("class gaussians: class " + std::to_string(s) + " has no pixels");
    out.push_back(acc[s].fit());
  }
  return out;
}

GaussianModel fit_pooled_gaussian(std::span<const FeatureMap> features, std::span<const LabelMap> labels) {
  if (features.size() != labels.size() || features.empty()) throw DataError("pooled gaussian: bad inputs");
  GaussianAccumulator acc(features[0].channels());
  for (std::size_t n = 0; n < features.size(); ++n) {
    for (int i = 0; i < features[n].pixels(); ++i) {
      if (labels[n].data()[i] != kIgnoreLabel) acc.add(features[n].pixel(i));
    }
  }
  return acc.fit();
}

std::vector<ProbMap> mc_dropout_samples(const NetParams& params, const Image& image, int rounds, double rate,
                                        std::uint64_t seed) {
  std::vector<ProbMap> out;
  out.reserve(rounds);
  for (int r = 0; r < rounds; ++r) {
    const auto fwd = forward(params, image, Dropout{rate, derive_seed(seed, static_cast<std::uint64_t>(r))});
    out.push_back(softmax_map(fwd.logits));
  }
  return out;
}

}  // namespace anomseg
