#include "anomseg/segments.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "anomseg/error.hpp"

namespace anomseg {
namespace {

std::vector<Segment> components_where(const LabelMap& labels, int connectivity, bool binary) {
  if (connectivity != 4 && connectivity != 8) throw ConfigError("connectivity must be 4 or 8");
  const int h = labels.height();
  const int w = labels.width();
  std::vector<int> seen(static_cast<std::size_t>(h) * w, 0);
  std::vector<Segment> out;
  std::vector<int> stack;
  for (int start = 0; start < h * w; ++start) {
    const auto l = labels.data()[start];
    if (seen[start] || l == kIgnoreLabel || (binary && l != 1)) continue;
    Segment seg;
    seg.label = l;
    seg.min_row = seg.max_row = start / w;
    seg.min_col = seg.max_col = start % w;
    stack.assign(1, start);
    seen[start] = 1;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      seg.pixels.push_back(p);
      const int y = p / w;
      const int x = p % w;
      seg.min_row = std::min(seg.min_row, y);
      seg.max_row = std::max(seg.max_row, y);
      seg.min_col = std::min(seg.min_col, x);
      seg.max_col = std::max(seg.max_col, x);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if ((dy == 0 && dx == 0) || (connectivity == 4 && dy != 0 && dx != 0)) continue;
          const int yy = y + dy;
          const int xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          const int q = yy * w + xx;
          if (!seen[q] && labels.data()[q] == l) {
            seen[q] = 1;
            stack.push_back(q);
          }
        }
      }
    }
    std::sort(seg.pixels.begin(), seg.pixels.end());
    out.push_back(std::move(seg));
  }
  return out;
}

double normalized_entropy(std::span<const double> p) {
  double e = 0.0;
  for (double v : p) e -= v * std::log(std::max(v, 1e-12));
  return e / std::log(static_cast<double>(p.size()));
}

double margin(std::span<const double> p) {
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
  return 1.0 - first + second;
}

double sigmoid(double t) { return t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t)); }

std::vector<double> standardized(const MetaModel& m, std::span<const double> metrics) {
  std::vector<double> z(m.active.size());
  for (std::size_t j = 0; j < m.active.size(); ++j) z[j] = (metrics[m.active[j]] - m.mean[j]) / m.stddev[j];
  return z;
}

}  // namespace

std::vector<Segment> connected_components(const LabelMap& labels, int connectivity) {
  return components_where(labels, connectivity, false);
}

std::vector<Segment> binary_components(const LabelMap& mask, int connectivity) {
  return components_where(mask, connectivity, true);
}

double segment_iou(const Segment& segment, const LabelMap& gt) {
  std::int64_t gt_count = 0;
  for (auto l : gt.data()) gt_count += l == segment.label ? 1 : 0;
  std::int64_t inter = 0;
  for (int p : segment.pixels) inter += gt.data()[p] == segment.label ? 1 : 0;
  const std::int64_t uni = static_cast<std::int64_t>(segment.pixels.size()) + gt_count - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<double> segment_metrics(const Segment& segment, const ProbMap& probs, const LabelMap& predicted) {
  if (segment.pixels.empty()) throw DataError("segment metrics: empty segment");
  if (!probs.same_plane(predicted)) throw DataError("segment metrics: shape mismatch");
  const int h = probs.height();
  const int w = probs.width();
  if (segment.pixels.back() >= h * w) throw DataError("segment metrics: segment out of bounds");

  std::vector<char> member(static_cast<std::size_t>(h) * w, 0);
  for (int p : segment.pixels) member[p] = 1;

  const double n = static_cast<double>(segment.pixels.size());
  double ent_sum = 0, ent_sq = 0, mar_sum = 0, mar_sq = 0, msp_sum = 0;
  double row_sum = 0, col_sum = 0;
  double bnd_ent = 0, int_ent = 0;
  int boundary = 0;
  std::set<int> neighbor_classes;
  for (int p : segment.pixels) {
    const auto pr = probs.pixel(p);
    const double e = normalized_entropy(pr);
    const double m = margin(pr);
    ent_sum += e;
    ent_sq += e * e;
    mar_sum += m;
    mar_sq += m * m;
    msp_sum += *std::max_element(pr.begin(), pr.end());
    const int y = p / w;
    const int x = p % w;
    row_sum += y + 0.5;
    col_sum += x + 0.5;
    bool on_boundary = false;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int yy = y + dy;
        const int xx = x + dx;
        if ((dy == 0 && dx == 0) || yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
        const int q = yy * w + xx;
        if (!member[q]) {
          on_boundary = true;
          neighbor_classes.insert(predicted.data()[q]);
        }
      }
    }
    if (on_boundary) {
      ++boundary;
      bnd_ent += e;
    } else {
      int_ent += e;
    }
  }
  const int interior = static_cast<int>(n) - boundary;
  const double ent_mean = ent_sum / n;
  const double mar_mean = mar_sum / n;
  const double bnd_minus_int = (boundary > 0 && interior > 0) ? bnd_ent / boundary - int_ent / interior : 0.0;
  return {ent_mean,
          std::max(0.0, ent_sq / n - ent_mean * ent_mean),
          mar_mean,
          std::max(0.0, mar_sq / n - mar_mean * mar_mean),
          msp_sum / n,
          n,
          std::log(n),
          boundary / n,
          bnd_minus_int,
          row_sum / n / h,
          col_sum / n / w,
          static_cast<double>(neighbor_classes.size())};
}

double MetaModel::probability(std::span<const double> metrics) const {
  if (metrics.size() != static_cast<std::size_t>(kSegmentMetricCount))
    throw DataError("meta model: metric vector has wrong length");
  const auto z = standardized(*this, metrics);
  double t = bias;
  for (std::size_t j = 0; j < z.size(); ++j) t += weights[j] * z[j];
  return sigmoid(t);
}

LogisticLoss logistic_loss(std::span<const double> weights, double bias, const std::vector<std::vector<double>>& x,
                           std::span<const int> y) {
  if (x.size() != y.size() || x.empty()) throw DataError("logistic loss: bad inputs");
  LogisticLoss out;
  out.weight_grad.assign(weights.size(), 0.0);
  const double inv = 1.0 / static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double t = bias;
    for (std::size_t j = 0; j < weights.size(); ++j) t += weights[j] * x[i][j];
    // log(1 + e^t) - y t, computed stably
    const double softplus = t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
    out.value += (softplus - y[i] * t) * inv;
    const double r = (sigmoid(t) - y[i]) * inv;
    for (std::size_t j = 0; j < weights.size(); ++j) out.weight_grad[j] += r * x[i][j];
    out.bias_grad += r;
  }
  return out;
}

MetaModel meta_fit(std::span<const Segment> segments, const MetaFitOptions& options) {
  if (segments.empty()) throw DataError("meta fit: no segments");
  std::vector<int> y;
  for (const auto& s : segments) {
    if (s.metrics.size() != static_cast<std::size_t>(kSegmentMetricCount)) throw DataError("meta fit: missing metrics");
    if (std::isnan(s.true_iou)) throw DataError("meta fit: segment without true IoU");
    y.push_back(s.true_iou > 0.0 ? 1 : 0);
  }
  const auto positives = std::count(y.begin(), y.end(), 1);
  if (positives == 0 || positives == static_cast<long>(y.size()))
    throw DataError("meta fit: degenerate data, need both IoU = 0 and IoU > 0 segments");

  MetaModel m;
  const double n = static_cast<double>(segments.size());
  for (int j = 0; j < kSegmentMetricCount; ++j) {
    double mu = 0.0;
    for (const auto& s : segments) mu += s.metrics[j] / n;
    double var = 0.0;
    for (const auto& s : segments) var += (s.metrics[j] - mu) * (s.metrics[j] - mu) / n;
    const double sd = std::sqrt(var);
    if (sd > 1e-12) {
      m.active.push_back(j);
      m.mean.push_back(mu);
      m.stddev.push_back(sd);
    }
  }
  m.weights.assign(m.active.size(), 0.0);
  std::vector<std::vector<double>> x;
  x.reserve(segments.size());
  for (const auto& s : segments) x.push_back(standardized(m, s.metrics));
  for (int it = 0; it < options.iterations; ++it) {
    const auto l = logistic_loss(m.weights, m.bias, x, y);
    for (std::size_t j = 0; j < m.weights.size(); ++j) m.weights[j] -= options.learning_rate * l.weight_grad[j];
    m.bias -= options.learning_rate * l.bias_grad;
  }
  return m;
}

std::vector<Segment> meta_apply(const MetaModel& model, std::span<const Segment> segments) {
  std::vector<Segment> kept;
  for (const auto& s : segments) {
    const double p = model.probability(s.metrics);
    if (p >= 0.5) {
      kept.push_back(s);
      kept.back().predicted_probability = p;
    }
  }
  return kept;
}

std::vector<Segment> anomaly_segments(const ObjectEvalImage& image, double tau, bool with_metrics) {
  const auto& a = image.scores->scores;
  const LabelMap* gt = image.anomaly_gt;
  if (gt != nullptr && !a.same_plane(*gt)) throw DataError("object eval: shape mismatch");
  LabelMap binary(a.height(), a.width());
  for (int i = 0; i < a.pixels(); ++i) {
    const bool ignored = gt != nullptr && gt->data()[i] == kIgnoreLabel;
    binary.data()[i] = (a.data()[i] >= tau && !ignored) ? 1 : 0;
  }
  auto segs = binary_components(binary);
  for (auto& s : segs) {
    if (gt != nullptr) s.true_iou = segment_iou(s, *gt);
    if (with_metrics) {
      if (image.probs == nullptr || image.predicted == nullptr)
        throw DataError("object eval: meta metrics need softmax and predicted masks");
      s.metrics = segment_metrics(s, *image.probs, *image.predicted);
    }
  }
  return segs;
}

ObjectEvalResult object_level_eval(std::span<const ObjectEvalImage> images, double tau, const MetaModel* meta,
                                   double delta) {
  ObjectEvalResult r;
  r.delta = delta;
  for (const auto& img : images) {
    auto segs = anomaly_segments(img, tau, meta != nullptr);
    if (img.anomaly_gt == nullptr) throw DataError("object eval: anomaly ground truth required");
    if (meta != nullptr) segs = meta_apply(*meta, segs);
    const auto& gt = *img.anomaly_gt;
    std::vector<char> covered(gt.size(), 0);
    for (const auto& s : segs) {
      if (s.true_iou > 0.0) {
        ++r.tp;
      } else {
        ++r.fp;
      }
      for (int p : s.pixels) covered[p] = 1;
    }
    for (const auto& g : binary_components(gt)) {
      const bool hit = std::any_of(g.pixels.begin(), g.pixels.end(), [&](int p) { return covered[p] != 0; });
      if (!hit) ++r.fn;
    }
  }
  const int denom = 2 * r.tp + r.fp + r.fn;
  r.f1 = denom == 0 ? 0.0 : 2.0 * r.tp / denom;
  return r;
}

std::vector<ClassScore> class_scores(std::span<const LabelMap> predicted, std::span<const LabelMap> gt, int classes) {
  if (predicted.size() != gt.size()) throw DataError("class scores: count mismatch");
  std::vector<std::int64_t> tp(classes, 0), fp(classes, 0), fn(classes, 0);
  for (std::size_t n = 0; n < gt.size(); ++n) {
    if (!predicted[n].same_plane(gt[n])) throw DataError("class scores: shape mismatch");
    for (int i = 0; i < gt[n].pixels(); ++i) {
      const int g = gt[n].data()[i];
      if (g == kIgnoreLabel) continue;
      const int p = predicted[n].data()[i];
      if (p == g) {
        if (g < classes) ++tp[g];
      } else {
        if (g < classes) ++fn[g];
        if (p < classes) ++fp[p];
      }
    }
  }
  std::vector<ClassScore> out(classes);
  for (int s = 0; s < classes; ++s) {
    const double t = static_cast<double>(tp[s]);
    out[s].support = tp[s] + fn[s];
    out[s].iou = (tp[s] + fp[s] + fn[s]) > 0 ? t / static_cast<double>(tp[s] + fp[s] + fn[s]) : 0.0;
    out[s].precision = (tp[s] + fp[s]) > 0 ? t / static_cast<double>(tp[s] + fp[s]) : 0.0;
    out[s].recall = (tp[s] + fn[s]) > 0 ? t / static_cast<double>(tp[s] + fn[s]) : 0.0;
  }
  return out;
}

double mean_iou(std::span<const ClassScore> scores, int first, int last) {
  if (first < 0 || last > static_cast<int>(scores.size()) || first >= last) throw ConfigError("mean iou: bad range");
  double s = 0.0;
  for (int c = first; c < last; ++c) s += scores[c].iou;
  return s / (last - first);
}

}  // namespace anomseg
