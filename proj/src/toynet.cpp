#include "anomseg/toynet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"

#include "anomseg/error.hpp"
#include "anomseg/parallel.hpp"
#include "anomseg/rng.hpp"
#include "anomseg/tensorio.hpp"

namespace anomseg {
namespace {

using ConstRowMap = Eigen::Map<const RowMatrix>;
using RowMap = Eigen::Map<RowMatrix>;

struct ForwardCache {
  RowMatrix patches;  // pixels x patch_size
  RowMatrix pre;      // pixels x hidden, before rectification
  RowMatrix act;      // pixels x hidden, rectified and dropped out
  RowMatrix drop;     // pixels x hidden dropout scale, empty when disabled
  RowMatrix logits;   // pixels x classes
};

// Pixels enter the network as 2 * (x - 0.5), so zero padding reads as mid grey.
constexpr double kInputShift = 0.5;
constexpr double kInputScale = 2.0;

void im2col(const Image& image, int k, RowMatrix& out) {
  const int h = image.height();
  const int w = image.width();
  const int r = k / 2;
  out.setZero(static_cast<Eigen::Index>(h) * w, k * k * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double* row = out.row(static_cast<Eigen::Index>(y) * w + x).data();
      for (int dy = 0; dy < k; ++dy) {
        const int yy = y + dy - r;
        if (yy < 0 || yy >= h) continue;
        for (int dx = 0; dx < k; ++dx) {
          const int xx = x + dx - r;
          if (xx < 0 || xx >= w) continue;
          const double* src = &image(yy, xx, 0);
          double* dst = row + (dy * k + dx) * 3;
          dst[0] = kInputScale * (src[0] - kInputShift);
          dst[1] = kInputScale * (src[1] - kInputShift);
          dst[2] = kInputScale * (src[2] - kInputShift);
        }
      }
    }
  }
}

void col2im_add(const RowMatrix& dpatches, int k, Image& grad) {
  const int h = grad.height();
  const int w = grad.width();
  const int r = k / 2;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double* row = dpatches.row(static_cast<Eigen::Index>(y) * w + x).data();
      for (int dy = 0; dy < k; ++dy) {
        const int yy = y + dy - r;
        if (yy < 0 || yy >= h) continue;
        for (int dx = 0; dx < k; ++dx) {
          const int xx = x + dx - r;
          if (xx < 0 || xx >= w) continue;
          for (int c = 0; c < 3; ++c) grad(yy, xx, c) += kInputScale * row[(dy * k + dx) * 3 + c];
        }
      }
    }
  }
}

ForwardCache run_forward(const NetParams& params, const Image& image, const Dropout& dropout) {
  if (image.channels() != 3) throw DataError("forward: image must have 3 channels");
  if (image.empty()) throw DataError("forward: empty image");
  ForwardCache c;
  im2col(image, params.k, c.patches);
  c.pre.noalias() = c.patches * params.w1.transpose();
  c.pre.rowwise() += params.b1.transpose();
  c.act = c.pre.cwiseMax(0.0);
  if (dropout.enabled()) {
    if (dropout.rate >= 1.0) throw ConfigError("dropout rate must be < 1");
    const double scale = 1.0 / (1.0 - dropout.rate);
    SplitMix64 rng(dropout.seed);
    c.drop.resize(c.act.rows(), c.act.cols());
    double* d = c.drop.data();
    for (Eigen::Index i = 0; i < c.drop.size(); ++i) d[i] = rng.uniform() < dropout.rate ? 0.0 : scale;
    c.act.array() *= c.drop.array();
  }
  c.logits.noalias() = c.act * params.w2.transpose();
  c.logits.rowwise() += params.b2.transpose();
  return c;
}

NetGrads run_backward(const NetParams& params, const ForwardCache& c, const RowMatrix& dlogits,
                      RowMatrix* dpatches) {
  NetGrads g = params.zeros_like();
  g.w2.noalias() = dlogits.transpose() * c.act;
  g.b2 = dlogits.colwise().sum().transpose();
  RowMatrix dpre = dlogits * params.w2;
  if (c.drop.size() != 0) dpre.array() *= c.drop.array();
  dpre.array() *= (c.pre.array() > 0.0).cast<double>();
  g.w1.noalias() = dpre.transpose() * c.patches;
  g.b1 = dpre.colwise().sum().transpose();
  if (dpatches != nullptr) dpatches->noalias() = dpre * params.w1;
  return g;
}

LogitMap to_logit_map(const RowMatrix& m, int h, int w) {
  LogitMap out(h, w, static_cast<int>(m.cols()));
  std::copy(m.data(), m.data() + m.size(), out.data().begin());
  return out;
}

ConstRowMap as_matrix(const Grid<double>& g) {
  return ConstRowMap(g.data().data(), g.pixels(), g.channels());
}

void softmax_row(std::span<const double> in, std::span<double> out) {
  const double mx = *std::max_element(in.begin(), in.end());
  double sum = 0.0;
  for (std::size_t s = 0; s < in.size(); ++s) {
    out[s] = std::exp(in[s] - mx);
    sum += out[s];
  }
  for (auto& v : out) v /= sum;
}

void check_finite(const NetParams& p) {
  if (!p.w1.allFinite() || !p.b1.allFinite() || !p.w2.allFinite() || !p.b2.allFinite())
    throw NumericError("non-finite network parameters");
}

}  // namespace

std::size_t NetParams::parameter_count() const {
  return static_cast<std::size_t>(w1.size() + b1.size() + w2.size() + b2.size());
}

void NetParams::validate() const {
  if (k < 1 || k % 2 == 0) throw ConfigError("receptive field k must be odd and positive");
  if (hidden < 1) throw ConfigError("hidden width must be positive");
  if (classes < 2) throw ConfigError("need at least 2 classes");
  if (w1.rows() != hidden || w1.cols() != patch_size() || b1.size() != hidden || w2.rows() != classes ||
      w2.cols() != hidden || b2.size() != classes)
    throw ConfigError("network parameter shapes are inconsistent");
  check_finite(*this);
}

NetParams NetParams::zeros(int classes, int k, int hidden) {
  NetParams p;
  p.k = k;
  p.hidden = hidden;
  p.classes = classes;
  p.w1 = Eigen::MatrixXd::Zero(hidden, k * k * 3);
  p.b1 = Eigen::VectorXd::Zero(hidden);
  p.w2 = Eigen::MatrixXd::Zero(classes, hidden);
  p.b2 = Eigen::VectorXd::Zero(classes);
  return p;
}

NetParams NetParams::init(int classes, std::uint64_t seed, int k, int hidden) {
  NetParams p = zeros(classes, k, hidden);
  SplitMix64 rng(seed);
  const double s1 = std::sqrt(2.0 / p.patch_size());
  const double s2 = std::sqrt(2.0 / hidden);
  for (Eigen::Index i = 0; i < p.w1.rows(); ++i)
    for (Eigen::Index j = 0; j < p.w1.cols(); ++j) p.w1(i, j) = s1 * rng.normal();
  for (Eigen::Index i = 0; i < p.w2.rows(); ++i)
    for (Eigen::Index j = 0; j < p.w2.cols(); ++j) p.w2(i, j) = s2 * rng.normal();
  p.validate();
  return p;
}

NetParams NetParams::zeros_like() const { return zeros(classes, k, hidden); }

void NetParams::add_scaled(const NetParams& other, double scale) {
  w1 += scale * other.w1;
  b1 += scale * other.b1;
  w2 += scale * other.w2;
  b2 += scale * other.b2;
}

std::vector<double> NetParams::flatten() const {
  std::vector<double> v;
  v.reserve(parameter_count());
  auto push = [&](const auto& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) v.push_back(m(i, j));
  };
  push(w1);
  push(b1);
  push(w2);
  push(b2);
  return v;
}

void NetParams::unflatten(std::span<const double> values) {
  if (values.size() != parameter_count()) throw ConfigError("unflatten: wrong parameter count");
  std::size_t at = 0;
  auto pull = [&](auto& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = values[at++];
  };
  pull(w1);
  pull(b1);
  pull(w2);
  pull(b2);
}

bool NetParams::operator==(const NetParams& o) const {
  return k == o.k && hidden == o.hidden && classes == o.classes && w1 == o.w1 && b1 == o.b1 && w2 == o.w2 &&
         b2 == o.b2;
}

ForwardResult forward(const NetParams& params, const Image& image, const Dropout& dropout) {
  const auto c = run_forward(params, image, dropout);
  return {to_logit_map(c.logits, image.height(), image.width()),
          to_logit_map(c.act, image.height(), image.width())};
}

ProbMap softmax_map(const LogitMap& logits) {
  ProbMap out(logits.height(), logits.width(), logits.channels());
  for (int i = 0; i < logits.pixels(); ++i) softmax_row(logits.pixel(i), out.pixel(i));
  return out;
}

LabelMap predict_mask(const LogitMap& logits) {
  LabelMap out(logits.height(), logits.width());
  for (int i = 0; i < logits.pixels(); ++i) {
    const auto row = logits.pixel(i);
    // max_element returns the first maximum, i.e. the smallest index on ties.
    out.data()[i] = static_cast<std::uint8_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

LogitLoss ce_logit_loss(const LogitMap& logits, const LabelMap& labels) {
  if (!logits.same_plane(labels)) throw DataError("ce loss: label shape mismatch");
  const int classes = logits.channels();
  LogitLoss out{0.0, LogitMap(logits.height(), logits.width(), classes)};
  int count = 0;
  for (int i = 0; i < logits.pixels(); ++i) {
    const auto l = labels.data()[i];
    if (l == kIgnoreLabel) continue;
    if (l >= classes) throw DataError("ce loss: label " + std::to_string(l) + " out of range");
    ++count;
  }
  if (count == 0) throw DataError("empty loss");
  const double inv = 1.0 / count;
  std::vector<double> p(classes);
  for (int i = 0; i < logits.pixels(); ++i) {
    const auto l = labels.data()[i];
    if (l == kIgnoreLabel) continue;
    softmax_row(logits.pixel(i), p);
    auto g = out.grad.pixel(i);
    if (p[l] < kLogClamp) {
      out.value -= std::log(kLogClamp) * inv;
      continue;
    }
    out.value -= std::log(p[l]) * inv;
    for (int s = 0; s < classes; ++s) g[s] = (p[s] - (s == l ? 1.0 : 0.0)) * inv;
  }
  return out;
}

LogitLoss anom_logit_loss(const LogitMap& logits, const LabelMap* region) {
  if (region != nullptr && !logits.same_plane(*region)) throw DataError("anom loss: region shape mismatch");
  const int classes = logits.channels();
  LogitLoss out{0.0, LogitMap(logits.height(), logits.width(), classes)};
  int count = 0;
  for (int i = 0; i < logits.pixels(); ++i) {
    if (region == nullptr || region->data()[i] == 1) ++count;
  }
  if (count == 0) throw DataError("empty loss");
  // Always 1/(H*W): a region masks the sum but keeps pixels weighted like CE pixels.
  const double inv = 1.0 / logits.pixels();
  const double inv_s = 1.0 / classes;
  std::vector<double> p(classes);
  for (int i = 0; i < logits.pixels(); ++i) {
    if (region != nullptr && region->data()[i] != 1) continue;
    softmax_row(logits.pixel(i), p);
    int unclamped = 0;
    double sum_log = 0.0;
    for (int s = 0; s < classes; ++s) {
      if (p[s] < kLogClamp) {
        sum_log += std::log(kLogClamp);
      } else {
        sum_log += std::log(p[s]);
        ++unclamped;
      }
    }
    out.value -= sum_log * inv_s * inv;
    auto g = out.grad.pixel(i);
    for (int j = 0; j < classes; ++j) {
      const double own = p[j] < kLogClamp ? 0.0 : 1.0;
      g[j] = (unclamped * p[j] - own) * inv_s * inv;
    }
  }
  return out;
}

LogitLoss distill_logit_loss(const LogitMap& new_logits, const LogitMap& old_logits, const LabelMap* labels) {
  if (!new_logits.same_plane(old_logits)) throw DataError("distill loss: shape mismatch");
  if (new_logits.channels() != old_logits.channels() + 1)
    throw DataError("distill loss: new logits must have exactly one more channel than old");
  if (labels != nullptr && !new_logits.same_plane(*labels)) throw DataError("distill loss: label shape mismatch");
  const int old_s = old_logits.channels();
  const int new_s = new_logits.channels();
  LogitLoss out{0.0, LogitMap(new_logits.height(), new_logits.width(), new_s)};
  // The teacher knows nothing about the new class, so pixels labeled with it
  // (or ignored) are not distillation targets.
  auto skip = [&](int i) { return labels != nullptr && labels->data()[i] >= old_s; };
  int count = 0;
  for (int i = 0; i < new_logits.pixels(); ++i) {
    if (!skip(i)) ++count;
  }
  if (count == 0) return out;
  const double inv = 1.0 / count;
  std::vector<double> q(old_s);
  std::vector<double> p(new_s);
  for (int i = 0; i < new_logits.pixels(); ++i) {
    if (skip(i)) continue;
    softmax_row(old_logits.pixel(i), q);
    softmax_row(new_logits.pixel(i), p);
    double mass = 0.0;  // teacher mass on unclamped channels
    for (int s = 0; s < old_s; ++s) {
      if (p[s] < kLogClamp) {
        out.value -= q[s] * std::log(kLogClamp) * inv;
      } else {
        out.value -= q[s] * std::log(p[s]) * inv;
        mass += q[s];
      }
    }
    auto g = out.grad.pixel(i);
    for (int j = 0; j < new_s; ++j) {
      const double own = (j < old_s && p[j] >= kLogClamp) ? q[j] : 0.0;
      g[j] = (mass * p[j] - own) * inv;
    }
  }
  return out;
}

LossAndGrads backprop_loss(const NetParams& params, const Image& image,
                           const std::function<LogitLoss(const LogitMap&)>& loss, const Dropout& dropout) {
  const auto c = run_forward(params, image, dropout);
  const auto logits = to_logit_map(c.logits, image.height(), image.width());
  const auto l = loss(logits);
  const RowMatrix dlogits = as_matrix(l.grad);
  return {l.value, run_backward(params, c, dlogits, nullptr)};
}

LossAndGrads loss_ce(const NetParams& params, const Image& image, const LabelMap& labels) {
  return backprop_loss(params, image, [&](const LogitMap& y) { return ce_logit_loss(y, labels); });
}

LossAndGrads loss_anom(const NetParams& params, const Image& image, const LabelMap* region) {
  return backprop_loss(params, image, [&](const LogitMap& y) { return anom_logit_loss(y, region); });
}

LossAndGrads loss_distill(const NetParams& params, const Image& image, const LogitMap& teacher_logits,
                          const LabelMap* labels) {
  return backprop_loss(params, image,
                       [&](const LogitMap& y) { return distill_logit_loss(y, teacher_logits, labels); });
}

LossAndGrads loss_total_entmax(const NetParams& params, std::span<const LabeledSample> labeled,
                               std::span<const ProxySample> proxy, double lambda) {
  if (lambda < 0.0 || lambda > 1.0) throw ConfigError("lambda must lie in [0,1]");
  if (labeled.empty() && lambda < 1.0) throw DataError("empty labeled batch");
  if (proxy.empty() && lambda > 0.0) throw DataError("empty proxy-anomaly batch");
  LossAndGrads out{0.0, params.zeros_like()};
  if (lambda < 1.0) {
    const double w = (1.0 - lambda) / static_cast<double>(labeled.size());
    for (const auto& s : labeled) {
      auto l = loss_ce(params, *s.image, *s.labels);
      out.value += w * l.value;
      out.grads.add_scaled(l.grads, w);
    }
  }
  if (lambda > 0.0) {
    const double w = lambda / static_cast<double>(proxy.size());
    for (const auto& s : proxy) {
      auto l = loss_anom(params, *s.image, s.region);
      out.value += w * l.value;
      out.grads.add_scaled(l.grads, w);
    }
  }
  return out;
}

Image input_gradient(const NetParams& params, const Image& image,
                     const std::function<LogitLoss(const LogitMap&)>& scalar) {
  const auto c = run_forward(params, image, {});
  const auto l = scalar(to_logit_map(c.logits, image.height(), image.width()));
  const RowMatrix dlogits = as_matrix(l.grad);
  RowMatrix dpatches;
  run_backward(params, c, dlogits, &dpatches);
  Image grad(image.height(), image.width(), 3);
  col2im_add(dpatches, params.k, grad);
  return grad;
}

NetParams extend_head(const NetParams& params, std::uint64_t seed) {
  params.validate();
  NetParams out = params;
  const int s = params.classes;
  out.classes = s + 1;
  out.w2.conservativeResize(s + 1, Eigen::NoChange);
  out.b2.conservativeResize(s + 1);
  // Seeded by the new class index so repeated extensions compose.
  SplitMix64 rng(derive_seed(seed, static_cast<std::uint64_t>(s)));
  for (int j = 0; j < params.hidden; ++j) out.w2(s, j) = 0.01 * rng.normal();
  out.b2(s) = 0.01 * rng.normal();
  return out;
}

TrainResult train(NetParams params, std::span<const LabeledSample> labeled, std::span<const ProxySample> proxy,
                  const TrainOptions& options) {
  params.validate();
  if (!(options.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (options.epochs < 0) throw ConfigError("epochs must be nonnegative");
  if (options.batch_size < 1) throw ConfigError("batch size must be positive");
  if (options.lambda < 0.0 || options.lambda > 1.0) throw ConfigError("lambda must lie in [0,1]");
  if (labeled.empty()) throw DataError("empty training set");
  const bool entmax = options.objective == Objective::kEntropyMax;
  const bool incremental = options.objective == Objective::kIncremental;
  if (entmax && proxy.empty()) throw DataError("entropy maximization needs proxy-anomaly samples");
  if (incremental) {
    for (const auto& s : labeled) {
      if (s.teacher == nullptr) throw DataError("incremental objective needs teacher logits for every sample");
    }
  }
  const double lambda = options.objective == Objective::kCrossEntropy ? 0.0 : options.lambda;

  TrainResult result;
  SplitMix64 order_rng(derive_seed(options.seed, 0x01));
  SplitMix64 proxy_rng(derive_seed(options.seed, 0x02));
  std::vector<int> order(labeled.size());
  std::vector<int> proxy_order(proxy.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  for (std::size_t i = 0; i < proxy_order.size(); ++i) proxy_order[i] = static_cast<int>(i);
  std::size_t proxy_cursor = proxy_order.size();

  NetParams velocity = params.zeros_like();
  const int jobs = std::max(1, options.jobs);

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    order_rng.shuffle(order);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const int n = static_cast<int>(std::min<std::size_t>(options.batch_size, order.size() - start));

      // Labeled part: CE (and distillation for the incremental objective).
      std::vector<LossAndGrads> ce(n);
      std::vector<char> has_ce(n, 0);
      std::vector<LossAndGrads> distill(incremental ? n : 0);
      parallel_for(n, jobs, [&](int b) {
        const auto& s = labeled[order[start + b]];
        const bool any = std::any_of(s.labels->data().begin(), s.labels->data().end(),
                                     [](std::uint8_t l) { return l != kIgnoreLabel; });
        if (any) {
          ce[b] = loss_ce(params, *s.image, *s.labels);
          has_ce[b] = 1;
        }
        if (incremental) distill[b] = loss_distill(params, *s.image, *s.teacher, s.labels);
      });

      NetGrads grads = params.zeros_like();
      double batch_loss = 0.0;
      const int ce_count = static_cast<int>(std::count(has_ce.begin(), has_ce.end(), 1));
      if (ce_count > 0 && lambda < 1.0) {
        const double w = (1.0 - lambda) / ce_count;
        for (int b = 0; b < n; ++b) {
          if (!has_ce[b]) continue;
          batch_loss += w * ce[b].value;
          grads.add_scaled(ce[b].grads, w);
        }
      }
      if (incremental && lambda > 0.0) {
        const double w = lambda / n;
        for (int b = 0; b < n; ++b) {
          batch_loss += w * distill[b].value;
          grads.add_scaled(distill[b].grads, w);
        }
      }
      if (entmax && lambda > 0.0) {
        std::vector<int> picks(options.batch_size);
        for (auto& pick : picks) {
          if (proxy_cursor >= proxy_order.size()) {
            proxy_rng.shuffle(proxy_order);
            proxy_cursor = 0;
          }
          pick = proxy_order[proxy_cursor++];
        }
        std::vector<LossAndGrads> anom(picks.size());
        parallel_for(static_cast<int>(picks.size()), jobs, [&](int b) {
          const auto& s = proxy[picks[b]];
          anom[b] = loss_anom(params, *s.image, s.region);
        });
        const double w = lambda / static_cast<double>(picks.size());
        for (const auto& a : anom) {
          batch_loss += w * a.value;
          grads.add_scaled(a.grads, w);
        }
      }

      if (!std::isfinite(batch_loss)) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": loss is not finite");
      }
      if (options.freeze_encoder) {
        grads.w1.setZero();
        grads.b1.setZero();
      }
      velocity.w2 = options.momentum * velocity.w2 - options.lr * grads.w2;
      velocity.b2 = options.momentum * velocity.b2 - options.lr * grads.b2;
      params.w2 += velocity.w2;
      params.b2 += velocity.b2;
      if (!options.freeze_encoder) {
        velocity.w1 = options.momentum * velocity.w1 - options.lr * grads.w1;
        velocity.b1 = options.momentum * velocity.b1 - options.lr * grads.b1;
        params.w1 += velocity.w1;
        params.b1 += velocity.b1;
      }
      epoch_loss += batch_loss;
      ++batches;
    }
    result.loss_trace.push_back(epoch_loss / batches);
  }
  check_finite(params);
  result.params = std::move(params);
  return result;
}

void save_params(const std::filesystem::path& dir, const NetParams& params) {
  params.validate();
  std::filesystem::create_directories(dir);
  auto matrix_tensor = [](const Eigen::MatrixXd& m) {
    std::vector<float> v;
    v.reserve(m.size());
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) v.push_back(static_cast<float>(m(i, j)));
    return Tensor::float32({static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())}, v);
  };
  auto vector_tensor = [](const Eigen::VectorXd& m) {
    std::vector<float> v(m.data(), m.data() + m.size());
    return Tensor::float32({static_cast<std::uint32_t>(m.size())}, v);
  };
  write_tensor(dir / "w1.ant", matrix_tensor(params.w1));
  write_tensor(dir / "b1.ant", vector_tensor(params.b1));
  write_tensor(dir / "w2.ant", matrix_tensor(params.w2));
  write_tensor(dir / "b2.ant", vector_tensor(params.b2));
  nlohmann::json header = {{"k", params.k}, {"hidden", params.hidden}, {"classes", params.classes}};
  std::ofstream out(dir / "params.json", std::ios::trunc);
  if (!out) throw DataError("cannot write params header in " + dir.string());
  out << header.dump(2) << "\n";
}

NetParams load_params(const std::filesystem::path& dir) {
  std::ifstream in(dir / "params.json");
  if (!in) throw DataError("missing params header: " + (dir / "params.json").string());
  nlohmann::json header;
  try {
    in >> header;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad params header: " + std::string(e.what()));
  }
  NetParams p = NetParams::zeros(header.at("classes").get<int>(), header.at("k").get<int>(),
                                 header.at("hidden").get<int>());
  auto load_matrix = [&](const char* name, Eigen::MatrixXd& m) {
    const auto t = read_tensor(dir / name);
    if (t.dtype != DType::kFloat32 || t.dims.size() != 2 || t.dims[0] != m.rows() || t.dims[1] != m.cols())
      throw DataError(std::string("params tensor has wrong shape: ") + name);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = t.f32[i * m.cols() + j];
  };
  auto load_vector = [&](const char* name, Eigen::VectorXd& v) {
    const auto t = read_tensor(dir / name);
    if (t.dtype != DType::kFloat32 || t.dims.size() != 1 || t.dims[0] != v.size())
      throw DataError(std::string("params tensor has wrong shape: ") + name);
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = t.f32[i];
  };
  load_matrix("w1.ant", p.w1);
  load_vector("b1.ant", p.b1);
  load_matrix("w2.ant", p.w2);
  load_vector("b2.ant", p.b2);
  p.validate();
  return p;
}

}  // namespace anomseg
