#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "anomseg/grid.hpp"

namespace anomseg {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kLogClamp = 1e-12;

// Per-pixel two-layer classifier over a k x k x 3 zero-padded patch.
// w1/b1 form the encoder, w2/b2 the classification head.
struct NetParams {
  int k = 5;
  int hidden = 32;
  int classes = 4;
  Eigen::MatrixXd w1;  // hidden x (k*k*3)
  Eigen::VectorXd b1;  // hidden
  Eigen::MatrixXd w2;  // classes x hidden
  Eigen::VectorXd b2;  // classes

  int patch_size() const { return k * k * 3; }
  std::size_t parameter_count() const;
  void validate() const;

  // He-scaled Gaussian weights from splitmix64, zero biases.
  static NetParams init(int classes, std::uint64_t seed, int k = 5, int hidden = 32);
  static NetParams zeros(int classes, int k = 5, int hidden = 32);

  NetParams zeros_like() const;
  // this += scale * other
  void add_scaled(const NetParams& other, double scale);
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> values);
  bool operator==(const NetParams& other) const;
};

using NetGrads = NetParams;

struct Dropout {
  double rate = 0.0;
  std::uint64_t seed = 0;
  bool enabled() const { return rate > 0.0; }
};

struct ForwardResult {
  LogitMap logits;
  FeatureMap features;
};

ForwardResult forward(const NetParams& params, const Image& image, const Dropout& dropout = {});

ProbMap softmax_map(const LogitMap& logits);
// Per-pixel argmax, ties toward the smallest class index.
LabelMap predict_mask(const LogitMap& logits);

// Loss value and its gradient with respect to the logits.
struct LogitLoss {
  double value = 0.0;
  LogitMap grad;
};

// Mean over non-ignore pixels of -log softmax at the label.
LogitLoss ce_logit_loss(const LogitMap& logits, const LabelMap& labels);
// -(1/(H*W)) sum_{i in P} (1/S) sum_s log softmax_s, P = all pixels or those with region == 1.
LogitLoss anom_logit_loss(const LogitMap& logits, const LabelMap* region = nullptr);
// -(1/|P|) sum_i sum_{s<S} softmax_s(old) log softmax_s(new) with the new softmax over S+1
// channels. With labels, P drops pixels labeled 255 or with the new class (label >= S);
// an empty P gives zero loss.
LogitLoss distill_logit_loss(const LogitMap& new_logits, const LogitMap& old_logits,
                             const LabelMap* labels = nullptr);

struct LossAndGrads {
  double value = 0.0;
  NetGrads grads;
};

// Backpropagates a logit-space loss through the network.
LossAndGrads backprop_loss(const NetParams& params, const Image& image,
                           const std::function<LogitLoss(const LogitMap&)>& loss, const Dropout& dropout = {});

LossAndGrads loss_ce(const NetParams& params, const Image& image, const LabelMap& labels);
// With a region only pixels labeled 1 enter the sum; the mean is still over all H*W pixels.
LossAndGrads loss_anom(const NetParams& params, const Image& image, const LabelMap* region = nullptr);
LossAndGrads loss_distill(const NetParams& params, const Image& image, const LogitMap& teacher_logits,
                          const LabelMap* labels = nullptr);

struct LabeledSample {
  const Image* image = nullptr;
  const LabelMap* labels = nullptr;
  const LogitMap* teacher = nullptr;  // old-model logits, incremental objective only
};

struct ProxySample {
  const Image* image = nullptr;
  const LabelMap* region = nullptr;  // pixels with value 1 enter J^anom; null means all pixels
};

// (1 - lambda) * mean J^CE over labeled + lambda * mean J^anom over proxy.
LossAndGrads loss_total_entmax(const NetParams& params, std::span<const LabeledSample> labeled,
                               std::span<const ProxySample> proxy, double lambda);

// Exact gradient of scalar(logits) with respect to the input image.
Image input_gradient(const NetParams& params, const Image& image,
                     const std::function<LogitLoss(const LogitMap&)>& scalar);

// Appends one output class; the new head row and bias are 0.01-scaled Gaussians.
NetParams extend_head(const NetParams& params, std::uint64_t seed);

enum class Objective { kCrossEntropy, kEntropyMax, kIncremental };

struct TrainOptions {
  Objective objective = Objective::kCrossEntropy;
  int epochs = 10;
  double lr = 0.05;
  double momentum = 0.9;
  int batch_size = 8;
  double lambda = 0.5;
  std::uint64_t seed = 0;
  bool freeze_encoder = false;
  int jobs = 1;
};

struct TrainResult {
  NetParams params;
  std::vector<double> loss_trace;  // epoch-mean objective
};

// Mini-batch SGD with momentum. Batches are drawn from `labeled` in a splitmix64
// shuffle per epoch; the entropy-max objective pairs each batch with the next
// batch of the (separately shuffled) proxy set.
TrainResult train(NetParams params, std::span<const LabeledSample> labeled, std::span<const ProxySample> proxy,
                  const TrainOptions& options);

void save_params(const std::filesystem::path& dir, const NetParams& params);
NetParams load_params(const std::filesystem::path& dir);

}  // namespace anomseg
