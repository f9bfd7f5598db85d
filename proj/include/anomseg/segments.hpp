#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "anomseg/grid.hpp"
#include "anomseg/scoring.hpp"

namespace anomseg {

inline constexpr int kSegmentMetricCount = 12;

struct Segment {
  int label = 0;
  std::vector<int> pixels;  // linear indices y * width + x, ascending
  int min_row = 0, min_col = 0, max_row = 0, max_col = 0;
  std::vector<double> metrics;
  double predicted_probability = std::numeric_limits<double>::quiet_NaN();
  double true_iou = std::numeric_limits<double>::quiet_NaN();

  int size() const { return static_cast<int>(pixels.size()); }
};

// Maximal same-label regions (4- or 8-connected), skipping 255. Ordered by the
// raster position of their first pixel, i.e. by (min row, min col of that row).
std::vector<Segment> connected_components(const LabelMap& labels, int connectivity = 8);

// Components of the pixels equal to 1 in a binary mask.
std::vector<Segment> binary_components(const LabelMap& mask, int connectivity = 8);

// |seg ∩ G| / |seg ∪ G| with G the pixels of `gt` carrying the segment's label.
double segment_iou(const Segment& segment, const LabelMap& gt);

// The 12 segment metrics:
//   0 mean normalized entropy    1 variance of normalized entropy
//   2 mean margin                3 variance of margin
//   4 mean max softmax           5 size
//   6 log size                   7 boundary pixel fraction
//   8 boundary minus interior mean entropy
//   9 centroid row / H           10 centroid col / W
//   11 distinct neighboring predicted classes
std::vector<double> segment_metrics(const Segment& segment, const ProbMap& probs, const LabelMap& predicted);

struct MetaModel {
  std::vector<int> active;     // metric indices with nonzero spread
  std::vector<double> mean;    // per active metric
  std::vector<double> stddev;  // per active metric
  std::vector<double> weights; // per active metric
  double bias = 0.0;

  double probability(std::span<const double> metrics) const;
};

struct MetaFitOptions {
  int iterations = 500;
  double learning_rate = 0.1;
};

struct LogisticLoss {
  double value = 0.0;
  std::vector<double> weight_grad;
  double bias_grad = 0.0;
};

// Mean negative log-likelihood of labels y under logistic(X w + b).
LogisticLoss logistic_loss(std::span<const double> weights, double bias, const std::vector<std::vector<double>>& x,
                           std::span<const int> y);

// Standardized logistic regression on 1{true IoU > 0}, full-batch gradient descent
// from zero weights.
MetaModel meta_fit(std::span<const Segment> segments, const MetaFitOptions& options = {});

// Segments whose predicted probability of IoU > 0 is at least 0.5.
std::vector<Segment> meta_apply(const MetaModel& model, std::span<const Segment> segments);

struct ObjectEvalImage {
  const AnomalyMap* scores = nullptr;
  const ProbMap* probs = nullptr;        // needed for meta metrics
  const LabelMap* predicted = nullptr;   // argmax mask, needed for meta metrics
  const LabelMap* anomaly_gt = nullptr;  // 1 anomaly, 0 normal, 255 ignore
};

// Thresholded anomaly segments of one image with metrics filled in. With ground
// truth, pixels annotated 255 are excluded and the true IoU is set.
std::vector<Segment> anomaly_segments(const ObjectEvalImage& image, double tau, bool with_metrics);

struct ObjectEvalResult {
  int tp = 0;
  int fp = 0;
  int fn = 0;
  double f1 = 0.0;
  double delta = 0.0;  // mean IoU loss on the original classes versus a reference model
};

ObjectEvalResult object_level_eval(std::span<const ObjectEvalImage> images, double tau, const MetaModel* meta = nullptr,
                                   double delta = 0.0);

struct ClassScore {
  double iou = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  std::int64_t support = 0;  // ground-truth pixels
};

// Per-class IoU / precision / recall over non-ignore ground-truth pixels.
std::vector<ClassScore> class_scores(std::span<const LabelMap> predicted, std::span<const LabelMap> gt, int classes);

double mean_iou(std::span<const ClassScore> scores, int first, int last);

}  // namespace anomseg
