#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "anomseg/grid.hpp"
#include "anomseg/infostat.hpp"
#include "anomseg/toynet.hpp"

namespace anomseg {

// Per-pixel anomaly scores, higher = more anomalous.
struct AnomalyMap {
  Grid<double> scores;  // H x W x 1
  std::string method;
  std::map<std::string, double> params;

  int height() const { return scores.height(); }
  int width() const { return scores.width(); }
  double operator()(int y, int x) const { return scores(y, x); }
};

AnomalyMap score_msp(const ProbMap& probs);

struct OdinOptions {
  double temperature = 1.0;
  double epsilon = 0.0;
};
// MSP after temperature scaling and an input step of size epsilon along the sign of
// the gradient of sum_i log max softmax(y_i / t).
AnomalyMap score_odin(const NetParams& params, const Image& image, const OdinOptions& options);

// min over classes of (f - mu_s)^T Sigma_s^{-1} (f - mu_s).
AnomalyMap score_mahalanobis(const FeatureMap& features, std::span<const GaussianModel> class_gaussians);

// Mutual information: H(mean_r p^(r)) - mean_r H(p^(r)). Exactly 0 where all samples
// agree, strictly positive elsewhere.
AnomalyMap score_mc_dropout(std::span<const ProbMap> samples);

// Softmax of the extra (last) channel of an S+1 channel model.
AnomalyMap score_void(const ProbMap& probs, int trained_classes);

// Per-feature-pixel Gaussian NLL, bilinearly upsampled by `factor`.
AnomalyMap score_embedding_density(const FeatureMap& features, const GaussianModel& model, int factor = 1);

AnomalyMap score_entropy(const ProbMap& probs, bool normalized = true);

// 1 - max p + second-largest p.
AnomalyMap score_margin(const ProbMap& probs);

// Align-corners bilinear interpolation of a single-channel grid.
double bilinear_sample(const Grid<double>& map, double y, double x);
Grid<double> upsample_bilinear(const Grid<double>& map, int out_height, int out_width);

// One Gaussian per class over features of pixels with that ground-truth label.
std::vector<GaussianModel> fit_class_gaussians(std::span<const FeatureMap> features, std::span<const LabelMap> labels,
                                               int classes);
// A single Gaussian over features of all non-ignore pixels.
GaussianModel fit_pooled_gaussian(std::span<const FeatureMap> features, std::span<const LabelMap> labels);

// MC dropout sampling helper: R forward passes with derived dropout seeds.
std::vector<ProbMap> mc_dropout_samples(const NetParams& params, const Image& image, int rounds, double rate,
                                        std::uint64_t seed);

}  // namespace anomseg
