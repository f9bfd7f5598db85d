#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "anomseg/grid.hpp"
#include "anomseg/scoring.hpp"
#include "anomseg/toynet.hpp"

namespace anomseg {

inline constexpr int kMinComponentSize = 10;
inline constexpr int kCropSize = 16;

struct AnomalyComponent {
  int image_id = 0;
  std::vector<int> pixels;  // linear indices in the source image
  int min_row = 0, min_col = 0, max_row = 0, max_col = 0;
  Image crop;                  // source image restricted to the bounding box
  std::vector<double> feature; // filled by embed_crops
};

// 8-connected components of {a >= tau}; components below min_size are dropped.
// `exclude` (optional, per image) removes pixels whose value is 255.
std::vector<AnomalyComponent> extract_components(std::span<const AnomalyMap> maps, std::span<const Image> images,
                                                 double tau, int min_size = kMinComponentSize,
                                                 std::span<const LabelMap> exclude = {});

Image resize_bilinear(const Image& image, int height, int width);

// Spatial mean of the hidden features of the crop resized to 16 x 16.
void embed_crops(std::span<AnomalyComponent> components, const NetParams& params);
std::vector<double> embed_crop(const Image& crop, const NetParams& params);

// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
// Eigenvalues descending; eigenvector columns sign-fixed so the first nonzero
// coordinate is positive.
struct SymmetricEigen {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
};
SymmetricEigen jacobi_eigen(const Eigen::MatrixXd& symmetric, double tolerance = 1e-14, int max_sweeps = 100);

struct PcaResult {
  Eigen::MatrixXd projected;   // n x target
  Eigen::VectorXd eigenvalues; // all, descending
  Eigen::MatrixXd components;  // d x target
  Eigen::VectorXd mean;
};
PcaResult pca_reduce(const Eigen::MatrixXd& vectors, int target);

struct TsneOptions {
  double perplexity = 10.0;
  int iterations = 1000;
  double learning_rate = 100.0;
  std::uint64_t seed = 0;
  double exaggeration = 12.0;
  int exaggeration_iterations = 250;
  int momentum_switch = 250;
};

struct TsneResult {
  Eigen::MatrixXd embedding;  // n x 2
  double kl_initial = 0.0;
  double kl_final = 0.0;
  std::vector<double> kl_trace;  // every 50 iterations and at the end
};

// Symmetrized affinities p_ij from per-point perplexity-calibrated Gaussians.
Eigen::MatrixXd tsne_affinities(const Eigen::MatrixXd& vectors, double perplexity);
double tsne_kl(const Eigen::MatrixXd& p, const Eigen::MatrixXd& y);
Eigen::MatrixXd tsne_gradient(const Eigen::MatrixXd& p, const Eigen::MatrixXd& y);
TsneResult tsne(const Eigen::MatrixXd& vectors, const TsneOptions& options);

// t-SNE output scale grows with the point count. Dividing by the median
// nearest-neighbor distance makes a DBSCAN radius mean "so many typical gaps".
// Returned unchanged when that median is zero.
double median_neighbor_distance(const Eigen::MatrixXd& points);
Eigen::MatrixXd normalize_spacing(const Eigen::MatrixXd& points);

inline constexpr int kNoise = -1;

struct ClusterSet {
  std::vector<int> labels;   // cluster id per point, kNoise for noise
  std::vector<int> density;  // rho: points within eps, including the point itself
  std::vector<char> core;
  int cluster_count = 0;

  std::vector<int> members(int cluster) const;
};

// Core iff rho >= min_points, with rho counting points at distance <= eps. Clusters
// are connected core points plus border points; a border point joins the cluster
// of its nearest core neighbor (ties: lexicographically smaller core coordinates).
// Clusters are numbered by their lowest member index.
ClusterSet dbscan(const Eigen::MatrixXd& points, double eps, int min_points);

enum class DensityStatistic { kMax, kAverage };

double cluster_density(const ClusterSet& clusters, int cluster, DensityStatistic statistic);

// Cluster with the highest density among those with at least min_size members;
// ties go to the larger cluster, then the lower index. Throws when none qualifies.
int select_cluster(const ClusterSet& clusters, DensityStatistic statistic, int min_size);

// predicted mask with the given pixel sets relabeled to new_label.
LabelMap pseudo_labels(const LabelMap& predicted, std::span<const std::vector<int>> component_pixels,
                       std::uint8_t new_label);

struct PseudoLabeled {
  const LabelMap* predicted = nullptr;
  const LabelMap* pseudo = nullptr;
};

struct RehearsalPlan {
  std::vector<std::int64_t> nu_total;  // per old class
  std::vector<double> nu_relative;
  std::vector<int> quota;              // images required per class, after relaxation
  std::vector<int> selected;           // indices into the old training set
};

// Counts how often each old class was predicted on relabeled pixels, then samples
// |D^{S+1}| old training images by seeded rejection so that at least
// ceil(nu_rel * |D^{S+1}|) contain each class; infeasible quotas are relaxed by
// decrementing the largest quota first.
RehearsalPlan rehearsal_quota(std::span<const PseudoLabeled> pseudo_set, int old_classes,
                              std::span<const LabelMap> old_training_labels, std::uint64_t seed,
                              int attempts_per_relaxation = 200);

}  // namespace anomseg
