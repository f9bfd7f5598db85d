#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "anomseg/discovery.hpp"
#include "anomseg/evalmetrics.hpp"
#include "anomseg/infostat.hpp"
#include "anomseg/scoring.hpp"
#include "anomseg/segments.hpp"
#include "anomseg/synthworld.hpp"
#include "anomseg/toynet.hpp"

namespace anomseg {

struct ExperimentConfig {
  WorldConfig world;
  std::uint64_t seed = 1;
  int train_scenes = 200;
  int proxy_scenes = 100;
  int test_scenes = 100;
  int meta_scenes = 100;        // held-out scenes with anomalies used to fit the meta model
  int novel_scenes = 60;        // discovery set
  int novel_eval_scenes = 60;   // held-out evaluation of the extended model
  int holdout_scenes = 60;      // anomaly-free scenes for old-class mean IoU

  int base_epochs = 10;
  double base_lr = 0.05;
  int entmax_epochs = 15;
  double entmax_lr = 0.05;
  double lambda = 0.5;
  int batch_size = 8;

  double odin_temperature = 10.0;
  double odin_epsilon = 0.002;
  int mc_rounds = 8;
  double mc_rate = 0.25;

  double segment_tau = 0.3;

  double discover_tau = 0.3;
  int pca_dims = 16;
  double perplexity = 10.0;
  int tsne_iterations = 1000;
  double tsne_lr = 100.0;
  double eps = 2.5;
  int delta = 0;  // 0 selects max(4, count / 10)
  DensityStatistic statistic = DensityStatistic::kMax;
  int min_cluster_size = 5;

  int extend_epochs = 30;
  double extend_lr = 0.2;
  double extend_lambda = 0.5;
  bool freeze_encoder = true;

  int jobs = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
};

std::string to_string(DensityStatistic statistic);
DensityStatistic parse_density_statistic(const std::string& name);

struct SceneSets {
  std::vector<LabeledScene> train, proxy, test, meta, novel, novel_eval, holdout;
};

// Index offsets keep the auxiliary sets disjoint from the primary splits.
inline constexpr int kMetaOffset = 100000;
inline constexpr int kNovelEvalOffset = 200000;
inline constexpr int kHoldoutOffset = 300000;

std::vector<LabeledScene> generate_range(const WorldConfig& config, std::uint64_t seed, Split split, int offset,
                                         int count, int jobs);
SceneSets make_scenes(const ExperimentConfig& config);

std::vector<LabeledSample> labeled_samples(const std::vector<LabeledScene>& scenes);
std::vector<ProxySample> proxy_samples(const std::vector<LabeledScene>& scenes, std::vector<LabelMap>& regions);

NetParams train_baseline(const ExperimentConfig& config, const std::vector<LabeledScene>& train);
NetParams train_entmax(const ExperimentConfig& config, const NetParams& baseline,
                       const std::vector<LabeledScene>& train, const std::vector<LabeledScene>& proxy);
// Void classifier: one extra output class trained on the proxy-object pixels.
NetParams train_void(const ExperimentConfig& config, const std::vector<LabeledScene>& train,
                     const std::vector<LabeledScene>& proxy);

struct ModelBundle {
  NetParams baseline;
  std::optional<NetParams> entmax;
  std::optional<NetParams> void_model;
  std::vector<GaussianModel> class_gaussians;
  std::optional<GaussianModel> pooled_gaussian;
};

// Fits the feature Gaussians used by the Mahalanobis and density scores.
void fit_feature_models(ModelBundle& models, const std::vector<LabeledScene>& train, int jobs);

const std::vector<std::string>& benchmark_methods();
AnomalyMap score_image(const std::string& method, const ModelBundle& models, const ExperimentConfig& config,
                       const Image& image, std::uint64_t seed);
std::vector<AnomalyMap> score_scenes(const std::string& method, const ModelBundle& models,
                                     const ExperimentConfig& config, const std::vector<LabeledScene>& scenes);

struct BenchmarkRow {
  std::string method;
  CurveResult curves;
  double prevalence = 0.0;
};

std::vector<BenchmarkRow> run_benchmark(const ExperimentConfig& config, const ModelBundle& models,
                                        const std::vector<LabeledScene>& test,
                                        const std::vector<std::string>& methods);
void write_benchmark(const std::filesystem::path& dir, const std::vector<BenchmarkRow>& rows);

double mean_normalized_entropy(const NetParams& params, const std::vector<LabeledScene>& scenes, int jobs,
                               bool anomaly_pixels);

struct ScoredScene {
  AnomalyMap scores;
  ProbMap probs;
  LabelMap predicted;
};
std::vector<ScoredScene> score_for_segments(const NetParams& params, const std::vector<LabeledScene>& scenes,
                                            int jobs);
std::vector<ObjectEvalImage> object_eval_images(const std::vector<ScoredScene>& scored,
                                                const std::vector<LabeledScene>& scenes);

struct MetaReport {
  MetaModel model;
  int train_segments = 0;
  ObjectEvalResult plain;
  ObjectEvalResult filtered;
};
MetaModel fit_meta_model(const std::vector<ObjectEvalImage>& images, double tau, int* segment_count = nullptr);
MetaReport run_meta(const ExperimentConfig& config, const NetParams& params, const std::vector<LabeledScene>& meta,
                    const std::vector<LabeledScene>& test);
nlohmann::json meta_report_json(const MetaReport& report);

struct DiscoveryOutput {
  std::vector<LabelMap> predicted;  // argmax masks m of the scoring model
  std::vector<AnomalyComponent> components;
  Eigen::MatrixXd embedding;  // n x 2
  ClusterSet clusters;
  int selected = -1;          // C*, -1 when no cluster qualified
  int delta = 0;
  std::string status;         // "ok" or the reason discovery stopped
  std::vector<double> kl_trace;
};

// Scores, meta-filters and clusters anomaly components. Sees images only.
DiscoveryOutput discover(const ExperimentConfig& config, const NetParams& params, const MetaModel& meta,
                         const std::vector<Image>& images);

// embedding.csv (id,x,y,cluster) and components.json.
void write_discovery(const std::filesystem::path& dir, const DiscoveryOutput& discovery);

// y~ per image that holds at least one component of the selected cluster.
struct PseudoLabelSet {
  std::vector<int> image_ids;
  std::vector<LabelMap> labels;
};
PseudoLabelSet build_pseudo_labels(const DiscoveryOutput& discovery, int old_classes);

// extend_head, then trains on the given images with the initial model's logits as
// distillation targets. Images of the new class carry label S.
NetParams extend_model(const ExperimentConfig& config, const NetParams& initial,
                       const std::vector<const Image*>& images, const std::vector<const LabelMap*>& labels);

struct PipelineCReport {
  std::string status;
  DiscoveryOutput discovery;
  RehearsalPlan rehearsal;
  std::vector<std::string> class_names;
  std::vector<ClassScore> initial;    // old classes, holdout scenes
  std::vector<ClassScore> extended;   // old classes on holdout, new class on novel-eval scenes
  double new_class_iou = 0.0;
  double old_miou_initial = 0.0;
  double old_miou_extended = 0.0;
  double cluster_purity = 0.0;        // fraction of C* component pixels that are true anomaly pixels
  int pseudo_labeled_images = 0;
  std::optional<NetParams> extended_params;
};

PipelineCReport run_pipeline_c(const ExperimentConfig& config, const NetParams& initial, const MetaModel& meta,
                               const SceneSets& scenes);
void write_pipeline_c(const std::filesystem::path& dir, const PipelineCReport& report);

// Writes into a temporary sibling, then renames over `out`. On failure the
// temporary directory is removed and `out` is left untouched.
void write_atomically(const std::filesystem::path& out, const nlohmann::json& run,
                      const std::function<void(const std::filesystem::path&)>& body);

std::string format_double(double v);

}  // namespace anomseg
