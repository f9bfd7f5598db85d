#include "anomseg/experiments.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "anomseg/error.hpp"
#include "anomseg/parallel.hpp"
#include "anomseg/rng.hpp"

namespace anomseg {

using nlohmann::json;

namespace {

constexpr int kGaussianFitScenes = 50;

Shape parse_shape(const std::string& name) {
  for (auto s : {Shape::kCircle, Shape::kSquare, Shape::kTriangle, Shape::kDiamond, Shape::kCross}) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown shape '" + name + "'");
}

json world_to_json(const WorldConfig& w) {
  json shapes = json::array();
  for (auto s : w.trained_shapes) shapes.push_back(to_string(s));
  return {{"height", w.height},
          {"width", w.width},
          {"trained_shapes", shapes},
          {"proxy_shape", to_string(w.proxy_shape)},
          {"anomaly_shape", to_string(w.anomaly_shape)},
          {"min_shapes", w.min_shapes},
          {"max_shapes", w.max_shapes},
          {"noise_sigma", w.noise_sigma},
          {"color_jitter", w.color_jitter},
          {"min_radius", w.min_radius},
          {"max_radius", w.max_radius},
          {"proxy_random_color", w.proxy_random_color},
          {"proxy_color_margin", w.proxy_color_margin}};
}

template <typename T>
void read_key(const json& j, const char* key, T& out, std::set<std::string>& seen) {
  seen.insert(key);
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config key '") + key + "' has the wrong type");
  }
}

void reject_unknown(const json& j, const std::set<std::string>& seen, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!seen.count(it.key())) throw ConfigError("unknown " + where + " key '" + it.key() + "'");
  }
}

WorldConfig world_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("world config must be an object");
  WorldConfig w;
  std::set<std::string> seen;
  read_key(j, "height", w.height, seen);
  read_key(j, "width", w.width, seen);
  std::vector<std::string> trained;
  read_key(j, "trained_shapes", trained, seen);
  if (j.contains("trained_shapes")) {
    w.trained_shapes.clear();
    for (const auto& n : trained) w.trained_shapes.push_back(parse_shape(n));
  }
  std::string proxy = to_string(w.proxy_shape);
  std::string anomaly = to_string(w.anomaly_shape);
  read_key(j, "proxy_shape", proxy, seen);
  read_key(j, "anomaly_shape", anomaly, seen);
  w.proxy_shape = parse_shape(proxy);
  w.anomaly_shape = parse_shape(anomaly);
  read_key(j, "min_shapes", w.min_shapes, seen);
  read_key(j, "max_shapes", w.max_shapes, seen);
  read_key(j, "noise_sigma", w.noise_sigma, seen);
  read_key(j, "color_jitter", w.color_jitter, seen);
  read_key(j, "min_radius", w.min_radius, seen);
  read_key(j, "max_radius", w.max_radius, seen);
  read_key(j, "proxy_random_color", w.proxy_random_color, seen);
  read_key(j, "proxy_color_margin", w.proxy_color_margin, seen);
  reject_unknown(j, seen, "world");
  return w;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

LabelMap region_of(const LabelMap& anomaly_mask) {
  LabelMap r(anomaly_mask.height(), anomaly_mask.width());
  for (std::size_t i = 0; i < r.size(); ++i) r.data()[i] = anomaly_mask.data()[i] == 1 ? 1 : 0;
  return r;
}

std::string safe_name(const std::string& method) {
  std::string s = method;
  for (auto& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  }
  return s;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string to_string(DensityStatistic statistic) {
  return statistic == DensityStatistic::kMax ? "max" : "average";
}

DensityStatistic parse_density_statistic(const std::string& name) {
  if (name == "max") return DensityStatistic::kMax;
  if (name == "average") return DensityStatistic::kAverage;
  throw ConfigError("density statistic must be 'max' or 'average', got '" + name + "'");
}

void ExperimentConfig::validate() const {
  world.validate();
  require(train_scenes >= 1, "train_scenes must be >= 1");
  require(proxy_scenes >= 1, "proxy_scenes must be >= 1");
  require(test_scenes >= 1, "test_scenes must be >= 1");
  require(meta_scenes >= 1, "meta_scenes must be >= 1");
  require(novel_scenes >= 0 && novel_eval_scenes >= 1 && holdout_scenes >= 1, "novel/holdout scene counts invalid");
  require(base_epochs >= 0 && entmax_epochs >= 0 && extend_epochs >= 0, "epochs must be nonnegative");
  require(base_lr > 0 && entmax_lr > 0 && extend_lr > 0, "learning rates must be positive");
  require(lambda >= 0 && lambda <= 1 && extend_lambda >= 0 && extend_lambda <= 1, "lambda must lie in [0,1]");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(odin_temperature > 0, "odin temperature must be positive");
  require(odin_epsilon >= 0, "odin epsilon must be nonnegative");
  require(mc_rounds >= 2, "mc_rounds must be >= 2");
  require(mc_rate > 0 && mc_rate < 1, "mc_rate must lie in (0,1)");
  require(segment_tau >= 0 && segment_tau <= 1 && discover_tau >= 0 && discover_tau <= 1, "tau must lie in [0,1]");
  require(pca_dims >= 1, "pca_dims must be >= 1");
  require(perplexity >= 1, "perplexity must be >= 1");
  require(tsne_iterations >= 0, "tsne_iterations must be >= 0");
  require(tsne_lr > 0, "tsne_lr must be positive");
  require(eps > 0, "eps must be positive");
  require(delta >= 0, "delta must be >= 0");
  require(min_cluster_size >= 1, "min_cluster_size must be >= 1");
  require(jobs >= 1, "jobs must be >= 1");
}

json ExperimentConfig::to_json() const {
  return {{"world", world_to_json(world)},
          {"seed", seed},
          {"train_scenes", train_scenes},
          {"proxy_scenes", proxy_scenes},
          {"test_scenes", test_scenes},
          {"meta_scenes", meta_scenes},
          {"novel_scenes", novel_scenes},
          {"novel_eval_scenes", novel_eval_scenes},
          {"holdout_scenes", holdout_scenes},
          {"base_epochs", base_epochs},
          {"base_lr", base_lr},
          {"entmax_epochs", entmax_epochs},
          {"entmax_lr", entmax_lr},
          {"lambda", lambda},
          {"batch_size", batch_size},
          {"odin_temperature", odin_temperature},
          {"odin_epsilon", odin_epsilon},
          {"mc_rounds", mc_rounds},
          {"mc_rate", mc_rate},
          {"segment_tau", segment_tau},
          {"discover_tau", discover_tau},
          {"pca_dims", pca_dims},
          {"perplexity", perplexity},
          {"tsne_iterations", tsne_iterations},
          {"tsne_lr", tsne_lr},
          {"eps", eps},
          {"delta", delta},
          {"statistic", to_string(statistic)},
          {"min_cluster_size", min_cluster_size},
          {"extend_epochs", extend_epochs},
          {"extend_lr", extend_lr},
          {"extend_lambda", extend_lambda},
          {"freeze_encoder", freeze_encoder}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig c;
  std::set<std::string> seen{"world", "statistic"};
  if (j.contains("world")) c.world = world_from_json(j.at("world"));
  read_key(j, "seed", c.seed, seen);
  read_key(j, "train_scenes", c.train_scenes, seen);
  read_key(j, "proxy_scenes", c.proxy_scenes, seen);
  read_key(j, "test_scenes", c.test_scenes, seen);
  read_key(j, "meta_scenes", c.meta_scenes, seen);
  read_key(j, "novel_scenes", c.novel_scenes, seen);
  read_key(j, "novel_eval_scenes", c.novel_eval_scenes, seen);
  read_key(j, "holdout_scenes", c.holdout_scenes, seen);
  read_key(j, "base_epochs", c.base_epochs, seen);
  read_key(j, "base_lr", c.base_lr, seen);
  read_key(j, "entmax_epochs", c.entmax_epochs, seen);
  read_key(j, "entmax_lr", c.entmax_lr, seen);
  read_key(j, "lambda", c.lambda, seen);
  read_key(j, "batch_size", c.batch_size, seen);
  read_key(j, "odin_temperature", c.odin_temperature, seen);
  read_key(j, "odin_epsilon", c.odin_epsilon, seen);
  read_key(j, "mc_rounds", c.mc_rounds, seen);
  read_key(j, "mc_rate", c.mc_rate, seen);
  read_key(j, "segment_tau", c.segment_tau, seen);
  read_key(j, "discover_tau", c.discover_tau, seen);
  read_key(j, "pca_dims", c.pca_dims, seen);
  read_key(j, "perplexity", c.perplexity, seen);
  read_key(j, "tsne_iterations", c.tsne_iterations, seen);
  read_key(j, "tsne_lr", c.tsne_lr, seen);
  read_key(j, "eps", c.eps, seen);
  read_key(j, "delta", c.delta, seen);
  if (j.contains("statistic")) {
    if (!j.at("statistic").is_string()) throw ConfigError("config key 'statistic' has the wrong type");
    c.statistic = parse_density_statistic(j.at("statistic").get<std::string>());
  }
  read_key(j, "min_cluster_size", c.min_cluster_size, seen);
  read_key(j, "extend_epochs", c.extend_epochs, seen);
  read_key(j, "extend_lr", c.extend_lr, seen);
  read_key(j, "extend_lambda", c.extend_lambda, seen);
  read_key(j, "freeze_encoder", c.freeze_encoder, seen);
  reject_unknown(j, seen, "config");
  c.validate();
  return c;
}

std::vector<LabeledScene> generate_range(const WorldConfig& config, std::uint64_t seed, Split split, int offset,
                                         int count, int jobs) {
  std::vector<LabeledScene> scenes(count);
  parallel_for(count, jobs,
               [&](int i) { scenes[i] = generate_scene(config, scene_seed(seed, split, offset + i), split); });
  return scenes;
}

SceneSets make_scenes(const ExperimentConfig& c) {
  SceneSets s;
  s.train = generate_range(c.world, c.seed, Split::kTrain, 0, c.train_scenes, c.jobs);
  s.proxy = generate_range(c.world, c.seed, Split::kProxyAnom, 0, c.proxy_scenes, c.jobs);
  s.test = generate_range(c.world, c.seed, Split::kTest, 0, c.test_scenes, c.jobs);
  s.meta = generate_range(c.world, c.seed, Split::kTest, kMetaOffset, c.meta_scenes, c.jobs);
  s.novel = generate_range(c.world, c.seed, Split::kNovel, 0, c.novel_scenes, c.jobs);
  s.novel_eval = generate_range(c.world, c.seed, Split::kNovel, kNovelEvalOffset, c.novel_eval_scenes, c.jobs);
  s.holdout = generate_range(c.world, c.seed, Split::kTrain, kHoldoutOffset, c.holdout_scenes, c.jobs);
  return s;
}

std::vector<LabeledSample> labeled_samples(const std::vector<LabeledScene>& scenes) {
  std::vector<LabeledSample> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) out.push_back({&s.image, &s.mask, nullptr});
  return out;
}

std::vector<ProxySample> proxy_samples(const std::vector<LabeledScene>& scenes, std::vector<LabelMap>& regions) {
  regions.clear();
  regions.reserve(scenes.size());
  for (const auto& s : scenes) regions.push_back(region_of(s.anomaly_mask));
  std::vector<ProxySample> out;
  for (std::size_t i = 0; i < scenes.size(); ++i) out.push_back({&scenes[i].image, &regions[i]});
  return out;
}

NetParams train_baseline(const ExperimentConfig& c, const std::vector<LabeledScene>& train) {
  const auto labeled = labeled_samples(train);
  TrainOptions o;
  o.objective = Objective::kCrossEntropy;
  o.epochs = c.base_epochs;
  o.lr = c.base_lr;
  o.batch_size = c.batch_size;
  o.seed = derive_seed(c.seed, 0xba5e);
  o.jobs = c.jobs;
  return anomseg::train(NetParams::init(c.world.num_classes(), derive_seed(c.seed, 0x1a17)), labeled, {}, o).params;
}

NetParams train_entmax(const ExperimentConfig& c, const NetParams& baseline, const std::vector<LabeledScene>& train,
                       const std::vector<LabeledScene>& proxy) {
  const auto labeled = labeled_samples(train);
  std::vector<LabelMap> regions;
  const auto px = proxy_samples(proxy, regions);
  TrainOptions o;
  o.objective = Objective::kEntropyMax;
  o.epochs = c.entmax_epochs;
  o.lr = c.entmax_lr;
  o.lambda = c.lambda;
  o.batch_size = c.batch_size;
  o.seed = derive_seed(c.seed, 0xe7a5);
  o.jobs = c.jobs;
  return anomseg::train(baseline, labeled, px, o).params;
}

NetParams train_void(const ExperimentConfig& c, const std::vector<LabeledScene>& train,
                     const std::vector<LabeledScene>& proxy) {
  const int s = c.world.num_classes();
  std::vector<LabelMap> void_masks;
  void_masks.reserve(proxy.size());
  for (const auto& p : proxy) {
    LabelMap m = p.mask;
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (p.anomaly_mask.data()[i] == 1) m.data()[i] = static_cast<std::uint8_t>(s);
    }
    void_masks.push_back(std::move(m));
  }
  auto labeled = labeled_samples(train);
  for (std::size_t i = 0; i < proxy.size(); ++i) labeled.push_back({&proxy[i].image, &void_masks[i], nullptr});
  TrainOptions o;
  o.objective = Objective::kCrossEntropy;
  o.epochs = c.base_epochs;
  o.lr = c.base_lr;
  o.batch_size = c.batch_size;
  o.seed = derive_seed(c.seed, 0x701d);
  o.jobs = c.jobs;
  return anomseg::train(NetParams::init(s + 1, derive_seed(c.seed, 0x1a18)), labeled, {}, o).params;
}

void fit_feature_models(ModelBundle& models, const std::vector<LabeledScene>& train, int jobs) {
  const int n = std::min<int>(kGaussianFitScenes, static_cast<int>(train.size()));
  std::vector<FeatureMap> features(n);
  std::vector<LabelMap> labels(n);
  parallel_for(n, jobs, [&](int i) { features[i] = forward(models.baseline, train[i].image).features; });
  for (int i = 0; i < n; ++i) labels[i] = train[i].mask;
  models.class_gaussians = fit_class_gaussians(features, labels, models.baseline.classes);
  models.pooled_gaussian = fit_pooled_gaussian(features, labels);
}

const std::vector<std::string>& benchmark_methods() {
  static const std::vector<std::string> methods = {"msp",  "odin",    "mahalanobis", "mcdropout", "void",
                                                   "density", "entropy", "margin",   "entmax"};
  return methods;
}

AnomalyMap score_image(const std::string& method, const ModelBundle& m, const ExperimentConfig& c, const Image& image,
                       std::uint64_t seed) {
  if (method == "msp") return score_msp(softmax_map(forward(m.baseline, image).logits));
  if (method == "entropy") return score_entropy(softmax_map(forward(m.baseline, image).logits), true);
  if (method == "margin") return score_margin(softmax_map(forward(m.baseline, image).logits));
  if (method == "odin") return score_odin(m.baseline, image, {c.odin_temperature, c.odin_epsilon});
  if (method == "mahalanobis") {
    if (m.class_gaussians.empty()) throw ConfigError("mahalanobis needs fitted class Gaussians");
    return score_mahalanobis(forward(m.baseline, image).features, m.class_gaussians);
  }
  if (method == "density") {
    if (!m.pooled_gaussian) throw ConfigError("density needs a fitted feature Gaussian");
    return score_embedding_density(forward(m.baseline, image).features, *m.pooled_gaussian, 1);
  }
  if (method == "mcdropout") return score_mc_dropout(mc_dropout_samples(m.baseline, image, c.mc_rounds, c.mc_rate, seed));
  if (method == "void") {
    if (!m.void_model) throw ConfigError("void scoring needs a void-classifier model");
    return score_void(softmax_map(forward(*m.void_model, image).logits), m.void_model->classes - 1);
  }
  if (method == "entmax") {
    if (!m.entmax) throw ConfigError("entmax scoring needs an entropy-maximized model");
    auto a = score_entropy(softmax_map(forward(*m.entmax, image).logits), true);
    a.method = "entmax";
    return a;
  }
  throw ConfigError("unknown scoring method '" + method + "'");
}

std::vector<AnomalyMap> score_scenes(const std::string& method, const ModelBundle& models, const ExperimentConfig& c,
                                     const std::vector<LabeledScene>& scenes) {
  std::vector<AnomalyMap> maps(scenes.size());
  parallel_for(static_cast<int>(scenes.size()), c.jobs, [&](int i) {
    maps[i] = score_image(method, models, c, scenes[i].image, derive_seed(c.seed, 0xd000 + i));
  });
  return maps;
}

std::vector<BenchmarkRow> run_benchmark(const ExperimentConfig& c, const ModelBundle& models,
                                        const std::vector<LabeledScene>& test,
                                        const std::vector<std::string>& methods) {
  std::vector<LabelMap> gt;
  for (const auto& s : test) gt.push_back(s.anomaly_mask);
  std::vector<BenchmarkRow> rows;
  for (const auto& method : methods) {
    const auto maps = score_scenes(method, models, c, test);
    const auto set = build_evalset(maps, gt);
    BenchmarkRow row;
    row.method = method;
    row.curves = roc_pr_curves(set);
    row.prevalence = static_cast<double>(set.positives()) / static_cast<double>(set.labels.size());
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_benchmark(const std::filesystem::path& dir, const std::vector<BenchmarkRow>& rows) {
  std::string csv = "method,auprc,auroc,fpr95\n";
  for (const auto& r : rows) {
    csv += r.method + "," + format_double(r.curves.auprc) + "," + format_double(r.curves.auroc) + "," +
           format_double(r.curves.fpr95) + "\n";
    const auto name = safe_name(r.method);
    write_curve_csvs(r.curves, dir / ("roc_" + name + ".csv"), dir / ("pr_" + name + ".csv"));
    write_text(dir / ("curves_" + name + ".svg"), curves_svg(r.curves, r.prevalence, r.method));
  }
  write_text(dir / "summary.csv", csv);
}

double mean_normalized_entropy(const NetParams& params, const std::vector<LabeledScene>& scenes, int jobs,
                               bool anomaly_pixels) {
  std::vector<double> sums(scenes.size(), 0.0);
  std::vector<std::int64_t> counts(scenes.size(), 0);
  parallel_for(static_cast<int>(scenes.size()), jobs, [&](int i) {
    const auto h = score_entropy(softmax_map(forward(params, scenes[i].image).logits), true);
    for (int p = 0; p < h.scores.pixels(); ++p) {
      const auto a = scenes[i].anomaly_mask.data()[p];
      if ((anomaly_pixels && a == 1) || (!anomaly_pixels && a == 0)) {
        sums[i] += h.scores.data()[p];
        ++counts[i];
      }
    }
  });
  double s = 0.0;
  std::int64_t n = 0;
  for (std::size_t i = 0; i < sums.size(); ++i) {
    s += sums[i];
    n += counts[i];
  }
  if (n == 0) throw DataError("mean entropy: no pixels selected");
  return s / static_cast<double>(n);
}

std::vector<ScoredScene> score_for_segments(const NetParams& params, const std::vector<LabeledScene>& scenes,
                                            int jobs) {
  std::vector<ScoredScene> out(scenes.size());
  parallel_for(static_cast<int>(scenes.size()), jobs, [&](int i) {
    const auto logits = forward(params, scenes[i].image).logits;
    out[i].probs = softmax_map(logits);
    out[i].predicted = predict_mask(logits);
    out[i].scores = score_entropy(out[i].probs, true);
  });
  return out;
}

std::vector<ObjectEvalImage> object_eval_images(const std::vector<ScoredScene>& scored,
                                                const std::vector<LabeledScene>& scenes) {
  std::vector<ObjectEvalImage> out;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    out.push_back({&scored[i].scores, &scored[i].probs, &scored[i].predicted, &scenes[i].anomaly_mask});
  }
  return out;
}

MetaModel fit_meta_model(const std::vector<ObjectEvalImage>& images, double tau, int* segment_count) {
  std::vector<Segment> all;
  for (const auto& img : images) {
    auto segs = anomaly_segments(img, tau, true);
    for (auto& s : segs) all.push_back(std::move(s));
  }
  if (segment_count) *segment_count = static_cast<int>(all.size());
  return meta_fit(all);
}

MetaReport run_meta(const ExperimentConfig& c, const NetParams& params, const std::vector<LabeledScene>& meta,
                    const std::vector<LabeledScene>& test) {
  MetaReport r;
  const auto meta_scored = score_for_segments(params, meta, c.jobs);
  r.model = fit_meta_model(object_eval_images(meta_scored, meta), c.segment_tau, &r.train_segments);
  const auto test_scored = score_for_segments(params, test, c.jobs);
  const auto images = object_eval_images(test_scored, test);
  r.plain = object_level_eval(images, c.segment_tau, nullptr);
  r.filtered = object_level_eval(images, c.segment_tau, &r.model);
  return r;
}

namespace {

json object_eval_json(const ObjectEvalResult& r) {
  return {{"tp", r.tp}, {"fp", r.fp}, {"fn", r.fn}, {"f1", format_double(r.f1)}};
}

}  // namespace

json meta_report_json(const MetaReport& r) {
  json weights = json::array();
  for (std::size_t i = 0; i < r.model.active.size(); ++i) {
    weights.push_back({{"metric", r.model.active[i]},
                       {"mean", format_double(r.model.mean[i])},
                       {"stddev", format_double(r.model.stddev[i])},
                       {"weight", format_double(r.model.weights[i])}});
  }
  return {{"train_segments", r.train_segments},
          {"model", {{"bias", format_double(r.model.bias)}, {"weights", weights}}},
          {"without_meta", object_eval_json(r.plain)},
          {"with_meta", object_eval_json(r.filtered)}};
}

DiscoveryOutput discover(const ExperimentConfig& c, const NetParams& params, const MetaModel& meta,
                         const std::vector<Image>& images) {
  DiscoveryOutput out;
  const int n = static_cast<int>(images.size());
  std::vector<ProbMap> probs(n);
  std::vector<AnomalyMap> scores(n);
  out.predicted.resize(n);
  std::vector<std::vector<Segment>> kept(n);
  parallel_for(n, c.jobs, [&](int i) {
    const auto logits = forward(params, images[i]).logits;
    probs[i] = softmax_map(logits);
    out.predicted[i] = predict_mask(logits);
    scores[i] = score_entropy(probs[i], true);
    const ObjectEvalImage img{&scores[i], &probs[i], &out.predicted[i], nullptr};
    // Keep segments the meta model expects to overlap a real anomaly.
    for (auto& s : meta_apply(meta, anomaly_segments(img, c.discover_tau, true))) {
      if (s.size() >= kMinComponentSize) kept[i].push_back(std::move(s));
    }
  });
  for (int i = 0; i < n; ++i) {
    for (auto& s : kept[i]) {
      AnomalyComponent comp;
      comp.image_id = i;
      comp.pixels = std::move(s.pixels);
      comp.min_row = s.min_row;
      comp.max_row = s.max_row;
      comp.min_col = s.min_col;
      comp.max_col = s.max_col;
      comp.crop = Image(comp.max_row - comp.min_row + 1, comp.max_col - comp.min_col + 1, 3);
      for (int y = comp.min_row; y <= comp.max_row; ++y)
        for (int x = comp.min_col; x <= comp.max_col; ++x)
          for (int ch = 0; ch < 3; ++ch) comp.crop(y - comp.min_row, x - comp.min_col, ch) = images[i](y, x, ch);
      out.components.push_back(std::move(comp));
    }
  }
  const int count = static_cast<int>(out.components.size());
  out.clusters.labels.assign(count, kNoise);
  if (count == 0) {
    out.status = "no cluster: no anomaly components";
    return out;
  }
  if (static_cast<double>(count) < 3.0 * c.perplexity) {
    out.status = "no cluster: " + std::to_string(count) + " components are too few for the perplexity";
    return out;
  }
  embed_crops(out.components, params);
  Eigen::MatrixXd g(count, params.hidden);
  for (int k = 0; k < count; ++k)
    for (int d = 0; d < params.hidden; ++d) g(k, d) = out.components[k].feature[d];
  const int dims = std::min({c.pca_dims, params.hidden, count - 1});
  const auto pca = pca_reduce(g, dims);
  TsneOptions t;
  t.perplexity = c.perplexity;
  t.iterations = c.tsne_iterations;
  t.learning_rate = c.tsne_lr;
  t.seed = derive_seed(c.seed, 0x75e);
  const auto emb = tsne(pca.projected, t);
  out.embedding = normalize_spacing(emb.embedding);
  out.kl_trace = emb.kl_trace;
  out.delta = c.delta > 0 ? c.delta : std::max(4, count / 10);
  out.clusters = dbscan(out.embedding, c.eps, out.delta);
  try {
    out.selected = select_cluster(out.clusters, c.statistic, c.min_cluster_size);
    out.status = "ok";
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kData) throw;
    out.status = "no cluster: no cluster reaches the minimum size";
  }
  return out;
}

PseudoLabelSet build_pseudo_labels(const DiscoveryOutput& d, int old_classes) {
  PseudoLabelSet set;
  if (d.selected < 0) return set;
  std::vector<std::vector<std::vector<int>>> per_image(d.predicted.size());
  for (std::size_t k = 0; k < d.components.size(); ++k) {
    if (d.clusters.labels[k] == d.selected) per_image[d.components[k].image_id].push_back(d.components[k].pixels);
  }
  for (std::size_t i = 0; i < per_image.size(); ++i) {
    if (per_image[i].empty()) continue;
    set.image_ids.push_back(static_cast<int>(i));
    set.labels.push_back(pseudo_labels(d.predicted[i], per_image[i], static_cast<std::uint8_t>(old_classes)));
  }
  return set;
}

NetParams extend_model(const ExperimentConfig& c, const NetParams& initial, const std::vector<const Image*>& images,
                       const std::vector<const LabelMap*>& labels) {
  if (images.size() != labels.size()) throw DataError("extend: image and label counts differ");
  if (images.empty()) throw DataError("extend: empty training set");
  std::vector<LogitMap> teacher(images.size());
  parallel_for(static_cast<int>(images.size()), c.jobs,
               [&](int i) { teacher[i] = forward(initial, *images[i]).logits; });
  std::vector<LabeledSample> samples;
  for (std::size_t i = 0; i < images.size(); ++i) samples.push_back({images[i], labels[i], &teacher[i]});

  TrainOptions o;
  o.objective = Objective::kIncremental;
  o.epochs = c.extend_epochs;
  o.lr = c.extend_lr;
  o.lambda = c.extend_lambda;
  o.batch_size = c.batch_size;
  o.seed = derive_seed(c.seed, 0x1c4e);
  o.freeze_encoder = c.freeze_encoder;
  o.jobs = c.jobs;
  return anomseg::train(extend_head(initial, derive_seed(c.seed, 0xe77d)), samples, {}, o).params;
}

PipelineCReport run_pipeline_c(const ExperimentConfig& c, const NetParams& initial, const MetaModel& meta,
                               const SceneSets& scenes) {
  PipelineCReport r;
  const int s = initial.classes;
  r.class_names = c.world.class_names();
  r.class_names.push_back(to_string(c.world.anomaly_shape));

  // Old-class baseline on anomaly-free held-out scenes.
  auto predict_all = [&](const NetParams& p, const std::vector<LabeledScene>& set) {
    std::vector<LabelMap> pred(set.size());
    parallel_for(static_cast<int>(set.size()), c.jobs,
                 [&](int i) { pred[i] = predict_mask(forward(p, set[i].image).logits); });
    return pred;
  };
  std::vector<LabelMap> holdout_gt;
  for (const auto& sc : scenes.holdout) holdout_gt.push_back(sc.mask);
  r.initial = class_scores(predict_all(initial, scenes.holdout), holdout_gt, s);
  r.old_miou_initial = mean_iou(r.initial, 0, s);

  std::vector<Image> images;
  for (const auto& sc : scenes.novel) images.push_back(sc.image);
  r.discovery = discover(c, initial, meta, images);
  r.status = r.discovery.status;
  if (r.discovery.selected < 0) return r;

  const auto pseudo = build_pseudo_labels(r.discovery, s);
  r.pseudo_labeled_images = static_cast<int>(pseudo.labels.size());

  // Purity is reporting only; the pseudo labels above never read annotations.
  std::int64_t hit = 0, total = 0;
  for (std::size_t k = 0; k < r.discovery.components.size(); ++k) {
    if (r.discovery.clusters.labels[k] != r.discovery.selected) continue;
    const auto& comp = r.discovery.components[k];
    for (int p : comp.pixels) {
      // boundary rings carry no label either way
      const auto a = scenes.novel[comp.image_id].anomaly_mask.data()[p];
      if (a == kIgnoreLabel) continue;
      ++total;
      if (a == 1) ++hit;
    }
  }
  r.cluster_purity = total > 0 ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;

  std::vector<PseudoLabeled> quota_input;
  for (std::size_t i = 0; i < pseudo.labels.size(); ++i) {
    quota_input.push_back({&r.discovery.predicted[pseudo.image_ids[i]], &pseudo.labels[i]});
  }
  std::vector<LabelMap> train_masks;
  for (const auto& sc : scenes.train) train_masks.push_back(sc.mask);
  r.rehearsal = rehearsal_quota(quota_input, s, train_masks, derive_seed(c.seed, 0x4e4e));

  // Training set: pseudo-labeled novel images plus the rehearsal subset, with
  // the initial model's logits as distillation targets.
  std::vector<const Image*> imgs;
  std::vector<const LabelMap*> labels;
  for (std::size_t i = 0; i < pseudo.labels.size(); ++i) {
    imgs.push_back(&scenes.novel[pseudo.image_ids[i]].image);
    labels.push_back(&pseudo.labels[i]);
  }
  for (int idx : r.rehearsal.selected) {
    imgs.push_back(&scenes.train[idx].image);
    labels.push_back(&scenes.train[idx].mask);
  }
  const auto extended = extend_model(c, initial, imgs, labels);

  r.extended = class_scores(predict_all(extended, scenes.holdout), holdout_gt, s + 1);
  r.old_miou_extended = mean_iou(r.extended, 0, s);

  std::vector<LabelMap> novel_gt;
  for (const auto& sc : scenes.novel_eval) {
    LabelMap m = sc.mask;
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (sc.anomaly_mask.data()[i] == 1) m.data()[i] = static_cast<std::uint8_t>(s);
    }
    novel_gt.push_back(std::move(m));
  }
  const auto novel_scores = class_scores(predict_all(extended, scenes.novel_eval), novel_gt, s + 1);
  r.extended[s] = novel_scores[s];
  r.new_class_iou = novel_scores[s].iou;
  r.extended_params = extended;
  return r;
}

void write_discovery(const std::filesystem::path& dir, const DiscoveryOutput& d) {
  std::string emb = "id,x,y,cluster\n";
  for (int k = 0; k < static_cast<int>(d.components.size()) && d.embedding.rows() > 0; ++k) {
    emb += std::to_string(k) + "," + format_double(d.embedding(k, 0)) + "," + format_double(d.embedding(k, 1)) + "," +
           std::to_string(d.clusters.labels[k]) + "\n";
  }
  write_text(dir / "embedding.csv", emb);

  json comps = json::array();
  for (std::size_t k = 0; k < d.components.size(); ++k) {
    const auto& c = d.components[k];
    comps.push_back({{"id", k},
                     {"image", c.image_id},
                     {"bbox", {c.min_row, c.min_col, c.max_row, c.max_col}},
                     {"size", c.pixels.size()},
                     {"cluster", d.clusters.labels.empty() ? kNoise : d.clusters.labels[k]}});
  }
  write_text(dir / "components.json", json{{"components", comps}}.dump(2) + "\n");

}

void write_pipeline_c(const std::filesystem::path& dir, const PipelineCReport& r) {
  const int s = static_cast<int>(r.initial.size());
  const bool trained = !r.extended.empty();
  std::string csv = "class,iou_initial,iou_extended,precision,recall\n";
  for (int k = 0; k <= s; ++k) {
    const std::string init = k < s ? format_double(r.initial[k].iou) : "";
    if (trained) {
      csv += r.class_names[k] + "," + init + "," + format_double(r.extended[k].iou) + "," +
             format_double(r.extended[k].precision) + "," + format_double(r.extended[k].recall) + "\n";
    } else {
      csv += r.class_names[k] + "," + init + ",,,\n";
    }
  }
  if (trained) {
    const double all = (r.old_miou_extended * s + r.new_class_iou) / (s + 1);
    csv += "mean_old," + format_double(r.old_miou_initial) + "," + format_double(r.old_miou_extended) + ",,\n";
    csv += "mean_all," + format_double(r.old_miou_initial * s / (s + 1)) + "," + format_double(all) + ",,\n";
  } else {
    csv += "mean_old," + format_double(r.old_miou_initial) + ",,,\n";
    csv += "mean_all," + format_double(r.old_miou_initial * s / (s + 1)) + ",,,\n";
  }
  write_text(dir / "report.csv", csv);

  write_discovery(dir, r.discovery);

  std::string quota = "class,nu_tot,nu_rel,quota\n";
  for (std::size_t k = 0; k < r.rehearsal.nu_total.size(); ++k) {
    quota += r.class_names[k] + "," + std::to_string(r.rehearsal.nu_total[k]) + "," +
             format_double(r.rehearsal.nu_relative[k]) + "," + std::to_string(r.rehearsal.quota[k]) + "\n";
  }
  write_text(dir / "rehearsal.csv", quota);

  const auto& d = r.discovery;
  json summary = {{"status", r.status},
                  {"components", d.components.size()},
                  {"delta", d.delta},
                  {"selected_cluster", d.selected},
                  {"clusters", d.clusters.cluster_count},
                  {"pseudo_labeled_images", r.pseudo_labeled_images},
                  {"rehearsal_images", r.rehearsal.selected.size()},
                  {"cluster_purity", format_double(r.cluster_purity)},
                  {"new_class_iou", format_double(r.new_class_iou)},
                  {"old_miou_initial", format_double(r.old_miou_initial)},
                  {"old_miou_extended", format_double(r.old_miou_extended)}};
  write_text(dir / "summary.json", summary.dump(2) + "\n");
}

void write_atomically(const std::filesystem::path& out, const json& run,
                      const std::function<void(const std::filesystem::path&)>& body) {
  namespace fs = std::filesystem;
  const fs::path target = fs::absolute(out).lexically_normal();
  fs::path tmp = target;
  tmp += ".partial";
  std::error_code ec;
  fs::remove_all(tmp, ec);
  fs::create_directories(tmp);
  try {
    body(tmp);
    write_text(tmp / "run.json", run.dump(2) + "\n");
    fs::remove_all(target, ec);
    fs::rename(tmp, target);
  } catch (...) {
    fs::remove_all(tmp, ec);
    throw;
  }
}

}  // namespace anomseg
