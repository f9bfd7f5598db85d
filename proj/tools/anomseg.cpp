#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "anomseg/dataset.hpp"
#include "anomseg/error.hpp"
#include "anomseg/experiments.hpp"
#include "anomseg/parallel.hpp"
#include "anomseg/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace anomseg;

namespace {

// Everything any subcommand may read. Each subcommand registers the subset it uses.
struct Options {
  std::string config;
  std::uint64_t seed = 1;
  int jobs = 1;
  std::string out;

  std::string in;
  std::string split;
  std::string params;
  std::string method;
  std::string scores;
  std::string meta;
  std::string reference;
  std::string discovery;
  std::string rehearsal;
  std::string models;
  std::string methods;
  std::string taus;
  bool svg = false;

  int n_train = 200, n_proxy = 100, n_test = 100, n_novel = 60, offset = 0;
  int epochs = 0;
  double lr = 0.0, lambda = 0.0, tau = 0.0, eps = 0.0, perplexity = 0.0;
  int delta = 0;
  std::string statistic;

  std::string train_csv, test_csv, anomaly_csv;
  double alpha = 0.05;
  int bootstrap = 1000;
};

int env_jobs() {
  const char* v = std::getenv("ANOMSEG_JOBS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1 || n > 4096) throw ConfigError("ANOMSEG_JOBS must be a positive integer");
  return static_cast<int>(n);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
  if (!out) throw DataError("write failed for " + p.string());
}

void write_json(const fs::path& p, const json& j) { write_file(p, j.dump(2) + "\n"); }

json read_json(const fs::path& p, ErrorKind kind) {
  try {
    return json::parse(read_file(p));
  } catch (const json::exception& e) {
    throw Error(kind, p.string() + ": " + e.what());
  }
}

fs::path manifest_path(const std::string& in) {
  if (in.empty()) throw ConfigError("--in is required");
  const fs::path p(in);
  return fs::is_directory(p) ? p / "manifest.json" : p;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (cell.empty() || *end != '\0') throw ConfigError("not a number in list: '" + cell + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

std::vector<std::string> split_names(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty()) out.push_back(cell);
  }
  return out;
}

// Float32 storage is what every later command sees, so experiments that train
// and evaluate in one process use the stored precision too.
NetParams as_stored(const NetParams& p) {
  auto v = p.flatten();
  for (auto& x : v) x = static_cast<double>(static_cast<float>(x));
  NetParams q = p;
  q.unflatten(v);
  return q;
}

class Command {
 public:
  Command(CLI::App& app, std::string name, std::string help, Options& o)
      : name_(std::move(name)), sub_(app.add_subcommand(name_, std::move(help))), o_(o) {}

  CLI::App* sub() const { return sub_; }
  const std::string& name() const { return name_; }
  bool given(const std::string& flag) const {
    const auto* opt = sub_->get_option_no_throw(flag);
    return opt && opt->count() > 0;
  }

  Command& common(bool out = true) {
    sub_->add_option("--config", o_.config, "experiment config JSON");
    sub_->add_option("--seed", o_.seed, "master seed");
    sub_->add_option("--jobs", o_.jobs, "worker threads (default: ANOMSEG_JOBS or 1)");
    if (out) sub_->add_option("--out", o_.out, "output directory")->required();
    return *this;
  }

  // Config file, then flag overrides, then validation; nothing runs before this.
  ExperimentConfig config() const {
    ExperimentConfig c;
    if (!o_.config.empty()) c = ExperimentConfig::from_json(read_json(o_.config, ErrorKind::kConfig));
    if (given("--seed")) c.seed = o_.seed;
    c.jobs = given("--jobs") ? o_.jobs : env_jobs();
    auto set = [&](const char* flag, auto& field, auto value) {
      if (given(flag)) field = value;
    };
    if (name_ == "train" || name_ == "train-void") {
      set("--epochs", c.base_epochs, o_.epochs);
      set("--lr", c.base_lr, o_.lr);
    } else if (name_ == "train-entmax") {
      set("--epochs", c.entmax_epochs, o_.epochs);
      set("--lr", c.entmax_lr, o_.lr);
      set("--lambda", c.lambda, o_.lambda);
    } else if (name_ == "extend-train") {
      set("--epochs", c.extend_epochs, o_.epochs);
      set("--lr", c.extend_lr, o_.lr);
      set("--lambda", c.extend_lambda, o_.lambda);
    }
    if (name_ == "discover") {
      set("--tau", c.discover_tau, o_.tau);
    } else {
      set("--tau", c.segment_tau, o_.tau);
    }
    set("--eps", c.eps, o_.eps);
    set("--delta", c.delta, o_.delta);
    set("--perplexity", c.perplexity, o_.perplexity);
    if (given("--statistic")) c.statistic = parse_density_statistic(o_.statistic);
    c.validate();
    return c;
  }

  // The command line as given, plus the resolved config.
  json run_json(const ExperimentConfig* c) const {
    json flags = json::object();
    for (const auto* opt : sub_->get_options()) {
      if (opt->count() == 0 || opt->get_name() == "--help") continue;
      const auto& r = opt->results();
      flags[opt->get_name()] = r.size() == 1 ? json(r.front()) : json(r);
    }
    json j = {{"command", name_}, {"options", flags}};
    if (c) j["config"] = c->to_json();
    return j;
  }

 private:
  std::string name_;
  CLI::App* sub_;
  Options& o_;
};

DatasetManifest open_manifest(const Options& o) { return load_manifest(manifest_path(o.in)); }

std::vector<LabeledScene> split_scenes(const DatasetManifest& m, const std::string& tag, bool require_nonempty = true) {
  auto scenes = load_scenes(m, parse_split(tag));
  if (require_nonempty && scenes.empty()) throw DataError("no '" + tag + "' scenes in the manifest");
  return scenes;
}

NetParams open_params(const std::string& dir, const char* flag) {
  if (dir.empty()) throw ConfigError(std::string(flag) + " is required");
  return load_params(dir);
}

void check_classes(const NetParams& p, const ExperimentConfig& c, int extra = 0) {
  if (p.classes != c.world.num_classes() + extra) {
    throw DataError("model has " + std::to_string(p.classes) + " classes, expected " +
                    std::to_string(c.world.num_classes() + extra));
  }
}

MetaModel open_meta(const std::string& path) {
  if (path.empty()) throw ConfigError("--meta is required");
  fs::path p(path);
  if (fs::is_directory(p)) p /= "meta.json";
  return meta_model_from_json(read_json(p, ErrorKind::kData));
}

std::vector<std::string> class_names(const DatasetManifest& m, const ExperimentConfig& c) {
  return m.class_names.empty() ? c.world.class_names() : m.class_names;
}

json scores_json(const ObjectEvalResult& r) {
  return {{"tp", r.tp}, {"fp", r.fp}, {"fn", r.fn}, {"f1", format_double(r.f1)}, {"delta", format_double(r.delta)}};
}

// ---- commands ---------------------------------------------------------------

void cmd_synth_gen(const Command& cmd, const Options& o) {
  const auto c = cmd.config();
  if (o.n_train < 0 || o.n_proxy < 0 || o.n_test < 0 || o.n_novel < 0 || o.offset < 0) {
    throw ConfigError("scene counts and offset must be nonnegative");
  }
  std::vector<LabeledScene> scenes;
  auto add = [&](Split s, int n) {
    for (auto& sc : generate_range(c.world, c.seed, s, o.offset, n, c.jobs)) scenes.push_back(std::move(sc));
  };
  add(Split::kTrain, o.n_train);
  add(Split::kProxyAnom, o.n_proxy);
  add(Split::kTest, o.n_test);
  add(Split::kNovel, o.n_novel);
  write_atomically(o.out, cmd.run_json(&c), [&](const fs::path& dir) { write_scenes(dir, c.world.class_names(), scenes); });
}

void cmd_train(const Command& cmd, const Options& o) {
  const auto c = cmd.config();
  const auto m = open_manifest(o);
  const auto train = split_scenes(m, "train");
  const auto params = train_baseline(c, train);
  write_atomically(o.out, cmd.run_json(&c), [&](const fs::path& dir) { save_params(dir, params); });
}

void cmd_train_entmax(const Command& cmd, const Options& o) {
  const auto c = cmd.config();
  const auto base = open_params(o.params, "--params");
  check_classes(base, c);
  const auto m = open_manifest(o);
  const auto train = split_scenes(m, "train");
  const auto proxy = split_scenes(m, "proxy-anom");
  const auto params = train_entmax(c, base, train, proxy);
  write_atomically(o.out, cmd.run_json(&c), [&](const fs::path& dir) { save_params(dir, params); });
}

void cmd_train_void(const Command& cmd, const Options& o) {
  const auto c = cmd.config();
  const auto m = open_manifest(o);
  const auto params = train_void(c, split_scenes(m, "train"), split_scenes(m, "proxy-anom"));
  write_atomically(o.out, cmd.run_json(&c), [&](const fs::path& dir) { save_params(dir, params); });
}

void cmd_score(const Command& cmd, const Options& o) {
  const auto c = cmd.config();
  const auto& known = benchmark_methods();
  if (std::find(known.begin(), known.end(), o.method) == known.end()) {
    throw ConfigError("unknown scoring method '" + o.method + "'");
  }
  const auto params = open_params(o.params, "--params");
  const auto m = open_manifest(o);
  const auto scenes = split_scenes(m, o.split);
  ModelBundle bundle;
  bundle.baseline = params;
  if (o.method == "void") {
    check_classes(params, c, 1);
    bundle.void_model = params;
  } else {
    check_classes(params, c);
    if (o.method == "entmax") bundle.entmax = params;
    if (o.method == "mahalanobis" || o.method == "density") fit_feature_models(bundle, split_scenes(m, "train"), c.jobs);
  }
  const auto maps = score_scenes(o.method, bundle, c, scenes);
  write_atomically(o.out, cmd.run_json(&c), [&](const fs::path& dir) {
    write_score_maps(dir / "maps", maps);
    write_json(dir / "scores.json", {{"method", o.method}, {"split", o.split}, {"count", maps.size()}});
  });
}

void cmd_eval_pixel(const Command& cmd, const Options& o) {
  const auto c = cmd.config();
  if (o.scores.empty()) throw ConfigError("--scores is required");
  fs::path sdir(o.scores);
  if (fs::is_directory(sdir / "maps")) sdir /= "maps";
  const auto maps = read_score_maps(sdir);
  const auto scenes = split_scenes(open_manifest(o), o.split);
  if (maps.size() != scenes.size()) {
    throw DataError(std::to_string(maps.size()) + " score maps for " + std::to_string(scenes.size()) + " scenes");
  }
  std::vector<LabelMap> gt;
  for (const auto& s : scenes) gt.push_back(s.anomaly_mask);
  const auto set = build_evalset(maps, gt);
  const auto curves = roc_pr_curves(set);
  const double prevalence = static_cast<double>(set.positives()) / static_cast<double>(set.labels.size());
  write_atomically(o.out, cmd.run_json(&c), [&](const fs::path& dir) {
    write_curve_csvs(curves, dir / "curve_roc.csv", dir / "curve_pr.csv");
    write_json(dir / "summary.json", {{"auprc", curves.auprc}, {"auroc", curves.auroc}, {"fpr95", curves.fpr95}});
    if (o.svg) write_file(dir / "curves.svg", curves_svg(curves, prevalence, "pixel-level"));
  });
}

double old_class_miou(const NetParams& p, const std::vector<LabeledScene>& scenes, int old_classes, int jobs) {
  std::vector<LabelMap> pred(scenes.size()), gt(scenes.size());
  parallel_for(static_cast<int>(scenes.size()), jobs,
               [&](int i) { pred[i] = predict_mask(forward(p, scenes[i].image).logits); });
  for (std::size_t i = 0; i < scenes.size(); ++i) gt[i] = scenes[i].mask;
  return mean_iou(class_scores(pred, gt, std::max(p.classes, old_classes)), 0, old_classes);
}

void cmd_eval_segment(const Command& cmd, const Options& o) {
  const auto c = cmd.config();
  const auto taus = cmd.given("--tau") ? std::vector<double>{o.tau} : parse_list(o.taus);
  for (double t : taus) {
    if (!(t >= 0 && t <= 1)) throw ConfigError("tau must lie in [0,1]");
  }
  const auto params = open_params(o.params, "--params");
  std::optional<MetaModel> meta;
  if (!o.meta.empty()) meta = open_meta(o.meta);
  const auto scenes = split_scenes(open_manifest(o), o.split);
  const int s = c.world.num_classes();
  double delta = 0.0;
  if (!o.reference.empty()) {
    const auto ref = load_params(o.reference);
    delta = old_class_miou(ref, scenes, s, c.jobs) - old_class_miou(params, scenes, s, c.jobs);
  }
  const auto scored = score_for_segments(params, scenes, c.jobs);
  const auto images = object_eval_images(scored, scenes);
  std::string csv = "tau,meta,tp,fp,fn,f1,delta\n";
  auto row = [&](double tau, bool with_meta, const ObjectEvalResult& r) {
    csv += format_double(tau) + "," + (with_meta ? "1" : "0") + "," + std::to_string(r.tp) + "," +
           std::to_string(r.fp) + "," + std::to_string(r.fn) + "," + format_double(r.f1) + "," +
           format_double(r.delta) + "\n";
  };
  for (double tau : taus) {
    row(tau, false, object_level_eval(images, tau, nullptr, delta));
    if (meta) row(tau, true, object_level_eval(images, tau, &*meta, delta));
  }
  write_atomically(o.out, cmd.run_json(&c), [&](const fs::path& dir) { write_file(dir / "segments.csv", csv); });
}

void cmd_meta_train(const Command& cmd, const Options& o) {
  const auto c = cmd.config();
  const auto params = open_params(o.params, "--params");
  const auto scenes = split_scenes(open_manifest(o), o.split);
  const auto scored = score_for_segments(params, scenes, c.jobs);
  int count = 0;
  const auto model = fit_meta_model(object_eval_images(scored, scenes), c.segment_tau, &count);
  write_atomically(o.out, cmd.run_json(&c), [&](const fs::path& dir) {
    write_json(dir / "meta.json", meta_model_to_json(model));
    write_json(dir / "summary.json", {{"segments", count}, {"tau", format_double(c.segment_tau)}});
  });
}

void cmd_meta_apply(const Command& cmd, const Options& o) {
  const auto c = cmd.config();
  const auto params = open_params(o.params, "--params");
  const auto model = open_meta(o.meta);
  const auto scenes = split_scenes(open_manifest(o), o.split);
  const auto scored = score_for_segments(params, scenes, c.jobs);
  const auto images = object_eval_images(scored, scenes);
  std::string csv = "image,segment,size,probability,kept,true_iou\n";
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto segs = anomaly_segments(images[i], c.segment_tau, true);
    for (std::size_t k = 0; k < segs.size(); ++k) {
      const bool kept = !meta_apply(model, std::span<const Segment>(&segs[k], 1)).empty();
      csv += std::to_string(i) + "," + std::to_string(k) + "," + std::to_string(segs[k].size()) + "," +
             format_double(model.probability(segs[k].metrics)) + "," + (kept ? "1" : "0") + "," +
             format_double(segs[k].true_iou) + "\n";
    }
  }
  const auto plain = object_level_eval(images, c.segment_tau, nullptr);
  const auto filtered = object_level_eval(images, c.segment_tau, &model);
  write_atomically(o.out, cmd.run_json(&c), [&](const fs::path& dir) {
    write_file(dir / "segments.csv", csv);
    write_json(dir / "summary.json", {{"without_meta", scores_json(plain)}, {"with_meta", scores_json(filtered)}});
  });
}

void cmd_discover(const Command& cmd, const Options& o) {
  const auto c = cmd.config();
  const auto params = open_params(o.params, "--params");
  check_classes(params, c);
  const auto model = open_meta(o.meta);
  const std::string split = cmd.given("--split") ? o.split : "novel";
  const auto scenes = split_scenes(open_manifest(o), split, false);
  std::vector<Image> images;
  for (const auto& s : scenes) images.push_back(s.image);
  const auto d = discover(c, params, model, images);
  const auto pseudo = build_pseudo_labels(d, params.classes);
  write_atomically(o.out, cmd.run_json(&c), [&](const fs::path& dir) {
    write_discovery(dir, d);
    write_label_maps(dir / "predicted", d.predicted);
    write_label_maps(dir / "pseudo", pseudo.labels);
    write_json(dir / "summary.json", {{"status", d.status},
                                      {"split", split},
                                      {"old_classes", params.classes},
                                      {"components", d.components.size()},
                                      {"clusters", d.clusters.cluster_count},
                                      {"selected_cluster", d.selected},
                                      {"delta", d.delta},
                                      {"pseudo_image_ids", pseudo.image_ids}});
  });
  if (d.selected < 0) std::cerr << "discover: no cluster (" << d.status << ")\n";
}

struct DiscoveryFiles {
  json summary;
  std::vector<int> image_ids;
  std::vector<LabelMap> predicted, pseudo;
};

DiscoveryFiles open_discovery(const std::string& dir) {
  if (dir.empty()) throw ConfigError("--discovery is required");
  DiscoveryFiles f;
  f.summary = read_json(fs::path(dir) / "summary.json", ErrorKind::kData);
  try {
    f.image_ids = f.summary.at("pseudo_image_ids").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw DataError("malformed discovery summary: " + std::string(e.what()));
  }
  if (f.image_ids.empty()) throw DataError("discovery selected no cluster; nothing to pseudo-label");
  f.predicted = read_label_maps(fs::path(dir) / "predicted");
  f.pseudo = read_label_maps(fs::path(dir) / "pseudo");
  if (f.pseudo.size() != f.image_ids.size()) throw DataError("pseudo label count differs from the summary");
  for (int id : f.image_ids) {
    if (id < 0 || id >= static_cast<int>(f.predicted.size())) throw DataError("pseudo image id out of range");
  }
  return f;
}

void cmd_pseudo_label(const Command& cmd, const Options& o) {
  const auto c = cmd.config();
  const auto f = open_discovery(o.discovery);
  const auto m = open_manifest(o);
  const auto train = split_scenes(m, "train");
  const int s = c.world.num_classes();
  std::vector<PseudoLabeled> input;
  for (std::size_t i = 0; i < f.pseudo.size(); ++i) input.push_back({&f.predicted[f.image_ids[i]], &f.pseudo[i]});
  std::vector<LabelMap> masks;
  for (const auto& sc : train) masks.push_back(sc.mask);
  const auto plan = rehearsal_quota(input, s, masks, derive_seed(c.seed, 0x4e4e));
  const auto names = class_names(m, c);
  std::string csv = "class,nu_tot,nu_rel,quota\n";
  for (int k = 0; k < s; ++k) {
    csv += (k < static_cast<int>(names.size()) ? names[k] : std::to_string(k)) + "," +
           std::to_string(plan.nu_total[k]) + "," + format_double(plan.nu_relative[k]) + "," +
           std::to_string(plan.quota[k]) + "\n";
  }
  write_atomically(o.out, cmd.run_json(&c), [&](const fs::path& dir) {
    write_file(dir / "quota.csv", csv);
    write_json(dir / "rehearsal.json", json{{"split", "train"}, {"selected", plan.selected}});
  });
}

void cmd_extend_train(const Command& cmd, const Options& o) {
  const auto c = cmd.config();
  const auto initial = open_params(o.params, "--params");
  check_classes(initial, c);
  const auto f = open_discovery(o.discovery);
  if (o.rehearsal.empty()) throw ConfigError("--rehearsal is required");
  const auto plan = read_json(fs::path(o.rehearsal) / "rehearsal.json", ErrorKind::kData);
  std::vector<int> selected;
  try {
    selected = plan.at("selected").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw DataError("malformed rehearsal plan: " + std::string(e.what()));
  }
  const auto m = open_manifest(o);
  const auto novel = split_scenes(m, f.summary.value("split", std::string("novel")));
  const auto train = split_scenes(m, "train");
  std::vector<const Image*> imgs;
  std::vector<const LabelMap*> labels;
  for (std::size_t i = 0; i < f.pseudo.size(); ++i) {
    if (f.image_ids[i] >= static_cast<int>(novel.size())) throw DataError("pseudo image id beyond the split");
    imgs.push_back(&novel[f.image_ids[i]].image);
    labels.push_back(&f.pseudo[i]);
  }
  for (int idx : selected) {
    if (idx < 0 || idx >= static_cast<int>(train.size())) throw DataError("rehearsal index out of range");
    imgs.push_back(&train[idx].image);
    labels.push_back(&train[idx].mask);
  }
  const auto extended = extend_model(c, initial, imgs, labels);
  write_atomically(o.out, cmd.run_json(&c), [&](const fs::path& dir) { save_params(dir, extended); });
}

struct TrainedModels {
  NetParams baseline, entmax;
};

TrainedModels train_or_load(const ExperimentConfig& c, const SceneSets& scenes, const std::string& models) {
  TrainedModels t;
  if (!models.empty()) {
    t.baseline = load_params(fs::path(models) / "models" / "baseline");
    t.entmax = load_params(fs::path(models) / "models" / "entmax");
    check_classes(t.baseline, c);
    check_classes(t.entmax, c);
    return t;
  }
  t.baseline = as_stored(train_baseline(c, scenes.train));
  t.entmax = as_stored(train_entmax(c, t.baseline, scenes.train, scenes.proxy));
  return t;
}

void cmd_benchmark(const Command& cmd, const Options& o) {
  const auto c = cmd.config();
  auto methods = o.methods.empty() ? benchmark_methods() : split_names(o.methods);
  const auto& known = benchmark_methods();
  for (const auto& m : methods) {
    if (std::find(known.begin(), known.end(), m) == known.end()) throw ConfigError("unknown scoring method '" + m + "'");
  }
  const auto scenes = make_scenes(c);
  const auto t = train_or_load(c, scenes, o.models);
  ModelBundle bundle;
  bundle.baseline = t.baseline;
  bundle.entmax = t.entmax;
  const bool wants_void = std::find(methods.begin(), methods.end(), "void") != methods.end();
  if (wants_void) bundle.void_model = as_stored(train_void(c, scenes.train, scenes.proxy));
  fit_feature_models(bundle, scenes.train, c.jobs);

  const auto rows = run_benchmark(c, bundle, scenes.test, methods);
  const json entropy = {
      {"anomaly_pixels",
       {{"baseline", format_double(mean_normalized_entropy(t.baseline, scenes.test, c.jobs, true))},
        {"entmax", format_double(mean_normalized_entropy(t.entmax, scenes.test, c.jobs, true))}}},
      {"normal_pixels",
       {{"baseline", format_double(mean_normalized_entropy(t.baseline, scenes.test, c.jobs, false))},
        {"entmax", format_double(mean_normalized_entropy(t.entmax, scenes.test, c.jobs, false))}}}};
  const auto meta = run_meta(c, t.entmax, scenes.meta, scenes.test);

  write_atomically(o.out, cmd.run_json(&c), [&](const fs::path& dir) {
    write_benchmark(dir, rows);
    write_json(dir / "entropy.json", entropy);
    write_json(dir / "meta.json", meta_report_json(meta));
    save_params(dir / "models" / "baseline", t.baseline);
    save_params(dir / "models" / "entmax", t.entmax);
    if (bundle.void_model) save_params(dir / "models" / "void", *bundle.void_model);
  });
}

void cmd_report(const Command& cmd, const Options& o) {
  const auto c = cmd.config();
  const auto scenes = make_scenes(c);
  const auto t = train_or_load(c, scenes, o.models);
  const auto meta = run_meta(c, t.entmax, scenes.meta, scenes.test);
  const auto r = run_pipeline_c(c, t.entmax, meta.model, scenes);
  write_atomically(o.out, cmd.run_json(&c), [&](const fs::path& dir) {
    write_pipeline_c(dir, r);
    write_json(dir / "meta.json", meta_report_json(meta));
    if (r.extended_params) save_params(dir / "model", as_stored(*r.extended_params));
  });
  if (r.discovery.selected < 0) std::cerr << "report: no cluster (" << r.status << ")\n";
}

void cmd_infostat(const Command& cmd, const Options& o) {
  if (o.train_csv.empty()) throw ConfigError("--train is required");
  if (!(o.alpha > 0 && o.alpha < 1)) throw ConfigError("--alpha must lie in (0,1)");
  if (o.bootstrap < 1) throw ConfigError("--bootstrap must be >= 1");
  const auto train = read_csv_matrix(o.train_csv);
  const auto test = o.test_csv.empty() ? train : read_csv_matrix(o.test_csv);
  if (test.cols() != train.cols()) throw DataError("test rows differ in width from training rows");
  if (train.rows() < 2) throw DataError("need at least two training rows");
  const auto model = fit_gaussian(train);
  std::optional<GaussianModel> anomaly;
  if (!o.anomaly_csv.empty()) {
    const auto a = read_csv_matrix(o.anomaly_csv);
    if (a.cols() != train.cols()) throw DataError("anomaly rows differ in width from training rows");
    anomaly = fit_gaussian(a);
  }
  std::vector<double> train_info(train.rows());
  for (Eigen::Index i = 0; i < train.rows(); ++i) train_info[i] = gaussian_information(model, Eigen::VectorXd(train.row(i).transpose()));
  std::string csv = "row,information,novelty_exceedance,novel,outlier_exceedance,outlier";
  csv += anomaly ? ",relative_information\n" : "\n";
  for (Eigen::Index i = 0; i < test.rows(); ++i) {
    const Eigen::VectorXd z = test.row(i).transpose();
    const double info = gaussian_information(model, z);
    const auto nov = novelty_test(train_info, info, o.alpha);
    const auto out = outlier_test(train_info, info, o.alpha, o.bootstrap, derive_seed(o.seed, static_cast<std::uint64_t>(i)));
    csv += std::to_string(i) + "," + format_double(info) + "," + format_double(nov.exceedance) + "," +
           (nov.novel ? "1" : "0") + "," + format_double(out.exceedance) + "," + (out.outlier ? "1" : "0");
    if (anomaly) csv += "," + format_double(relative_information(model, *anomaly, z));
    csv += "\n";
  }
  json run = cmd.run_json(nullptr);
  write_atomically(o.out, run, [&](const fs::path& dir) {
    write_file(dir / "information.csv", csv);
    write_json(dir / "model.json", {{"dim", model.dim()}, {"rows", train.rows()}, {"ridged", model.ridged()},
                                    {"log_det", format_double(model.log_det())}});
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"anomseg: anomaly segmentation experiments on synthetic scenes"};
  app.require_subcommand(1);
  Options o;
  std::vector<std::pair<Command, std::function<void(const Command&, const Options&)>>> commands;
  auto add = [&](const std::string& name, const std::string& help, auto fn) -> Command& {
    commands.emplace_back(Command(app, name, help, o), fn);
    return commands.back().first;
  };
  commands.reserve(16);

  {
    auto& c = add("synth-gen", "generate a synthetic dataset with a manifest", cmd_synth_gen).common();
    c.sub()->add_option("--n-train", o.n_train, "training scenes");
    c.sub()->add_option("--n-proxy", o.n_proxy, "proxy-anomaly scenes");
    c.sub()->add_option("--n-test", o.n_test, "test scenes");
    c.sub()->add_option("--n-novel", o.n_novel, "novel-class scenes");
    c.sub()->add_option("--offset", o.offset, "first scene index, for disjoint extra sets");
  }
  auto data = [&](Command& c, bool split) {
    c.sub()->add_option("--in", o.in, "dataset directory or manifest")->required();
    if (split) c.sub()->add_option("--split", o.split, "manifest split");
  };
  auto training = [&](Command& c, bool lambda) {
    c.sub()->add_option("--epochs", o.epochs, "training epochs");
    c.sub()->add_option("--lr", o.lr, "learning rate");
    if (lambda) c.sub()->add_option("--lambda", o.lambda, "loss mixing weight");
  };
  {
    auto& c = add("train", "train the baseline segmenter", cmd_train).common();
    data(c, false);
    training(c, false);
  }
  {
    auto& c = add("train-entmax", "fine-tune with entropy maximization on proxy objects", cmd_train_entmax).common();
    data(c, false);
    training(c, true);
    c.sub()->add_option("--params", o.params, "baseline model directory")->required();
  }
  {
    auto& c = add("train-void", "train a model with an extra void class", cmd_train_void).common();
    data(c, false);
    training(c, false);
  }
  o.split = "test";
  {
    auto& c = add("score", "write per-pixel anomaly score maps", cmd_score).common();
    data(c, true);
    c.sub()->add_option("--method", o.method, "msp|odin|mahalanobis|mcdropout|void|density|entropy|margin|entmax")
        ->required();
    c.sub()->add_option("--params", o.params, "model directory")->required();
  }
  {
    auto& c = add("eval-pixel", "pixel-level ROC / PR evaluation of score maps", cmd_eval_pixel).common();
    data(c, true);
    c.sub()->add_option("--scores", o.scores, "output directory of 'score'")->required();
    c.sub()->add_flag("--svg", o.svg, "also write curves.svg");
  }
  o.taus = "0.1,0.2,0.3,0.4,0.5";
  {
    auto& c = add("eval-segment", "segment-level FP / FN / F1 per threshold", cmd_eval_segment).common();
    data(c, true);
    c.sub()->add_option("--params", o.params, "model directory")->required();
    auto* tau = c.sub()->add_option("--tau", o.tau, "single threshold");
    c.sub()->add_option("--taus", o.taus, "comma-separated thresholds")->excludes(tau);
    c.sub()->add_option("--meta", o.meta, "meta model (adds rows with meta filtering)");
    c.sub()->add_option("--reference", o.reference, "reference model for the mean-IoU loss column");
  }
  {
    auto& c = add("meta-train", "fit the segment meta classifier", cmd_meta_train).common();
    data(c, true);
    c.sub()->add_option("--params", o.params, "model directory")->required();
    c.sub()->add_option("--tau", o.tau, "segment threshold");
  }
  {
    auto& c = add("meta-apply", "filter segments with a meta classifier", cmd_meta_apply).common();
    data(c, true);
    c.sub()->add_option("--params", o.params, "model directory")->required();
    c.sub()->add_option("--meta", o.meta, "meta.json or its directory")->required();
    c.sub()->add_option("--tau", o.tau, "segment threshold");
  }
  {
    auto& c = add("discover", "cluster anomaly segments into a candidate class", cmd_discover).common();
    data(c, true);
    c.sub()->add_option("--params", o.params, "model directory")->required();
    c.sub()->add_option("--meta", o.meta, "meta.json or its directory")->required();
    c.sub()->add_option("--tau", o.tau, "anomaly threshold");
    c.sub()->add_option("--eps", o.eps, "DBSCAN radius on the spacing-normalized embedding");
    c.sub()->add_option("--delta", o.delta, "DBSCAN min points (0 = automatic)");
    c.sub()->add_option("--perplexity", o.perplexity, "t-SNE perplexity");
    c.sub()->add_option("--statistic", o.statistic, "max|average cluster density");
  }
  {
    auto& c = add("pseudo-label", "rehearsal quotas for the pseudo-labeled set", cmd_pseudo_label).common();
    data(c, false);
    c.sub()->add_option("--discovery", o.discovery, "output directory of 'discover'")->required();
  }
  {
    auto& c = add("extend-train", "add the discovered class and train incrementally", cmd_extend_train).common();
    data(c, false);
    training(c, true);
    c.sub()->add_option("--params", o.params, "initial model directory")->required();
    c.sub()->add_option("--discovery", o.discovery, "output directory of 'discover'")->required();
    c.sub()->add_option("--rehearsal", o.rehearsal, "output directory of 'pseudo-label'")->required();
  }
  {
    auto& c = add("benchmark", "end-to-end anomaly scoring benchmark and meta classification", cmd_benchmark).common();
    c.sub()->add_option("--methods", o.methods, "comma-separated scoring methods (default: all)");
    c.sub()->add_option("--models", o.models, "reuse models from an earlier benchmark output");
  }
  {
    auto& c = add("report", "end-to-end discovery and incremental learning", cmd_report).common();
    c.sub()->add_option("--models", o.models, "reuse models from an earlier benchmark output");
  }
  {
    auto& c = add("infostat", "information-based novelty tests on CSV vectors", cmd_infostat);
    c.sub()->add_option("--train", o.train_csv, "training rows")->required();
    c.sub()->add_option("--test", o.test_csv, "rows to test (default: training rows)");
    c.sub()->add_option("--anomaly", o.anomaly_csv, "anomaly rows, adds relative information");
    c.sub()->add_option("--alpha", o.alpha, "test level");
    c.sub()->add_option("--bootstrap", o.bootstrap, "bootstrap rounds for the outlier test");
    c.sub()->add_option("--seed", o.seed, "bootstrap seed");
    c.sub()->add_option("--out", o.out, "output directory")->required();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    for (const auto& [cmd, fn] : commands) {
      if (cmd.sub()->parsed()) fn(cmd, o);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.kind()) {
      case ErrorKind::kConfig: return 2;
      case ErrorKind::kData: return 3;
      case ErrorKind::kNumeric: return 4;
    }
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
