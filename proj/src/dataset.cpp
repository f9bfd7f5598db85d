#include "anomseg/dataset.hpp"

#include <algorithm>
#include <cstdio>

#include "anomseg/error.hpp"

namespace anomseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string numbered(int n, const std::string& suffix) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05d", n);
  return buf + suffix;
}

// Files named <digits>.tensor, sorted numerically.
std::vector<fs::path> numbered_tensors(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<std::pair<long, fs::path>> found;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".tensor") continue;
    const auto stem = e.path().stem().string();
    if (stem.empty() || !std::all_of(stem.begin(), stem.end(), [](char c) { return c >= '0' && c <= '9'; })) continue;
    found.emplace_back(std::stol(stem), e.path());
  }
  std::sort(found.begin(), found.end());
  std::vector<fs::path> out;
  for (std::size_t i = 0; i < found.size(); ++i) {
    if (found[i].first != static_cast<long>(i)) throw DataError("gap in numbered tensors under " + dir.string());
    out.push_back(found[i].second);
  }
  return out;
}

}  // namespace

void write_scenes(const fs::path& dir, const std::vector<std::string>& class_names,
                  const std::vector<LabeledScene>& scenes) {
  DatasetManifest m;
  m.class_names = class_names;
  m.roi = "none";
  int counts[4] = {0, 0, 0, 0};
  for (const auto& s : scenes) {
    const auto tag = to_string(s.split);
    const int n = counts[static_cast<int>(s.split)]++;
    fs::create_directories(dir / tag);
    ManifestRecord r;
    r.image = tag + "/" + numbered(n, "_image.tensor");
    r.label = tag + "/" + numbered(n, "_label.tensor");
    r.anomaly = tag + "/" + numbered(n, "_anomaly.tensor");
    r.split = s.split;
    r.seed = s.seed;
    write_tensor(dir / r.image, to_tensor(s.image));
    write_tensor(dir / r.label, to_tensor(s.mask));
    write_tensor(dir / r.anomaly, to_tensor(s.anomaly_mask));
    m.records.push_back(std::move(r));
  }
  save_manifest(dir / "manifest.json", m);
}

std::vector<LabeledScene> load_scenes(const DatasetManifest& manifest, std::optional<Split> split) {
  std::vector<LabeledScene> out;
  for (const auto& r : manifest.records) {
    if (split && r.split != *split) continue;
    LabeledScene s;
    s.image = grid_from_tensor(read_tensor(manifest.resolve(r.image)));
    s.mask = labels_from_tensor(read_tensor(manifest.resolve(r.label)));
    if (s.image.channels() != 3) throw DataError("image must have 3 channels: " + r.image);
    if (!s.image.same_plane(s.mask)) throw DataError("label shape differs from image: " + r.label);
    if (r.anomaly.empty()) {
      s.anomaly_mask = LabelMap(s.image.height(), s.image.width());
    } else {
      s.anomaly_mask = labels_from_tensor(read_tensor(manifest.resolve(r.anomaly)));
      if (!s.image.same_plane(s.anomaly_mask)) throw DataError("anomaly shape differs from image: " + r.anomaly);
    }
    s.seed = r.seed;
    s.split = r.split;
    out.push_back(std::move(s));
  }
  return out;
}

void write_score_maps(const fs::path& dir, const std::vector<AnomalyMap>& maps) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < maps.size(); ++i) {
    write_tensor(dir / numbered(static_cast<int>(i), ".tensor"), to_tensor(maps[i].scores));
  }
}

std::vector<AnomalyMap> read_score_maps(const fs::path& dir) {
  std::vector<AnomalyMap> out;
  for (const auto& p : numbered_tensors(dir)) {
    AnomalyMap a;
    a.scores = grid_from_tensor(read_tensor(p));
    if (a.scores.channels() != 1) throw DataError("score map must have one channel: " + p.string());
    out.push_back(std::move(a));
  }
  return out;
}

void write_label_maps(const fs::path& dir, const std::vector<LabelMap>& maps) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < maps.size(); ++i) {
    write_tensor(dir / numbered(static_cast<int>(i), ".tensor"), to_tensor(maps[i]));
  }
}

std::vector<LabelMap> read_label_maps(const fs::path& dir) {
  std::vector<LabelMap> out;
  for (const auto& p : numbered_tensors(dir)) out.push_back(labels_from_tensor(read_tensor(p)));
  return out;
}

json meta_model_to_json(const MetaModel& m) {
  return {{"active", m.active}, {"mean", m.mean}, {"stddev", m.stddev}, {"weights", m.weights}, {"bias", m.bias}};
}

MetaModel meta_model_from_json(const json& j) {
  MetaModel m;
  try {
    m.active = j.at("active").get<std::vector<int>>();
    m.mean = j.at("mean").get<std::vector<double>>();
    m.stddev = j.at("stddev").get<std::vector<double>>();
    m.weights = j.at("weights").get<std::vector<double>>();
    m.bias = j.at("bias").get<double>();
  } catch (const json::exception& e) {
    throw DataError("malformed meta model: " + std::string(e.what()));
  }
  const auto n = m.active.size();
  if (m.mean.size() != n || m.stddev.size() != n || m.weights.size() != n) {
    throw DataError("meta model arrays differ in length");
  }
  for (int a : m.active) {
    if (a < 0 || a >= kSegmentMetricCount) throw DataError("meta model metric index out of range");
  }
  return m;
}

}  // namespace anomseg
