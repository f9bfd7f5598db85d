#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "anomseg/scoring.hpp"
#include "anomseg/segments.hpp"
#include "anomseg/synthworld.hpp"
#include "anomseg/tensorio.hpp"

namespace anomseg {

// Scene directories: <dir>/manifest.json plus <split>/<n>_{image,label,anomaly}.tensor.
void write_scenes(const std::filesystem::path& dir, const std::vector<std::string>& class_names,
                  const std::vector<LabeledScene>& scenes);

// Scenes in manifest order, optionally restricted to one split. A record without
// an anomaly file gets an all-zero anomaly mask.
std::vector<LabeledScene> load_scenes(const DatasetManifest& manifest, std::optional<Split> split = std::nullopt);

// Score maps as float32 tensors <dir>/<n>.tensor, n in scene order.
void write_score_maps(const std::filesystem::path& dir, const std::vector<AnomalyMap>& maps);
std::vector<AnomalyMap> read_score_maps(const std::filesystem::path& dir);

void write_label_maps(const std::filesystem::path& dir, const std::vector<LabelMap>& maps);
std::vector<LabelMap> read_label_maps(const std::filesystem::path& dir);

// Exact round trip; the JSON writer emits shortest round-trip doubles.
nlohmann::json meta_model_to_json(const MetaModel& model);
MetaModel meta_model_from_json(const nlohmann::json& j);

}  // namespace anomseg
