#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "anomseg/grid.hpp"

namespace anomseg {

// Binary tensor container:
//   "ANOMTEN1" | dtype u8 | ndim u8 | dims u32le[ndim] | row-major little-endian payload
enum class DType : std::uint8_t { kFloat32 = 1, kUInt8 = 2 };

struct Tensor {
  DType dtype = DType::kFloat32;
  std::vector<std::uint32_t> dims;
  std::vector<float> f32;          // used when dtype == kFloat32
  std::vector<std::uint8_t> u8;    // used when dtype == kUInt8

  std::size_t element_count() const;
  bool operator==(const Tensor&) const = default;

  static Tensor float32(std::vector<std::uint32_t> dims, std::vector<float> values);
  static Tensor uint8(std::vector<std::uint32_t> dims, std::vector<std::uint8_t> values);
};

std::vector<std::uint8_t> encode_tensor(const Tensor& tensor);
Tensor decode_tensor(const std::vector<std::uint8_t>& bytes);

void write_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_tensor(const std::filesystem::path& path);

// Grid <-> tensor. Float grids are stored as float32 with dims (H, W, C); label
// grids as uint8 with dims (H, W).
Tensor to_tensor(const Grid<double>& grid);
Tensor to_tensor(const LabelMap& labels);
Grid<double> grid_from_tensor(const Tensor& tensor);
LabelMap labels_from_tensor(const Tensor& tensor);

enum class Split { kTrain, kProxyAnom, kTest, kNovel };

std::string to_string(Split split);
Split parse_split(const std::string& tag);

struct ManifestRecord {
  std::string image;
  std::string label;
  std::string anomaly;  // optional anomaly annotation path; empty when absent
  Split split = Split::kTrain;
  std::uint64_t seed = 0;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::vector<std::string> class_names;
  std::string roi;  // "none" or a mask path

  // Paths in records are relative to this directory unless absolute.
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& relative) const;
};

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

}  // namespace anomseg
