#include "anomseg/tensorio.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "json.hpp"

#include "anomseg/error.hpp"

namespace anomseg {
namespace {

constexpr std::array<char, 8> kMagic = {'A', 'N', 'O', 'M', 'T', 'E', 'N', '1'};
constexpr std::size_t kHeaderFixed = 8 + 1 + 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::size_t dtype_size(DType dtype) { return dtype == DType::kFloat32 ? 4 : 1; }

void check_dims(const std::vector<std::uint32_t>& dims) {
  if (dims.empty() || dims.size() > 4) throw DataError("tensor ndim must be in 1..4");
  for (auto d : dims) {
    if (d == 0) throw DataError("zero dimension");
  }
}

}  // namespace

std::size_t Tensor::element_count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

Tensor Tensor::float32(std::vector<std::uint32_t> dims, std::vector<float> values) {
  Tensor t;
  t.dtype = DType::kFloat32;
  t.dims = std::move(dims);
  t.f32 = std::move(values);
  return t;
}

Tensor Tensor::uint8(std::vector<std::uint32_t> dims, std::vector<std::uint8_t> values) {
  Tensor t;
  t.dtype = DType::kUInt8;
  t.dims = std::move(dims);
  t.u8 = std::move(values);
  return t;
}

std::vector<std::uint8_t> encode_tensor(const Tensor& tensor) {
  check_dims(tensor.dims);
  const std::size_t count = tensor.element_count();
  const std::size_t stored = tensor.dtype == DType::kFloat32 ? tensor.f32.size() : tensor.u8.size();
  if (stored != count) throw DataError("tensor payload does not match dims");

  std::vector<std::uint8_t> out;
  out.reserve(kHeaderFixed + 4 * tensor.dims.size() + count * dtype_size(tensor.dtype));
  out.insert(out.end(), kMagic.begin(), kMagic.end());
  out.push_back(static_cast<std::uint8_t>(tensor.dtype));
  out.push_back(static_cast<std::uint8_t>(tensor.dims.size()));
  for (auto d : tensor.dims) put_u32(out, d);
  if (tensor.dtype == DType::kFloat32) {
    for (float f : tensor.f32) put_u32(out, std::bit_cast<std::uint32_t>(f));
  } else {
    out.insert(out.end(), tensor.u8.begin(), tensor.u8.end());
  }
  return out;
}

Tensor decode_tensor(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kHeaderFixed) throw DataError("truncated header");
  if (std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) throw DataError("bad magic");
  const auto code = bytes[8];
  if (code != 1 && code != 2) throw DataError("unknown dtype " + std::to_string(code));
  Tensor t;
  t.dtype = static_cast<DType>(code);
  const std::size_t ndim = bytes[9];
  if (ndim < 1 || ndim > 4) throw DataError("tensor ndim must be in 1..4");
  if (bytes.size() < kHeaderFixed + 4 * ndim) throw DataError("truncated header");
  for (std::size_t i = 0; i < ndim; ++i) t.dims.push_back(get_u32(bytes.data() + kHeaderFixed + 4 * i));
  check_dims(t.dims);

  const std::size_t offset = kHeaderFixed + 4 * ndim;
  const std::size_t count = t.element_count();
  const std::size_t need = count * dtype_size(t.dtype);
  if (bytes.size() - offset < need) throw DataError("truncated payload");
  if (bytes.size() - offset > need) throw DataError("trailing bytes after payload");
  const std::uint8_t* p = bytes.data() + offset;
  if (t.dtype == DType::kFloat32) {
    t.f32.resize(count);
    for (std::size_t i = 0; i < count; ++i) t.f32[i] = std::bit_cast<float>(get_u32(p + 4 * i));
  } else {
    t.u8.assign(p, p + count);
  }
  return t;
}

void write_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  const auto bytes = encode_tensor(tensor);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open tensor: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_tensor(bytes);
  } catch (const Error& e) {
    throw DataError(std::string(e.what()) + ": " + path.string());
  }
}

Tensor to_tensor(const Grid<double>& grid) {
  std::vector<float> values(grid.data().begin(), grid.data().end());
  return Tensor::float32({static_cast<std::uint32_t>(grid.height()), static_cast<std::uint32_t>(grid.width()),
                          static_cast<std::uint32_t>(grid.channels())},
                         std::move(values));
}

Tensor to_tensor(const LabelMap& labels) {
  return Tensor::uint8({static_cast<std::uint32_t>(labels.height()), static_cast<std::uint32_t>(labels.width())},
                       labels.data());
}

Grid<double> grid_from_tensor(const Tensor& tensor) {
  if (tensor.dtype != DType::kFloat32) throw DataError("expected float32 tensor");
  if (tensor.dims.size() < 2 || tensor.dims.size() > 3) throw DataError("expected H x W [x C] tensor");
  const int c = tensor.dims.size() == 3 ? static_cast<int>(tensor.dims[2]) : 1;
  Grid<double> g(static_cast<int>(tensor.dims[0]), static_cast<int>(tensor.dims[1]), c);
  std::copy(tensor.f32.begin(), tensor.f32.end(), g.data().begin());
  return g;
}

LabelMap labels_from_tensor(const Tensor& tensor) {
  if (tensor.dtype != DType::kUInt8) throw DataError("expected uint8 label tensor");
  if (tensor.dims.size() != 2) throw DataError("expected H x W label tensor");
  LabelMap m(static_cast<int>(tensor.dims[0]), static_cast<int>(tensor.dims[1]));
  m.data() = tensor.u8;
  return m;
}

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kProxyAnom: return "proxy-anom";
    case Split::kTest: return "test";
    case Split::kNovel: return "novel";
  }
  return "train";
}

Split parse_split(const std::string& tag) {
  if (tag == "train") return Split::kTrain;
  if (tag == "proxy-anom") return Split::kProxyAnom;
  if (tag == "test") return Split::kTest;
  if (tag == "novel") return Split::kNovel;
  throw ConfigError("unknown split tag: " + tag);
}

std::filesystem::path DatasetManifest::resolve(const std::string& relative) const {
  std::filesystem::path p(relative);
  return p.is_absolute() ? p : base_dir / p;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest is not valid JSON: " + std::string(e.what()));
  }

  DatasetManifest m;
  m.base_dir = path.parent_path();
  try {
    m.class_names = j.value("class_names", std::vector<std::string>{});
    m.roi = j.value("roi", std::string("none"));
    for (const auto& r : j.at("records")) {
      ManifestRecord rec;
      rec.image = r.at("image").get<std::string>();
      rec.label = r.at("label").get<std::string>();
      rec.anomaly = r.value("anomaly", std::string());
      rec.split = parse_split(r.at("split").get<std::string>());
      rec.seed = r.at("seed").get<std::uint64_t>();
      m.records.push_back(std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest: " + std::string(e.what()));
  } catch (const Error& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }

  std::set<std::string> seen;
  auto check_file = [&](const std::string& rel) {
    const auto full = m.resolve(rel);
    if (!std::filesystem::exists(full)) throw DataError("manifest references missing file: " + full.string());
    read_tensor(full);
  };
  for (const auto& rec : m.records) {
    if (!seen.insert(rec.image).second) throw DataError("duplicate record: " + rec.image);
    check_file(rec.image);
    check_file(rec.label);
    if (!rec.anomaly.empty()) check_file(rec.anomaly);
  }
  if (m.roi != "none") check_file(m.roi);
  return m;
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  nlohmann::json j;
  j["class_names"] = manifest.class_names;
  j["roi"] = manifest.roi.empty() ? std::string("none") : manifest.roi;
  j["records"] = nlohmann::json::array();
  for (const auto& r : manifest.records) {
    nlohmann::json rec = {{"image", r.image}, {"label", r.label}, {"split", to_string(r.split)}, {"seed", r.seed}};
    if (!r.anomaly.empty()) rec["anomaly"] = r.anomaly;
    j["records"].push_back(std::move(rec));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest: " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace anomseg
