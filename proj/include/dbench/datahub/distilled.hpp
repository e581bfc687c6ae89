#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dbench/core/error.hpp"
#include "dbench/core/hash.hpp"
#include "dbench/core/tensor.hpp"
#include "dbench/datahub/dataset.hpp"
#include "json.hpp"

namespace dbench::datahub {

using nlohmann::json;

struct Provenance {
  std::string method;  // "random", "select", "recover", "imported", ...
  std::string init;    // init strategy for recovery; "-" otherwise
  std::vector<std::string> teacher_ids;
  double wall_clock_seconds = 0.0;
  std::uint64_t seed = 0;
  json config = json::object();  // synthesis config that produced the set

  bool operator==(const Provenance& o) const {
    return method == o.method && init == o.init && teacher_ids == o.teacher_ids &&
           wall_clock_seconds == o.wall_clock_seconds && seed == o.seed && config == o.config;
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Provenance, method, init, teacher_ids, wall_clock_seconds, seed,
                                                config)

// A distilled set. Images live in [0,1] pixel space; models normalize on
// input, so the stored values are exactly what every consumer sees.
struct DistilledDataset {
  std::string dataset;  // registry name
  int num_classes = 0;
  int ipc = 0;
  bool unbalanced = false;
  Tensor<float> images;
  std::vector<int> labels;
  Provenance provenance;
  std::vector<json> sources;  // optional per-image source metadata

  int size() const { return images.shape.n; }

  std::vector<int> class_counts() const {
    std::vector<int> counts(std::max(num_classes, 0), 0);
    for (int y : labels)
      if (y >= 0 && y < num_classes) ++counts[y];
    return counts;
  }

  void validate() const {
    require(num_classes >= 2, ErrorKind::invariant, "distilled set: num_classes must be >= 2");
    require(int(labels.size()) == images.shape.n, ErrorKind::invariant,
            "distilled set: " + std::to_string(labels.size()) + " labels for " + std::to_string(images.shape.n) +
                " images");
    require(images.data.size() == images.shape.size(), ErrorKind::invariant, "distilled set: payload size mismatch");
    for (std::size_t i = 0; i < labels.size(); ++i)
      require(labels[i] >= 0 && labels[i] < num_classes, ErrorKind::invariant,
              "distilled set: label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                  " outside [0, " + std::to_string(num_classes) + ")");
    require(provenance.wall_clock_seconds >= 0.0, ErrorKind::invariant, "distilled set: negative wall-clock");
    require(sources.empty() || sources.size() == labels.size(), ErrorKind::invariant,
            "distilled set: source metadata count mismatch");
    if (!unbalanced) {
      require(ipc >= 1 && images.shape.n == ipc * num_classes, ErrorKind::invariant,
              "distilled set: balanced set must hold ipc x num_classes images");
      const auto counts = class_counts();
      for (int c = 0; c < num_classes; ++c)
        require(counts[c] == ipc, ErrorKind::invariant,
                "distilled set: class " + std::to_string(c) + " has " + std::to_string(counts[c]) +
                    " images, expected " + std::to_string(ipc));
    }
  }
};

enum class Storage { per_image, container };

struct ManifestRecord {
  int index = 0;
  std::string file;         // per-image storage
  std::int64_t offset = -1; // container storage, in floats
  int label = 0;
  json source = json::object();
};

struct Manifest {
  static constexpr int kSchemaVersion = 1;
  int schema_version = kSchemaVersion;
  DatasetSpec dataset;
  int ipc = 0;
  int num_classes = 0;
  bool unbalanced = false;
  std::array<int, 3> shape{};  // c, h, w
  std::string storage = "pfm";
  std::string container_sha256;
  std::optional<Provenance> provenance;
  std::vector<int> class_counts;
  std::vector<ManifestRecord> records;
};

inline void to_json(json& j, const ManifestRecord& r) {
  j = json{{"index", r.index}, {"label", r.label}, {"source", r.source}};
  if (r.offset >= 0) j["offset"] = r.offset;
  else j["file"] = r.file;
}

inline void to_json(json& j, const Manifest& m) {
  j = json{{"schema_version", m.schema_version},
           {"dataset", m.dataset},
           {"ipc", m.ipc},
           {"num_classes", m.num_classes},
           {"unbalanced", m.unbalanced},
           {"shape", m.shape},
           {"storage", m.storage},
           {"class_counts", m.class_counts},
           {"records", m.records}};
  if (!m.container_sha256.empty()) j["container_sha256"] = m.container_sha256;
  if (m.provenance) j["provenance"] = *m.provenance;
}

namespace detail {

inline std::string read_token(std::istream& in) {
  std::string tok;
  in >> tok;
  return tok;
}

// PFM: "PF" (3 channels) or "Pf" (1 channel), width height, negative scale
// for little-endian, rows stored bottom to top, channels interleaved.
inline void write_pfm(const fs::path& path, std::span<const float> chw, int c, int h, int w) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(bool(out), ErrorKind::io, "cannot write " + path.string());
  out << (c == 3 ? "PF" : "Pf") << "\n" << w << " " << h << "\n-1.0\n";
  std::vector<float> row(std::size_t(w) * c);
  for (int i = h - 1; i >= 0; --i) {
    for (int j = 0; j < w; ++j)
      for (int k = 0; k < c; ++k) row[std::size_t(j) * c + k] = chw[(std::size_t(k) * h + i) * w + j];
    out.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size() * sizeof(float)));
  }
  require(bool(out), ErrorKind::io, "short write: " + path.string());
}

inline std::vector<float> read_pfm(const fs::path& path, int& c, int& h, int& w) {
  std::ifstream in(path, std::ios::binary);
  require(bool(in), ErrorKind::missing_input, "missing payload: " + path.string());
  const std::string magic = read_token(in);
  require(magic == "PF" || magic == "Pf", ErrorKind::integrity, "not a PFM file: " + path.string());
  c = magic == "PF" ? 3 : 1;
  in >> w >> h;
  double scale = 0;
  in >> scale;
  in.get();
  require(bool(in) && w > 0 && h > 0 && scale < 0, ErrorKind::integrity,
          "unsupported PFM header (big-endian or malformed): " + path.string());
  std::vector<float> raw(std::size_t(w) * h * c);
  in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size() * sizeof(float)));
  require(in.gcount() == std::streamsize(raw.size() * sizeof(float)), ErrorKind::shape,
          "truncated payload: " + path.string());
  std::vector<float> chw(raw.size());
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int k = 0; k < c; ++k)
        chw[(std::size_t(k) * h + (h - 1 - i)) * w + j] = raw[(std::size_t(i) * w + j) * c + k];
  return chw;
}

// Binary PPM/PGM with maxval 255; values map to v / 255.
inline std::vector<float> read_pnm(const fs::path& path, int& c, int& h, int& w) {
  std::ifstream in(path, std::ios::binary);
  require(bool(in), ErrorKind::missing_input, "missing payload: " + path.string());
  const std::string magic = read_token(in);
  require(magic == "P6" || magic == "P5", ErrorKind::integrity, "not a binary PPM/PGM: " + path.string());
  c = magic == "P6" ? 3 : 1;
  int maxval = 0;
  in >> w >> h >> maxval;
  in.get();
  require(bool(in) && maxval == 255, ErrorKind::integrity, "unsupported PNM header: " + path.string());
  std::vector<unsigned char> raw(std::size_t(w) * h * c);
  in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
  require(in.gcount() == std::streamsize(raw.size()), ErrorKind::shape, "truncated payload: " + path.string());
  std::vector<float> chw(raw.size());
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int k = 0; k < c; ++k)
        chw[(std::size_t(k) * h + i) * w + j] = float(raw[(std::size_t(i) * w + j) * c + k]) / 255.0f;
  return chw;
}

inline void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    require(bool(out), ErrorKind::io, "cannot write " + path.string());
    out << text;
    require(bool(out), ErrorKind::io, "short write: " + path.string());
  }
  fs::rename(tmp, path);
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), ErrorKind::io, "cannot create directory " + dir.string());
}

}  // namespace detail

inline Manifest export_distilled(const DistilledDataset& ds, const fs::path& dir,
                                 Storage storage = Storage::per_image) {
  ds.validate();
  const DatasetSpec& spec = dataset_spec(ds.dataset);
  require(ds.images.shape.c == spec.channels && ds.images.shape.h == spec.resolution &&
              ds.images.shape.w == spec.resolution,
          ErrorKind::shape, "distilled images " + ds.images.shape.str() + " do not match " + spec.name);
  require(ds.num_classes == spec.num_classes, ErrorKind::invariant,
          "distilled set has " + std::to_string(ds.num_classes) + " classes, " + spec.name + " has " +
              std::to_string(spec.num_classes));
  const int c = ds.images.shape.c, h = ds.images.shape.h, w = ds.images.shape.w;
  if (storage == Storage::per_image)
    require(c == 1 || c == 3, ErrorKind::config, "per-image storage supports 1 or 3 channels");

  detail::ensure_dir(dir);
  Manifest m;
  m.dataset = spec;
  m.ipc = ds.ipc;
  m.num_classes = ds.num_classes;
  m.unbalanced = ds.unbalanced;
  m.shape = {c, h, w};
  m.provenance = ds.provenance;
  m.class_counts = ds.class_counts();
  m.storage = storage == Storage::per_image ? "pfm" : "container";

  const auto ps = ds.images.shape.per_sample();
  if (storage == Storage::per_image) {
    detail::ensure_dir(dir / "images");
    for (int i = 0; i < ds.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "%06d.pfm", i);
      detail::write_pfm(dir / "images" / name, ds.images.sample(i), c, h, w);
      m.records.push_back({i, std::string("images/") + name, -1, ds.labels[i],
                           ds.sources.empty() ? json::object() : ds.sources[i]});
    }
  } else {
    const fs::path payload = dir / "images.f32";
    std::ofstream out(payload, std::ios::binary | std::ios::trunc);
    require(bool(out), ErrorKind::io, "cannot write " + payload.string());
    out.write(reinterpret_cast<const char*>(ds.images.ptr()), std::streamsize(ds.images.size() * sizeof(float)));
    require(bool(out), ErrorKind::io, "short write: " + payload.string());
    m.container_sha256 = sha256_hex(std::span<const float>(ds.images.data));
    for (int i = 0; i < ds.size(); ++i)
      m.records.push_back({i, "", std::int64_t(i) * std::int64_t(ps), ds.labels[i],
                           ds.sources.empty() ? json::object() : ds.sources[i]});
  }
  detail::write_text_atomic(dir / "manifest.json", json(m).dump(2));
  return m;
}

// Hook for decoding compressed lossless rasters (PNG) from external tools;
// installed by image_folder.hpp when OpenCV is available.
using RasterDecoder = std::vector<float> (*)(const fs::path&, int& c, int& h, int& w);
inline RasterDecoder& png_decoder() {
  static RasterDecoder d = nullptr;
  return d;
}

inline DistilledDataset import_distilled(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  require(fs::exists(mpath), ErrorKind::missing_input, "no manifest at " + mpath.string());
  json j;
  try {
    std::ifstream in(mpath);
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::integrity, "manifest does not parse: " + mpath.string() + ": " + e.what());
  }

  DistilledDataset ds;
  std::array<int, 3> shape{};
  std::string storage;
  try {
    require(j.at("schema_version").get<int>() == Manifest::kSchemaVersion, ErrorKind::integrity,
            "schema mismatch: manifest version " + j.at("schema_version").dump() + ", expected " +
                std::to_string(Manifest::kSchemaVersion));
    const json& dj = j.at("dataset");
    ds.dataset = dj.is_string() ? dj.get<std::string>() : dj.at("name").get<std::string>();
    shape = j.at("shape").get<std::array<int, 3>>();
    storage = j.value("storage", std::string("pfm"));
  } catch (const json::exception& e) {
    fail(ErrorKind::integrity, "schema mismatch in " + mpath.string() + ": " + e.what());
  }

  const DatasetSpec& spec = dataset_spec(ds.dataset);
  require(shape[0] == spec.channels && shape[1] == spec.resolution && shape[2] == spec.resolution,
          ErrorKind::shape,
          "manifest shape [" + std::to_string(shape[0]) + "," + std::to_string(shape[1]) + "," +
              std::to_string(shape[2]) + "] does not match " + spec.name);
  ds.num_classes = spec.num_classes;
  const auto& recs = j.at("records");
  const int n = int(recs.size());
  ds.images = Tensor<float>(Shape{n, shape[0], shape[1], shape[2]});
  const auto ps = ds.images.shape.per_sample();

  std::vector<float> container;
  if (storage == "container") {
    const fs::path payload = dir / "images.f32";
    require(fs::exists(payload), ErrorKind::missing_input, "missing payload: " + payload.string());
    const auto bytes = fs::file_size(payload);
    require(bytes == ps * n * sizeof(float), ErrorKind::shape,
            "payload size mismatch: " + payload.string() + " has " + std::to_string(bytes) + " bytes, expected " +
                std::to_string(ps * n * sizeof(float)));
    container.resize(ps * n);
    std::ifstream in(payload, std::ios::binary);
    in.read(reinterpret_cast<char*>(container.data()), std::streamsize(bytes));
    if (j.contains("container_sha256"))
      require(sha256_hex(std::span<const float>(container)) == j["container_sha256"].get<std::string>(),
              ErrorKind::integrity, "checksum mismatch: " + payload.string());
  }

  bool any_source = false;
  for (int i = 0; i < n; ++i) {
    const auto& r = recs[i];
    const int label = r.at("label").get<int>();
    require(label >= 0 && label < spec.num_classes, ErrorKind::invariant,
            "record " + std::to_string(i) + ": label " + std::to_string(label) + " out of range");
    ds.labels.push_back(label);
    json src = r.value("source", json::object());
    any_source = any_source || !src.empty();
    ds.sources.push_back(std::move(src));
    if (storage == "container") {
      const auto off = r.at("offset").get<std::int64_t>();
      require(off >= 0 && std::size_t(off) + ps <= container.size(), ErrorKind::shape,
              "record " + std::to_string(i) + ": offset outside payload");
      std::copy_n(container.begin() + off, ps, ds.images.ptr() + std::size_t(i) * ps);
      continue;
    }
    const fs::path file = dir / r.at("file").get<std::string>();
    require(fs::exists(file), ErrorKind::missing_input, "missing payload: " + file.string());
    int c = 0, h = 0, w = 0;
    std::vector<float> px;
    const auto ext = file.extension().string();
    if (ext == ".pfm") px = detail::read_pfm(file, c, h, w);
    else if (ext == ".ppm" || ext == ".pgm") px = detail::read_pnm(file, c, h, w);
    else if (ext == ".png" && png_decoder()) px = png_decoder()(file, c, h, w);
    else fail(ErrorKind::unsupported, "unsupported payload format: " + file.string());
    require(c == shape[0] && h == shape[1] && w == shape[2], ErrorKind::shape,
            "payload " + file.string() + " is " + std::to_string(c) + "x" + std::to_string(h) + "x" +
                std::to_string(w) + ", manifest says " + std::to_string(shape[0]) + "x" + std::to_string(shape[1]) +
                "x" + std::to_string(shape[2]));
    std::copy(px.begin(), px.end(), ds.images.ptr() + std::size_t(i) * ps);
  }
  if (!any_source) ds.sources.clear();

  const auto counts = ds.class_counts();
  const int lo = *std::min_element(counts.begin(), counts.end());
  const int hi = *std::max_element(counts.begin(), counts.end());
  ds.unbalanced = lo != hi;
  ds.ipc = hi;

  if (j.contains("provenance") && j["provenance"].is_object() && j["provenance"].contains("method")) {
    ds.provenance = j["provenance"].get<Provenance>();
  } else {
    // Externally produced set: no provenance block of our own.
    ds.provenance.method = "imported";
    ds.provenance.init = "-";
    ds.provenance.config["imported_from"] = fs::absolute(dir).lexically_normal().string();
    ds.provenance.config["class_counts"] = counts;
  }
  ds.validate();
  return ds;
}

}  // namespace dbench::datahub
