#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <iterator>
#include <string_view>
#include <vector>

#include "dbench/core/error.hpp"
#include "dbench/core/rng.hpp"
#include "dbench/core/tensor.hpp"
#include "json.hpp"

namespace dbench::datahub {

namespace fs = std::filesystem;

struct DatasetSpec {
  std::string name;
  int resolution = 32;
  int channels = 3;
  int num_classes = 10;
  int train_size = 0;
  int test_size = 0;
  // Per-channel normalization in [0,1] pixel units.
  std::vector<double> mean;
  std::vector<double> stdev;

  void validate() const {
    require(train_size > 0 && test_size > 0, ErrorKind::invariant, name + ": split sizes must be positive");
    require(num_classes >= 2, ErrorKind::invariant, name + ": need at least 2 classes");
    require(int(mean.size()) == channels && int(stdev.size()) == channels, ErrorKind::invariant,
            name + ": normalization constants do not match channel count");
  }
  bool operator==(const DatasetSpec&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DatasetSpec, name, resolution, channels, num_classes, train_size,
                                                test_size, mean, stdev)

inline const std::vector<DatasetSpec>& dataset_registry() {
  static const std::vector<double> kImageNetMean = {0.485, 0.456, 0.406};
  static const std::vector<double> kImageNetStd = {0.229, 0.224, 0.225};
  static const std::vector<DatasetSpec> reg = {
      {"cifar10", 32, 3, 10, 50000, 10000, {0.4914, 0.4822, 0.4465}, {0.2470, 0.2435, 0.2616}},
      {"cifar100", 32, 3, 100, 50000, 10000, {0.5071, 0.4865, 0.4409}, {0.2673, 0.2564, 0.2762}},
      {"tinyimagenet", 64, 3, 200, 100000, 10000, {0.4802, 0.4481, 0.3975}, {0.2302, 0.2265, 0.2262}},
      {"imagenette", 224, 3, 10, 9469, 3925, kImageNetMean, kImageNetStd},
      {"imagewoof", 224, 3, 10, 9025, 3929, kImageNetMean, kImageNetStd},
      {"imagenet1k", 224, 3, 1000, 1281167, 50000, kImageNetMean, kImageNetStd},
      // Procedurally generated stand-in used for desk-scale runs and tests.
      {"synth10", 32, 3, 10, 5000, 1000, {0.5, 0.5, 0.5}, {0.25, 0.25, 0.25}},
  };
  return reg;
}

inline const DatasetSpec& dataset_spec(std::string_view name) {
  for (const auto& d : dataset_registry())
    if (d.name == name) return d;
  fail(ErrorKind::config, "unknown dataset '" + std::string(name) +
                              "' (registry: cifar10, cifar100, tinyimagenet, imagenette, imagewoof, imagenet1k, "
                              "synth10)");
}

// 8-bit image split, NCHW. Conversion to float pixel space happens per batch.
struct ImageSet {
  Shape shape;  // n = number of images
  std::vector<std::uint8_t> pixels;
  std::vector<int> labels;

  int size() const { return shape.n; }

  Tensor<float> batch(std::span<const int> rows) const {
    Shape s = shape;
    s.n = int(rows.size());
    Tensor<float> out(s);
    const auto ps = shape.per_sample();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto* src = pixels.data() + std::size_t(rows[i]) * ps;
      float* dst = out.ptr() + i * ps;
      for (std::size_t j = 0; j < ps; ++j) dst[j] = float(src[j]) / 255.0f;
    }
    return out;
  }

  Tensor<float> range(int first, int count) const {
    std::vector<int> rows(count);
    for (int i = 0; i < count; ++i) rows[i] = first + i;
    return batch(rows);
  }

  std::vector<int> batch_labels(std::span<const int> rows) const {
    std::vector<int> out;
    out.reserve(rows.size());
    for (int r : rows) out.push_back(labels[r]);
    return out;
  }

  std::vector<std::vector<int>> indices_by_class(int num_classes) const {
    std::vector<std::vector<int>> out(num_classes);
    for (int i = 0; i < size(); ++i) out[labels[i]].push_back(i);
    return out;
  }

  // Keeps the first `per_class` images of every class (in index order).
  ImageSet subset_per_class(int num_classes, int per_class) const {
    std::vector<int> rows;
    std::vector<int> seen(num_classes, 0);
    for (int i = 0; i < size(); ++i)
      if (seen[labels[i]]++ < per_class) rows.push_back(i);
    return subset(rows);
  }

  ImageSet subset(std::span<const int> rows) const {
    ImageSet out;
    out.shape = shape;
    out.shape.n = int(rows.size());
    const auto ps = shape.per_sample();
    out.pixels.resize(out.shape.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::copy_n(pixels.begin() + std::size_t(rows[i]) * ps, ps, out.pixels.begin() + i * ps);
      out.labels.push_back(labels[rows[i]]);
    }
    return out;
  }
};

struct LoadedDataset {
  DatasetSpec spec;
  ImageSet train;
  ImageSet test;
};

namespace detail {

inline std::vector<char> read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  require(bool(in), ErrorKind::missing_input, "missing file: " + p.string());
  return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// CIFAR binary record: label byte(s) followed by 3072 bytes of planar RGB.
inline void append_cifar(const fs::path& file, int label_bytes, int label_offset, ImageSet& set) {
  const auto bytes = read_file(file);
  const std::size_t rec = label_bytes + 3072;
  require(!bytes.empty() && bytes.size() % rec == 0, ErrorKind::integrity,
          "corrupt CIFAR batch (size " + std::to_string(bytes.size()) + " not a multiple of " +
              std::to_string(rec) + "): " + file.string());
  const std::size_t n = bytes.size() / rec;
  for (std::size_t i = 0; i < n; ++i) {
    const char* r = bytes.data() + i * rec;
    set.labels.push_back(static_cast<unsigned char>(r[label_offset]));
    set.pixels.insert(set.pixels.end(), reinterpret_cast<const std::uint8_t*>(r + label_bytes),
                      reinterpret_cast<const std::uint8_t*>(r + rec));
  }
  set.shape.n += int(n);
}

inline fs::path first_existing(const fs::path& root, std::initializer_list<const char*> subdirs) {
  for (const char* s : subdirs) {
    const fs::path p = root / s;
    if (fs::exists(p)) return p;
  }
  return root;
}

inline LoadedDataset load_cifar(const DatasetSpec& spec, const fs::path& root) {
  LoadedDataset d{spec, {}, {}};
  d.train.shape = d.test.shape = Shape{0, 3, 32, 32};
  if (spec.name == "cifar10") {
    const fs::path dir = first_existing(root, {"cifar-10-batches-bin", "cifar10/cifar-10-batches-bin", "cifar10"});
    for (int b = 1; b <= 5; ++b) append_cifar(dir / ("data_batch_" + std::to_string(b) + ".bin"), 1, 0, d.train);
    append_cifar(dir / "test_batch.bin", 1, 0, d.test);
  } else {
    const fs::path dir = first_existing(root, {"cifar-100-binary", "cifar100/cifar-100-binary", "cifar100"});
    append_cifar(dir / "train.bin", 2, 1, d.train);
    append_cifar(dir / "test.bin", 2, 1, d.test);
  }
  return d;
}

// ---- procedural 10-class dataset -------------------------------------------

struct Canvas {
  int r;
  std::vector<double> px;  // 3 x r x r
  double& at(int c, int i, int j) { return px[(std::size_t(c) * r + i) * r + j]; }
};

// Coverage of shape `kind` at pixel (x, y) relative to the shape centre, in
// units of the shape radius. Returns true when the pixel belongs to the shape.
inline bool shape_contains(int kind, double x, double y) {
  const double ax = std::abs(x), ay = std::abs(y);
  switch (kind) {
    case 0: return x * x + y * y <= 1.0;                                      // disk
    case 1: { const double d = x * x + y * y; return d <= 1.0 && d >= 0.36; }  // ring
    case 2: return ax <= 0.85 && ay <= 0.85;                                  // square
    case 3: return ax <= 0.9 && ay <= 0.9 && (ax >= 0.55 || ay >= 0.55);      // hollow square
    case 4: return y <= 0.8 && y >= -0.9 && ax <= (0.8 - y) * 0.55;           // triangle
    case 5: return (ax <= 0.3 && ay <= 1.0) || (ay <= 0.3 && ax <= 1.0);      // plus
    case 6: return (std::abs(x - y) <= 0.35 || std::abs(x + y) <= 0.35) && ax <= 0.9 && ay <= 0.9;  // X
    case 7: return ax <= 1.0 && ay <= 1.0 && int(std::floor((y + 1.0) * 2.5)) % 2 == 0;  // bars
    case 8: return ax <= 1.0 && ay <= 1.0 && int(std::floor((x + 1.0) * 2.5)) % 2 == 0;  // columns
    case 9: return ax + ay <= 1.0;                                            // diamond
    default: return false;
  }
}

inline void draw_shape(Canvas& cv, int kind, double cx, double cy, double radius, const std::array<double, 3>& color,
                       double alpha) {
  for (int i = 0; i < cv.r; ++i)
    for (int j = 0; j < cv.r; ++j) {
      // 2x2 supersampling for soft edges.
      double cover = 0;
      for (int si = 0; si < 2; ++si)
        for (int sj = 0; sj < 2; ++sj) {
          const double x = (j + 0.25 + 0.5 * sj - cx) / radius;
          const double y = (i + 0.25 + 0.5 * si - cy) / radius;
          cover += shape_contains(kind, x, y) ? 0.25 : 0.0;
        }
      if (cover == 0) continue;
      for (int c = 0; c < 3; ++c) cv.at(c, i, j) += alpha * cover * (color[c] - cv.at(c, i, j));
    }
}

inline void render_synth_image(Rng& rng, int label, int r, std::uint8_t* out) {
  Canvas cv{r, std::vector<double>(std::size_t(3) * r * r)};
  std::array<double, 3> bg0, bg1;
  for (int c = 0; c < 3; ++c) {
    bg0[c] = uniform(rng, 0.1, 0.9);
    bg1[c] = std::clamp(bg0[c] + uniform(rng, -0.3, 0.3), 0.0, 1.0);
  }
  const double angle = uniform(rng, 0, 6.283185307179586);
  const double gx = std::cos(angle), gy = std::sin(angle);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < r; ++j) {
      const double t = 0.5 + 0.5 * ((j - r / 2.0) * gx + (i - r / 2.0) * gy) / (r / 2.0);
      for (int c = 0; c < 3; ++c) cv.at(c, i, j) = bg0[c] + (bg1[c] - bg0[c]) * std::clamp(t, 0.0, 1.0);
    }

  // Distractors: small shapes of arbitrary kinds.
  const int distractors = uniform_int(rng, 0, 2);
  for (int d = 0; d < distractors; ++d) {
    std::array<double, 3> col;
    for (auto& v : col) v = uniform01(rng);
    draw_shape(cv, uniform_int(rng, 0, 9), uniform(rng, 3, r - 3), uniform(rng, 3, r - 3), uniform(rng, 2.5, 4.5),
               col, uniform(rng, 0.4, 0.8));
  }

  // Class shape with guaranteed contrast against the local background.
  const double radius = uniform(rng, 0.2 * r, 0.34 * r);
  const double cx = uniform(rng, radius, r - radius), cy = uniform(rng, radius, r - radius);
  std::array<double, 3> col;
  const double bg_lum = (bg0[0] + bg0[1] + bg0[2] + bg1[0] + bg1[1] + bg1[2]) / 6.0;
  const double target = bg_lum > 0.5 ? uniform(rng, 0.0, 0.3) : uniform(rng, 0.7, 1.0);
  for (auto& v : col) v = std::clamp(target + uniform(rng, -0.25, 0.25), 0.0, 1.0);
  draw_shape(cv, label, cx, cy, radius, col, uniform(rng, 0.75, 1.0));

  for (std::size_t k = 0; k < cv.px.size(); ++k) {
    const double v = cv.px[k] + 0.06 * normal(rng);
    out[k] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  }
}

inline ImageSet render_synth_split(int n, int num_classes, int r, std::uint64_t split_key) {
  ImageSet set;
  set.shape = Shape{n, 3, r, r};
  set.pixels.resize(set.shape.size());
  set.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    const int label = i % num_classes;
    Rng rng = make_rng(0x73796e746831ULL, {split_key, std::uint64_t(i)});
    set.labels[i] = label;
    render_synth_image(rng, label, r, set.pixels.data() + std::size_t(i) * set.shape.per_sample());
  }
  return set;
}

}  // namespace detail

using FolderLoader = LoadedDataset (*)(const DatasetSpec&, const fs::path&);

// Folder-based sets (tinyimagenet, imagenette, imagewoof, imagenet1k) need an
// image codec; including image_folder.hpp installs the loader.
inline FolderLoader& folder_loader() {
  static FolderLoader loader = nullptr;
  return loader;
}

inline LoadedDataset load_dataset(std::string_view name, const fs::path& root) {
  const DatasetSpec& spec = dataset_spec(name);
  LoadedDataset d;
  if (spec.name == "cifar10" || spec.name == "cifar100") {
    d = detail::load_cifar(spec, root);
  } else if (spec.name == "synth10") {
    d = LoadedDataset{spec, detail::render_synth_split(spec.train_size, spec.num_classes, spec.resolution, 1),
                      detail::render_synth_split(spec.test_size, spec.num_classes, spec.resolution, 2)};
  } else {
    require(folder_loader() != nullptr, ErrorKind::unsupported,
            spec.name + ": image-folder datasets need a build with image codec support (OpenCV)");
    d = folder_loader()(spec, root);
  }
  require(d.train.size() == spec.train_size && d.test.size() == spec.test_size, ErrorKind::integrity,
          spec.name + " under " + root.string() + ": expected " + std::to_string(spec.train_size) + "/" +
              std::to_string(spec.test_size) + " train/test images, found " + std::to_string(d.train.size()) +
              "/" + std::to_string(d.test.size()));
  for (const auto* s : {&d.train, &d.test})
    for (int y : s->labels)
      require(y >= 0 && y < spec.num_classes, ErrorKind::integrity,
              spec.name + ": label " + std::to_string(y) + " out of range");
  return d;
}

}  // namespace dbench::datahub
