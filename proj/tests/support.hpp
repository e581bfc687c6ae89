#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "dbench/core/rng.hpp"
#include "dbench/datahub/dataset.hpp"
#include "dbench/nn/models.hpp"
#include "dbench/teachers/teacher.hpp"

namespace dbench::fixture {

namespace fs = std::filesystem;

// Fresh, empty scratch directory for one test.
inline fs::path scratch(const std::string& name) {
  const fs::path p = fs::path(DBENCH_TEST_TMP) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

inline Tensor<float> random_pixels(Shape s, std::uint64_t seed) {
  Tensor<float> x(s);
  Rng rng = make_rng(seed, {7});
  for (auto& v : x.data) v = float(uniform01(rng));
  return x;
}

// Small BN network whose running statistics have moved away from (0, 1),
// so BN alignment has something to match.
inline nn::Model<float> toy_model(int num_classes = 2, int res = 8, std::uint64_t seed = 3) {
  nn::Model<float> m(nn::ModelSpec{"convnet-tiny", res, num_classes, 3}, {0.5, 0.5, 0.5}, {0.25, 0.25, 0.25}, seed);
  for (int k = 0; k < 20; ++k) {
    auto x = random_pixels(Shape{16, 3, res, res}, seed * 100 + k);
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] = 0.3f + 0.5f * x.data[i] * x.data[i];
    m.forward(x, nn::Mode::train);
  }
  return m;
}

inline teachers::TeacherHandle toy_teacher(int num_classes = 2, int res = 8, std::uint64_t seed = 3,
                                           const std::string& dataset = "toy") {
  return teachers::TeacherHandle(toy_model(num_classes, res, seed), dataset, 0.0, teachers::Recipe{});
}

// synth10 cut down to a few images per class.
inline datahub::LoadedDataset small_synth10(int train_per_class = 30, int test_per_class = 20) {
  static const auto full = datahub::load_dataset("synth10", "unused");
  auto d = full;
  d.train = d.train.subset_per_class(d.spec.num_classes, train_per_class);
  d.test = d.test.subset_per_class(d.spec.num_classes, test_per_class);
  return d;
}

inline teachers::Recipe quick_recipe(std::uint64_t seed) {
  teachers::Recipe r;
  r.epochs = 8;
  r.batch_size = 32;
  r.lr = 5e-3;
  r.seed = seed;
  return r;
}

// A few seconds of training on the small synth10 split (about 40% test
// accuracy with convnet-small).
inline teachers::TeacherHandle train_quick(std::uint64_t seed = 0, const std::string& arch = "convnet-small") {
  return teachers::train_teacher(nn::ModelSpec{arch, 32, 10, 3}, small_synth10(), quick_recipe(seed));
}

// Memoized train_quick.
inline teachers::TeacherHandle quick_teacher(std::uint64_t seed = 0, const std::string& arch = "convnet-small") {
  static std::map<std::pair<std::uint64_t, std::string>, teachers::TeacherHandle> cache;
  const auto key = std::make_pair(seed, arch);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, train_quick(seed, arch)).first;
  return it->second;
}

}  // namespace dbench::fixture
