#pragma once

#include <algorithm>
#include <chrono>
#include <vector>

#include "dbench/core/error.hpp"
#include "dbench/core/rng.hpp"
#include "dbench/datahub/dataset.hpp"
#include "dbench/datahub/distilled.hpp"

namespace dbench::synth {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// `count` distinct indices drawn uniformly from `pool`, returned sorted.
inline std::vector<int> sample_without_replacement(std::vector<int> pool, int count, Rng& rng) {
  for (int i = 0; i < count; ++i) {
    const auto j = i + std::ptrdiff_t(uniform_index(rng, pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

// Per-class source rows, each class drawing from its own (seed, class) stream.
inline std::vector<std::vector<int>> sample_rows_per_class(const datahub::ImageSet& train, int num_classes, int ipc,
                                                           std::uint64_t seed) {
  require(ipc >= 1, ErrorKind::config, "random_sample: ipc must be >= 1");
  const auto by_class = train.indices_by_class(num_classes);
  std::vector<std::vector<int>> out(num_classes);
  for (int c = 0; c < num_classes; ++c) {
    require(int(by_class[c].size()) >= ipc, ErrorKind::invariant,
            "random_sample: class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                " images, need " + std::to_string(ipc));
    Rng rng = make_rng(seed, {0x72616e64ULL, std::uint64_t(c)});
    out[c] = sample_without_replacement(by_class[c], ipc, rng);
  }
  return out;
}

inline datahub::DistilledDataset random_sample(const datahub::DatasetSpec& spec, const datahub::ImageSet& train,
                                               int ipc, std::uint64_t seed) {
  const auto t0 = Clock::now();
  const auto rows = sample_rows_per_class(train, spec.num_classes, ipc, seed);
  std::vector<int> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());

  datahub::DistilledDataset ds;
  ds.dataset = spec.name;
  ds.num_classes = spec.num_classes;
  ds.ipc = ipc;
  ds.images = train.batch(flat);
  ds.labels = train.batch_labels(flat);
  for (int r : flat) ds.sources.push_back({{"train_index", r}});
  ds.provenance.method = "random";
  ds.provenance.init = "-";
  ds.provenance.seed = seed;
  ds.provenance.config = {{"ipc", ipc}, {"seed", seed}};
  ds.provenance.wall_clock_seconds = seconds_since(t0);
  ds.validate();
  return ds;
}

}  // namespace dbench::synth
