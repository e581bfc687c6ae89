#pragma once

// Patch mining: score random crops of real images by teacher cross-entropy,
// keep the lowest-loss ones and tile them into mosaics.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "dbench/core/error.hpp"
#include "dbench/core/imageops.hpp"
#include "dbench/core/rng.hpp"
#include "dbench/datahub/dataset.hpp"
#include "dbench/datahub/distilled.hpp"
#include "dbench/nn/functional.hpp"
#include "dbench/synth/random_sample.hpp"
#include "dbench/teachers/teacher.hpp"
#include "json.hpp"

namespace dbench::synth {

using nlohmann::json;

struct SelectConfig {
  int candidates_per_source = 5;
  int patches_per_image = 4;  // m, a perfect square
  int patch_edge = 0;         // 0: resolution / sqrt(m)
  int sources_per_class = 20;
  double scale_lo = 0.5;
  double scale_hi = 1.0;
  std::uint64_t seed = 0;

  int grid() const { return int(std::lround(std::sqrt(double(patches_per_image)))); }

  int edge_for(int resolution) const { return patch_edge > 0 ? patch_edge : resolution / grid(); }

  void validate() const {
    require(patches_per_image >= 1 && grid() * grid() == patches_per_image, ErrorKind::config,
            "select: patches_per_image must be a perfect square, got " + std::to_string(patches_per_image));
    require(candidates_per_source >= 1 && sources_per_class >= 1, ErrorKind::config,
            "select: candidates_per_source and sources_per_class must be >= 1");
    require(candidates_per_source * sources_per_class >= patches_per_image, ErrorKind::config,
            "select: candidate count must be >= patches_per_image");
    require(scale_lo > 0 && scale_lo <= scale_hi && scale_hi <= 1, ErrorKind::config,
            "select: need 0 < scale_lo <= scale_hi <= 1");
    require(patch_edge >= 0, ErrorKind::config, "select: patch_edge must be >= 0");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SelectConfig, candidates_per_source, patches_per_image, patch_edge,
                                                sources_per_class, scale_lo, scale_hi, seed)

struct Candidate {
  double loss = 0.0;
  int source = 0;  // train-split index of the source image
  int crop = 0;    // crop index within the source
};

inline bool candidate_less(const Candidate& a, const Candidate& b) {
  if (a.loss != b.loss) return a.loss < b.loss;
  if (a.source != b.source) return a.source < b.source;
  return a.crop < b.crop;
}

// Positions of the `keep` lowest-loss candidates, ascending by
// (loss, source, crop). Independent of the input order.
inline std::vector<int> rank_lowest(const std::vector<Candidate>& cands, int keep) {
  require(keep >= 0 && keep <= int(cands.size()), ErrorKind::invariant,
          "select: need " + std::to_string(keep) + " patches, only " + std::to_string(cands.size()) + " candidates");
  std::vector<int> idx(cands.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + keep, idx.end(),
                    [&](int a, int b) { return candidate_less(cands[a], cands[b]); });
  idx.resize(keep);
  return idx;
}

// Tiles m = g*g patches (each C x e x e) row-major into one C x ge x ge image.
inline void tile_mosaic(const std::vector<std::vector<float>>& patches, int c, int e, int g, std::span<float> dst) {
  const int edge = g * e;
  for (int p = 0; p < int(patches.size()); ++p) {
    const int r0 = (p / g) * e, c0 = (p % g) * e;
    for (int k = 0; k < c; ++k)
      for (int i = 0; i < e; ++i)
        std::copy_n(patches[p].data() + (std::size_t(k) * e + i) * e, e,
                    dst.data() + (std::size_t(k) * edge + r0 + i) * edge + c0);
  }
}

// Every scored candidate and its patch, per class (for inspection and tests).
struct SelectTrace {
  std::vector<std::vector<Candidate>> candidates;
  std::vector<std::vector<std::vector<float>>> patches;
  std::vector<std::vector<int>> kept;  // positions into candidates, in mosaic order
};

inline datahub::DistilledDataset select_patches(const teachers::TeacherHandle& teacher,
                                                const datahub::DatasetSpec& spec, const datahub::ImageSet& train,
                                                const SelectConfig& cfg, int ipc, SelectTrace* trace = nullptr) {
  const auto t0 = Clock::now();
  cfg.validate();
  require(ipc >= 1, ErrorKind::config, "select: ipc must be >= 1");
  const int res = spec.resolution, ch = spec.channels, m = cfg.patches_per_image, g = cfg.grid();
  const int e = cfg.edge_for(res);
  require(g * e == res, ErrorKind::config,
          "select: mosaic of " + std::to_string(g) + "x" + std::to_string(e) + " does not match resolution " +
              std::to_string(res));
  require(teacher.spec().resolution == res, ErrorKind::shape, "select: teacher resolution does not match dataset");

  auto model = teacher.instance();
  const auto by_class = train.indices_by_class(spec.num_classes);
  datahub::DistilledDataset ds;
  ds.dataset = spec.name;
  ds.num_classes = spec.num_classes;
  ds.ipc = ipc;
  ds.images = Tensor<float>(Shape{ipc * spec.num_classes, ch, res, res});

  for (int cls = 0; cls < spec.num_classes; ++cls) {
    require(!by_class[cls].empty(), ErrorKind::invariant, "select: class " + std::to_string(cls) + " has no sources");
    Rng rng = make_rng(cfg.seed, {0x73656c656374ULL, std::uint64_t(cls)});
    const int nsrc = std::min<int>(cfg.sources_per_class, int(by_class[cls].size()));
    const auto sources = sample_without_replacement(by_class[cls], nsrc, rng);

    std::vector<Candidate> cands;
    std::vector<std::vector<float>> patches;
    for (int s : sources) {
      const std::vector<int> one{s};
      const auto img = train.batch(one);
      for (int k = 0; k < cfg.candidates_per_source; ++k) {
        const CropBox box = sample_resized_crop(rng, res, res, cfg.scale_lo, cfg.scale_hi);
        std::vector<float> patch(std::size_t(ch) * e * e);
        resize_crop<float>(img.sample(0), ch, res, res, box, patch, e, e);
        patches.push_back(std::move(patch));
        cands.push_back({0.0, s, k});
      }
    }
    require(int(cands.size()) >= ipc * m, ErrorKind::invariant,
            "select: class " + std::to_string(cls) + " has " + std::to_string(cands.size()) +
                " candidates, need ipc*m = " + std::to_string(ipc * m));

    // Each patch is scored alone, upsampled to the teacher's input size.
    const int chunk = 128;
    for (int first = 0; first < int(cands.size()); first += chunk) {
      const int count = std::min<int>(chunk, int(cands.size()) - first);
      Tensor<float> x(Shape{count, ch, res, res});
      for (int i = 0; i < count; ++i)
        resize_crop<float>(patches[first + i], ch, e, e, CropBox{0, 0, e, e}, x.sample(i), res, res);
      const auto ls = nn::log_softmax(model.forward(x, nn::Mode::eval));
      for (int i = 0; i < count; ++i) cands[first + i].loss = -double(ls.at(i, cls));
    }

    const auto keep = rank_lowest(cands, ipc * m);
    if (trace) {
      trace->candidates.push_back(cands);
      trace->patches.push_back(patches);
      trace->kept.push_back(keep);
    }
    for (int j = 0; j < ipc; ++j) {
      std::vector<std::vector<float>> group;
      json src = json::array();
      for (int p = 0; p < m; ++p) {
        const auto& cd = cands[keep[j * m + p]];
        group.push_back(patches[keep[j * m + p]]);
        src.push_back({{"train_index", cd.source}, {"crop", cd.crop}, {"loss", cd.loss}});
      }
      const int slot = cls * ipc + j;
      tile_mosaic(group, ch, e, g, ds.images.sample(slot));
      ds.labels.push_back(cls);
      ds.sources.push_back({{"patches", src}});
    }
  }
  ds.provenance.method = "select";
  ds.provenance.init = "-";
  ds.provenance.teacher_ids = {teacher.id()};
  ds.provenance.seed = cfg.seed;
  ds.provenance.config = cfg;
  ds.provenance.config["ipc"] = ipc;
  ds.provenance.wall_clock_seconds = seconds_since(t0);
  ds.validate();
  return ds;
}

}  // namespace dbench::synth
