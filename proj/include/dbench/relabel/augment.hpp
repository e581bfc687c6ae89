#pragma once

// Shared-view augmentation for relabeling and student training.
//
// A batch goes through random-resized-crop + horizontal flip per image, then
// PatchShuffle over image pairs, then CutMix with one box per batch. All
// random draws are taken up front into an AugTrace keyed by
// (seed, epoch, step); replay() applies a trace and is the only code path that
// touches pixels, so a trace reproduces its images bit for bit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "dbench/core/binio.hpp"
#include "dbench/core/error.hpp"
#include "dbench/core/hash.hpp"
#include "dbench/core/imageops.hpp"
#include "dbench/core/rng.hpp"
#include "dbench/core/tensor.hpp"
#include "json.hpp"

namespace dbench::relabel {

struct AugSpec {
  double scale_lo = 0.5;
  double scale_hi = 1.0;
  double flip_prob = 0.5;
  bool cutmix = true;
  double cutmix_beta = 1.0;
  bool patch_shuffle = true;
  int patch_grid = 2;
  double patch_swap_prob = 0.5;
  std::uint64_t seed = 0;
  // Teacher and student consume one augmented view. false gives the teacher
  // an independently drawn view (ablation only).
  bool shared_view = true;

  void validate(int edge) const {
    require(scale_lo > 0 && scale_lo <= scale_hi && scale_hi <= 1, ErrorKind::config,
            "aug: need 0 < scale_lo <= scale_hi <= 1");
    require(flip_prob >= 0 && flip_prob <= 1 && patch_swap_prob >= 0 && patch_swap_prob <= 1, ErrorKind::config,
            "aug: probabilities must lie in [0,1]");
    require(!cutmix || cutmix_beta > 0, ErrorKind::config, "aug: cutmix_beta must be positive");
    require(!patch_shuffle || (patch_grid >= 1 && edge % patch_grid == 0), ErrorKind::config,
            "aug: patch grid " + std::to_string(patch_grid) + " does not divide image edge " + std::to_string(edge));
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AugSpec, scale_lo, scale_hi, flip_prob, cutmix, cutmix_beta,
                                                patch_shuffle, patch_grid, patch_swap_prob, seed, shared_view)

struct PatchSwap {
  int a = 0, b = 0;      // batch rows
  int cell_row = 0, cell_col = 0;
  bool operator==(const PatchSwap&) const = default;
};

struct AugTrace {
  std::uint64_t seed = 0;
  int epoch = 0, step = 0;
  int grid = 1;
  std::vector<CropBox> crops;
  std::vector<std::uint8_t> flips;
  std::vector<PatchSwap> swaps;
  bool cutmix = false;
  double lambda_draw = 1.0;
  CropBox cut_box;           // zero area when inactive
  std::vector<int> partner;  // cutmix partner row per image

  bool operator==(const AugTrace&) const = default;
};

struct AugmentedBatch {
  Tensor<float> images;
  std::vector<int> labels;
  std::vector<int> partner_labels;
  std::vector<double> lambda_mix;  // preserved-area fraction of the primary image
  AugTrace trace;

  std::string hash() const { return sha256_hex(std::span<const float>(images.data)); }
};

namespace detail {

inline void copy_cell(const Tensor<float>& src, int sn, Tensor<float>& dst, int dn, int top, int left, int h, int w) {
  for (int c = 0; c < src.shape.c; ++c)
    for (int i = top; i < top + h; ++i)
      std::copy_n(&src.at(sn, c, i, left), w, &dst.at(dn, c, i, left));
}

}  // namespace detail

// All random draws for one batch.
inline AugTrace draw_trace(const AugSpec& spec, int batch, int h, int w, int epoch, int step,
                           std::uint64_t stream = 0) {
  spec.validate(h);
  require(batch > 0, ErrorKind::invariant, "augment_batch: empty batch");
  AugTrace t;
  t.seed = spec.seed;
  t.epoch = epoch;
  t.step = step;
  t.grid = spec.patch_grid;
  Rng rng = make_rng(spec.seed, {std::uint64_t(epoch), std::uint64_t(step), stream});
  for (int n = 0; n < batch; ++n) {
    t.crops.push_back(sample_resized_crop(rng, h, w, spec.scale_lo, spec.scale_hi));
    t.flips.push_back(uniform01(rng) < spec.flip_prob);
  }
  if (spec.patch_shuffle && batch >= 2) {
    std::vector<int> perm(batch);
    std::iota(perm.begin(), perm.end(), 0);
    shuffle(perm.begin(), perm.end(), rng);
    for (int k = 0; k + 1 < batch; k += 2) {
      const bool swap = uniform01(rng) < spec.patch_swap_prob;
      const int r = uniform_int(rng, 0, spec.patch_grid - 1);
      const int c = uniform_int(rng, 0, spec.patch_grid - 1);
      if (swap) t.swaps.push_back({perm[k], perm[k + 1], r, c});
    }
  }
  t.partner.resize(batch);
  std::iota(t.partner.begin(), t.partner.end(), 0);
  if (spec.cutmix) {
    t.cutmix = true;
    t.lambda_draw = beta_sample(rng, spec.cutmix_beta, spec.cutmix_beta);
    shuffle(t.partner.begin(), t.partner.end(), rng);
    const double cut_rat = std::sqrt(1.0 - t.lambda_draw);
    const int cut_w = int(w * cut_rat), cut_h = int(h * cut_rat);
    const int cx = uniform_int(rng, 0, w - 1), cy = uniform_int(rng, 0, h - 1);
    const int x1 = std::clamp(cx - cut_w / 2, 0, w), x2 = std::clamp(cx + cut_w / 2, 0, w);
    const int y1 = std::clamp(cy - cut_h / 2, 0, h), y2 = std::clamp(cy + cut_h / 2, 0, h);
    t.cut_box = {y1, x1, y2 - y1, x2 - x1};
  }
  return t;
}

// Applies a trace to source images. Deterministic in (images, labels, trace).
inline AugmentedBatch replay(const Tensor<float>& images, const std::vector<int>& labels, const AugTrace& t) {
  const int b = images.shape.n, c = images.shape.c, h = images.shape.h, w = images.shape.w;
  require(int(t.crops.size()) == b && int(t.flips.size()) == b && int(t.partner.size()) == b &&
              int(labels.size()) == b,
          ErrorKind::shape, "augmentation trace does not match batch of " + std::to_string(b));
  require(h % t.grid == 0 && w % t.grid == 0, ErrorKind::config,
          "patch grid " + std::to_string(t.grid) + " does not divide image edge " + std::to_string(h));
  AugmentedBatch out;
  out.trace = t;
  out.labels = labels;
  out.images = Tensor<float>(images.shape);
  for (int n = 0; n < b; ++n) {
    resize_crop<float>(images.sample(n), c, h, w, t.crops[n], out.images.sample(n), h, w);
    if (t.flips[n]) flip_horizontal<float>(out.images.sample(n), c, h, w);
  }

  const int ch = h / t.grid, cw = w / t.grid;
  for (const auto& s : t.swaps) {
    const Tensor<float> a = slice_batch(out.images, s.a, 1);
    detail::copy_cell(out.images, s.b, out.images, s.a, s.cell_row * ch, s.cell_col * cw, ch, cw);
    detail::copy_cell(a, 0, out.images, s.b, s.cell_row * ch, s.cell_col * cw, ch, cw);
  }

  out.partner_labels.resize(b);
  out.lambda_mix.assign(b, 1.0);
  const double area = double(t.cut_box.height) * t.cut_box.width;
  const double lam = 1.0 - area / (double(h) * w);
  if (t.cutmix && area > 0) {
    const Tensor<float> pre = out.images;
    for (int n = 0; n < b; ++n)
      detail::copy_cell(pre, t.partner[n], out.images, n, t.cut_box.top, t.cut_box.left, t.cut_box.height,
                        t.cut_box.width);
  }
  for (int n = 0; n < b; ++n) {
    out.partner_labels[n] = labels[t.partner[n]];
    out.lambda_mix[n] = t.cutmix ? lam : 1.0;
  }
  return out;
}

inline AugmentedBatch augment_batch(const Tensor<float>& images, const std::vector<int>& labels,
                                    const AugSpec& spec, int epoch, int step, std::uint64_t stream = 0) {
  require(images.shape.n > 0, ErrorKind::invariant, "augment_batch: empty batch");
  return replay(images, labels, draw_trace(spec, images.shape.n, images.shape.h, images.shape.w, epoch, step, stream));
}

// Data order for one epoch: a seeded permutation cut into batches of
// `batch_size` (last batch may be short).
inline std::vector<std::vector<int>> epoch_batches(int n, int batch_size, std::uint64_t seed, int epoch) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, {0x6f72646572ULL, std::uint64_t(epoch)});
  shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> out;
  for (int first = 0; first < n; first += batch_size)
    out.emplace_back(order.begin() + first, order.begin() + std::min(n, first + batch_size));
  return out;
}

inline void write_trace(ByteWriter& w, const AugTrace& t) {
  w.put(t.seed);
  w.put<std::int32_t>(t.epoch);
  w.put<std::int32_t>(t.step);
  w.put<std::int32_t>(t.grid);
  w.put_span(std::span<const CropBox>(t.crops));
  w.put_span(std::span<const std::uint8_t>(t.flips));
  w.put_span(std::span<const PatchSwap>(t.swaps));
  w.put<std::uint8_t>(t.cutmix);
  w.put(t.lambda_draw);
  w.put(t.cut_box);
  w.put_span(std::span<const int>(t.partner));
}

inline AugTrace read_trace(ByteReader& r) {
  AugTrace t;
  t.seed = r.get<std::uint64_t>();
  t.epoch = r.get<std::int32_t>();
  t.step = r.get<std::int32_t>();
  t.grid = r.get<std::int32_t>();
  t.crops = r.get_vector<CropBox>();
  t.flips = r.get_vector<std::uint8_t>();
  t.swaps = r.get_vector<PatchSwap>();
  t.cutmix = r.get<std::uint8_t>() != 0;
  t.lambda_draw = r.get<double>();
  t.cut_box = r.get<CropBox>();
  t.partner = r.get_vector<int>();
  return t;
}

}  // namespace dbench::relabel
