#pragma once

// Gradient-based image recovery against a frozen teacher:
//   min_x  CE(f(x), y) + lambda * L_BN(f, x)
// Images are optimized in class-homogeneous groups with Adam on raw pixels,
// clamped to [0,1] after every step.

#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "dbench/core/error.hpp"
#include "dbench/core/imageops.hpp"
#include "dbench/core/rng.hpp"
#include "dbench/datahub/distilled.hpp"
#include "dbench/nn/functional.hpp"
#include "dbench/synth/bn_loss.hpp"
#include "dbench/synth/random_sample.hpp"
#include "dbench/synth/select.hpp"
#include "dbench/teachers/teacher.hpp"
#include "json.hpp"

namespace dbench::synth {

namespace fs = std::filesystem;
using nlohmann::json;

struct CurriculumCrop {
  bool enabled = false;
  double start = 0.5;
  double end = 1.0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CurriculumCrop, enabled, start, end)

// Default lambda puts the BN and CE terms on the same order of magnitude at
// noise initialization for the desk-scale convnet-small teacher (see
// balancing_lambda, which measured 0.056 there).
inline constexpr double kDefaultRecoverLambda = 0.05;

struct RecoverConfig {
  int iterations = 300;
  double lr = 0.05;
  double lambda = kDefaultRecoverLambda;
  double bn_mean_weight = 1.0;
  double bn_var_weight = 1.0;
  std::string init = "noise";  // noise | real-random | selection | imported
  CurriculumCrop curriculum_crop;
  int batch_size = 10;
  std::uint64_t seed = 0;
  std::string imported_path;  // init = imported
  SelectConfig select;        // init = selection

  void validate() const {
    require(iterations >= 0, ErrorKind::config, "recover.iterations must be >= 0");
    require(lr > 0, ErrorKind::config, "recover.lr must be positive");
    require(lambda >= 0, ErrorKind::config, "recover.lambda must be >= 0");
    require(bn_mean_weight >= 0 && bn_var_weight >= 0, ErrorKind::config,
            "recover.bn_mean_weight and recover.bn_var_weight must be >= 0");
    require(init == "noise" || init == "real-random" || init == "selection" || init == "imported",
            ErrorKind::config, "recover.init must be one of noise, real-random, selection, imported (got '" + init + "')");
    require(!curriculum_crop.enabled ||
                (curriculum_crop.start > 0 && curriculum_crop.start <= curriculum_crop.end && curriculum_crop.end <= 1),
            ErrorKind::config, "recover.curriculum_crop: need 0 < start <= end <= 1");
    require(batch_size >= 1, ErrorKind::config, "recover.batch_size must be >= 1");
    require(init != "imported" || !imported_path.empty(), ErrorKind::config,
            "recover.imported_path is required for init = imported");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RecoverConfig, iterations, lr, lambda, bn_mean_weight, bn_var_weight,
                                                init, curriculum_crop, batch_size, seed, imported_path, select)

template <class T>
struct RecoveryObjective {
  double total = 0, ce = 0, bn = 0;
  Tensor<T> grad;  // d total / d pixels
};

// Objective and pixel gradient for one group. With `crops`, each image is
// cropped and resized back to full size before the teacher sees it.
template <class T>
RecoveryObjective<T> recovery_objective(nn::Model<T>& model, const Tensor<T>& x, std::span<const int> labels,
                                        const BNStats& target, double lambda, double mean_w, double var_w,
                                        const std::vector<CropBox>* crops = nullptr) {
  const int c = x.shape.c, h = x.shape.h, w = x.shape.w;
  Tensor<T> input = x;
  if (crops)
    for (int n = 0; n < x.shape.n; ++n) resize_crop<T>(x.sample(n), c, h, w, (*crops)[n], input.sample(n), h, w);

  RecoveryObjective<T> out;
  Tensor<T> dlogits;
  out.ce = double(nn::cross_entropy(model.forward(input, nn::Mode::eval), labels, &dlogits));
  const auto bn = bn_alignment_loss(batch_bn_stats(model), target, mean_w, var_w);
  out.bn = bn.loss;
  out.total = out.ce + lambda * out.bn;

  auto layers = model.batchnorms();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    std::vector<T> dm(bn.d_mean[l].size()), dv(bn.d_var[l].size());
    for (std::size_t k = 0; k < dm.size(); ++k) {
      dm[k] = T(lambda * bn.d_mean[l][k]);
      dv[k] = T(lambda * bn.d_var[l][k]);
    }
    layers[l]->set_stat_grad(std::move(dm), std::move(dv));
  }
  Tensor<T> gin = model.backward(dlogits);
  if (!crops) {
    out.grad = std::move(gin);
  } else {
    out.grad = Tensor<T>(x.shape);
    for (int n = 0; n < x.shape.n; ++n)
      resize_crop_backward<T>(gin.sample(n), c, h, w, (*crops)[n], out.grad.sample(n), h, w);
  }
  return out;
}

struct GroupTrace {
  int cls = 0;
  int first_slot = 0;
  int count = 0;
  std::vector<double> loss;  // total loss per iteration, before the update
  double initial_total = 0;  // full-view loss of the initialization
  double final_total = 0;    // full-view loss of the result
};

struct RecoverResult {
  datahub::DistilledDataset dataset;
  std::vector<GroupTrace> groups;
};

inline void to_json(json& j, const GroupTrace& g) {
  j = {{"class", g.cls},
       {"first_slot", g.first_slot},
       {"count", g.count},
       {"initial_total", g.initial_total},
       {"final_total", g.final_total},
       {"loss_iter0", g.loss.empty() ? json(nullptr) : json(g.loss.front())},
       {"loss_iter50", g.loss.size() > 50 ? json(g.loss[50]) : json(nullptr)}};
}

// Real data needed by the real-random and selection initializations.
struct RecoverSources {
  const datahub::DatasetSpec* spec = nullptr;
  const datahub::ImageSet* train = nullptr;
};

namespace detail {

// Initial pixels for every slot, in slot order.
inline Tensor<float> initial_images(const teachers::TeacherHandle& teacher, const RecoverConfig& cfg,
                                    const std::vector<int>& labels, const RecoverSources& src, int num_classes) {
  const auto& ms = teacher.spec();
  const int n = int(labels.size()), res = ms.resolution, ch = ms.channels;
  Tensor<float> x(Shape{n, ch, res, res});
  std::vector<std::vector<int>> slots(num_classes);
  for (int i = 0; i < n; ++i) slots[labels[i]].push_back(i);

  if (cfg.init == "noise") {
    for (int cls = 0; cls < num_classes; ++cls) {
      Rng rng = make_rng(cfg.seed, {0x6e6f697365ULL, std::uint64_t(cls)});
      for (int s : slots[cls])
        for (auto& v : x.sample(s)) v = float(uniform01(rng));
    }
    return x;
  }
  if (cfg.init == "real-random" || cfg.init == "selection") {
    require(src.spec && src.train, ErrorKind::missing_input, "recover: init '" + cfg.init + "' needs the real train split");
    require(src.spec->resolution == res, ErrorKind::shape, "recover: train split resolution does not match teacher");
    for (int cls = 0; cls < num_classes; ++cls) {
      if (slots[cls].empty()) continue;
      const int k = int(slots[cls].size());
      Tensor<float> imgs;
      if (cfg.init == "real-random") {
        const auto by_class = src.train->indices_by_class(num_classes);
        require(int(by_class[cls].size()) >= k, ErrorKind::invariant,
                "recover: class " + std::to_string(cls) + " has too few real images for init");
        Rng rng = make_rng(cfg.seed, {0x7265616cULL, std::uint64_t(cls)});
        imgs = src.train->batch(sample_without_replacement(by_class[cls], k, rng));
      } else {
        SelectConfig sc = cfg.select;
        sc.seed = derive_seed(cfg.seed, {0x73656cULL});
        const auto sel = select_patches(teacher, *src.spec, *src.train, sc, k);
        std::vector<int> rows;
        for (int i = 0; i < sel.size(); ++i)
          if (sel.labels[i] == cls) rows.push_back(i);
        imgs = gather_batch(sel.images, rows);
      }
      for (int j = 0; j < k; ++j) std::copy(imgs.sample(j).begin(), imgs.sample(j).end(), x.sample(slots[cls][j]).begin());
    }
    return x;
  }
  // imported
  const auto imp = datahub::import_distilled(cfg.imported_path);
  require(imp.images.shape.h == res && imp.images.shape.c == ch, ErrorKind::shape,
          "recover: imported set shape " + imp.images.shape.str() + " does not match teacher input");
  std::vector<std::vector<int>> have(num_classes);
  for (int i = 0; i < imp.size(); ++i)
    if (imp.labels[i] >= 0 && imp.labels[i] < num_classes) have[imp.labels[i]].push_back(i);
  for (int cls = 0; cls < num_classes; ++cls) {
    require(have[cls].size() >= slots[cls].size(), ErrorKind::invariant,
            "recover: imported set has " + std::to_string(have[cls].size()) + " images of class " +
                std::to_string(cls) + ", need " + std::to_string(slots[cls].size()));
    for (std::size_t j = 0; j < slots[cls].size(); ++j)
      std::copy(imp.images.sample(have[cls][j]).begin(), imp.images.sample(have[cls][j]).end(),
                x.sample(slots[cls][j]).begin());
  }
  return x;
}

}  // namespace detail

// Optimizes one image per entry of `labels`. The returned set is balanced
// when every class appears equally often.
inline RecoverResult recover_optimize(const teachers::TeacherHandle& teacher, const RecoverConfig& cfg,
                                      const std::vector<int>& labels, const RecoverSources& src = {}) {
  const auto t0 = Clock::now();
  cfg.validate();
  const int num_classes = teacher.spec().num_classes;
  const auto target = teachers::extract_bn_stats(teacher);
  require(target.has_value(), ErrorKind::unsupported,
          "recover: teacher " + teacher.spec().arch + " has no BN statistics; optimization-based recovery is disabled");
  require(!labels.empty(), ErrorKind::config, "recover: no target labels");
  for (int y : labels)
    require(y >= 0 && y < num_classes, ErrorKind::config, "recover: target label " + std::to_string(y) + " out of range");

  Tensor<float> x = detail::initial_images(teacher, cfg, labels, src, num_classes);
  auto model = teacher.instance();
  const int h = x.shape.h, w = x.shape.w;

  std::vector<std::vector<int>> slots(num_classes);
  for (int i = 0; i < int(labels.size()); ++i) slots[labels[i]].push_back(i);

  RecoverResult result;
  for (int cls = 0; cls < num_classes; ++cls) {
    for (int first = 0; first < int(slots[cls].size()); first += cfg.batch_size) {
      const int count = std::min<int>(cfg.batch_size, int(slots[cls].size()) - first);
      const std::vector<int> rows(slots[cls].begin() + first, slots[cls].begin() + first + count);
      Tensor<float> g = gather_batch(x, rows);
      const std::vector<int> y(count, cls);
      Rng rng = make_rng(cfg.seed, {0x726563ULL, std::uint64_t(cls), std::uint64_t(first)});

      GroupTrace trace;
      trace.cls = cls;
      trace.first_slot = rows.front();
      trace.count = count;
      trace.initial_total =
          recovery_objective(model, g, y, *target, cfg.lambda, cfg.bn_mean_weight, cfg.bn_var_weight).total;

      std::vector<float> m1(g.size(), 0.f), m2(g.size(), 0.f);
      const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
      for (int it = 0; it < cfg.iterations; ++it) {
        std::optional<std::vector<CropBox>> crops;
        if (cfg.curriculum_crop.enabled) {
          const double frac = cfg.iterations > 1 ? double(it) / (cfg.iterations - 1) : 1.0;
          const double s = cfg.curriculum_crop.start + (cfg.curriculum_crop.end - cfg.curriculum_crop.start) * frac;
          crops.emplace();
          for (int n = 0; n < count; ++n) crops->push_back(sample_resized_crop(rng, h, w, s, s));
        }
        auto obj = recovery_objective(model, g, y, *target, cfg.lambda, cfg.bn_mean_weight, cfg.bn_var_weight,
                                      crops ? &*crops : nullptr);
        if (!std::isfinite(obj.total))
          fail(ErrorKind::divergence, "recover: non-finite loss at iteration " + std::to_string(it) + " (class " +
                                          std::to_string(cls) + ")");
        trace.loss.push_back(obj.total);
        const double bc1 = 1 - std::pow(b1, it + 1), bc2 = 1 - std::pow(b2, it + 1);
        for (std::size_t k = 0; k < g.size(); ++k) {
          const float gr = obj.grad.data[k];
          m1[k] = float(b1 * m1[k] + (1 - b1) * gr);
          m2[k] = float(b2 * m2[k] + (1 - b2) * gr * gr);
          const double step = cfg.lr * (m1[k] / bc1) / (std::sqrt(m2[k] / bc2) + eps);
          g.data[k] = std::clamp(float(g.data[k] - step), 0.f, 1.f);
        }
      }
      trace.final_total = cfg.iterations == 0
                              ? trace.initial_total
                              : recovery_objective(model, g, y, *target, cfg.lambda, cfg.bn_mean_weight,
                                                   cfg.bn_var_weight)
                                    .total;
      for (int n = 0; n < count; ++n)
        std::copy(g.sample(n).begin(), g.sample(n).end(), x.sample(rows[n]).begin());
      result.groups.push_back(std::move(trace));
    }
  }

  auto& ds = result.dataset;
  ds.dataset = teacher.dataset();
  ds.num_classes = num_classes;
  ds.images = std::move(x);
  ds.labels = labels;
  const auto counts = ds.class_counts();
  const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
  ds.unbalanced = *lo != *hi;
  ds.ipc = *hi;
  ds.provenance.method = "recover";
  ds.provenance.init = cfg.init;
  ds.provenance.teacher_ids = {teacher.id()};
  ds.provenance.seed = cfg.seed;
  ds.provenance.config = cfg;
  json groups = json::array();
  for (const auto& gt : result.groups) groups.push_back(gt);
  ds.provenance.config["groups"] = groups;
  ds.provenance.wall_clock_seconds = seconds_since(t0);
  ds.validate();
  return result;
}

// Balanced label vector: ipc slots per class, class-major.
inline std::vector<int> balanced_labels(int num_classes, int ipc) {
  std::vector<int> out;
  for (int c = 0; c < num_classes; ++c) out.insert(out.end(), ipc, c);
  return out;
}

// Ratio CE / L_BN at noise initialization, averaged over classes: the lambda
// that puts both terms on the same scale.
inline double balancing_lambda(const teachers::TeacherHandle& teacher, int per_class = 10, std::uint64_t seed = 0) {
  const auto target = teachers::extract_bn_stats(teacher);
  require(target.has_value(), ErrorKind::unsupported, "teacher has no BN statistics");
  RecoverConfig cfg;
  cfg.seed = seed;
  const auto labels = balanced_labels(teacher.spec().num_classes, per_class);
  const auto x = detail::initial_images(teacher, cfg, labels, {}, teacher.spec().num_classes);
  auto model = teacher.instance();
  double ce = 0, bn = 0;
  for (int cls = 0; cls < teacher.spec().num_classes; ++cls) {
    const auto g = slice_batch(x, cls * per_class, per_class);
    const std::vector<int> y(per_class, cls);
    const auto obj = recovery_objective(model, g, y, *target, 0.0, 1.0, 1.0);
    ce += obj.ce;
    bn += obj.bn;
  }
  return bn > 0 ? ce / bn : 0.0;
}

}  // namespace dbench::synth
