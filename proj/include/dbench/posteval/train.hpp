#pragma once

// Student training under the unified post-evaluation protocol.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dbench/core/error.hpp"
#include "dbench/core/hash.hpp"
#include "dbench/datahub/dataset.hpp"
#include "dbench/datahub/distilled.hpp"
#include "dbench/nn/models.hpp"
#include "dbench/nn/optim.hpp"
#include "dbench/posteval/config.hpp"
#include "dbench/posteval/evaluate.hpp"
#include "dbench/posteval/loss.hpp"
#include "dbench/posteval/schedule.hpp"
#include "dbench/relabel/cache.hpp"
#include "dbench/relabel/soft_labels.hpp"
#include "dbench/teachers/teacher.hpp"
#include "json.hpp"

namespace dbench::posteval {

namespace fs = std::filesystem;

struct RunResult {
  std::vector<double> train_accuracy;               // per epoch, on the augmented batches
  std::vector<std::optional<double>> test_accuracy;  // per epoch; empty where not evaluated
  std::vector<double> train_loss;                    // per epoch mean
  std::vector<double> lr;                            // per epoch
  double final_test_accuracy = 0.0;
  double wall_clock_seconds = 0.0;
  std::string config_fingerprint;
  std::uint64_t seed = 0;
  std::string eval_arch;
  std::string distilled_id;
  json config;  // resolved PostEvalConfig

  // Everything except wall-clock; equal for two runs of the same cell.
  bool same_trajectory(const RunResult& o) const {
    return train_accuracy == o.train_accuracy && test_accuracy == o.test_accuracy && train_loss == o.train_loss &&
           final_test_accuracy == o.final_test_accuracy && config_fingerprint == o.config_fingerprint &&
           seed == o.seed;
  }
};

inline void to_json(json& j, const RunResult& r) {
  json test = json::array();
  for (const auto& t : r.test_accuracy) test.push_back(t ? json(*t) : json(nullptr));
  j = {{"train_accuracy", r.train_accuracy}, {"test_accuracy", test},
       {"train_loss", r.train_loss},         {"lr", r.lr},
       {"final_test_accuracy", r.final_test_accuracy}, {"wall_clock_seconds", r.wall_clock_seconds},
       {"config_fingerprint", r.config_fingerprint},   {"seed", r.seed},
       {"eval_arch", r.eval_arch},           {"distilled_id", r.distilled_id},
       {"config", r.config}};
}

inline void from_json(const json& j, RunResult& r) {
  r.train_accuracy = j.at("train_accuracy").get<std::vector<double>>();
  r.test_accuracy.clear();
  for (const auto& t : j.at("test_accuracy")) r.test_accuracy.push_back(t.is_null() ? std::nullopt : std::optional(t.get<double>()));
  r.train_loss = j.at("train_loss").get<std::vector<double>>();
  r.lr = j.value("lr", std::vector<double>{});
  r.final_test_accuracy = j.at("final_test_accuracy").get<double>();
  r.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
  r.config_fingerprint = j.at("config_fingerprint").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.eval_arch = j.value("eval_arch", "");
  r.distilled_id = j.value("distilled_id", "");
  r.config = j.value("config", json::object());
}

// Synthesis identity of a distilled set: content plus provenance without
// the wall-clock stamp.
inline std::string distilled_id(const datahub::DistilledDataset& ds) {
  json p = ds.provenance;
  p.erase("wall_clock_seconds");
  Sha256 h;
  h.update(std::span<const float>(ds.images.data)).update(std::span<const int>(ds.labels)).update(p.dump());
  return h.hex();
}

struct StepEvent {
  int epoch = 0, step = 0;
  const relabel::AugmentedBatch* student_view = nullptr;
  const relabel::AugmentedBatch* teacher_view = nullptr;  // null in hard mode
  const Tensor<float>* student_logits = nullptr;
  const Tensor<float>* teacher_probs = nullptr;  // null in hard mode
  double loss = 0.0;
};

struct TrainOptions {
  std::function<void(const StepEvent&)> observer;
  fs::path label_cache;   // replay labels from here instead of querying the pool
  fs::path log_path;      // per-epoch lines appended here
  fs::path feature_dump;  // penultimate test features written here at the end
  bool verbose = false;
};

// The relabel schedule a (config, seed) pair implies for a set of `n` images.
inline relabel::RelabelPlan make_plan(const PostEvalConfig& cfg, int n, std::uint64_t seed) {
  relabel::RelabelPlan plan;
  plan.epochs = cfg.epochs;
  plan.batch_size = effective_batch_size(n, cfg.batch_size);
  plan.order_seed = derive_seed(seed, {0x6f72646572ULL});
  plan.aug = cfg.aug;
  plan.aug.seed = derive_seed(cfg.aug.seed, {0x617567ULL, seed});
  plan.temperature = cfg.temperature;
  return plan;
}

// Raw float32 features: u32 n, u32 dim, then n*dim floats and n int32 labels.
template <class T>
void dump_features(nn::Model<T>& model, const datahub::ImageSet& split, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(bool(out), ErrorKind::io, "cannot write feature dump " + path.string());
  std::vector<float> feats;
  std::uint32_t dim = 0;
  for (int first = 0; first < split.size(); first += 250) {
    const auto f = model.features(split.range(first, std::min(250, split.size() - first)), nn::Mode::eval);
    dim = std::uint32_t(f.shape.per_sample());
    feats.insert(feats.end(), f.data.begin(), f.data.end());
  }
  const std::uint32_t n = std::uint32_t(split.size());
  out.write(reinterpret_cast<const char*>(&n), 4);
  out.write(reinterpret_cast<const char*>(&dim), 4);
  out.write(reinterpret_cast<const char*>(feats.data()), std::streamsize(feats.size() * sizeof(float)));
  out.write(reinterpret_cast<const char*>(split.labels.data()), std::streamsize(split.labels.size() * sizeof(int)));
  require(bool(out), ErrorKind::io, "short write on feature dump " + path.string());
}

inline RunResult train_student(const datahub::DistilledDataset& ds, teachers::TeacherPool* pool,
                               const nn::ModelSpec& eval_arch, const PostEvalConfig& cfg,
                               const datahub::ImageSet& test, std::uint64_t seed, const TrainOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  require(cfg.resolved(), ErrorKind::config, "train_student: config has unresolved batch_size/zeta defaults");
  cfg.validate();
  ds.validate();
  eval_arch.validate();
  require(ds.num_classes == eval_arch.num_classes, ErrorKind::config,
          "distilled set has " + std::to_string(ds.num_classes) + " classes, student " + eval_arch.arch + " has " +
              std::to_string(eval_arch.num_classes));
  require(ds.images.shape.h == eval_arch.resolution, ErrorKind::shape,
          "distilled images are " + std::to_string(ds.images.shape.h) + "px, student expects " +
              std::to_string(eval_arch.resolution));
  const bool hard = cfg.label_mode == "hard";
  const bool cached = !opt.label_cache.empty();
  if (!hard && !cached) {
    require(pool != nullptr, ErrorKind::config, "train_student: label mode '" + cfg.label_mode + "' needs a teacher pool");
    require(cfg.label_mode != "soft" || pool->size() == 1, ErrorKind::config,
            "train_student: soft label mode takes exactly one teacher; use hybrid for pools");
    require(pool->num_classes() == ds.num_classes, ErrorKind::config, "teacher pool class count differs from distilled set");
  }

  const auto& dspec = datahub::dataset_spec(ds.dataset);
  nn::Model<float> student(eval_arch, dspec.mean, dspec.stdev, derive_seed(seed, {0x73747564656e74ULL}));
  auto params = student.params();
  std::optional<nn::AdamW<float>> adamw;
  std::optional<nn::Sgd<float>> sgd;
  if (cfg.optimizer == "adamw") adamw.emplace(params, nn::AdamW<float>::Options{0.9, 0.999, 1e-8, cfg.weight_decay});
  else sgd.emplace(params, nn::Sgd<float>::Options{cfg.momentum, cfg.weight_decay, true});

  const auto plan = make_plan(cfg, ds.size(), seed);
  RunResult res;
  res.seed = seed;
  res.config = cfg;
  res.config_fingerprint = config_fingerprint(cfg);
  res.eval_arch = eval_arch.arch;
  res.distilled_id = distilled_id(ds);

  std::ofstream log;
  if (!opt.log_path.empty()) {
    log.open(opt.log_path, std::ios::app);
    require(bool(log), ErrorKind::io, "cannot open training log " + opt.log_path.string());
  }

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr * lr_multiplier(epoch, cfg.epochs, cfg.zeta);
    const auto batches = relabel::epoch_batches(ds.size(), plan.batch_size, plan.order_seed, epoch);
    std::vector<relabel::CachedStep> cache;
    if (cached && !hard) {
      cache = relabel::read_cache_epoch(opt.label_cache, epoch);
      require(cache.size() == batches.size(), ErrorKind::integrity,
              "label cache epoch " + std::to_string(epoch) + " has " + std::to_string(cache.size()) +
                  " steps, plan needs " + std::to_string(batches.size()));
    }
    double loss_sum = 0;
    long correct = 0, seen = 0;
    for (int step = 0; step < int(batches.size()); ++step) {
      const auto& rows = batches[step];
      const auto images = gather_batch(ds.images, rows);
      std::vector<int> labels;
      for (int r : rows) labels.push_back(ds.labels[r]);

      relabel::AugmentedBatch view, tview;
      Tensor<double> probs, tlogits;
      Tensor<float> probs_f;
      if (hard) {
        view = relabel::augment_batch(images, labels, plan.aug, epoch, step);
      } else if (cached) {
        const auto& c = cache[step];
        require(c.rows == rows, ErrorKind::integrity,
                "label cache epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                    " was built for a different data order");
        view = relabel::replay(images, labels, c.trace);
        tview = view;
        probs_f = c.probabilities;
        probs = c.probabilities.cast<double>();
        tlogits = c.mean_logits.cast<double>();
      } else {
        view = relabel::augment_batch(images, labels, plan.aug, epoch, step);
        tview = relabel::teacher_view(view, images, labels, plan.aug, epoch, step);
        auto sl = relabel::soft_labels(*pool, tview, plan.temperature);
        probs_f = std::move(sl.probabilities);
        probs = probs_f.cast<double>();
        tlogits = sl.mean_logits.cast<double>();
      }

      nn::zero_grad(params);
      const auto logits = student.forward(view.images, nn::Mode::train);
      const auto z = logits.cast<double>();
      LossInputs in;
      in.student_logits = &z;
      in.teacher_probs = hard ? nullptr : &probs;
      in.teacher_logits = hard ? nullptr : &tlogits;
      in.labels = &view.labels;
      in.partner_labels = &view.partner_labels;
      in.lambda_mix = &view.lambda_mix;
      in.gamma = cfg.gamma;
      in.temperature = cfg.temperature;
      in.kl_student_tau = cfg.kl_student_tau;
      in.kl_tau_squared = cfg.kl_tau_squared;
      const auto lv = distill_loss(cfg.loss, in);
      if (!std::isfinite(lv.value))
        fail(ErrorKind::divergence, "student training diverged at epoch " + std::to_string(epoch) + " step " +
                                        std::to_string(step));
      if (opt.observer)
        opt.observer(StepEvent{epoch, step, &view, hard ? nullptr : &tview, &logits, hard ? nullptr : &probs_f,
                               lv.value});
      student.backward(lv.grad.cast<float>());
      if (adamw) adamw->step(lr);
      else sgd->step(lr);

      loss_sum += lv.value * double(rows.size());
      const auto pred = nn::argmax_rows(logits);
      for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == view.labels[i];
      seen += long(rows.size());
    }

    res.train_accuracy.push_back(100.0 * double(correct) / double(seen));
    res.train_loss.push_back(loss_sum / double(seen));
    res.lr.push_back(lr);
    const bool last = epoch + 1 == cfg.epochs;
    if (last || (epoch + 1) % cfg.eval_every == 0) res.test_accuracy.push_back(evaluate_accuracy(student, test));
    else res.test_accuracy.push_back(std::nullopt);

    if (log || opt.verbose) {
      char line[256];
      std::snprintf(line, sizeof line, "epoch %d lr %.6g loss %.6f train_acc %.2f test_acc %s", epoch + 1, lr,
                    res.train_loss.back(), res.train_accuracy.back(),
                    res.test_accuracy.back() ? std::to_string(*res.test_accuracy.back()).c_str() : "-");
      if (log) log << line << "\n" << std::flush;
      if (opt.verbose) std::fprintf(stderr, "[eval seed %llu] %s\n", (unsigned long long)seed, line);
    }
  }
  res.final_test_accuracy = *res.test_accuracy.back();
  if (!opt.feature_dump.empty()) dump_features(student, test, opt.feature_dump);
  res.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace dbench::posteval
