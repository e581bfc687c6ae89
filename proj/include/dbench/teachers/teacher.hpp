#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "dbench/core/error.hpp"
#include "dbench/core/hash.hpp"
#include "dbench/core/imageops.hpp"
#include "dbench/core/rng.hpp"
#include "dbench/datahub/dataset.hpp"
#include "dbench/nn/checkpoint.hpp"
#include "dbench/nn/functional.hpp"
#include "dbench/nn/models.hpp"
#include "dbench/nn/optim.hpp"
#include "dbench/posteval/evaluate.hpp"
#include "json.hpp"

namespace dbench::teachers {

namespace fs = std::filesystem;
using nlohmann::json;

// Squeeze-phase training recipe. Cosine decay over all steps, no label
// smoothing.
struct Recipe {
  std::string optimizer = "adamw";  // adamw | sgd
  double lr = 2e-3;
  double weight_decay = 5e-4;
  double momentum = 0.9;  // sgd only
  int epochs = 15;
  int batch_size = 64;
  double crop_scale_lo = 0.6;
  double flip_prob = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    require(optimizer == "adamw" || optimizer == "sgd", ErrorKind::config,
            "recipe.optimizer must be adamw or sgd");
    require(lr > 0 && epochs >= 1 && batch_size >= 1, ErrorKind::config, "recipe: lr, epochs, batch_size must be positive");
    require(crop_scale_lo > 0 && crop_scale_lo <= 1, ErrorKind::config, "recipe.crop_scale_lo must be in (0,1]");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Recipe, optimizer, lr, weight_decay, momentum, epochs, batch_size,
                                                crop_scale_lo, flip_prob, seed)

inline std::string recipe_fingerprint(const Recipe& r) { return sha256_hex(json(r).dump()); }

// Immutable trained classifier. Forward passes run on per-worker copies
// obtained through instance().
class TeacherHandle {
 public:
  TeacherHandle(nn::Model<float> model, std::string dataset, double test_accuracy, Recipe recipe,
                std::string checkpoint = {})
      : model_(std::make_shared<const nn::Model<float>>(std::move(model))), dataset_(std::move(dataset)),
        test_accuracy_(test_accuracy), recipe_(recipe), fingerprint_(teachers::recipe_fingerprint(recipe)),
        checkpoint_(std::move(checkpoint)) {}

  const nn::ModelSpec& spec() const { return model_->spec(); }
  const std::string& dataset() const { return dataset_; }
  double test_accuracy() const { return test_accuracy_; }
  const Recipe& recipe() const { return recipe_; }
  const std::string& recipe_fingerprint() const { return fingerprint_; }
  const std::string& checkpoint() const { return checkpoint_; }
  std::uint64_t seed() const { return recipe_.seed; }
  std::string id() const { return spec().arch + "@" + dataset_ + "#" + fingerprint_.substr(0, 12); }

  nn::Model<float> instance() const { return *model_; }
  const nn::Model<float>& model() const { return *model_; }

 private:
  std::shared_ptr<const nn::Model<float>> model_;
  std::string dataset_;
  double test_accuracy_;
  Recipe recipe_;
  std::string fingerprint_;
  std::string checkpoint_;
};

// Per-image random-resized-crop + horizontal flip, output at the input size.
inline Tensor<float> crop_flip_batch(const Tensor<float>& x, Rng& rng, double scale_lo, double flip_prob) {
  Tensor<float> out(x.shape);
  const int c = x.shape.c, h = x.shape.h, w = x.shape.w;
  for (int n = 0; n < x.shape.n; ++n) {
    const CropBox box = sample_resized_crop(rng, h, w, scale_lo, 1.0);
    resize_crop<float>(x.sample(n), c, h, w, box, out.sample(n), h, w);
    if (uniform01(rng) < flip_prob) flip_horizontal<float>(out.sample(n), c, h, w);
  }
  return out;
}

inline TeacherHandle train_teacher(const nn::ModelSpec& spec, const datahub::LoadedDataset& data,
                                   const Recipe& recipe, bool verbose = false) {
  recipe.validate();
  spec.validate();
  require(spec.num_classes == data.spec.num_classes, ErrorKind::config,
          "teacher has " + std::to_string(spec.num_classes) + " classes, dataset " + data.spec.name + " has " +
              std::to_string(data.spec.num_classes));
  require(spec.resolution == data.spec.resolution, ErrorKind::config, "teacher resolution does not match dataset");

  nn::Model<float> model(spec, data.spec.mean, data.spec.stdev, derive_seed(recipe.seed, {1}));
  auto params = model.params();
  std::optional<nn::AdamW<float>> adamw;
  std::optional<nn::Sgd<float>> sgd;
  if (recipe.optimizer == "adamw") adamw.emplace(params, nn::AdamW<float>::Options{0.9, 0.999, 1e-8, recipe.weight_decay});
  else sgd.emplace(params, nn::Sgd<float>::Options{recipe.momentum, recipe.weight_decay, true});

  const int n = data.train.size();
  const int steps_per_epoch = (n + recipe.batch_size - 1) / recipe.batch_size;
  const long total_steps = long(steps_per_epoch) * recipe.epochs;
  long step = 0;
  std::vector<int> order(n);
  for (int epoch = 0; epoch < recipe.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(recipe.seed, {2, std::uint64_t(epoch)});
    shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    for (int first = 0; first < n; first += recipe.batch_size, ++step) {
      const int count = std::min(recipe.batch_size, n - first);
      std::span<const int> rows(order.data() + first, count);
      const auto x = crop_flip_batch(data.train.batch(rows), rng, recipe.crop_scale_lo, recipe.flip_prob);
      const auto y = data.train.batch_labels(rows);
      nn::zero_grad(params);
      Tensor<float> grad;
      const float loss = nn::cross_entropy(model.forward(x, nn::Mode::train), y, &grad);
      if (!std::isfinite(loss))
        fail(ErrorKind::divergence, "teacher training diverged at epoch " + std::to_string(epoch) + " (loss " +
                                        std::to_string(loss) + ")");
      model.backward(grad);
      const double lr = recipe.lr * 0.5 * (1.0 + std::cos(M_PI * double(step) / double(total_steps)));
      if (adamw) adamw->step(lr);
      else sgd->step(lr);
      loss_sum += loss;
    }
    if (verbose)
      std::fprintf(stderr, "[squeeze] epoch %d/%d loss %.4f\n", epoch + 1, recipe.epochs, loss_sum / steps_per_epoch);
  }
  const double acc = posteval::evaluate_accuracy(model, data.test);
  return TeacherHandle(std::move(model), data.spec.name, acc, recipe);
}

// ---- persistence --------------------------------------------------------

inline void save_teacher(const TeacherHandle& t, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), ErrorKind::io, "cannot create " + dir.string());
  auto model = t.instance();
  nn::save_checkpoint(model, dir / "teacher.ckpt");
  const json meta = {{"arch", t.spec().arch},
                     {"model_spec", t.spec()},
                     {"dataset", t.dataset()},
                     {"test_accuracy", t.test_accuracy()},
                     {"recipe_fingerprint", t.recipe_fingerprint()},
                     {"recipe", t.recipe()},
                     {"seed", t.seed()},
                     {"init_seed", model.init_seed()},
                     {"norm_mean", model.norm_mean()},
                     {"norm_std", model.norm_std()},
                     {"id", t.id()}};
  std::ofstream out(dir / "teacher.json", std::ios::trunc);
  require(bool(out), ErrorKind::io, "cannot write " + (dir / "teacher.json").string());
  out << meta.dump(2) << "\n";
}

inline TeacherHandle load_teacher(const fs::path& dir) {
  const fs::path meta_path = dir / "teacher.json";
  require(fs::exists(meta_path), ErrorKind::missing_input, "no teacher sidecar at " + meta_path.string());
  json meta;
  try {
    std::ifstream in(meta_path);
    meta = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::integrity, "teacher sidecar does not parse: " + meta_path.string());
  }
  const auto spec = meta.at("model_spec").get<nn::ModelSpec>();
  nn::Model<float> model(spec, meta.at("norm_mean").get<std::vector<double>>(),
                         meta.at("norm_std").get<std::vector<double>>(), meta.at("init_seed").get<std::uint64_t>());
  nn::load_checkpoint(model, dir / "teacher.ckpt");
  const auto recipe = meta.at("recipe").get<Recipe>();
  require(recipe_fingerprint(recipe) == meta.at("recipe_fingerprint").get<std::string>(), ErrorKind::integrity,
          "recipe fingerprint mismatch in " + meta_path.string());
  return TeacherHandle(std::move(model), meta.at("dataset").get<std::string>(),
                       meta.at("test_accuracy").get<double>(), recipe, (dir / "teacher.ckpt").string());
}

// ---- BN statistics ------------------------------------------------------

struct BNLayerStats {
  std::string layer_id;
  std::vector<double> mean;
  std::vector<double> var;
};

using BNStats = std::vector<BNLayerStats>;

inline bool arch_has_bn_statistics(const std::string& arch) { return nn::arch_info(arch).has_batchnorm; }

// Running statistics of every BN layer in traversal order, or nullopt when
// the architecture has no BN layers (recovery is then unavailable).
inline std::optional<BNStats> extract_bn_stats(const TeacherHandle& t) {
  if (!arch_has_bn_statistics(t.spec().arch)) return std::nullopt;
  auto model = t.instance();
  BNStats out;
  int i = 0;
  for (auto* bn : model.batchnorms()) {
    out.push_back({"bn" + std::to_string(i++),
                   std::vector<double>(bn->running_mean().begin(), bn->running_mean().end()),
                   std::vector<double>(bn->running_var().begin(), bn->running_var().end())});
  }
  if (out.empty()) return std::nullopt;
  return out;
}

inline Tensor<float> teacher_forward(const TeacherHandle& t, const Tensor<float>& batch) {
  auto model = t.instance();
  return model.forward(batch, nn::Mode::eval);
}

// ---- pools --------------------------------------------------------------

// Ordered set of teachers producing averaged probabilities. Owns its own
// forward-pass copies, so one pool serves one worker.
class TeacherPool {
 public:
  explicit TeacherPool(std::vector<TeacherHandle> members) : members_(std::move(members)) {
    require(!members_.empty(), ErrorKind::config, "teacher pool is empty");
    const auto& first = members_.front();
    for (const auto& m : members_) {
      require(m.spec().num_classes == first.spec().num_classes, ErrorKind::config,
              "teacher pool mixes class counts (" + std::to_string(first.spec().num_classes) + " vs " +
                  std::to_string(m.spec().num_classes) + ")");
      require(m.spec().resolution == first.spec().resolution, ErrorKind::config,
              "teacher pool mixes input resolutions");
      require(m.dataset() == first.dataset(), ErrorKind::config,
              "teacher pool members trained on different datasets (" + first.dataset() + " vs " + m.dataset() + ")");
    }
    for (const auto& m : members_) runners_.push_back(m.instance());
  }

  std::size_t size() const { return members_.size(); }
  const std::vector<TeacherHandle>& members() const { return members_; }
  int num_classes() const { return members_.front().spec().num_classes; }
  int resolution() const { return members_.front().spec().resolution; }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    for (const auto& m : members_) out.push_back(m.id());
    return out;
  }

  std::string fingerprint() const {
    Sha256 h;
    for (const auto& id : ids()) h.update(id).update("\n");
    return h.hex();
  }

  // Raw logits of each member.
  std::vector<Tensor<float>> member_logits(const Tensor<float>& batch) {
    require(batch.shape.h == resolution() && batch.shape.w == resolution(), ErrorKind::shape,
            "pool resolution " + std::to_string(resolution()) + " does not match batch " + batch.shape.str());
    std::vector<Tensor<float>> out;
    for (auto& r : runners_) out.push_back(r.forward(batch, nn::Mode::eval));
    return out;
  }

 private:
  std::vector<TeacherHandle> members_;
  std::vector<nn::Model<float>> runners_;
};

inline TeacherPool build_pool(std::vector<TeacherHandle> teachers) { return TeacherPool(std::move(teachers)); }

}  // namespace dbench::teachers
