#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dbench/core/error.hpp"
#include "dbench/core/rng.hpp"
#include "dbench/nn/layers.hpp"
#include "json.hpp"

namespace dbench::nn {

struct ArchInfo {
  std::string id;
  bool has_batchnorm;
  bool native;  // buildable by this runtime
  std::vector<int> resolutions;
};

// Architectures the harness knows about. Non-native entries can be named in
// configs and registries (e.g. to report that a ViT has no BN statistics),
// but only native ones can be trained or run here.
inline const std::vector<ArchInfo>& arch_registry() {
  static const std::vector<ArchInfo> reg = {
      {"convnet-tiny", true, true, {8, 16, 32, 64, 224}},
      {"convnet-small", true, true, {32, 64, 224}},
      {"resnet18", true, true, {32, 64, 224}},
      {"mlp", false, true, {8, 16, 32, 64}},
      {"resnet50", true, false, {32, 64, 224}},
      {"resnet101", true, false, {32, 64, 224}},
      {"mobilenetv2", true, false, {32, 64, 224}},
      {"shufflenetv2", true, false, {32, 64, 224}},
      {"efficientnetb0", true, false, {32, 64, 224}},
      {"alexnet", false, false, {32, 64, 224}},
      {"swinv2t", false, false, {224}},
      {"vitb16", false, false, {224}},
  };
  return reg;
}

inline const ArchInfo& arch_info(std::string_view id) {
  for (const auto& a : arch_registry())
    if (a.id == id) return a;
  fail(ErrorKind::config, "unknown architecture '" + std::string(id) + "'");
}

struct ModelSpec {
  std::string arch = "convnet-small";
  int resolution = 32;
  int num_classes = 10;
  int channels = 3;

  void validate() const {
    const auto& info = arch_info(arch);
    require(num_classes >= 2, ErrorKind::config, "model num_classes must be >= 2");
    require(std::find(info.resolutions.begin(), info.resolutions.end(), resolution) != info.resolutions.end(),
            ErrorKind::config,
            "resolution " + std::to_string(resolution) + " is not supported by " + arch);
  }
  bool operator==(const ModelSpec&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelSpec, arch, resolution, num_classes, channels)

// Widths of the three conv stages of convnet-small.
inline constexpr int kConvSmallWidths[3] = {16, 32, 64};

template <class T>
class Model {
 public:
  Model(ModelSpec spec, std::vector<double> mean, std::vector<double> stdev, std::uint64_t seed)
      : spec_(std::move(spec)), mean_(std::move(mean)), std_(std::move(stdev)), norm_(mean_, std_),
        seed_(seed) {
    spec_.validate();
    const auto& info = arch_info(spec_.arch);
    require(info.native, ErrorKind::unsupported,
            "architecture '" + spec_.arch + "' is registered but not available in the native runtime");
    require(int(mean_.size()) == spec_.channels && int(std_.size()) == spec_.channels, ErrorKind::config,
            "normalization constants do not match channel count");
    Rng rng = make_rng(seed, {0x6d6f64656cULL});
    build(rng);
  }

  const ModelSpec& spec() const { return spec_; }
  const std::vector<double>& norm_mean() const { return mean_; }
  const std::vector<double>& norm_std() const { return std_; }
  std::uint64_t init_seed() const { return seed_; }

  // Input: pixel-space batch [B, C, R, R] in [0, 1].
  Tensor<T> forward(const Tensor<T>& pixels, Mode mode) {
    check_input(pixels.shape);
    return head_->forward(body_.forward(norm_.forward(pixels, mode), mode), mode);
  }

  Tensor<T> features(const Tensor<T>& pixels, Mode mode) {
    check_input(pixels.shape);
    return body_.forward(norm_.forward(pixels, mode), mode);
  }

  // Gradient w.r.t. the pixel input of the last forward().
  Tensor<T> backward(const Tensor<T>& grad_logits) {
    return norm_.backward(body_.backward(head_->backward(grad_logits)));
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    body_.collect_params(out);
    head_->collect_params(out);
    return out;
  }

  std::vector<BatchNorm2d<T>*> batchnorms() {
    std::vector<BatchNorm2d<T>*> out;
    body_.collect_batchnorms(out);
    return out;
  }

  std::vector<StateRef<T>> state() {
    std::vector<StateRef<T>> out;
    body_.collect_state("body.", out);
    head_->collect_state("head.", out);
    return out;
  }

  // Same architecture and values in another scalar type.
  template <class U>
  Model<U> cast() const {
    Model<U> out(spec_, mean_, std_, seed_);
    auto src = const_cast<Model*>(this)->state();
    auto dst = out.state();
    for (std::size_t i = 0; i < src.size(); ++i)
      dst[i].tensor->data.assign(src[i].tensor->data.begin(), src[i].tensor->data.end());
    return out;
  }

  Model(const Model& o)
      : spec_(o.spec_), mean_(o.mean_), std_(o.std_), norm_(o.norm_), body_(o.body_),
        head_(o.head_->clone()), seed_(o.seed_) {}
  Model& operator=(const Model& o) {
    if (this != &o) {
      spec_ = o.spec_;
      mean_ = o.mean_;
      std_ = o.std_;
      norm_ = o.norm_;
      body_ = o.body_;
      head_ = o.head_->clone();
      seed_ = o.seed_;
    }
    return *this;
  }
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

 private:
  void check_input(const Shape& s) const {
    require(s.c == spec_.channels && s.h == spec_.resolution && s.w == spec_.resolution, ErrorKind::shape,
            "model " + spec_.arch + " expects [B," + std::to_string(spec_.channels) + "," +
                std::to_string(spec_.resolution) + "," + std::to_string(spec_.resolution) + "], got " +
                s.str());
  }

  void build(Rng& rng) {
    const int c = spec_.channels, k = spec_.num_classes, r = spec_.resolution;
    if (spec_.arch == "convnet-tiny") {
      body_.template add<Conv2d<T>>(c, 8, 3, 1, 1, rng);
      body_.template add<BatchNorm2d<T>>(8);
      body_.template add<ReLU<T>>();
      body_.template add<MaxPool2d<T>>(2, 2);
      body_.template add<Conv2d<T>>(8, 8, 3, 1, 1, rng);
      body_.template add<BatchNorm2d<T>>(8);
      body_.template add<ReLU<T>>();
      body_.template add<GlobalAvgPool<T>>();
      head_ = std::make_unique<Linear<T>>(8, k, rng);
    } else if (spec_.arch == "convnet-small") {
      int in = c;
      for (int w : kConvSmallWidths) {
        body_.template add<Conv2d<T>>(in, w, 3, 1, 1, rng);
        body_.template add<BatchNorm2d<T>>(w);
        body_.template add<ReLU<T>>();
        body_.template add<MaxPool2d<T>>(2, 2);
        in = w;
      }
      body_.template add<GlobalAvgPool<T>>();
      head_ = std::make_unique<Linear<T>>(in, k, rng);
    } else if (spec_.arch == "resnet18") {
      if (r <= 32) {
        body_.template add<Conv2d<T>>(c, 64, 3, 1, 1, rng);
        body_.template add<BatchNorm2d<T>>(64);
        body_.template add<ReLU<T>>();
      } else {
        body_.template add<Conv2d<T>>(c, 64, 7, 2, 3, rng);
        body_.template add<BatchNorm2d<T>>(64);
        body_.template add<ReLU<T>>();
        body_.template add<MaxPool2d<T>>(3, 2, 1);
      }
      const int widths[4] = {64, 128, 256, 512};
      int in = 64;
      for (int s = 0; s < 4; ++s) {
        body_.template add<BasicBlock<T>>(in, widths[s], s == 0 ? 1 : 2, rng);
        body_.template add<BasicBlock<T>>(widths[s], widths[s], 1, rng);
        in = widths[s];
      }
      body_.template add<GlobalAvgPool<T>>();
      head_ = std::make_unique<Linear<T>>(512, k, rng);
    } else if (spec_.arch == "mlp") {
      body_.template add<Linear<T>>(c * r * r, 128, rng);
      body_.template add<ReLU<T>>();
      head_ = std::make_unique<Linear<T>>(128, k, rng);
    } else {
      fail(ErrorKind::unsupported, "no native builder for " + spec_.arch);
    }
  }

  ModelSpec spec_;
  std::vector<double> mean_, std_;
  Normalize<T> norm_;
  Sequential<T> body_;
  ModulePtr<T> head_;
  std::uint64_t seed_;
};

}  // namespace dbench::nn
