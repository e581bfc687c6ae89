#pragma once

// Minimal NCHW layer set with hand-written backward passes. Every layer keeps
// the state of its last forward call, so one Module instance serves one
// forward/backward sequence at a time; clone() gives a worker its own copy.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "dbench/core/error.hpp"
#include "dbench/core/rng.hpp"
#include "dbench/core/tensor.hpp"

namespace dbench::nn {

enum class Mode { train, eval };

template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  Param(std::string n, Shape s) : name(std::move(n)), value(s), grad(s) {}
};

// Named reference to a tensor that belongs in a checkpoint.
template <class T>
struct StateRef {
  std::string name;
  Tensor<T>* tensor;
};

template <class T>
class BatchNorm2d;

template <class T>
class Module {
 public:
  virtual ~Module() = default;
  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
  // Returns dL/dx and accumulates parameter gradients.
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
  virtual std::unique_ptr<Module> clone() const = 0;
  virtual void collect_params(std::vector<Param<T>*>&) {}
  virtual void collect_state(const std::string&, std::vector<StateRef<T>>&) {}
  virtual void collect_batchnorms(std::vector<BatchNorm2d<T>*>&) {}
};

template <class T>
using ModulePtr = std::unique_ptr<Module<T>>;

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Per-channel affine map from pixel space [0,1] into the model's input space.
template <class T>
class Normalize final : public Module<T> {
 public:
  Normalize(std::vector<double> mean, std::vector<double> stdev)
      : mean_(std::move(mean)), std_(std::move(stdev)) {}

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    require(int(mean_.size()) == x.shape.c, ErrorKind::shape,
            "normalize: expected " + std::to_string(mean_.size()) + " channels, got " + x.shape.str());
    Tensor<T> y(x.shape);
    const auto plane = x.shape.plane();
    for (int n = 0; n < x.shape.n; ++n)
      for (int c = 0; c < x.shape.c; ++c) {
        const T m = T(mean_[c]), s = T(std_[c]);
        const T* src = &x.at(n, c);
        T* dst = &y.at(n, c);
        for (std::size_t i = 0; i < plane; ++i) dst[i] = (src[i] - m) / s;
      }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g) override {
    Tensor<T> dx(g.shape);
    const auto plane = g.shape.plane();
    for (int n = 0; n < g.shape.n; ++n)
      for (int c = 0; c < g.shape.c; ++c) {
        const T s = T(std_[c]);
        const T* src = &g.at(n, c);
        T* dst = &dx.at(n, c);
        for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] / s;
      }
    return dx;
  }

  std::unique_ptr<Module<T>> clone() const override { return std::make_unique<Normalize>(*this); }

 private:
  std::vector<double> mean_, std_;
};

template <class T>
class Conv2d final : public Module<T> {
 public:
  Conv2d(int cin, int cout, int kernel, int stride, int pad, Rng& rng)
      : cin_(cin), cout_(cout), k_(kernel), stride_(stride), pad_(pad),
        weight_("weight", Shape{cout, cin, kernel, kernel}) {
    // Kaiming normal, fan_out, ReLU gain.
    const double sd = std::sqrt(2.0 / (double(cout) * kernel * kernel));
    for (auto& v : weight_.value.data) v = T(sd * normal(rng));
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    require(x.shape.c == cin_, ErrorKind::shape,
            "conv2d: expected " + std::to_string(cin_) + " input channels, got " + x.shape.str());
    in_shape_ = x.shape;
    const int ho = out_dim(x.shape.h), wo = out_dim(x.shape.w);
    const int rows = cin_ * k_ * k_;
    const std::size_t cols_per = std::size_t(ho) * wo;
    cols_.resize(rows, Eigen::Index(x.shape.n * cols_per));
    for (int n = 0; n < x.shape.n; ++n) im2col(x, n, ho, wo, n * cols_per);

    Eigen::Map<const RowMatrix<T>> w(weight_.value.ptr(), cout_, rows);
    RowMatrix<T> out = w * cols_;
    Tensor<T> y(Shape{x.shape.n, cout_, ho, wo});
    for (int n = 0; n < x.shape.n; ++n)
      for (int co = 0; co < cout_; ++co)
        std::copy_n(out.data() + co * out.cols() + n * cols_per, cols_per, &y.at(n, co));
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g) override {
    const int ho = g.shape.h, wo = g.shape.w;
    const std::size_t cols_per = std::size_t(ho) * wo;
    const int rows = cin_ * k_ * k_;
    RowMatrix<T> gm(cout_, Eigen::Index(g.shape.n * cols_per));
    for (int n = 0; n < g.shape.n; ++n)
      for (int co = 0; co < cout_; ++co)
        std::copy_n(&g.at(n, co), cols_per, gm.data() + co * gm.cols() + n * cols_per);

    Eigen::Map<RowMatrix<T>> dw(weight_.grad.ptr(), cout_, rows);
    dw.noalias() += gm * cols_.transpose();
    Eigen::Map<const RowMatrix<T>> w(weight_.value.ptr(), cout_, rows);
    RowMatrix<T> dcols = w.transpose() * gm;

    Tensor<T> dx(in_shape_);
    for (int n = 0; n < g.shape.n; ++n) col2im(dcols, dx, n, ho, wo, n * cols_per);
    return dx;
  }

  std::unique_ptr<Module<T>> clone() const override { return std::make_unique<Conv2d>(*this); }
  void collect_params(std::vector<Param<T>*>& out) override { out.push_back(&weight_); }
  void collect_state(const std::string& prefix, std::vector<StateRef<T>>& out) override {
    out.push_back({prefix + "weight", &weight_.value});
  }

  Param<T>& weight() { return weight_; }

 private:
  int out_dim(int in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }

  void im2col(const Tensor<T>& x, int n, int ho, int wo, std::size_t col0) {
    const int h = x.shape.h, w = x.shape.w;
    for (int c = 0; c < cin_; ++c)
      for (int ki = 0; ki < k_; ++ki)
        for (int kj = 0; kj < k_; ++kj) {
          T* row = cols_.data() + ((c * k_ + ki) * k_ + kj) * cols_.cols() + col0;
          for (int oi = 0; oi < ho; ++oi) {
            const int ii = oi * stride_ - pad_ + ki;
            for (int oj = 0; oj < wo; ++oj) {
              const int jj = oj * stride_ - pad_ + kj;
              row[oi * wo + oj] =
                  (ii >= 0 && ii < h && jj >= 0 && jj < w) ? x.at(n, c, ii, jj) : T(0);
            }
          }
        }
  }

  void col2im(const RowMatrix<T>& dcols, Tensor<T>& dx, int n, int ho, int wo, std::size_t col0) const {
    const int h = dx.shape.h, w = dx.shape.w;
    for (int c = 0; c < cin_; ++c)
      for (int ki = 0; ki < k_; ++ki)
        for (int kj = 0; kj < k_; ++kj) {
          const T* row = dcols.data() + ((c * k_ + ki) * k_ + kj) * dcols.cols() + col0;
          for (int oi = 0; oi < ho; ++oi) {
            const int ii = oi * stride_ - pad_ + ki;
            if (ii < 0 || ii >= h) continue;
            for (int oj = 0; oj < wo; ++oj) {
              const int jj = oj * stride_ - pad_ + kj;
              if (jj >= 0 && jj < w) dx.at(n, c, ii, jj) += row[oi * wo + oj];
            }
          }
        }
  }

  int cin_, cout_, k_, stride_, pad_;
  Param<T> weight_;
  Shape in_shape_;
  RowMatrix<T> cols_;
};

// Batch normalization over (N, H, W) per channel.
//
// Train mode normalizes with batch statistics and updates the running
// estimates. Eval mode normalizes with the running estimates; in both modes
// the biased mean/variance of the layer input are recorded so a caller can
// place a loss on them (see set_stat_grad).
template <class T>
class BatchNorm2d final : public Module<T> {
 public:
  explicit BatchNorm2d(int channels, double eps = 1e-5, double momentum = 0.1)
      : c_(channels), eps_(eps), momentum_(momentum),
        gamma_("weight", Shape{channels, 1, 1, 1}), beta_("bias", Shape{channels, 1, 1, 1}),
        running_mean_(Shape{channels, 1, 1, 1}, T(0)), running_var_(Shape{channels, 1, 1, 1}, T(1)) {
    std::fill(gamma_.value.data.begin(), gamma_.value.data.end(), T(1));
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    require(x.shape.c == c_, ErrorKind::shape,
            "batchnorm: expected " + std::to_string(c_) + " channels, got " + x.shape.str());
    mode_ = mode;
    input_ = x;
    const std::size_t plane = x.shape.plane();
    const double m = double(x.shape.n) * plane;
    batch_mean_.assign(c_, T(0));
    batch_var_.assign(c_, T(0));
    for (int c = 0; c < c_; ++c) {
      T s = 0;
      for (int n = 0; n < x.shape.n; ++n) {
        const T* p = &x.at(n, c);
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      const T mu = s / T(m);
      T v = 0;
      for (int n = 0; n < x.shape.n; ++n) {
        const T* p = &x.at(n, c);
        for (std::size_t i = 0; i < plane; ++i) v += (p[i] - mu) * (p[i] - mu);
      }
      batch_mean_[c] = mu;
      batch_var_[c] = v / T(m);
    }

    invstd_.assign(c_, T(0));
    used_mean_.assign(c_, T(0));
    for (int c = 0; c < c_; ++c) {
      if (mode == Mode::train) {
        used_mean_[c] = batch_mean_[c];
        invstd_[c] = T(1) / std::sqrt(batch_var_[c] + T(eps_));
        const T unbiased = m > 1 ? batch_var_[c] * T(m / (m - 1)) : batch_var_[c];
        running_mean_.data[c] = T(1 - momentum_) * running_mean_.data[c] + T(momentum_) * batch_mean_[c];
        running_var_.data[c] = T(1 - momentum_) * running_var_.data[c] + T(momentum_) * unbiased;
      } else {
        used_mean_[c] = running_mean_.data[c];
        invstd_[c] = T(1) / std::sqrt(running_var_.data[c] + T(eps_));
      }
    }

    Tensor<T> y(x.shape);
    xhat_ = Tensor<T>(x.shape);
    for (int n = 0; n < x.shape.n; ++n)
      for (int c = 0; c < c_; ++c) {
        const T* p = &x.at(n, c);
        T* xh = &xhat_.at(n, c);
        T* q = &y.at(n, c);
        const T g = gamma_.value.data[c], b = beta_.value.data[c];
        for (std::size_t i = 0; i < plane; ++i) {
          xh[i] = (p[i] - used_mean_[c]) * invstd_[c];
          q[i] = g * xh[i] + b;
        }
      }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g) override {
    const std::size_t plane = g.shape.plane();
    const T m = T(double(g.shape.n) * plane);
    Tensor<T> dx(g.shape);
    for (int c = 0; c < c_; ++c) {
      T sum_dy = 0, sum_dy_xhat = 0;
      for (int n = 0; n < g.shape.n; ++n) {
        const T* dy = &g.at(n, c);
        const T* xh = &xhat_.at(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          sum_dy += dy[i];
          sum_dy_xhat += dy[i] * xh[i];
        }
      }
      gamma_.grad.data[c] += sum_dy_xhat;
      beta_.grad.data[c] += sum_dy;
      const T gam = gamma_.value.data[c];
      const T is = invstd_[c];
      const bool stat = !stat_grad_mean_.empty();
      const T gm = stat ? stat_grad_mean_[c] / m : T(0);
      const T gv = stat ? T(2) * stat_grad_var_[c] / m : T(0);
      for (int n = 0; n < g.shape.n; ++n) {
        const T* dy = &g.at(n, c);
        const T* xh = &xhat_.at(n, c);
        const T* xin = &input_.at(n, c);
        T* d = &dx.at(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          T v;
          if (mode_ == Mode::train)
            v = gam * is / m * (m * dy[i] - sum_dy - xh[i] * sum_dy_xhat);
          else
            v = gam * is * dy[i];
          if (stat) v += gm + gv * (xin[i] - batch_mean_[c]);
          d[i] = v;
        }
      }
    }
    stat_grad_mean_.clear();
    stat_grad_var_.clear();
    return dx;
  }

  // dL/d(batch mean) and dL/d(batch variance) of the recorded input
  // statistics; consumed (and cleared) by the next backward().
  void set_stat_grad(std::vector<T> d_mean, std::vector<T> d_var) {
    require(int(d_mean.size()) == c_ && int(d_var.size()) == c_, ErrorKind::shape,
            "batchnorm stat grad: channel mismatch");
    stat_grad_mean_ = std::move(d_mean);
    stat_grad_var_ = std::move(d_var);
  }

  std::unique_ptr<Module<T>> clone() const override { return std::make_unique<BatchNorm2d>(*this); }
  void collect_params(std::vector<Param<T>*>& out) override {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }
  void collect_state(const std::string& prefix, std::vector<StateRef<T>>& out) override {
    out.push_back({prefix + "weight", &gamma_.value});
    out.push_back({prefix + "bias", &beta_.value});
    out.push_back({prefix + "running_mean", &running_mean_});
    out.push_back({prefix + "running_var", &running_var_});
  }
  void collect_batchnorms(std::vector<BatchNorm2d<T>*>& out) override { out.push_back(this); }

  int channels() const { return c_; }
  const std::vector<T>& running_mean() const { return running_mean_.data; }
  const std::vector<T>& running_var() const { return running_var_.data; }
  const std::vector<T>& batch_mean() const { return batch_mean_; }
  const std::vector<T>& batch_var() const { return batch_var_; }

 private:
  int c_;
  double eps_, momentum_;
  Param<T> gamma_, beta_;
  Tensor<T> running_mean_, running_var_;
  Mode mode_ = Mode::eval;
  Tensor<T> input_, xhat_;
  std::vector<T> batch_mean_, batch_var_, used_mean_, invstd_;
  std::vector<T> stat_grad_mean_, stat_grad_var_;
};

template <class T>
class ReLU final : public Module<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    Tensor<T> y(x.shape);
    mask_.assign(x.size(), 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      mask_[i] = x.data[i] > T(0);
      y.data[i] = mask_[i] ? x.data[i] : T(0);
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& g) override {
    Tensor<T> dx(g.shape);
    for (std::size_t i = 0; i < g.size(); ++i) dx.data[i] = mask_[i] ? g.data[i] : T(0);
    return dx;
  }
  std::unique_ptr<Module<T>> clone() const override { return std::make_unique<ReLU>(*this); }

 private:
  std::vector<char> mask_;
};

template <class T>
class MaxPool2d final : public Module<T> {
 public:
  MaxPool2d(int kernel, int stride, int pad = 0) : k_(kernel), s_(stride), p_(pad) {}

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    in_shape_ = x.shape;
    const int ho = (x.shape.h + 2 * p_ - k_) / s_ + 1, wo = (x.shape.w + 2 * p_ - k_) / s_ + 1;
    Tensor<T> y(Shape{x.shape.n, x.shape.c, ho, wo});
    argmax_.assign(y.size(), 0);
    std::size_t o = 0;
    for (int n = 0; n < x.shape.n; ++n)
      for (int c = 0; c < x.shape.c; ++c)
        for (int i = 0; i < ho; ++i)
          for (int j = 0; j < wo; ++j, ++o) {
            T best = -std::numeric_limits<T>::infinity();
            std::size_t arg = 0;
            for (int a = 0; a < k_; ++a)
              for (int b = 0; b < k_; ++b) {
                const int ii = i * s_ - p_ + a, jj = j * s_ - p_ + b;
                if (ii < 0 || ii >= x.shape.h || jj < 0 || jj >= x.shape.w) continue;
                const std::size_t idx = ((std::size_t(n) * x.shape.c + c) * x.shape.h + ii) * x.shape.w + jj;
                if (x.data[idx] > best) {
                  best = x.data[idx];
                  arg = idx;
                }
              }
            y.data[o] = best;
            argmax_[o] = arg;
          }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g) override {
    Tensor<T> dx(in_shape_);
    for (std::size_t o = 0; o < g.size(); ++o) dx.data[argmax_[o]] += g.data[o];
    return dx;
  }
  std::unique_ptr<Module<T>> clone() const override { return std::make_unique<MaxPool2d>(*this); }

 private:
  int k_, s_, p_;
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
};

template <class T>
class GlobalAvgPool final : public Module<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    in_shape_ = x.shape;
    Tensor<T> y(Shape{x.shape.n, x.shape.c, 1, 1});
    const auto plane = x.shape.plane();
    for (int n = 0; n < x.shape.n; ++n)
      for (int c = 0; c < x.shape.c; ++c) {
        const T* p = &x.at(n, c);
        T s = 0;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
        y.at(n, c) = s / T(plane);
      }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& g) override {
    Tensor<T> dx(in_shape_);
    const auto plane = in_shape_.plane();
    for (int n = 0; n < in_shape_.n; ++n)
      for (int c = 0; c < in_shape_.c; ++c) {
        const T v = g.at(n, c) / T(plane);
        T* d = &dx.at(n, c);
        for (std::size_t i = 0; i < plane; ++i) d[i] = v;
      }
    return dx;
  }
  std::unique_ptr<Module<T>> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }

 private:
  Shape in_shape_;
};

// Fully connected layer over the flattened per-sample features.
template <class T>
class Linear final : public Module<T> {
 public:
  Linear(int in, int out, Rng& rng)
      : in_(in), out_(out), weight_("weight", Shape{out, in, 1, 1}), bias_("bias", Shape{out, 1, 1, 1}) {
    const double bound = 1.0 / std::sqrt(double(in));
    for (auto& v : weight_.value.data) v = T(uniform(rng, -bound, bound));
    for (auto& v : bias_.value.data) v = T(uniform(rng, -bound, bound));
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    require(int(x.shape.per_sample()) == in_, ErrorKind::shape,
            "linear: expected " + std::to_string(in_) + " features, got " + x.shape.str());
    in_shape_ = x.shape;
    input_ = x;
    Eigen::Map<const RowMatrix<T>> xm(x.ptr(), x.shape.n, in_);
    Eigen::Map<const RowMatrix<T>> w(weight_.value.ptr(), out_, in_);
    Tensor<T> y(Shape{x.shape.n, out_, 1, 1});
    Eigen::Map<RowMatrix<T>> ym(y.ptr(), x.shape.n, out_);
    ym.noalias() = xm * w.transpose();
    for (int n = 0; n < x.shape.n; ++n)
      for (int o = 0; o < out_; ++o) ym(n, o) += bias_.value.data[o];
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g) override {
    Eigen::Map<const RowMatrix<T>> gm(g.ptr(), g.shape.n, out_);
    Eigen::Map<const RowMatrix<T>> xm(input_.ptr(), input_.shape.n, in_);
    Eigen::Map<RowMatrix<T>> dw(weight_.grad.ptr(), out_, in_);
    dw.noalias() += gm.transpose() * xm;
    for (int n = 0; n < g.shape.n; ++n)
      for (int o = 0; o < out_; ++o) bias_.grad.data[o] += gm(n, o);
    Eigen::Map<const RowMatrix<T>> w(weight_.value.ptr(), out_, in_);
    Tensor<T> dx(in_shape_);
    Eigen::Map<RowMatrix<T>> dxm(dx.ptr(), g.shape.n, in_);
    dxm.noalias() = gm * w;
    return dx;
  }

  std::unique_ptr<Module<T>> clone() const override { return std::make_unique<Linear>(*this); }
  void collect_params(std::vector<Param<T>*>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }
  void collect_state(const std::string& prefix, std::vector<StateRef<T>>& out) override {
    out.push_back({prefix + "weight", &weight_.value});
    out.push_back({prefix + "bias", &bias_.value});
  }

 private:
  int in_, out_;
  Param<T> weight_, bias_;
  Shape in_shape_;
  Tensor<T> input_;
};

template <class T>
class Sequential final : public Module<T> {
 public:
  Sequential() = default;
  Sequential(const Sequential& o) {
    for (const auto& m : o.layers_) layers_.push_back(m->clone());
  }
  Sequential& operator=(const Sequential& o) {
    if (this != &o) {
      layers_.clear();
      for (const auto& m : o.layers_) layers_.push_back(m->clone());
    }
    return *this;
  }
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <class M, class... Args>
  Sequential& add(Args&&... args) {
    layers_.push_back(std::make_unique<M>(std::forward<Args>(args)...));
    return *this;
  }
  Sequential& add(ModulePtr<T> m) {
    layers_.push_back(std::move(m));
    return *this;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    Tensor<T> h = x;
    for (auto& l : layers_) h = l->forward(h, mode);
    return h;
  }
  Tensor<T> backward(const Tensor<T>& g) override {
    Tensor<T> d = g;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) d = (*it)->backward(d);
    return d;
  }
  std::unique_ptr<Module<T>> clone() const override { return std::make_unique<Sequential>(*this); }
  void collect_params(std::vector<Param<T>*>& out) override {
    for (auto& l : layers_) l->collect_params(out);
  }
  void collect_state(const std::string& prefix, std::vector<StateRef<T>>& out) override {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i]->collect_state(prefix + std::to_string(i) + ".", out);
  }
  void collect_batchnorms(std::vector<BatchNorm2d<T>*>& out) override {
    for (auto& l : layers_) l->collect_batchnorms(out);
  }
  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }

 private:
  std::vector<ModulePtr<T>> layers_;
};

// ResNet basic block: relu(main(x) + shortcut(x)).
template <class T>
class BasicBlock final : public Module<T> {
 public:
  BasicBlock(int cin, int cout, int stride, Rng& rng) {
    main_.template add<Conv2d<T>>(cin, cout, 3, stride, 1, rng);
    main_.template add<BatchNorm2d<T>>(cout);
    main_.template add<ReLU<T>>();
    main_.template add<Conv2d<T>>(cout, cout, 3, 1, 1, rng);
    main_.template add<BatchNorm2d<T>>(cout);
    if (stride != 1 || cin != cout) {
      shortcut_.template add<Conv2d<T>>(cin, cout, 1, stride, 0, rng);
      shortcut_.template add<BatchNorm2d<T>>(cout);
    }
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    Tensor<T> a = main_.forward(x, mode);
    Tensor<T> b = shortcut_.empty() ? x : shortcut_.forward(x, mode);
    for (std::size_t i = 0; i < a.size(); ++i) a.data[i] += b.data[i];
    return relu_.forward(a, mode);
  }
  Tensor<T> backward(const Tensor<T>& g) override {
    Tensor<T> d = relu_.backward(g);
    Tensor<T> dx = main_.backward(d);
    Tensor<T> ds = shortcut_.empty() ? d : shortcut_.backward(d);
    for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += ds.data[i];
    return dx;
  }
  std::unique_ptr<Module<T>> clone() const override { return std::make_unique<BasicBlock>(*this); }
  void collect_params(std::vector<Param<T>*>& out) override {
    main_.collect_params(out);
    shortcut_.collect_params(out);
  }
  void collect_state(const std::string& prefix, std::vector<StateRef<T>>& out) override {
    main_.collect_state(prefix + "main.", out);
    shortcut_.collect_state(prefix + "shortcut.", out);
  }
  void collect_batchnorms(std::vector<BatchNorm2d<T>*>& out) override {
    main_.collect_batchnorms(out);
    shortcut_.collect_batchnorms(out);
  }

 private:
  Sequential<T> main_, shortcut_;
  ReLU<T> relu_;
};

}  // namespace dbench::nn
