#pragma once

#include <cmath>
#include <vector>

#include "dbench/nn/layers.hpp"

namespace dbench::nn {

template <class T>
void zero_grad(const std::vector<Param<T>*>& params) {
  for (auto* p : params) p->grad.zero();
}

// Adam with decoupled weight decay (Loshchilov & Hutter).
template <class T>
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
  };

  AdamW(std::vector<Param<T>*> params, Options opt) : params_(std::move(params)), opt_(opt) {
    for (auto* p : params_) {
      m_.emplace_back(p->value.size(), T(0));
      v_.emplace_back(p->value.size(), T(0));
    }
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, double(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& w = params_[k]->value.data;
      const auto& g = params_[k]->grad.data;
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] -= T(lr * opt_.weight_decay) * w[i];
        m[i] = T(opt_.beta1) * m[i] + T(1 - opt_.beta1) * g[i];
        v[i] = T(opt_.beta2) * v[i] + T(1 - opt_.beta2) * g[i] * g[i];
        const T mhat = m[i] / T(bc1);
        const T denom = std::sqrt(v[i] / T(bc2)) + T(opt_.eps);
        w[i] -= T(lr) * mhat / denom;
      }
    }
  }

 private:
  std::vector<Param<T>*> params_;
  Options opt_;
  std::vector<std::vector<T>> m_, v_;
  long t_ = 0;
};

template <class T>
class Sgd {
 public:
  struct Options {
    double momentum = 0.9;
    double weight_decay = 5e-4;
    bool nesterov = false;
  };

  Sgd(std::vector<Param<T>*> params, Options opt) : params_(std::move(params)), opt_(opt) {
    for (auto* p : params_) buf_.emplace_back(p->value.size(), T(0));
  }

  void step(double lr) {
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& w = params_[k]->value.data;
      const auto& g = params_[k]->grad.data;
      auto& b = buf_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        T d = g[i] + T(opt_.weight_decay) * w[i];
        b[i] = T(opt_.momentum) * b[i] + d;
        if (opt_.nesterov) d += T(opt_.momentum) * b[i];
        else d = b[i];
        w[i] -= T(lr) * d;
      }
    }
  }

 private:
  std::vector<Param<T>*> params_;
  Options opt_;
  std::vector<std::vector<T>> buf_;
};

}  // namespace dbench::nn
