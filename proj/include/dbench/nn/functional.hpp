#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "dbench/core/tensor.hpp"

namespace dbench::nn {

// Row-wise softmax of logits / temperature.
template <class T>
Tensor<T> softmax(const Tensor<T>& logits, double temperature = 1.0) {
  Tensor<T> p(logits.shape);
  const int k = logits.shape.c;
  for (int n = 0; n < logits.shape.n; ++n) {
    const T* z = &logits.at(n, 0);
    T* q = &p.at(n, 0);
    T mx = z[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, z[j]);
    T s = 0;
    for (int j = 0; j < k; ++j) {
      q[j] = std::exp((z[j] - mx) / T(temperature));
      s += q[j];
    }
    for (int j = 0; j < k; ++j) q[j] /= s;
  }
  return p;
}

template <class T>
Tensor<T> log_softmax(const Tensor<T>& logits, double temperature = 1.0) {
  Tensor<T> out(logits.shape);
  const int k = logits.shape.c;
  for (int n = 0; n < logits.shape.n; ++n) {
    const T* z = &logits.at(n, 0);
    T* o = &out.at(n, 0);
    T mx = z[0] / T(temperature);
    for (int j = 1; j < k; ++j) mx = std::max(mx, z[j] / T(temperature));
    T s = 0;
    for (int j = 0; j < k; ++j) s += std::exp(z[j] / T(temperature) - mx);
    const T lse = mx + std::log(s);
    for (int j = 0; j < k; ++j) o[j] = z[j] / T(temperature) - lse;
  }
  return out;
}

template <class T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
  std::vector<int> out(logits.shape.n);
  for (int n = 0; n < logits.shape.n; ++n) {
    const T* z = &logits.at(n, 0);
    out[n] = int(std::max_element(z, z + logits.shape.c) - z);
  }
  return out;
}

// Mean cross-entropy against integer targets; fills dL/dlogits when grad != nullptr.
template <class T>
T cross_entropy(const Tensor<T>& logits, std::span<const int> targets, Tensor<T>* grad = nullptr) {
  const auto ls = log_softmax(logits);
  const int b = logits.shape.n, k = logits.shape.c;
  T loss = 0;
  if (grad) *grad = Tensor<T>(logits.shape);
  for (int n = 0; n < b; ++n) {
    loss -= ls.at(n, targets[n]);
    if (grad) {
      for (int j = 0; j < k; ++j) grad->at(n, j) = std::exp(ls.at(n, j)) / T(b);
      grad->at(n, targets[n]) -= T(1) / T(b);
    }
  }
  return loss / T(b);
}

}  // namespace dbench::nn
