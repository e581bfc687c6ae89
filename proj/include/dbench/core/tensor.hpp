#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dbench/core/error.hpp"

namespace dbench {

// NCHW shape. Vectors and logits use h = w = 1.
struct Shape {
  int n = 0, c = 0, h = 1, w = 1;

  std::size_t size() const { return std::size_t(n) * c * h * w; }
  std::size_t per_sample() const { return std::size_t(c) * h * w; }
  std::size_t plane() const { return std::size_t(h) * w; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + "]";
  }
};

template <class T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(s), data(s.size(), fill) {}
  Tensor(Shape s, std::vector<T> values) : shape(s), data(std::move(values)) {
    require(data.size() == shape.size(), ErrorKind::shape,
            "tensor data size " + std::to_string(data.size()) + " does not match shape " + shape.str());
  }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& at(int n, int c, int h = 0, int w = 0) {
    return data[((std::size_t(n) * shape.c + c) * shape.h + h) * shape.w + w];
  }
  const T& at(int n, int c, int h = 0, int w = 0) const {
    return data[((std::size_t(n) * shape.c + c) * shape.h + h) * shape.w + w];
  }

  std::span<T> sample(int n) { return {data.data() + n * shape.per_sample(), shape.per_sample()}; }
  std::span<const T> sample(int n) const {
    return {data.data() + n * shape.per_sample(), shape.per_sample()};
  }

  void zero() { std::fill(data.begin(), data.end(), T(0)); }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

// Rows [first, first + count) of a batch.
template <class T>
Tensor<T> slice_batch(const Tensor<T>& t, int first, int count) {
  Shape s = t.shape;
  s.n = count;
  Tensor<T> out(s);
  std::copy_n(t.data.begin() + first * t.shape.per_sample(), s.size(), out.data.begin());
  return out;
}

template <class T>
Tensor<T> gather_batch(const Tensor<T>& t, std::span<const int> rows) {
  Shape s = t.shape;
  s.n = static_cast<int>(rows.size());
  Tensor<T> out(s);
  const auto ps = t.shape.per_sample();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(t.data.begin() + rows[i] * ps, ps, out.data.begin() + i * ps);
  return out;
}

}  // namespace dbench
