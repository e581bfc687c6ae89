#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "dbench/core/rng.hpp"
#include "dbench/core/tensor.hpp"

namespace dbench {

struct CropBox {
  int top = 0, left = 0, height = 0, width = 0;
  bool operator==(const CropBox&) const = default;
};

// Random-resized-crop box: area fraction in [scale_lo, scale_hi], aspect
// ratio log-uniform in [3/4, 4/3], ten attempts then a centred fallback.
inline CropBox sample_resized_crop(Rng& rng, int h, int w, double scale_lo, double scale_hi) {
  const double area = double(h) * w;
  const double log_lo = std::log(3.0 / 4.0), log_hi = std::log(4.0 / 3.0);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * uniform(rng, scale_lo, scale_hi);
    const double ratio = std::exp(uniform(rng, log_lo, log_hi));
    const int cw = int(std::lround(std::sqrt(target * ratio)));
    const int ch = int(std::lround(std::sqrt(target / ratio)));
    if (cw > 0 && cw <= w && ch > 0 && ch <= h) {
      const int top = uniform_int(rng, 0, h - ch);
      const int left = uniform_int(rng, 0, w - cw);
      return {top, left, ch, cw};
    }
  }
  return {0, 0, h, w};
}

// Bilinear resample of crop `box` of one CHW image to out_h x out_w
// (half-pixel centres, edge clamping).
template <class T>
void resize_crop(std::span<const T> src, int c, int h, int w, const CropBox& box, std::span<T> dst, int out_h,
                 int out_w) {
  const double sy = double(box.height) / out_h, sx = double(box.width) / out_w;
  for (int i = 0; i < out_h; ++i) {
    double fy = (i + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, double(box.height - 1));
    const int y0 = int(std::floor(fy));
    const int y1 = std::min(y0 + 1, box.height - 1);
    const T wy = T(fy - y0);
    for (int j = 0; j < out_w; ++j) {
      double fx = (j + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, double(box.width - 1));
      const int x0 = int(std::floor(fx));
      const int x1 = std::min(x0 + 1, box.width - 1);
      const T wx = T(fx - x0);
      for (int k = 0; k < c; ++k) {
        const T* p = src.data() + std::size_t(k) * h * w;
        const T a = p[std::size_t(box.top + y0) * w + box.left + x0];
        const T b = p[std::size_t(box.top + y0) * w + box.left + x1];
        const T cc = p[std::size_t(box.top + y1) * w + box.left + x0];
        const T d = p[std::size_t(box.top + y1) * w + box.left + x1];
        dst[(std::size_t(k) * out_h + i) * out_w + j] =
            (T(1) - wy) * ((T(1) - wx) * a + wx * b) + wy * ((T(1) - wx) * cc + wx * d);
      }
    }
  }
}

// Adjoint of resize_crop: accumulates dL/d(dst) back into dL/d(src).
template <class T>
void resize_crop_backward(std::span<const T> grad_dst, int c, int h, int w, const CropBox& box,
                          std::span<T> grad_src, int out_h, int out_w) {
  const double sy = double(box.height) / out_h, sx = double(box.width) / out_w;
  for (int i = 0; i < out_h; ++i) {
    double fy = (i + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, double(box.height - 1));
    const int y0 = int(std::floor(fy));
    const int y1 = std::min(y0 + 1, box.height - 1);
    const T wy = T(fy - y0);
    for (int j = 0; j < out_w; ++j) {
      double fx = (j + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, double(box.width - 1));
      const int x0 = int(std::floor(fx));
      const int x1 = std::min(x0 + 1, box.width - 1);
      const T wx = T(fx - x0);
      for (int k = 0; k < c; ++k) {
        T* p = grad_src.data() + std::size_t(k) * h * w;
        const T g = grad_dst[(std::size_t(k) * out_h + i) * out_w + j];
        p[std::size_t(box.top + y0) * w + box.left + x0] += (T(1) - wy) * (T(1) - wx) * g;
        p[std::size_t(box.top + y0) * w + box.left + x1] += (T(1) - wy) * wx * g;
        p[std::size_t(box.top + y1) * w + box.left + x0] += wy * (T(1) - wx) * g;
        p[std::size_t(box.top + y1) * w + box.left + x1] += wy * wx * g;
      }
    }
  }
}

template <class T>
void flip_horizontal(std::span<T> img, int c, int h, int w) {
  for (int k = 0; k < c; ++k)
    for (int i = 0; i < h; ++i) {
      T* row = img.data() + (std::size_t(k) * h + i) * w;
      std::reverse(row, row + w);
    }
}

}  // namespace dbench
