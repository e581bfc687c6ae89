#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dbench/core/error.hpp"
#include "dbench/nn/functional.hpp"
#include "dbench/relabel/augment.hpp"
#include "dbench/teachers/teacher.hpp"

namespace dbench::relabel {

struct SoftLabels {
  Tensor<float> probabilities;  // [B, K], rows sum to 1
  Tensor<float> mean_logits;    // [B, K], raw logits averaged over the pool
  double temperature = 1.0;
  std::string pool_fingerprint;
};

// Mean over pool members of softmax(logits / tau). Accumulation runs in
// double, so a pool of K identical members reproduces the single-member
// probabilities exactly.
inline SoftLabels soft_labels_from_logits(const std::vector<Tensor<float>>& logits, double temperature,
                                          std::string fingerprint = {}) {
  require(temperature > 0, ErrorKind::config, "soft labels: temperature must be positive");
  require(!logits.empty(), ErrorKind::config, "soft labels: empty pool");
  const Shape s = logits.front().shape;
  std::vector<double> prob(s.size(), 0.0), lg(s.size(), 0.0);
  for (const auto& z : logits) {
    require(z.shape == s, ErrorKind::shape, "soft labels: member logits disagree in shape");
    const auto p = nn::softmax(z.cast<double>(), temperature);
    for (std::size_t i = 0; i < s.size(); ++i) {
      prob[i] += p.data[i];
      lg[i] += z.data[i];
    }
  }
  SoftLabels out;
  out.temperature = temperature;
  out.pool_fingerprint = std::move(fingerprint);
  out.probabilities = Tensor<float>(s);
  out.mean_logits = Tensor<float>(s);
  const double k = double(logits.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    out.probabilities.data[i] = float(prob[i] / k);
    out.mean_logits.data[i] = float(lg[i] / k);
  }
  return out;
}

inline SoftLabels soft_labels(teachers::TeacherPool& pool, const AugmentedBatch& ab, double temperature) {
  require(temperature > 0, ErrorKind::config, "soft labels: temperature must be positive");
  return soft_labels_from_logits(pool.member_logits(ab.images), temperature, pool.fingerprint());
}

}  // namespace dbench::relabel
