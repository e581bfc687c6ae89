#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "dbench/core/error.hpp"
#include "dbench/datahub/dataset.hpp"
#include "dbench/nn/functional.hpp"
#include "dbench/nn/models.hpp"

namespace dbench::posteval {

// Top-1 accuracy (percent) over the whole split: one pass, inference mode,
// no augmentation.
template <class T>
double evaluate_accuracy(nn::Model<T>& model, const datahub::ImageSet& split, int batch_size = 250) {
  require(split.size() > 0, ErrorKind::invariant, "evaluate_accuracy: empty test split");
  long correct = 0;
  std::vector<int> rows;
  for (int first = 0; first < split.size(); first += batch_size) {
    const int count = std::min(batch_size, split.size() - first);
    rows.resize(count);
    std::iota(rows.begin(), rows.end(), first);
    auto x = split.batch(rows);
    Tensor<T> xt;
    if constexpr (std::is_same_v<T, float>) xt = std::move(x);
    else xt = x.template cast<T>();
    const auto pred = nn::argmax_rows(model.forward(xt, nn::Mode::eval));
    for (int i = 0; i < count; ++i) correct += pred[i] == split.labels[first + i];
  }
  return 100.0 * double(correct) / double(split.size());
}

// Same measure for an arbitrary predictor (used for oracle and constant
// baselines in tests).
template <class Predict>
double accuracy_of(const std::vector<int>& labels, Predict&& predict) {
  require(!labels.empty(), ErrorKind::invariant, "evaluate_accuracy: empty test split");
  long correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predict(int(i)) == labels[i];
  return 100.0 * double(correct) / double(labels.size());
}

}  // namespace dbench::posteval
