#pragma once

#include <string>
#include <vector>

#include "dbench/core/error.hpp"
#include "dbench/teachers/teacher.hpp"

namespace dbench::synth {

using teachers::BNLayerStats;
using teachers::BNStats;

struct BNLossResult {
  double loss = 0.0;
  // dL/d(batch mean) and dL/d(batch var) per layer, already multiplied by
  // the decomposition weights.
  std::vector<std::vector<double>> d_mean, d_var;
};

// sum_l  mean_w * ||mu_l - mu_run_l||^2 + var_w * ||var_l - var_run_l||^2
inline BNLossResult bn_alignment_loss(const BNStats& batch, const BNStats& target, double mean_weight,
                                      double var_weight) {
  require(mean_weight >= 0 && var_weight >= 0, ErrorKind::config, "bn loss: weights must be non-negative");
  require(batch.size() == target.size(), ErrorKind::shape,
          "bn loss: " + std::to_string(batch.size()) + " batch layers vs " + std::to_string(target.size()) +
              " target layers");
  BNLossResult out;
  for (std::size_t l = 0; l < batch.size(); ++l) {
    const auto& b = batch[l];
    const auto& t = target[l];
    require(b.layer_id == t.layer_id, ErrorKind::shape,
            "bn loss: layer " + std::to_string(l) + " is '" + b.layer_id + "' in batch, '" + t.layer_id +
                "' in target");
    require(b.mean.size() == t.mean.size() && b.var.size() == t.var.size() && b.mean.size() == b.var.size(),
            ErrorKind::shape, "bn loss: channel count mismatch at layer " + b.layer_id);
    std::vector<double> dm(b.mean.size()), dv(b.var.size());
    for (std::size_t c = 0; c < b.mean.size(); ++c) {
      const double em = b.mean[c] - t.mean[c];
      const double ev = b.var[c] - t.var[c];
      out.loss += mean_weight * em * em + var_weight * ev * ev;
      dm[c] = 2 * mean_weight * em;
      dv[c] = 2 * var_weight * ev;
    }
    out.d_mean.push_back(std::move(dm));
    out.d_var.push_back(std::move(dv));
  }
  return out;
}

// Input statistics recorded by each BN layer during the last forward pass.
template <class T>
BNStats batch_bn_stats(nn::Model<T>& model) {
  BNStats out;
  int i = 0;
  for (auto* bn : model.batchnorms())
    out.push_back({"bn" + std::to_string(i++), std::vector<double>(bn->batch_mean().begin(), bn->batch_mean().end()),
                   std::vector<double>(bn->batch_var().begin(), bn->batch_var().end())});
  return out;
}

}  // namespace dbench::synth
