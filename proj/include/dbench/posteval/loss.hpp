#pragma once

// Student losses. All work in double on [B, K] logits and return the mean
// loss over the batch together with dL/dlogits.
//
//   kl      tau^2 * mean_b KL(p_teacher || softmax(z / tau))
//   mse_gt  mean_{b,k} (z - z_teacher)^2 + gamma * mixed CE
//   hard_ce mixed CE = lambda * CE(y_a) + (1 - lambda) * CE(y_b)

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dbench/core/error.hpp"
#include "dbench/core/tensor.hpp"
#include "dbench/nn/functional.hpp"

namespace dbench::posteval {

struct LossInputs {
  const Tensor<double>* student_logits = nullptr;
  const Tensor<double>* teacher_probs = nullptr;   // kl
  const Tensor<double>* teacher_logits = nullptr;  // mse_gt
  const std::vector<int>* labels = nullptr;        // mse_gt, hard_ce
  const std::vector<int>* partner_labels = nullptr;
  const std::vector<double>* lambda_mix = nullptr;
  double gamma = 0.025;
  double temperature = 1.0;
  bool kl_student_tau = true;  // divide student logits by tau inside kl
  bool kl_tau_squared = true;  // multiply kl by tau^2
};

struct LossValue {
  double value = 0.0;
  Tensor<double> grad;
};

using LossFn = std::function<LossValue(const LossInputs&)>;

namespace detail {

inline void check_logits(const LossInputs& in) {
  require(in.student_logits != nullptr, ErrorKind::config, "loss: student logits missing");
}

inline void need(bool ok, const std::string& mode, const char* what) {
  require(ok, ErrorKind::config, "loss '" + mode + "' requires " + what);
}

}  // namespace detail

// lambda * CE(y_a) + (1 - lambda) * CE(y_b), averaged over rows. Without
// partner labels / lambda this is plain CE.
inline LossValue mixed_cross_entropy(const Tensor<double>& z, const std::vector<int>& ya,
                                     const std::vector<int>* yb, const std::vector<double>* lam) {
  const int b = z.shape.n, k = z.shape.c;
  require(int(ya.size()) == b && (!yb || int(yb->size()) == b) && (!lam || int(lam->size()) == b), ErrorKind::shape,
          "mixed CE: label count does not match batch");
  const auto ls = nn::log_softmax(z);
  LossValue out{0.0, Tensor<double>(z.shape)};
  for (int n = 0; n < b; ++n) {
    const double l = lam ? (*lam)[n] : 1.0;
    const int a = ya[n], p = yb ? (*yb)[n] : ya[n];
    require(a >= 0 && a < k && p >= 0 && p < k, ErrorKind::shape, "mixed CE: label out of range");
    out.value -= l * ls.at(n, a) + (1 - l) * ls.at(n, p);
    for (int j = 0; j < k; ++j) out.grad.at(n, j) = std::exp(ls.at(n, j)) / b;
    out.grad.at(n, a) -= l / b;
    out.grad.at(n, p) -= (1 - l) / b;
  }
  out.value /= b;
  return out;
}

inline LossValue kl_loss(const LossInputs& in) {
  detail::check_logits(in);
  detail::need(in.teacher_probs != nullptr, "kl", "teacher probabilities");
  require(in.temperature > 0, ErrorKind::config, "kl: temperature must be positive");
  const auto& z = *in.student_logits;
  const auto& p = *in.teacher_probs;
  require(z.shape == p.shape, ErrorKind::shape, "kl: student " + z.shape.str() + " vs teacher " + p.shape.str());
  const int b = z.shape.n, k = z.shape.c;
  const double tau = in.temperature;
  const double st = in.kl_student_tau ? tau : 1.0;
  const double scale = in.kl_tau_squared ? tau * tau : 1.0;
  const auto lq = nn::log_softmax(z, st);
  LossValue out{0.0, Tensor<double>(z.shape)};
  for (int n = 0; n < b; ++n)
    for (int j = 0; j < k; ++j) {
      const double pj = p.at(n, j);
      if (pj > 0) out.value += pj * (std::log(pj) - lq.at(n, j));
      // d/dz_j of -sum p log q, with q = softmax(z / st): (q_j - p_j) / st
      out.grad.at(n, j) = scale * (std::exp(lq.at(n, j)) - pj) / (st * b);
    }
  out.value *= scale / b;
  return out;
}

inline LossValue mse_gt_loss(const LossInputs& in) {
  detail::check_logits(in);
  detail::need(in.teacher_logits != nullptr, "mse_gt", "teacher logits");
  detail::need(in.labels != nullptr, "mse_gt", "hard labels");
  require(in.gamma >= 0, ErrorKind::config, "mse_gt: gamma must be >= 0");
  const auto& z = *in.student_logits;
  const auto& t = *in.teacher_logits;
  require(z.shape == t.shape, ErrorKind::shape, "mse_gt: student " + z.shape.str() + " vs teacher " + t.shape.str());
  const double count = double(z.size());
  LossValue out{0.0, Tensor<double>(z.shape)};
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double d = z.data[i] - t.data[i];
    out.value += d * d / count;
    out.grad.data[i] = 2 * d / count;
  }
  if (in.gamma > 0) {
    const auto ce = mixed_cross_entropy(z, *in.labels, in.partner_labels, in.lambda_mix);
    out.value += in.gamma * ce.value;
    for (std::size_t i = 0; i < z.size(); ++i) out.grad.data[i] += in.gamma * ce.grad.data[i];
  }
  return out;
}

inline LossValue hard_ce_loss(const LossInputs& in) {
  detail::check_logits(in);
  detail::need(in.labels != nullptr, "hard_ce", "hard labels");
  return mixed_cross_entropy(*in.student_logits, *in.labels, in.partner_labels, in.lambda_mix);
}

// Name -> loss. Built-ins are kl, mse_gt and hard_ce; further losses can be
// registered under new names.
inline std::map<std::string, LossFn>& loss_registry() {
  static std::map<std::string, LossFn> reg = {{"kl", kl_loss}, {"mse_gt", mse_gt_loss}, {"hard_ce", hard_ce_loss}};
  return reg;
}

inline void register_loss(const std::string& name, LossFn fn) {
  require(!name.empty() && fn != nullptr, ErrorKind::config, "register_loss: empty name or function");
  loss_registry()[name] = std::move(fn);
}

inline bool loss_needs_teacher(const std::string& mode) { return mode != "hard_ce"; }

inline LossValue distill_loss(const std::string& mode, const LossInputs& in) {
  const auto it = loss_registry().find(mode);
  require(it != loss_registry().end(), ErrorKind::config, "unknown loss mode '" + mode + "'");
  return it->second(in);
}

}  // namespace dbench::posteval
