#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dbench/core/error.hpp"
#include "dbench/core/hash.hpp"
#include "dbench/posteval/loss.hpp"
#include "dbench/relabel/augment.hpp"
#include "json.hpp"

namespace dbench::posteval {

using nlohmann::json;

inline constexpr int kSameArchBatch = 50;
inline constexpr int kCrossArchBatch = 100;
inline constexpr double kSameArchZeta = 1.0;
inline constexpr double kCrossArchZeta = 2.0;

// The full post-evaluation protocol. batch_size = 0 and zeta = 0 mean
// "protocol default for the (teacher, student) architecture pairing" and are
// fixed by resolve().
struct PostEvalConfig {
  int epochs = 400;
  double lr = 1e-3;
  std::string optimizer = "adamw";  // adamw | sgd
  double weight_decay = 0.01;
  double momentum = 0.9;  // sgd only
  int batch_size = 0;
  double zeta = 0.0;
  std::string loss = "kl";        // kl | mse_gt | hard_ce | registered plug-in
  std::string label_mode = "soft";  // soft | hybrid | hard
  double gamma = 0.025;
  double temperature = 20.0;
  bool kl_student_tau = true;
  bool kl_tau_squared = true;
  relabel::AugSpec aug;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  int eval_every = 1;  // test evaluation cadence; the last epoch is always evaluated

  void validate() const {
    require(epochs >= 1, ErrorKind::config, "posteval.epochs must be >= 1");
    require(lr > 0, ErrorKind::config, "posteval.lr must be positive");
    require(optimizer == "adamw" || optimizer == "sgd", ErrorKind::config, "posteval.optimizer must be adamw or sgd");
    require(weight_decay >= 0, ErrorKind::config, "posteval.weight_decay must be >= 0");
    require(batch_size >= 0, ErrorKind::config, "posteval.batch_size must be >= 0 (0 = protocol default)");
    require(zeta >= 0, ErrorKind::config, "posteval.zeta must be > 0 (0 = protocol default)");
    require(loss_registry().count(loss) == 1, ErrorKind::config, "posteval.loss: unknown loss mode '" + loss + "'");
    require(label_mode == "soft" || label_mode == "hybrid" || label_mode == "hard", ErrorKind::config,
            "posteval.label_mode must be soft, hybrid or hard");
    require(label_mode != "hard" || loss == "hard_ce", ErrorKind::config,
            "posteval.loss must be hard_ce when label_mode is hard");
    require(gamma >= 0, ErrorKind::config, "posteval.gamma must be >= 0");
    require(temperature > 0, ErrorKind::config, "posteval.temperature must be positive");
    require(!seeds.empty(), ErrorKind::config, "posteval.seeds must not be empty");
    require(eval_every >= 1, ErrorKind::config, "posteval.eval_every must be >= 1");
  }

  bool resolved() const { return batch_size > 0 && zeta > 0; }

  // Fills protocol defaults. Hard-label mode implies the hard_ce loss.
  PostEvalConfig resolve(bool cross_arch) const {
    PostEvalConfig out = *this;
    if (out.batch_size == 0) out.batch_size = cross_arch ? kCrossArchBatch : kSameArchBatch;
    if (out.zeta == 0) out.zeta = cross_arch ? kCrossArchZeta : kSameArchZeta;
    if (out.label_mode == "hard") out.loss = "hard_ce";
    out.validate();
    return out;
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PostEvalConfig, epochs, lr, optimizer, weight_decay, momentum,
                                                batch_size, zeta, loss, label_mode, gamma, temperature, kl_student_tau,
                                                kl_tau_squared, aug, seeds, eval_every)

// Protocol identity: everything except the seed list and the evaluation
// cadence, neither of which changes what a single run trains.
inline std::string config_fingerprint(const PostEvalConfig& cfg) {
  json j = cfg;
  j.erase("seeds");
  j.erase("eval_every");
  return sha256_hex(j.dump());
}

}  // namespace dbench::posteval
