#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dbench/core/error.hpp"

namespace dbench::posteval {

// eta_i = (1 + cos(pi * i / (zeta * N))) / 2, applied once per epoch.
inline double lr_multiplier(double i, double n, double zeta) {
  require(zeta > 0 && n > 0 && i >= 0 && i <= n, ErrorKind::config, "lr_multiplier: need 0 <= i <= N, zeta > 0");
  return 0.5 * (1.0 + std::cos(std::numbers::pi * i / (zeta * n)));
}

inline int effective_batch_size(int set_size, int default_bs) {
  require(set_size >= 1 && default_bs >= 1, ErrorKind::config, "effective_batch_size: sizes must be >= 1");
  return std::min(default_bs, set_size);
}

}  // namespace dbench::posteval
