#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dbench {

// Error classes map one-to-one onto CLI exit codes (see cli/exit_code).
enum class ErrorKind {
  config,         // bad flag, schema violation, config invariant
  missing_input,  // artifact or file not found
  invariant,      // data object violates its contract
  shape,          // tensor / payload shape mismatch
  integrity,      // checksum or schema-version mismatch
  unsupported,    // feature not available (e.g. no BN statistics)
  divergence,     // non-finite loss
  io,             // unwritable path, short read
  runtime,
};

inline std::string_view to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return "config_error";
    case ErrorKind::missing_input: return "missing_input";
    case ErrorKind::invariant: return "invariant_violation";
    case ErrorKind::shape: return "shape_mismatch";
    case ErrorKind::integrity: return "integrity_error";
    case ErrorKind::unsupported: return "unsupported";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::io: return "io_error";
    case ErrorKind::runtime: return "runtime_error";
  }
  return "runtime_error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace dbench
