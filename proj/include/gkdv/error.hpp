#pragma once

#include <stdexcept>
#include <string>

namespace gkdv {

enum class ErrorCode {
  invalid_argument,
  grid_mismatch,
  unsupported_order,
  coverage,
  discretization,
  grid_too_coarse,
  non_solvable,
  eigensolve,
  out_of_regime,
  past_blowup,
  divergence,
  regrid,
  decomposition_failed,
  fit_window,
  geometry,
  integrity,
  config,
};

const char* to_string(ErrorCode code);

/// Exception carrying a machine-readable code and the module it came from.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string module, const std::string& what)
      : std::runtime_error(module + ": " + what), code_(code), module_(std::move(module)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& module() const noexcept { return module_; }

 private:
  ErrorCode code_;
  std::string module_;
};

}  // namespace gkdv
