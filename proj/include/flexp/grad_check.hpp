#pragma once

#include <cstdint>

#include "flexp/block.hpp"

namespace flexp {

struct GradCheckOptions {
  double step = 1e-4;  // central-difference step
  /// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double floor = 1e-6;
  /// Forwarded to Tape::set_backward_fault; 1.0 means a healthy backward.
  double backward_fault = 1.0;
};

/// Builds a random block and input from `seed`, scalarizes the output with a
/// random projection, and compares every input and parameter gradient from
/// backward_block against central finite differences. Returns the maximum
/// relative error.
double grad_check(BlockKind kind, std::uint64_t seed, const GradCheckOptions& options = {});

}  // namespace flexp
