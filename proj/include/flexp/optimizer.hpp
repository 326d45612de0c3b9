#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "flexp/tensor.hpp"

namespace flexp {

enum class OptimizerKind { sgd, adam };

std::string_view to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(std::string_view name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

/// Adam moments for a group of tensors; empty until the first step.
struct OptimizerState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;
};

/// Updates `params` in place. SGD: p -= lr g. Adam: bias-corrected moments,
/// p -= lr m_hat / (sqrt(v_hat) + eps). Throws NumericError naming the
/// tensor index when a gradient is not finite (params are left untouched).
void optimizer_step(std::span<Tensor> params, std::span<const Tensor> grads, OptimizerState& state,
                    const OptimizerConfig& config);

}  // namespace flexp
