#include "flexp/optimizer.hpp"

#include <cmath>
#include <string>

#include "flexp/error.hpp"

namespace flexp {

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_kind_from_string(std::string_view name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw InputError("unknown optimizer '" + std::string(name) + "'");
}

void optimizer_step(std::span<Tensor> params, std::span<const Tensor> grads, OptimizerState& state,
                    const OptimizerConfig& config) {
  if (params.size() != grads.size()) {
    throw DimensionError("optimizer_step: " + std::to_string(params.size()) + " parameter tensors but " +
                         std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape()) {
      require_same_shape(params[i], grads[i], "optimizer_step tensor " + std::to_string(i));
    }
    if (!grads[i].all_finite()) throw NumericError("optimizer_step: non-finite gradient in tensor " + std::to_string(i));
  }

  if (config.kind == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i].add_scaled(grads[i], -config.lr);
    ++state.step;
    return;
  }

  if (state.m.empty()) {
    for (const Tensor& p : params) {
      state.m.emplace_back(p.shape());
      state.v.emplace_back(p.shape());
    }
  } else if (state.m.size() != params.size()) {
    throw DimensionError("optimizer_step: state holds " + std::to_string(state.m.size()) + " tensors, got " +
                         std::to_string(params.size()));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
      p[j] -= config.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config.eps);
    }
  }
}

}  // namespace flexp
