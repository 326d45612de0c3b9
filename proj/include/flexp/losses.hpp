#pragma once

#include <cstddef>
#include <span>

#include "flexp/tape.hpp"
#include "flexp/tensor.hpp"

namespace flexp {

/// Softmax along `axis` with max subtraction.
Tensor softmax(const Tensor& input, std::size_t axis);

/// Cross-entropy recorded on its own tape so callers can pull dL/dlogits.
struct CrossEntropy {
  double loss = 0.0;
  Tape tape;
  Tape::Id logits = 0;
  Tape::Id output = 0;

  /// Runs backward with seed 1 and returns dL/dlogits. Consumes the tape.
  Tensor logits_grad();
};

CrossEntropy cross_entropy_loss(const Tensor& logits, std::span<const int> labels);

/// KL(softmax(p) || softmax(q)) along `axis`, averaged over every other
/// position, with analytic gradients for both logit tensors.
struct KlResult {
  double value = 0.0;
  Tensor grad_p;
  Tensor grad_q;
};

KlResult kl_divergence(const Tensor& p_logits, const Tensor& q_logits, std::size_t axis);

/// Fraction of rows whose argmax equals the label.
double accuracy(const Tensor& logits, std::span<const int> labels);

}  // namespace flexp
