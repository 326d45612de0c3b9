#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "flexp/tensor.hpp"

namespace flexp {

/// Reverse-mode recording of primitive applications.
///
/// Every value produced during a forward pass is stored as a node; primitives
/// attach a backward closure that reads saved values and accumulates into the
/// gradients of their operands. `backward` walks the nodes in exact reverse
/// order of recording and may be called once per tape.
class Tape {
 public:
  using Id = std::size_t;
  using BackwardFn = std::function<void(Tape&)>;

  /// Input/parameter/output ids of the block recorded on this tape.
  struct Binding {
    Id input = 0;
    std::vector<Id> params;
    Id output = 0;
    int kind = 0;  // opaque tag for the recording layer
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  Id leaf(Tensor value);
  Id record(Tensor value, BackwardFn backward);

  const Tensor& value(Id id) const { return nodes_.at(id).value; }
  /// Gradient slot of a node, allocated as zeros on first touch.
  Tensor& grad(Id id);
  /// Gradient of a node after backward; zeros if nothing flowed into it.
  Tensor grad_or_zero(Id id) const;

  /// Seeds `output` with `seed` and runs every backward closure in reverse
  /// recording order. Throws StateError on a second call.
  void backward(Id output, const Tensor& seed);

  bool consumed() const noexcept { return consumed_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool empty() const noexcept { return nodes_.empty(); }
  /// Elements held as saved values (activation-cache footprint).
  std::size_t stored_elements() const noexcept;

  void bind(Binding binding) { binding_ = std::move(binding); }
  const std::optional<Binding>& binding() const noexcept { return binding_; }

  /// Test hook: scales every gradient that lands on a leaf. Used by the
  /// verification suite to prove that a broken backward is caught.
  void set_backward_fault(double scale) noexcept { fault_scale_ = scale; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::optional<Binding> binding_;
  bool consumed_ = false;
  double fault_scale_ = 1.0;
};

/// Differentiable primitives. Operands and results are tape node ids;
/// `linear` and friends treat all leading axes as rows.
namespace ops {

using Id = Tape::Id;

/// x[..., in] * w[in, out] (+ b[out]).
Id linear(Tape& t, Id x, Id w, std::optional<Id> b);
/// Normalizes over the last axis with affine gamma/beta.
Id layer_norm(Tape& t, Id x, Id gamma, Id beta, double eps);
/// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Id gelu(Tape& t, Id x);
Id add(Tape& t, Id a, Id b);
Id scale(Tape& t, Id x, double s);
/// a[B, m, k] * b[B, k, n], or b[B, n, k] transposed when `transpose_b`.
Id batched_matmul(Tape& t, Id a, Id b, bool transpose_b);
Id softmax_last(Tape& t, Id x);
/// [B, S, d] -> [B, d].
Id mean_over_seq(Tape& t, Id x);
/// Mean negative log-softmax of the labelled class; result has shape {1}.
Id cross_entropy(Tape& t, Id logits, std::span<const int> labels);

}  // namespace ops

/// Scalar forms of the primitives shared by tape ops and straight-line code.
double gelu_value(double x);
double gelu_derivative(double x);

}  // namespace flexp
