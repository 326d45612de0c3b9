#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "flexp/tape.hpp"
#include "flexp/tensor.hpp"

namespace flexp {

enum class BlockKind { mlp_residual, attention_mlp_residual, input_proj, output_head };

std::string_view to_string(BlockKind kind);
/// Throws InputError on an unknown name.
BlockKind block_kind_from_string(std::string_view name);

inline constexpr double kLayerNormEps = 1e-5;

/// Parameter tensors of one block, in a fixed per-kind order:
///   input_proj / output_head:  w[in,out], b[out]
///   mlp_residual:              ln_g, ln_b, w1[d,4d], b1, w2[4d,d], b2
///   attention_mlp_residual:    ln1_g, ln1_b, wq, wk, wv, wo, then the mlp_residual six
/// mlp_residual computes x + W2 gelu(W1 LN(x) + b1) + b2. The attention
/// variant first applies x + Wo softmax(QK^T/sqrt(d)) V on LN1(x).
struct BlockParams {
  BlockKind kind = BlockKind::mlp_residual;
  std::vector<Tensor> tensors;

  std::size_t param_count() const;
  /// Same kind and shapes, all zeros (gradient accumulator layout).
  BlockParams zeros_like() const;
  friend bool operator==(const BlockParams&, const BlockParams&) = default;
};

/// Names of the tensors in `BlockParams::tensors`, for diagnostics.
std::vector<std::string> param_names(BlockKind kind);

/// Deterministic init: N(0, std) weights, zero biases, unit/zero layernorm.
/// For input_proj `in` is the raw input width and `out` the hidden width; for
/// output_head `in` is the hidden width and `out` the class count; the
/// residual kinds use `in` == `out` == d.
BlockParams init_block(BlockKind kind, std::size_t in, std::size_t out, std::mt19937_64& rng, double std = 0.02);

/// Records the block on a fresh tape and returns its output.
/// Inputs: rank 2 (batch x d) for mlp_residual, rank 3 (batch x seq x d) for
/// attention_mlp_residual, rank 2 or 3 for input_proj/output_head (the head
/// mean-pools over the sequence axis).
Tensor forward_block(const BlockParams& params, const Tensor& input, Tape& tape);

struct BlockGrads {
  Tensor input_grad;
  BlockParams param_grads;
};

/// Consumes a tape produced by `forward_block`.
BlockGrads backward_block(Tape& tape, const Tensor& output_grad);

/// Lower-level form used to fuse several blocks onto one tape: records the
/// block on `tape` reading its input from node `input` and returns the output
/// node together with the parameter node ids.
struct RecordedBlock {
  Tape::Id output;
  std::vector<Tape::Id> params;
};
RecordedBlock record_block(const BlockParams& params, Tape::Id input, Tape& tape);

/// Forward without keeping the tape.
Tensor apply_block(const BlockParams& params, const Tensor& input);

}  // namespace flexp
