#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "flexp/block.hpp"
#include "flexp/optimizer.hpp"
#include "flexp/tensor.hpp"

namespace flexp {

struct ModelConfig {
  std::size_t input_dim = 32;
  std::size_t hidden_dim = 32;
  std::size_t num_middle_blocks = 10;
  std::size_t num_classes = 8;
  BlockKind block_kind = BlockKind::mlp_residual;
  /// Tokens per sample for attention stacks; a raw sample then has
  /// seq_len * input_dim features.
  std::size_t seq_len = 1;

  /// Throws InputError naming the offending field.
  void validate() const;
  /// Width of one raw sample as stored in a dataset.
  std::size_t sample_width() const { return seq_len * input_dim; }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Input projection, M homogeneous middle blocks, classification head.
/// Layer index convention used by views: 0 = input block, 1..M = middle
/// blocks, M + 1 = head.
struct LayerStack {
  ModelConfig config;
  BlockParams input_block;
  std::vector<BlockParams> middle;
  BlockParams head;

  std::size_t num_layers() const { return middle.size() + 2; }
  const BlockParams& layer(std::size_t index) const;
  BlockParams& layer(std::size_t index);
  friend bool operator==(const LayerStack&, const LayerStack&) = default;
};

LayerStack build_model(const ModelConfig& config, std::uint64_t seed);

/// Number of middle blocks placed on the client: round-half-up(q * M).
/// Throws InputError when q is outside [0, 1].
std::size_t partition(std::size_t num_middle, double q);

struct Partition {
  double q = 0.0;
  std::size_t cl_count = 0;
  /// {input, middle[0..cl_count), head} as layer indices.
  std::vector<std::size_t> client_view;
  /// middle[cl_count..M) as layer indices.
  std::vector<std::size_t> server_view;

  static Partition make(std::size_t num_middle, double q);
};

struct Footprint {
  std::size_t count = 0;
  std::size_t bytes = 0;
};

Footprint param_count(const LayerStack& stack, std::size_t element_size = 4);
Footprint param_count(const LayerStack& stack, std::span<const std::size_t> layer_indices,
                      std::size_t element_size = 4);

/// product(shape) * element_size + header. An empty shape is a header-only frame.
std::size_t payload_bytes(const Shape& shape, std::size_t element_size, std::size_t header = 32);

/// Reshapes a batch of raw samples [B, seq_len * input_dim] into what the
/// input block expects ([B, input_dim] or [B, seq_len, input_dim]).
Tensor model_input(const ModelConfig& config, const Tensor& raw);

/// Largest element-wise difference over every parameter tensor. Throws
/// DimensionError when the stacks differ in layout.
double max_param_diff(const LayerStack& a, const LayerStack& b);

/// Forward through an arbitrary chain of blocks without keeping tapes.
Tensor forward_chain(std::span<const BlockParams* const> blocks, const Tensor& input);

/// Logits of the full stack on a raw batch.
Tensor forward_logits(const LayerStack& stack, const Tensor& raw);

/// Plain single-process training of a whole stack: one tape per block,
/// backward in reverse, one optimizer state per block.
class MonolithicTrainer {
 public:
  MonolithicTrainer(LayerStack stack, OptimizerConfig optimizer);

  /// One forward/backward/update on a raw batch; returns the loss before the update.
  double step(const Tensor& raw, std::span<const int> labels);
  /// Loss without updating.
  double loss(const Tensor& raw, std::span<const int> labels) const;

  const LayerStack& stack() const noexcept { return stack_; }
  LayerStack& stack() noexcept { return stack_; }

 private:
  LayerStack stack_;
  OptimizerConfig optimizer_;
  std::vector<OptimizerState> states_;  // indexed by layer
};

}  // namespace flexp
