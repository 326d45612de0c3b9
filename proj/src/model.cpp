#include "flexp/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "flexp/error.hpp"
#include "flexp/losses.hpp"

namespace flexp {

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw InputError(std::string("model.") + name + " must be >= 1");
  };
  positive(input_dim, "input_dim");
  positive(hidden_dim, "hidden_dim");
  positive(num_middle_blocks, "num_middle_blocks");
  positive(num_classes, "num_classes");
  positive(seq_len, "seq_len");
  if (block_kind != BlockKind::mlp_residual && block_kind != BlockKind::attention_mlp_residual) {
    throw InputError("model.block_kind must be mlp_residual or attention_mlp_residual");
  }
  if (block_kind == BlockKind::mlp_residual && seq_len != 1) {
    throw InputError("model.seq_len must be 1 for mlp_residual stacks");
  }
}

const BlockParams& LayerStack::layer(std::size_t index) const {
  if (index == 0) return input_block;
  if (index <= middle.size()) return middle[index - 1];
  if (index == middle.size() + 1) return head;
  throw InputError("layer index " + std::to_string(index) + " out of range");
}

BlockParams& LayerStack::layer(std::size_t index) {
  return const_cast<BlockParams&>(static_cast<const LayerStack&>(*this).layer(index));
}

LayerStack build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  LayerStack s;
  s.config = config;
  s.input_block = init_block(BlockKind::input_proj, config.input_dim, config.hidden_dim, rng);
  s.middle.reserve(config.num_middle_blocks);
  for (std::size_t i = 0; i < config.num_middle_blocks; ++i) {
    s.middle.push_back(init_block(config.block_kind, config.hidden_dim, config.hidden_dim, rng));
  }
  s.head = init_block(BlockKind::output_head, config.hidden_dim, config.num_classes, rng);
  return s;
}

std::size_t partition(std::size_t num_middle, double q) {
  if (!(q >= 0.0 && q <= 1.0)) throw InputError("q must lie in [0, 1], got " + std::to_string(q));
  // The small slack keeps decimal ratios such as 0.15 * 10 on the "half" side.
  const double scaled = q * static_cast<double>(num_middle);
  const auto count = static_cast<std::size_t>(std::floor(scaled + 0.5 + 1e-9));
  return std::min(count, num_middle);
}

Partition Partition::make(std::size_t num_middle, double q) {
  Partition p;
  p.q = q;
  p.cl_count = partition(num_middle, q);
  p.client_view.push_back(0);
  for (std::size_t i = 0; i < p.cl_count; ++i) p.client_view.push_back(i + 1);
  p.client_view.push_back(num_middle + 1);
  for (std::size_t i = p.cl_count; i < num_middle; ++i) p.server_view.push_back(i + 1);
  return p;
}

Footprint param_count(const LayerStack& stack, std::size_t element_size) {
  Footprint f;
  for (std::size_t i = 0; i < stack.num_layers(); ++i) f.count += stack.layer(i).param_count();
  f.bytes = f.count * element_size;
  return f;
}

Footprint param_count(const LayerStack& stack, std::span<const std::size_t> layer_indices,
                      std::size_t element_size) {
  Footprint f;
  for (std::size_t i : layer_indices) f.count += stack.layer(i).param_count();
  f.bytes = f.count * element_size;
  return f;
}

std::size_t payload_bytes(const Shape& shape, std::size_t element_size, std::size_t header) {
  return shape_numel(shape) * element_size + header;
}

Tensor model_input(const ModelConfig& config, const Tensor& raw) {
  if (raw.rank() != 2 || raw.dim(1) != config.sample_width()) {
    throw DimensionError("model input: axis 1 is " + std::to_string(raw.rank() == 2 ? raw.dim(1) : 0) +
                         ", expected " + std::to_string(config.sample_width()));
  }
  if (config.block_kind == BlockKind::attention_mlp_residual) {
    return raw.reshaped({raw.dim(0), config.seq_len, config.input_dim});
  }
  return raw;
}

double max_param_diff(const LayerStack& a, const LayerStack& b) {
  if (a.num_layers() != b.num_layers()) throw DimensionError("max_param_diff: layer counts differ");
  double m = 0.0;
  for (std::size_t i = 0; i < a.num_layers(); ++i) {
    const auto& ta = a.layer(i).tensors;
    const auto& tb = b.layer(i).tensors;
    if (ta.size() != tb.size()) throw DimensionError("max_param_diff: layer " + std::to_string(i) + " tensor counts differ");
    for (std::size_t t = 0; t < ta.size(); ++t) m = std::max(m, max_abs_diff(ta[t], tb[t]));
  }
  return m;
}

Tensor forward_chain(std::span<const BlockParams* const> blocks, const Tensor& input) {
  Tensor x = input;
  for (const BlockParams* b : blocks) x = apply_block(*b, x);
  return x;
}

Tensor forward_logits(const LayerStack& stack, const Tensor& raw) {
  std::vector<const BlockParams*> chain;
  for (std::size_t i = 0; i < stack.num_layers(); ++i) chain.push_back(&stack.layer(i));
  return forward_chain(chain, model_input(stack.config, raw));
}

MonolithicTrainer::MonolithicTrainer(LayerStack stack, OptimizerConfig optimizer)
    : stack_(std::move(stack)), optimizer_(optimizer), states_(stack_.num_layers()) {}

double MonolithicTrainer::step(const Tensor& raw, std::span<const int> labels) {
  const std::size_t L = stack_.num_layers();
  std::vector<Tape> tapes(L);
  Tensor x = model_input(stack_.config, raw);
  for (std::size_t i = 0; i < L; ++i) x = forward_block(stack_.layer(i), x, tapes[i]);
  CrossEntropy ce = cross_entropy_loss(x, labels);
  Tensor g = ce.logits_grad();
  std::vector<BlockParams> grads(L);
  for (std::size_t i = L; i-- > 0;) {
    BlockGrads bg = backward_block(tapes[i], g);
    g = std::move(bg.input_grad);
    grads[i] = std::move(bg.param_grads);
  }
  for (std::size_t i = 0; i < L; ++i) {
    optimizer_step(stack_.layer(i).tensors, grads[i].tensors, states_[i], optimizer_);
  }
  return ce.loss;
}

double MonolithicTrainer::loss(const Tensor& raw, std::span<const int> labels) const {
  return cross_entropy_loss(forward_logits(stack_, raw), labels).loss;
}

}  // namespace flexp
