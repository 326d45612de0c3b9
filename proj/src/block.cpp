#include "flexp/block.hpp"

#include <cmath>

#include "flexp/error.hpp"

namespace flexp {

std::string_view to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::mlp_residual: return "mlp_residual";
    case BlockKind::attention_mlp_residual: return "attention_mlp_residual";
    case BlockKind::input_proj: return "input_proj";
    case BlockKind::output_head: return "output_head";
  }
  return "?";
}

BlockKind block_kind_from_string(std::string_view name) {
  for (BlockKind k : {BlockKind::mlp_residual, BlockKind::attention_mlp_residual, BlockKind::input_proj,
                      BlockKind::output_head}) {
    if (to_string(k) == name) return k;
  }
  throw InputError("unknown block kind '" + std::string(name) + "'");
}

std::size_t BlockParams::param_count() const {
  std::size_t n = 0;
  for (const Tensor& t : tensors) n += t.numel();
  return n;
}

BlockParams BlockParams::zeros_like() const {
  BlockParams z{kind, {}};
  z.tensors.reserve(tensors.size());
  for (const Tensor& t : tensors) z.tensors.emplace_back(t.shape());
  return z;
}

std::vector<std::string> param_names(BlockKind kind) {
  switch (kind) {
    case BlockKind::input_proj:
    case BlockKind::output_head: return {"w", "b"};
    case BlockKind::mlp_residual: return {"ln_g", "ln_b", "w1", "b1", "w2", "b2"};
    case BlockKind::attention_mlp_residual:
      return {"ln1_g", "ln1_b", "wq", "wk", "wv", "wo", "ln2_g", "ln2_b", "w1", "b1", "w2", "b2"};
  }
  return {};
}

namespace {

Tensor gaussian(Shape shape, std::mt19937_64& rng, double std) {
  std::normal_distribution<double> dist(0.0, std);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

void append_mlp(std::vector<Tensor>& out, std::size_t d, std::mt19937_64& rng, double std) {
  out.emplace_back(Shape{d}, 1.0);
  out.emplace_back(Shape{d});
  out.push_back(gaussian({d, 4 * d}, rng, std));
  out.emplace_back(Shape{4 * d});
  out.push_back(gaussian({4 * d, d}, rng, std));
  out.emplace_back(Shape{d});
}

std::size_t expected_tensor_count(BlockKind kind) {
  switch (kind) {
    case BlockKind::input_proj:
    case BlockKind::output_head: return 2;
    case BlockKind::mlp_residual: return 6;
    case BlockKind::attention_mlp_residual: return 12;
  }
  return 0;
}

void check_input(const BlockParams& p, const Tensor& x) {
  const auto& t = p.tensors;
  if (t.size() != expected_tensor_count(p.kind)) {
    throw DimensionError(std::string(to_string(p.kind)) + ": expected " +
                         std::to_string(expected_tensor_count(p.kind)) + " parameter tensors, got " +
                         std::to_string(t.size()));
  }
  const std::size_t last = x.rank() ? x.shape().back() : 0;
  auto axis_error = [&](std::size_t axis, std::size_t want) {
    throw DimensionError(std::string(to_string(p.kind)) + ": input axis " + std::to_string(axis) + " is " +
                         std::to_string(axis < x.rank() ? x.dim(axis) : 0) + ", expected " + std::to_string(want));
  };
  switch (p.kind) {
    case BlockKind::input_proj:
    case BlockKind::output_head:
      if (x.rank() != 2 && x.rank() != 3) {
        throw DimensionError(std::string(to_string(p.kind)) + ": input must be rank 2 or 3, got rank " +
                             std::to_string(x.rank()));
      }
      if (last != t[0].dim(0)) axis_error(x.rank() - 1, t[0].dim(0));
      break;
    case BlockKind::mlp_residual:
      if (x.rank() != 2) {
        throw DimensionError("mlp_residual: input must be rank 2 (batch x d), got rank " + std::to_string(x.rank()));
      }
      if (last != t[0].numel()) axis_error(1, t[0].numel());
      break;
    case BlockKind::attention_mlp_residual:
      if (x.rank() != 3) {
        throw DimensionError("attention_mlp_residual: input must be rank 3 (batch x seq x d), got rank " +
                             std::to_string(x.rank()));
      }
      if (last != t[0].numel()) axis_error(2, t[0].numel());
      break;
  }
}

Tape::Id record_mlp(Tape& tape, Tape::Id x, const std::vector<Tape::Id>& p, std::size_t off) {
  const auto h = ops::layer_norm(tape, x, p[off + 0], p[off + 1], kLayerNormEps);
  const auto a = ops::linear(tape, h, p[off + 2], p[off + 3]);
  const auto g = ops::gelu(tape, a);
  const auto m = ops::linear(tape, g, p[off + 4], p[off + 5]);
  return ops::add(tape, x, m);
}

}  // namespace

BlockParams init_block(BlockKind kind, std::size_t in, std::size_t out, std::mt19937_64& rng, double std) {
  if (in == 0 || out == 0) throw InputError("init_block: dimensions must be positive");
  BlockParams p{kind, {}};
  switch (kind) {
    case BlockKind::input_proj:
    case BlockKind::output_head:
      p.tensors.push_back(gaussian({in, out}, rng, std));
      p.tensors.emplace_back(Shape{out});
      break;
    case BlockKind::mlp_residual:
      if (in != out) throw InputError("mlp_residual requires in == out");
      append_mlp(p.tensors, in, rng, std);
      break;
    case BlockKind::attention_mlp_residual:
      if (in != out) throw InputError("attention_mlp_residual requires in == out");
      p.tensors.emplace_back(Shape{in}, 1.0);
      p.tensors.emplace_back(Shape{in});
      for (int i = 0; i < 4; ++i) p.tensors.push_back(gaussian({in, in}, rng, std));
      append_mlp(p.tensors, in, rng, std);
      break;
  }
  return p;
}

RecordedBlock record_block(const BlockParams& params, Tape::Id input, Tape& tape) {
  check_input(params, tape.value(input));
  std::vector<Tape::Id> p;
  p.reserve(params.tensors.size());
  for (const Tensor& t : params.tensors) p.push_back(tape.leaf(t));
  Tape::Id out = input;
  switch (params.kind) {
    case BlockKind::input_proj: out = ops::linear(tape, input, p[0], p[1]); break;
    case BlockKind::output_head: {
      Tape::Id pooled = tape.value(input).rank() == 3 ? ops::mean_over_seq(tape, input) : input;
      out = ops::linear(tape, pooled, p[0], p[1]);
      break;
    }
    case BlockKind::mlp_residual: out = record_mlp(tape, input, p, 0); break;
    case BlockKind::attention_mlp_residual: {
      const double d = static_cast<double>(params.tensors[0].numel());
      const auto h = ops::layer_norm(tape, input, p[0], p[1], kLayerNormEps);
      const auto q = ops::linear(tape, h, p[2], std::nullopt);
      const auto k = ops::linear(tape, h, p[3], std::nullopt);
      const auto v = ops::linear(tape, h, p[4], std::nullopt);
      const auto scores = ops::scale(tape, ops::batched_matmul(tape, q, k, true), 1.0 / std::sqrt(d));
      const auto attn = ops::softmax_last(tape, scores);
      const auto ctx = ops::batched_matmul(tape, attn, v, false);
      const auto proj = ops::linear(tape, ctx, p[5], std::nullopt);
      const auto resid = ops::add(tape, input, proj);
      out = record_mlp(tape, resid, p, 6);
      break;
    }
  }
  return {out, std::move(p)};
}

Tensor forward_block(const BlockParams& params, const Tensor& input, Tape& tape) {
  if (!tape.empty()) throw StateError("forward_block needs a fresh tape");
  const Tape::Id in = tape.leaf(input);
  RecordedBlock rec = record_block(params, in, tape);
  tape.bind({in, rec.params, rec.output, static_cast<int>(params.kind)});
  return tape.value(rec.output);
}

BlockGrads backward_block(Tape& tape, const Tensor& output_grad) {
  if (tape.consumed()) throw StateError("tape reuse: block tape already consumed");
  const auto& binding = tape.binding();
  if (!binding) throw StateError("tape was not produced by forward_block");
  require_same_shape(tape.value(binding->output), output_grad, "backward_block output_grad");
  tape.backward(binding->output, output_grad);
  BlockGrads g;
  g.param_grads.kind = static_cast<BlockKind>(binding->kind);
  g.input_grad = tape.grad_or_zero(binding->input);
  g.param_grads.tensors.reserve(binding->params.size());
  for (Tape::Id id : binding->params) g.param_grads.tensors.push_back(tape.grad_or_zero(id));
  return g;
}

Tensor apply_block(const BlockParams& params, const Tensor& input) {
  Tape tape;
  return forward_block(params, input, tape);
}

}  // namespace flexp
