#include "flexp/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace flexp {
namespace {

struct Case {
  BlockParams params;
  Tensor input;
};

Case make_case(BlockKind kind, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  auto random_tensor = [&](Shape s) {
    Tensor t(std::move(s));
    for (double& v : t.data()) v = n01(rng);
    return t;
  };
  Case c;
  switch (kind) {
    case BlockKind::input_proj:
      c.params = init_block(kind, 5, 6, rng, 0.5);
      c.input = random_tensor({3, 5});
      break;
    case BlockKind::output_head:
      c.params = init_block(kind, 6, 4, rng, 0.5);
      c.input = random_tensor({3, 6});
      break;
    case BlockKind::mlp_residual:
      c.params = init_block(kind, 6, 6, rng, 0.4);
      c.input = random_tensor({3, 6});
      break;
    case BlockKind::attention_mlp_residual:
      c.params = init_block(kind, 6, 6, rng, 0.4);
      c.input = random_tensor({2, 3, 6});
      break;
  }
  // Perturb the layernorm affine terms so their gradients are exercised away
  // from the ones/zeros initialization.
  for (Tensor& t : c.params.tensors) {
    if (t.rank() == 1) {
      for (double& v : t.data()) v += 0.3 * n01(rng);
    }
  }
  return c;
}

double scalarize(const BlockParams& p, const Tensor& x, const Tensor& proj) {
  const Tensor y = apply_block(p, x);
  double s = 0.0;
  for (std::size_t i = 0; i < y.numel(); ++i) s += y[i] * proj[i];
  return s;
}

double rel_err(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

}  // namespace

double grad_check(BlockKind kind, std::uint64_t seed, const GradCheckOptions& options) {
  std::mt19937_64 rng(seed);
  Case c = make_case(kind, rng);

  Tape tape;
  tape.set_backward_fault(options.backward_fault);
  const Tensor y = forward_block(c.params, c.input, tape);
  std::normal_distribution<double> n01(0.0, 1.0);
  Tensor proj(y.shape());
  for (double& v : proj.data()) v = n01(rng);
  const BlockGrads g = backward_block(tape, proj);

  const double h = options.step;
  double worst = 0.0;

  Tensor x = c.input;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = scalarize(c.params, x, proj);
    x[i] = orig - h;
    const double down = scalarize(c.params, x, proj);
    x[i] = orig;
    worst = std::max(worst, rel_err(g.input_grad[i], (up - down) / (2 * h), options.floor));
  }

  BlockParams p = c.params;
  for (std::size_t t = 0; t < p.tensors.size(); ++t) {
    Tensor& w = p.tensors[t];
    for (std::size_t i = 0; i < w.numel(); ++i) {
      const double orig = w[i];
      w[i] = orig + h;
      const double up = scalarize(p, c.input, proj);
      w[i] = orig - h;
      const double down = scalarize(p, c.input, proj);
      w[i] = orig;
      worst = std::max(worst, rel_err(g.param_grads.tensors[t][i], (up - down) / (2 * h), options.floor));
    }
  }
  return worst;
}

}  // namespace flexp
