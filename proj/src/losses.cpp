#include "flexp/losses.hpp"

#include <algorithm>
#include <cmath>

#include "flexp/error.hpp"

namespace flexp {
namespace {

struct AxisLayout {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisLayout layout(const Tensor& t, std::size_t axis) {
  if (axis >= t.rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(t.rank()));
  }
  AxisLayout l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= t.dim(i);
  l.len = t.dim(axis);
  for (std::size_t i = axis + 1; i < t.rank(); ++i) l.inner *= t.dim(i);
  return l;
}

// log-softmax of the fibre starting at `base` with stride `inner`.
void log_softmax_fibre(const Tensor& x, std::size_t base, const AxisLayout& l, std::vector<double>& out) {
  double mx = -INFINITY;
  for (std::size_t j = 0; j < l.len; ++j) mx = std::max(mx, x[base + j * l.inner]);
  double s = 0.0;
  for (std::size_t j = 0; j < l.len; ++j) s += std::exp(x[base + j * l.inner] - mx);
  const double lse = mx + std::log(s);
  for (std::size_t j = 0; j < l.len; ++j) out[j] = x[base + j * l.inner] - lse;
}

}  // namespace

Tensor softmax(const Tensor& input, std::size_t axis) {
  const AxisLayout l = layout(input, axis);
  Tensor out(input.shape());
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t i = 0; i < l.inner; ++i) {
      const std::size_t base = o * l.len * l.inner + i;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < l.len; ++j) mx = std::max(mx, input[base + j * l.inner]);
      double s = 0.0;
      for (std::size_t j = 0; j < l.len; ++j) s += (out[base + j * l.inner] = std::exp(input[base + j * l.inner] - mx));
      for (std::size_t j = 0; j < l.len; ++j) out[base + j * l.inner] /= s;
    }
  return out;
}

Tensor CrossEntropy::logits_grad() {
  tape.backward(output, Tensor::scalar(1.0));
  return tape.grad_or_zero(logits);
}

CrossEntropy cross_entropy_loss(const Tensor& logits, std::span<const int> labels) {
  CrossEntropy ce;
  ce.logits = ce.tape.leaf(logits);
  ce.output = ops::cross_entropy(ce.tape, ce.logits, labels);
  ce.loss = ce.tape.value(ce.output)[0];
  return ce;
}

KlResult kl_divergence(const Tensor& p_logits, const Tensor& q_logits, std::size_t axis) {
  require_same_shape(p_logits, q_logits, "kl_divergence");
  const AxisLayout l = layout(p_logits, axis);
  const double positions = static_cast<double>(l.outer * l.inner);
  KlResult r{0.0, Tensor(p_logits.shape()), Tensor(p_logits.shape())};
  std::vector<double> lp(l.len), lq(l.len);
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t i = 0; i < l.inner; ++i) {
      const std::size_t base = o * l.len * l.inner + i;
      log_softmax_fibre(p_logits, base, l, lp);
      log_softmax_fibre(q_logits, base, l, lq);
      double kl = 0.0;
      for (std::size_t j = 0; j < l.len; ++j) kl += std::exp(lp[j]) * (lp[j] - lq[j]);
      r.value += kl;
      for (std::size_t j = 0; j < l.len; ++j) {
        const double p = std::exp(lp[j]), q = std::exp(lq[j]);
        r.grad_p[base + j * l.inner] = p * (lp[j] - lq[j] - kl) / positions;
        r.grad_q[base + j * l.inner] = (q - p) / positions;
      }
    }
  r.value /= positions;
  return r;
}

double accuracy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw DimensionError("accuracy: logits must be rank 2");
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  if (B == 0 || labels.size() != B) throw InputError("accuracy: empty or mismatched label set");
  std::size_t hits = 0;
  for (std::size_t b = 0; b < B; ++b) {
    const double* row = logits.data().data() + b * K;
    const auto best = static_cast<int>(std::max_element(row, row + K) - row);
    if (best == labels[b]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(B);
}

}  // namespace flexp
