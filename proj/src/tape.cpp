#include "flexp/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "flexp/error.hpp"

namespace flexp {

Tape::Id Tape::leaf(Tensor value) {
  if (consumed_) throw StateError("tape already consumed by backward");
  nodes_.push_back(Node{std::move(value), Tensor{}, nullptr});
  return nodes_.size() - 1;
}

Tape::Id Tape::record(Tensor value, BackwardFn backward) {
  if (consumed_) throw StateError("tape already consumed by backward");
  nodes_.push_back(Node{std::move(value), Tensor{}, std::move(backward)});
  return nodes_.size() - 1;
}

Tensor& Tape::grad(Id id) {
  Node& n = nodes_.at(id);
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

Tensor Tape::grad_or_zero(Id id) const {
  const Node& n = nodes_.at(id);
  if (n.grad.empty()) return Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(Id output, const Tensor& seed) {
  if (consumed_) throw StateError("tape reuse: backward already ran on this tape");
  require_same_shape(value(output), seed, "backward seed");
  consumed_ = true;
  grad(output).add_scaled(seed);
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && !n.grad.empty()) n.backward(*this);
  }
  if (fault_scale_ != 1.0) {
    for (Node& n : nodes_) {
      if (!n.backward && !n.grad.empty()) {
        for (double& g : n.grad.data()) g *= fault_scale_;
      }
    }
  }
}

std::size_t Tape::stored_elements() const noexcept {
  std::size_t n = 0;
  for (const Node& node : nodes_) n += node.value.numel();
  return n;
}

double gelu_value(double x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

double gelu_derivative(double x) {
  constexpr double c = 0.7978845608028654;
  const double t = std::tanh(c * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x);
}

namespace ops {
namespace {

std::size_t last_dim(const Tensor& t) { return t.shape().back(); }

Shape with_last(Shape s, std::size_t last) {
  s.back() = last;
  return s;
}

// Four independent partial sums so the loop vectorizes without fast-math.
double dot(const double* __restrict a, const double* __restrict b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    s0 += a[j] * b[j];
    s1 += a[j + 1] * b[j + 1];
    s2 += a[j + 2] * b[j + 2];
    s3 += a[j + 3] * b[j + 3];
  }
  for (; j < n; ++j) s0 += a[j] * b[j];
  return (s0 + s1) + (s2 + s3);
}

void axpy(double a, const double* __restrict x, double* __restrict y, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) y[j] += a * x[j];
}

}  // namespace

Id linear(Tape& t, Id x, Id w, std::optional<Id> b) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  if (wv.rank() != 2) throw DimensionError("linear: weight must be rank 2");
  if (xv.rank() < 1 || last_dim(xv) != wv.dim(0)) {
    throw DimensionError("linear: input axis " + std::to_string(xv.rank() - 1) + " is " +
                         std::to_string(xv.rank() ? last_dim(xv) : 0) + ", weight expects " +
                         std::to_string(wv.dim(0)));
  }
  const std::size_t in = wv.dim(0), out = wv.dim(1), rows = xv.numel() / in;
  Tensor y(with_last(xv.shape(), out));
  if (b) {
    const Tensor& bv = t.value(*b);
    if (bv.numel() != out) throw DimensionError("linear: bias axis 0 is " + std::to_string(bv.numel()));
    for (std::size_t r = 0; r < rows; ++r) std::copy(bv.data().begin(), bv.data().end(), y.data().begin() + r * out);
  }
  const double* X = xv.data().data();
  const double* W = wv.data().data();
  double* Y = y.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    double* yr = Y + r * out;
    for (std::size_t k = 0; k < in; ++k) {
      const double xk = X[r * in + k];
      axpy(xk, W + k * out, yr, out);
    }
  }
  const Id self = t.size();
  return t.record(std::move(y), [x, w, b, self, in, out, rows](Tape& tp) {
    const Tensor& dy = tp.grad(self);
    const double* DY = dy.data().data();
    const double* X = tp.value(x).data().data();
    const double* W = tp.value(w).data().data();
    {
      double* DX = tp.grad(x).data().data();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* dyr = DY + r * out;
        for (std::size_t k = 0; k < in; ++k) {
          DX[r * in + k] += dot(dyr, W + k * out, out);
        }
      }
    }
    {
      double* DW = tp.grad(w).data().data();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* dyr = DY + r * out;
        for (std::size_t k = 0; k < in; ++k) {
          axpy(X[r * in + k], dyr, DW + k * out, out);
        }
      }
    }
    if (b) {
      double* DB = tp.grad(*b).data().data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < out; ++j) DB[j] += DY[r * out + j];
    }
  });
}

Id layer_norm(Tape& t, Id x, Id gamma, Id beta, double eps) {
  const Tensor& xv = t.value(x);
  const std::size_t d = last_dim(xv), rows = xv.numel() / d;
  if (t.value(gamma).numel() != d || t.value(beta).numel() != d) {
    throw DimensionError("layer_norm: axis " + std::to_string(xv.rank() - 1) + " is " + std::to_string(d) +
                         " but affine parameters have " + std::to_string(t.value(gamma).numel()));
  }
  const Tensor& g = t.value(gamma);
  const Tensor& bt = t.value(beta);
  Tensor y(xv.shape());
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data().data() + r * d;
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += xr[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t i = 0; i < d; ++i) {
      const double h = (xr[i] - mean) * is;
      xhat[r * d + i] = h;
      y[r * d + i] = h * g[i] + bt[i];
    }
  }
  const Id self = t.size();
  return t.record(std::move(y), [x, gamma, beta, self, d, rows, xhat = std::move(xhat),
                                 inv_std = std::move(inv_std)](Tape& tp) {
    const Tensor& dy = tp.grad(self);
    const Tensor& gv = tp.value(gamma);
    Tensor& dx = tp.grad(x);
    Tensor& dg = tp.grad(gamma);
    Tensor& db = tp.grad(beta);
    std::vector<double> dxhat(d);
    for (std::size_t r = 0; r < rows; ++r) {
      double m1 = 0.0, m2 = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        const double gy = dy[r * d + i];
        const double h = xhat[r * d + i];
        dg[i] += gy * h;
        db[i] += gy;
        dxhat[i] = gy * gv[i];
        m1 += dxhat[i];
        m2 += dxhat[i] * h;
      }
      m1 /= static_cast<double>(d);
      m2 /= static_cast<double>(d);
      for (std::size_t i = 0; i < d; ++i) {
        dx[r * d + i] += inv_std[r] * (dxhat[i] - m1 - xhat[r * d + i] * m2);
      }
    }
  });
}

Id gelu(Tape& t, Id x) {
  const Tensor& xv = t.value(x);
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) y[i] = gelu_value(xv[i]);
  const Id self = t.size();
  return t.record(std::move(y), [x, self](Tape& tp) {
    const Tensor& dy = tp.grad(self);
    const Tensor& xv = tp.value(x);
    Tensor& dx = tp.grad(x);
    for (std::size_t i = 0; i < xv.numel(); ++i) dx[i] += dy[i] * gelu_derivative(xv[i]);
  });
}

Id add(Tape& t, Id a, Id b) {
  require_same_shape(t.value(a), t.value(b), "add");
  Tensor y = t.value(a);
  y.add_scaled(t.value(b));
  const Id self = t.size();
  return t.record(std::move(y), [a, b, self](Tape& tp) {
    const Tensor dy = tp.grad(self);
    tp.grad(a).add_scaled(dy);
    tp.grad(b).add_scaled(dy);
  });
}

Id scale(Tape& t, Id x, double s) {
  Tensor y = t.value(x);
  for (double& v : y.data()) v *= s;
  const Id self = t.size();
  return t.record(std::move(y), [x, s, self](Tape& tp) {
    const Tensor dy = tp.grad(self);
    tp.grad(x).add_scaled(dy, s);
  });
}

Id batched_matmul(Tape& t, Id a, Id b, bool transpose_b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.rank() != 3 || bv.rank() != 3) throw DimensionError("batched_matmul: operands must be rank 3");
  if (av.dim(0) != bv.dim(0)) throw DimensionError("batched_matmul: axis 0 mismatch");
  const std::size_t B = av.dim(0), m = av.dim(1), k = av.dim(2);
  const std::size_t bk = transpose_b ? bv.dim(2) : bv.dim(1);
  const std::size_t n = transpose_b ? bv.dim(1) : bv.dim(2);
  if (bk != k) {
    throw DimensionError("batched_matmul: contraction axis is " + std::to_string(k) + " vs " + std::to_string(bk));
  }
  // b element (kk, j) in batch bb
  auto b_index = [=](std::size_t bb, std::size_t kk, std::size_t j) {
    return transpose_b ? bb * n * k + j * k + kk : bb * k * n + kk * n + j;
  };
  Tensor y({B, m, n});
  for (std::size_t bb = 0; bb < B; ++bb)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t kk = 0; kk < k; ++kk) s += av[bb * m * k + i * k + kk] * bv[b_index(bb, kk, j)];
        y[bb * m * n + i * n + j] = s;
      }
  const Id self = t.size();
  return t.record(std::move(y), [a, b, self, B, m, n, k, b_index](Tape& tp) {
    const Tensor& dy = tp.grad(self);
    const Tensor& av = tp.value(a);
    const Tensor& bv = tp.value(b);
    Tensor& da = tp.grad(a);
    Tensor& db = tp.grad(b);
    for (std::size_t bb = 0; bb < B; ++bb)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double g = dy[bb * m * n + i * n + j];
          for (std::size_t kk = 0; kk < k; ++kk) {
            da[bb * m * k + i * k + kk] += g * bv[b_index(bb, kk, j)];
            db[b_index(bb, kk, j)] += g * av[bb * m * k + i * k + kk];
          }
        }
  });
}

Id softmax_last(Tape& t, Id x) {
  const Tensor& xv = t.value(x);
  const std::size_t d = last_dim(xv), rows = xv.numel() / d;
  Tensor y(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data().data() + r * d;
    const double mx = *std::max_element(xr, xr + d);
    double z = 0.0;
    for (std::size_t i = 0; i < d; ++i) z += (y[r * d + i] = std::exp(xr[i] - mx));
    for (std::size_t i = 0; i < d; ++i) y[r * d + i] /= z;
  }
  const Id self = t.size();
  return t.record(std::move(y), [x, self, d, rows](Tape& tp) {
    const Tensor& dy = tp.grad(self);
    const Tensor& p = tp.value(self);
    Tensor& dx = tp.grad(x);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) dot += dy[r * d + i] * p[r * d + i];
      for (std::size_t i = 0; i < d; ++i) dx[r * d + i] += p[r * d + i] * (dy[r * d + i] - dot);
    }
  });
}

Id mean_over_seq(Tape& t, Id x) {
  const Tensor& xv = t.value(x);
  if (xv.rank() != 3) throw DimensionError("mean_over_seq: expected rank 3, got rank " + std::to_string(xv.rank()));
  const std::size_t B = xv.dim(0), S = xv.dim(1), d = xv.dim(2);
  Tensor y({B, d});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t i = 0; i < d; ++i) y[b * d + i] += xv[(b * S + s) * d + i] / static_cast<double>(S);
  const Id self = t.size();
  return t.record(std::move(y), [x, self, B, S, d](Tape& tp) {
    const Tensor dy = tp.grad(self);
    Tensor& dx = tp.grad(x);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t s = 0; s < S; ++s)
        for (std::size_t i = 0; i < d; ++i) dx[(b * S + s) * d + i] += dy[b * d + i] / static_cast<double>(S);
  });
}

Id cross_entropy(Tape& t, Id logits, std::span<const int> labels) {
  const Tensor& z = t.value(logits);
  if (z.rank() != 2) throw DimensionError("cross_entropy: logits must be rank 2 (batch x classes)");
  const std::size_t B = z.dim(0), K = z.dim(1);
  if (labels.size() != B) {
    throw DimensionError("cross_entropy: axis 0 is " + std::to_string(B) + " but " + std::to_string(labels.size()) +
                         " labels were given");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= K) {
      throw InputError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(K) + ")");
    }
  }
  Tensor probs({B, K});
  double loss = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const double* zr = z.data().data() + b * K;
    const double mx = *std::max_element(zr, zr + K);
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += (probs[b * K + k] = std::exp(zr[k] - mx));
    for (std::size_t k = 0; k < K; ++k) probs[b * K + k] /= s;
    loss += (mx + std::log(s)) - zr[labels[b]];
  }
  loss /= static_cast<double>(B);
  std::vector<int> ys(labels.begin(), labels.end());
  const Id self = t.size();
  return t.record(Tensor::scalar(loss), [logits, self, B, K, probs = std::move(probs), ys = std::move(ys)](Tape& tp) {
    const double g = tp.grad(self)[0] / static_cast<double>(B);
    Tensor& dz = tp.grad(logits);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t k = 0; k < K; ++k) {
        const double onehot = static_cast<int>(k) == ys[b] ? 1.0 : 0.0;
        dz[b * K + k] += g * (probs[b * K + k] - onehot);
      }
  });
}

}  // namespace ops
}  // namespace flexp
