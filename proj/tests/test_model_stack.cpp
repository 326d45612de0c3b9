#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "flexp/data.hpp"
#include "flexp/error.hpp"
#include "flexp/losses.hpp"
#include "flexp/model.hpp"

using namespace flexp;

namespace {

ModelConfig small_config(BlockKind kind = BlockKind::mlp_residual) {
  ModelConfig c;
  c.input_dim = 5;
  c.hidden_dim = 6;
  c.num_middle_blocks = 4;
  c.num_classes = 3;
  c.block_kind = kind;
  if (kind == BlockKind::attention_mlp_residual) c.seq_len = 3;
  return c;
}

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = n(rng);
  return t;
}

}  // namespace

TEST_CASE("build_model is deterministic in the seed") {
  ModelConfig c;
  CHECK(build_model(c, 42) == build_model(c, 42));
  CHECK_FALSE(build_model(c, 42) == build_model(c, 43));
}

TEST_CASE("build_model initialization scheme") {
  LayerStack s = build_model(ModelConfig{}, 1);
  const BlockParams& b = s.middle[0];
  for (double v : b.tensors[0].data()) CHECK(v == 1.0);  // layernorm scale
  for (double v : b.tensors[1].data()) CHECK(v == 0.0);
  for (double v : b.tensors[3].data()) CHECK(v == 0.0);  // bias
  double sum = 0, sq = 0;
  for (double v : b.tensors[2].data()) {
    sum += v;
    sq += v * v;
  }
  const double n = static_cast<double>(b.tensors[2].numel());
  CHECK(std::abs(sum / n) < 0.002);
  CHECK(std::sqrt(sq / n) == doctest::Approx(0.02).epsilon(0.05));
}

TEST_CASE("parameter counts follow the closed form") {
  const std::size_t d = 32;
  const std::size_t block = 2 * d + (d * 4 * d + 4 * d) + (4 * d * d + d);
  CHECK(block == 8416);
  ModelConfig c;  // M=10, d=32, input 32, K=8
  LayerStack s = build_model(c, 0);
  CHECK(s.middle[0].param_count() == 8416);
  const std::size_t input = 32 * 32 + 32, head = 32 * 8 + 8;
  const Footprint f = param_count(s);
  CHECK(f.count == 10 * block + input + head);
  CHECK(f.bytes == 4 * f.count);
  CHECK(param_count(s, 8).bytes == 8 * f.count);

  std::size_t additive = 0;
  for (std::size_t i = 0; i < s.num_layers(); ++i) additive += s.layer(i).param_count();
  CHECK(additive == f.count);

  Partition full = Partition::make(10, 1.0);
  CHECK(full.server_view.empty());
  CHECK(param_count(s, full.server_view).count == 0);
}

TEST_CASE("partition examples") {
  CHECK(partition(10, 0.5) == 5);
  CHECK(partition(10, 0.0) == 0);
  CHECK(partition(10, 0.15) == 2);
  CHECK(partition(10, 0.1) == 1);
  CHECK(partition(10, 1.0) == 10);
  CHECK(partition(10, 0.05) == 1);
  CHECK(partition(10, 0.04999) == 0);
  CHECK_THROWS_AS(partition(10, -0.01), InputError);
  CHECK_THROWS_AS(partition(10, 1.01), InputError);
}

TEST_CASE("partition is monotone and reaches every count") {
  for (std::size_t M : {1u, 3u, 10u, 17u}) {
    std::vector<bool> seen(M + 1, false);
    std::size_t prev = 0;
    for (int i = 0; i <= 1000; ++i) {
      const double q = i / 1000.0;
      const std::size_t c = partition(M, q);
      CHECK(c >= prev);
      CHECK(c <= M);
      prev = c;
      seen[c] = true;
    }
    for (bool s : seen) CHECK(s);
  }
}

TEST_CASE("client and server views cover every layer exactly once") {
  for (double q : {0.0, 0.1, 0.25, 0.5, 0.75, 1.0}) {
    Partition p = Partition::make(10, q);
    std::vector<int> hits(12, 0);
    for (std::size_t i : p.client_view) ++hits[i];
    for (std::size_t i : p.server_view) ++hits[i];
    for (int h : hits) CHECK(h == 1);
    CHECK(p.client_view.front() == 0);
    CHECK(p.client_view.back() == 11);
    CHECK(p.client_view.size() == p.cl_count + 2);
  }
}

TEST_CASE("payload_bytes examples") {
  CHECK(payload_bytes({8, 32}, 4) == 1056);
  CHECK(payload_bytes({}, 4) == 32);
  LayerStack s = build_model(ModelConfig{}, 0);
  const double act = static_cast<double>(payload_bytes({8, 32}, 4));
  CHECK(act / static_cast<double>(param_count(s).bytes) < 0.01);
}

TEST_CASE("split execution equals monolithic execution") {
  for (BlockKind kind : {BlockKind::mlp_residual, BlockKind::attention_mlp_residual}) {
    ModelConfig c = small_config(kind);
    LayerStack s = build_model(c, 7);
    Tensor raw = random_tensor({4, c.sample_width()}, 3);
    std::vector<int> labels{0, 2, 1, 1};

    // Monolithic reference: every layer fused onto one tape.
    Tape fused;
    const Tape::Id in = fused.leaf(model_input(c, raw));
    Tape::Id cur = in;
    std::vector<std::vector<Tape::Id>> ids;
    for (std::size_t i = 0; i < s.num_layers(); ++i) {
      RecordedBlock r = record_block(s.layer(i), cur, fused);
      cur = r.output;
      ids.push_back(r.params);
    }
    CrossEntropy ce = cross_entropy_loss(fused.value(cur), labels);
    const Tensor seed = ce.logits_grad();
    const Tensor logits = fused.value(cur);
    fused.backward(cur, seed);

    for (double q : {0.0, 0.1, 0.25, 0.5, 1.0}) {
      Partition p = Partition::make(c.num_middle_blocks, q);
      std::vector<std::size_t> order(p.client_view.begin(), p.client_view.end() - 1);
      order.insert(order.end(), p.server_view.begin(), p.server_view.end());
      order.push_back(p.client_view.back());
      std::vector<Tape> tapes(order.size());
      Tensor h = model_input(c, raw);
      for (std::size_t k = 0; k < order.size(); ++k) h = forward_block(s.layer(order[k]), h, tapes[k]);
      CHECK(max_abs_diff(h, logits) <= 1e-9);
      Tensor g = seed;
      for (std::size_t k = order.size(); k-- > 0;) {
        BlockGrads bg = backward_block(tapes[k], g);
        g = bg.input_grad;
        const auto& expect = ids[order[k]];
        for (std::size_t t = 0; t < expect.size(); ++t) {
          CHECK(max_abs_diff(bg.param_grads.tensors[t], fused.grad_or_zero(expect[t])) <= 1e-9);
        }
      }
      CHECK(max_abs_diff(g, fused.grad_or_zero(in)) <= 1e-9);
    }
  }
}

TEST_CASE("model_input shapes raw samples per block kind") {
  ModelConfig a = small_config(BlockKind::attention_mlp_residual);
  Tensor raw({2, a.sample_width()});
  CHECK(model_input(a, raw).shape() == Shape{2, 3, 5});
  CHECK_THROWS_AS(model_input(a, Tensor({2, 5})), DimensionError);
  ModelConfig m = small_config();
  CHECK(model_input(m, Tensor({2, 5})).shape() == Shape{2, 5});
}

TEST_CASE("model config validation") {
  ModelConfig c;
  c.num_middle_blocks = 0;
  CHECK_THROWS_AS(c.validate(), InputError);
  c = ModelConfig{};
  c.seq_len = 4;
  CHECK_THROWS_AS(c.validate(), InputError);
  c.block_kind = BlockKind::input_proj;
  CHECK_THROWS_AS(c.validate(), InputError);
}

TEST_CASE("pretraining steps strictly decrease the pooled loss") {
  FederationSpec fs;
  fs.input_dim = 8;
  fs.num_classes = 4;
  fs.samples_per_client = 60;
  fs.seed = 5;
  Federation fed = generate_federation(fs);
  Dataset pooled = pooled_train_set(fed);
  ModelConfig c;
  c.input_dim = 8;
  c.hidden_dim = 8;
  c.num_middle_blocks = 2;
  c.num_classes = 4;
  OptimizerConfig opt;
  opt.lr = 1e-3;
  MonolithicTrainer trainer(build_model(c, 1), opt);
  double prev = trainer.loss(pooled.x, pooled.labels);
  for (int i = 0; i < 8; ++i) {
    const double before = trainer.step(pooled.x, pooled.labels);
    CHECK(before == doctest::Approx(prev).epsilon(1e-12));
    const double after = trainer.loss(pooled.x, pooled.labels);
    CHECK(after < prev);
    prev = after;
  }
}
