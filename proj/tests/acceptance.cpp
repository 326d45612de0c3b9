// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Oracles here are written independently of the library code they check.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "flexp/block.hpp"
#include "flexp/experiment.hpp"
#include "flexp/grad_check.hpp"
#include "flexp/server.hpp"
#include "flexp/wire.hpp"

using namespace flexp;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_sd(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// Standard error of the difference of two independent group means.
double pooled_se(const std::vector<double>& a, const std::vector<double>& b) {
  const double sa = sample_sd(a), sb = sample_sd(b);
  return std::sqrt(sa * sa / static_cast<double>(a.size()) + sb * sb / static_cast<double>(b.size()));
}

// Standard error of the mean of paired differences.
double paired_se(const std::vector<double>& d) { return sample_sd(d) / std::sqrt(static_cast<double>(d.size())); }

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0, double e = 0, double g = 0) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, a, b, c, d, e, g);
  return buf;
}

Tensor gaussian(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = n(rng);
  return t;
}

constexpr std::uint64_t kSeeds[] = {0, 1, 2, 3, 4};

// Five clients of the default model on the default federation, scaled up
// to ample per-client data for the ablations.
ExperimentConfig ablation_config() {
  ExperimentConfig c = parse_config("{}");
  c.federation.samples_per_client = 1000;
  c.plan.target_steps = 1000;
  return c;
}

std::vector<RunResult> run_seeds(const ExperimentConfig& c) {
  std::vector<RunResult> out;
  for (std::uint64_t s : kSeeds) out.push_back(run_experiment(c, s));
  return out;
}

std::vector<double> collect(const std::vector<RunResult>& runs, const std::function<double(const RunResult&)>& f) {
  std::vector<double> v;
  for (const RunResult& r : runs) v.push_back(f(r));
  return v;
}

// --- 1. gradient correctness ---------------------------------------------

Verdict criterion_gradients() {
  struct Case {
    BlockKind kind;
    double tol;
  };
  const Case cases[] = {{BlockKind::input_proj, 1e-6},
                        {BlockKind::output_head, 1e-6},
                        {BlockKind::mlp_residual, 1e-4},
                        {BlockKind::attention_mlp_residual, 1e-4}};
  bool ok = true;
  std::string detail;
  for (const Case& c : cases) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) worst = std::max(worst, grad_check(c.kind, seed));
    ok = ok && worst < c.tol;
    detail += std::string(to_string(c.kind)) + fmt(" %.2e (<%.0e); ", worst, c.tol);
  }
  return {ok, detail + "20 seeds each"};
}

// --- 2. split-execution equivalence ----------------------------------------

Verdict criterion_split_equivalence() {
  ModelConfig mc;
  mc.input_dim = 6;
  mc.hidden_dim = 8;
  mc.num_middle_blocks = 10;
  mc.num_classes = 4;
  FederationSpec fs;
  fs.num_clients = 1;
  fs.input_dim = 6;
  fs.num_classes = 4;
  fs.samples_per_client = 200;
  const Federation fed = generate_federation(fs);
  const LayerStack base = build_model(mc, 21);
  const std::vector<DeviceProfile> devices(1);
  double worst = 0.0;
  for (double q : {0.0, 0.1, 0.5, 1.0}) {
    RunPlan p;
    p.client_q = {q};
    p.target_steps = 50;
    p.lambda = 0.0;
    p.element_size = 8;
    const RunResult r = run_flexp_sfl(p, fed, devices, base, 17);
    // Monolithic oracle: the whole stack trained in one process on the batch
    // sequence the client draws.
    MonolithicTrainer mono(base, p.optimizer);
    BatchSampler sampler(fed.clients[0].train, p.batch_size, derive_seed(17, seed_stream::batches, 0));
    for (int i = 0; i < 50; ++i) {
      const Batch b = sampler.next();
      mono.step(b.x, b.labels);
    }
    const LayerStack& a = r.models[0];
    const LayerStack& m = mono.stack();
    for (std::size_t l = 0; l < a.num_layers(); ++l)
      for (std::size_t t = 0; t < a.layer(l).tensors.size(); ++t)
        for (std::size_t i = 0; i < a.layer(l).tensors[t].numel(); ++i)
          worst = std::max(worst, std::abs(a.layer(l).tensors[t][i] - m.layer(l).tensors[t][i]));
  }
  return {worst <= 1e-9, fmt("max element difference %.3e over q in {0, 0.1, 0.5, 1} after 50 steps (<=1e-9)", worst)};
}

// --- 3. alignment correctness ----------------------------------------------

double kl_rows(const Tensor& p_logits, const Tensor& q_logits) {
  const std::size_t rows = p_logits.dim(0), d = p_logits.dim(1);
  double total = 0.0;
  for (std::size_t b = 0; b < rows; ++b) {
    std::vector<double> p(d), q(d);
    double mp = -1e300, mq = -1e300, sp = 0.0, sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      mp = std::max(mp, p_logits[b * d + j]);
      mq = std::max(mq, q_logits[b * d + j]);
    }
    for (std::size_t j = 0; j < d; ++j) {
      sp += (p[j] = std::exp(p_logits[b * d + j] - mp));
      sq += (q[j] = std::exp(q_logits[b * d + j] - mq));
    }
    for (std::size_t j = 0; j < d; ++j) total += p[j] / sp * std::log((p[j] / sp) / (q[j] / sq));
  }
  return total / static_cast<double>(rows);
}

Verdict criterion_alignment() {
  ModelConfig mc;
  mc.input_dim = 6;
  mc.hidden_dim = 8;
  mc.num_middle_blocks = 4;
  mc.num_classes = 4;
  const LayerStack base = build_model(mc, 31);
  std::mt19937_64 rng(32);
  const Tensor z_pl1 = gaussian({5, 8}, rng);
  auto prefix = [&](const std::vector<BlockParams>& blocks) {
    Tensor z = z_pl1;
    for (const BlockParams& b : blocks) z = apply_block(b, z);
    return z;
  };
  const std::vector<BlockParams> server_cl(base.middle.begin(), base.middle.begin() + 2);

  // (a) identical copies
  ServerRuntime s0(base, OptimizerConfig{});
  s0.register_client(0, 0.5, 0.25);
  s0.handle_activation_up(Message{Tag::act_up, 0, 0, prefix(server_cl)});
  const AlignResult same = s0.handle_align_probe(Message{Tag::align_probe, 0, 0, z_pl1});
  double zero_dev = std::abs(same.value);
  for (double g : same.grad.data()) zero_dev = std::max(zero_dev, std::abs(g));

  // (b) eps-perturbed client copy against a finite-difference oracle
  std::vector<BlockParams> client_cl = server_cl;
  std::normal_distribution<double> eps(0.0, 0.05);
  for (BlockParams& b : client_cl)
    for (Tensor& t : b.tensors)
      for (double& v : t.data()) v += eps(rng);
  const Tensor z_cl = prefix(client_cl);
  const Tensor z_hat = prefix(server_cl);
  ServerRuntime s1(base, OptimizerConfig{});
  s1.register_client(0, 0.5, 0.25);
  s1.handle_activation_up(Message{Tag::act_up, 0, 0, z_cl});
  const AlignResult moved = s1.handle_align_probe(Message{Tag::align_probe, 0, 0, z_pl1});
  const double h = 1e-6;
  double err = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < z_cl.numel(); ++i) {
    Tensor plus = z_cl, minus = z_cl;
    plus[i] += h;
    minus[i] -= h;
    const double fd = (kl_rows(plus, z_hat) - kl_rows(minus, z_hat)) / (2 * h);
    err = std::max(err, std::abs(fd - moved.grad[i]));
    scale = std::max(scale, std::abs(fd));
  }
  const double rel = err / scale;
  const double value_err = std::abs(moved.value - kl_rows(z_cl, z_hat));

  // (c) lambda = 0: probing on vs off gives bit-identical parameters
  ExperimentConfig c = parse_config("{}");
  c.federation.num_clients = 4;
  c.model.num_middle_blocks = 6;
  c.model.hidden_dim = 16;
  c.devices.clear();
  for (std::size_t k = 0; k < 4; ++k) {
    DeviceGroup g;
    g.profile.name = "dev" + std::to_string(k);
    g.profile.fwd_seconds_per_block_per_sample = 1e-3 * static_cast<double>(1 + 3 * k);
    g.clients = {k};
    c.devices.push_back(g);
  }
  c.plan.client_q = {0.2, 0.5, 0.5, 0.8};
  c.plan.target_steps = 200;
  c.plan.lambda = 0.0;
  c.plan.align_every = 3;
  const RunResult with = run_experiment(c, 5);
  c.plan.align_every = 0;
  const RunResult without = run_experiment(c, 5);
  bool identical = with.models.size() == without.models.size();
  for (std::size_t k = 0; identical && k < with.models.size(); ++k) {
    const LayerStack& a = with.models[k];
    const LayerStack& b = without.models[k];
    for (std::size_t l = 0; identical && l < a.num_layers(); ++l)
      for (std::size_t t = 0; identical && t < a.layer(l).tensors.size(); ++t)
        identical = std::memcmp(a.layer(l).tensors[t].data().data(), b.layer(l).tensors[t].data().data(),
                                a.layer(l).tensors[t].numel() * sizeof(double)) == 0;
  }
  const bool probed = with.ledger.frames(Tag::align_probe) > 0 && without.ledger.frames(Tag::align_probe) == 0;

  const bool ok = zero_dev == 0.0 && moved.value > 0.0 && value_err < 1e-12 && rel < 1e-4 && identical && probed;
  return {ok, fmt("fixed point max|R|,|dR| %.1e; perturbed R %.3e, R vs oracle %.1e, grad rel err %.2e (<1e-4); ",
                  zero_dev, moved.value, value_err, rel) +
                  "lambda=0 with vs without probes: " + (identical ? "bit-identical" : "DIFFERENT") + " (" +
                  std::to_string(with.ledger.frames(Tag::align_probe)) + " probes)"};
}

// --- 4. no aggregation, constant payload ---------------------------------

Verdict criterion_payload() {
  ExperimentConfig c = parse_config("{}");
  c.plan.target_steps = 200;
  bool ok = true;
  std::vector<double> per_step;
  std::uint64_t param_frames = 0;
  for (double q : {0.1, 0.2, 0.5}) {
    c.plan.client_q.assign(c.federation.num_clients, q);
    const RunResult r = run_experiment(c, 0);
    param_frames += r.ledger.param_frames();
    const std::uint64_t exchange = r.ledger.bytes(Tag::act_up) + r.ledger.bytes(Tag::act_down) +
                                   r.ledger.bytes(Tag::grad_up) + r.ledger.bytes(Tag::grad_down);
    per_step.push_back(static_cast<double>(exchange) / static_cast<double>(r.steps));
  }
  ok = param_frames == 0 && per_step[0] == per_step[1] && per_step[1] == per_step[2];
  // Layout arithmetic: four [B, d] frames per step, 27-byte header with two dims.
  const double expected = 4.0 * (27.0 + 8.0 * 32.0 * 4.0);
  ok = ok && per_step[0] == expected;
  return {ok, fmt("PARAM frames %.0f; ACT/GRAD bytes per step at q=0.1/0.2/0.5: %.0f / %.0f / %.0f (expected %.0f)",
                  static_cast<double>(param_frames), per_step[0], per_step[1], per_step[2], expected)};
}

// --- 5. straggler speedup --------------------------------------------------

Verdict criterion_stragglers() {
  ExperimentConfig c = parse_config("{}");
  c.devices.clear();
  for (std::size_t k = 0; k < 5; ++k) {
    DeviceGroup g;
    g.profile.name = "dev" + std::to_string(k);
    // 10:1 compute spread, default links.
    g.profile.fwd_seconds_per_block_per_sample = 1e-3 * (1.0 + 9.0 * static_cast<double>(k) / 4.0);
    g.clients = {k};
    c.devices.push_back(g);
  }
  c.plan.target_steps = 500;
  const double flexp = run_experiment(c, 0).sim_time_s;
  c.plan.protocol = Protocol::sfl;
  const double sfl = run_experiment(c, 0).sim_time_s;
  c.plan.protocol = Protocol::fedavg;
  const double fedavg = run_experiment(c, 0).sim_time_s;
  const bool ok = flexp <= 0.5 * sfl && sfl <= fedavg;
  return {ok, fmt("sim seconds to 500 steps: flexp %.2f, sfl %.2f, fedavg %.2f; flexp/sfl %.3f (<=0.5)", flexp, sfl,
                  fedavg, flexp / sfl)};
}

// --- 6. q ablation -----------------------------------------------------------

Verdict criterion_q() {
  ExperimentConfig c = ablation_config();
  std::vector<std::vector<double>> acc;
  for (double q : {0.1, 0.2, 0.5}) {
    acc.push_back(collect(run_seeds(with_sweep_value(c, SweepParam::q, q)),
                          [](const RunResult& r) { return r.mean_personal_accuracy(); }));
  }
  const double m1 = mean(acc[0]), m2 = mean(acc[1]), m5 = mean(acc[2]);
  const double se = pooled_se(acc[0], acc[2]);
  const bool ok = m1 <= m2 && m2 <= m5 && m5 - m1 > se;
  return {ok, fmt("personal accuracy q=0.1 %.4f, q=0.2 %.4f, q=0.5 %.4f; diff(0.5-0.1) %.4f vs pooled SE %.4f", m1, m2,
                  m5, m5 - m1, se)};
}

// --- 7. lambda ablation ------------------------------------------------------

// First evaluation time after which the curve stays within `band` of its
// plateau (mean of the last quarter of the evaluations).
double time_to_plateau(const std::vector<EvalPoint>& evals, double band) {
  const std::size_t n = evals.size();
  const std::size_t tail = std::max<std::size_t>(1, n / 4);
  double plateau = 0.0;
  for (std::size_t i = n - tail; i < n; ++i) plateau += evals[i].mean_global_accuracy;
  plateau /= static_cast<double>(tail);
  std::size_t k = n;
  while (k > 0 && std::abs(evals[k - 1].mean_global_accuracy - plateau) <= band) --k;
  return k < n ? evals[k].time_s : evals.back().time_s;
}

Verdict criterion_lambda() {
  ExperimentConfig c = ablation_config();
  c.plan.client_q = {0.1, 0.2, 0.5, 0.5, 0.8};
  c.plan.eval_interval_s = 2.5;
  std::vector<double> g, t;
  std::string detail;
  for (double lambda : {0.0, 0.25, 0.5}) {
    const std::vector<RunResult> runs = run_seeds(with_sweep_value(c, SweepParam::lambda, lambda));
    g.push_back(mean(collect(runs, [](const RunResult& r) { return r.mean_global_accuracy(); })));
    t.push_back(mean(collect(runs, [](const RunResult& r) { return time_to_plateau(r.evals, 0.02); })));
    detail += fmt("lambda=%.2f global %.4f plateau-time %.2fs; ", lambda, g.back(), t.back());
  }
  const bool ok = g[0] <= g[1] && g[1] <= g[2] && t[0] < t[1] && t[0] < t[2];
  return {ok, detail + "band 0.02"};
}

// --- 8. dropout robustness ---------------------------------------------------

Verdict criterion_dropout() {
  ExperimentConfig c = ablation_config();
  c.plan.target_steps = 500;
  std::vector<std::vector<double>> acc, time;
  for (double p : {0.0, 0.1, 0.5}) {
    const std::vector<RunResult> runs = run_seeds(with_sweep_value(c, SweepParam::dropout, p));
    acc.push_back(collect(runs, [](const RunResult& r) { return r.mean_personal_accuracy(); }));
    time.push_back(collect(runs, [](const RunResult& r) { return r.sim_time_s; }));
  }
  const double a0 = mean(acc[0]), a1 = mean(acc[1]), a5 = mean(acc[2]);
  const double t0 = mean(time[0]), t1 = mean(time[1]), t5 = mean(time[2]);
  const double se_a = pooled_se(acc[0], acc[2]), se_t = pooled_se(time[0], time[2]);
  const bool acc_ok = a0 >= a1 && a1 >= a5 && a0 - a5 > se_a;
  const bool time_ok = t0 <= t1 && t1 <= t5 && t5 - t0 > se_t;
  return {acc_ok && time_ok,
          fmt("personal accuracy %.4f / %.4f / %.4f (drop %.4f vs SE %.4f); ", a0, a1, a5, a0 - a5, se_a) +
              fmt("sim seconds %.2f / %.2f / %.2f (rise %.2f vs SE %.2f)", t0, t1, t5, t5 - t0, se_t) +
              (acc_ok ? "" : " [accuracy leg red]") + (time_ok ? "" : " [time leg red]")};
}

// --- 9. personalization matrix ----------------------------------------------

Verdict criterion_personalization() {
  ExperimentConfig c = ablation_config();
  c.federation.theta_max = 3.1;
  c.plan.lambda = 0.25;
  c.plan.target_steps = 1500;
  const std::vector<RunResult> runs = run_seeds(c);
  const std::size_t n = c.federation.num_clients;
  bool ok = true;
  double worst_margin = 1e300;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> vs_shards;
    std::vector<std::vector<double>> vs_models(n);
    for (const RunResult& r : runs) {
      const auto& m = r.crosseval;
      double off = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) off += m[i][j];
      vs_shards.push_back(m[i][i] - off / static_cast<double>(n - 1));
      for (std::size_t k = 0; k < n; ++k)
        if (k != i) vs_models[k].push_back(m[i][i] - m[k][i]);
    }
    const double margin_a = mean(vs_shards) - paired_se(vs_shards);
    ok = ok && margin_a > 0.0;
    worst_margin = std::min(worst_margin, margin_a);
    for (std::size_t k = 0; k < n; ++k) {
      if (k == i) continue;
      const double margin_b = mean(vs_models[k]) - paired_se(vs_models[k]);
      ok = ok && margin_b > 0.0;
      worst_margin = std::min(worst_margin, margin_b);
    }
  }
  double diag = 0.0, off = 0.0;
  for (const RunResult& r : runs)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) (i == j ? diag : off) += r.crosseval[i][j];
  diag /= static_cast<double>(runs.size() * n);
  off /= static_cast<double>(runs.size() * n * (n - 1));
  return {ok, fmt("mean diagonal %.4f, mean off-diagonal %.4f; smallest (difference - SE) over all comparisons %.4f",
                  diag, off, worst_margin)};
}

// --- 10. determinism and wire ----------------------------------------------

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Verdict criterion_determinism_wire(const std::string& data_dir, const std::filesystem::path& scratch) {
  ExperimentConfig c = parse_config("{}");
  c.plan.target_steps = 200;
  c.devices[0].profile.dropout_prob = 0.2;
  c.plan.lambda = 0.25;
  c.plan.eval_interval_s = 2.0;
  const std::filesystem::path a = scratch / "a", b = scratch / "b";
  write_run_outputs(c, run_experiment(c, 3), a);
  write_run_outputs(c, run_experiment(c, 3), b);
  bool same = true;
  for (const char* f : {"timeline.csv", "summary.csv", "crosseval.csv", "evals.csv"}) {
    const std::string x = slurp(a / f);
    same = same && !x.empty() && x == slurp(b / f);
  }

  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> tag(1, 8), rank(0, 3), dim(1, 6);
  int bad = 0;
  for (int i = 0; i < 1000; ++i) {
    Message m;
    m.tag = static_cast<Tag>(tag(rng));
    m.client_id = static_cast<std::uint32_t>(rng());
    m.step_id = rng();
    Shape s;
    for (int k = rank(rng); k > 0; --k) s.push_back(static_cast<std::size_t>(dim(rng)));
    if (!s.empty()) m.payload = gaussian(s, rng, 100.0);
    const Message back = decode_message(encode_message(m, 8), 8);
    const bool eq = back.tag == m.tag && back.client_id == m.client_id && back.step_id == m.step_id &&
                    back.payload.shape() == m.payload.shape() &&
                    std::memcmp(back.payload.data().data(), m.payload.data().data(),
                                m.payload.numel() * sizeof(double)) == 0;
    if (!eq) ++bad;
  }

  const std::string golden = slurp(std::filesystem::path(data_dir) / "act_up_2x2_f32.bin");
  const std::vector<std::uint8_t> enc = encode_message(Message{Tag::act_up, 1, 0, Tensor({2, 2}, {1, 2, 3, 4})}, 4);
  const bool golden_ok = golden.size() == 43 && std::string(enc.begin(), enc.end()) == golden;

  return {same && bad == 0 && golden_ok, std::string("CSV outputs ") + (same ? "byte-identical" : "DIFFER") + "; " +
                                             std::to_string(bad) + "/1000 wire mismatches; golden frame " +
                                             (golden_ok ? "matches" : "MISMATCH")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::string data_dir = argc > 1 ? argv[1] : FLEXP_TEST_DATA;
  const std::filesystem::path scratch = std::filesystem::temp_directory_path() / "flexp_acceptance";
  std::filesystem::remove_all(scratch);

  struct Criterion {
    int id;
    const char* name;
    double limit_s;  // 0: no runtime limit
    std::function<Verdict()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", 30, criterion_gradients},
      {2, "split-execution equivalence", 60, criterion_split_equivalence},
      {3, "alignment correctness", 0, criterion_alignment},
      {4, "no aggregation, constant payload", 0, criterion_payload},
      {5, "straggler speedup", 120, criterion_stragglers},
      {6, "q ablation", 300, criterion_q},
      {7, "lambda ablation", 300, criterion_lambda},
      {8, "dropout robustness", 300, criterion_dropout},
      {9, "personalization matrix", 0, criterion_personalization},
      {10, "determinism and wire", 0, [&] { return criterion_determinism_wire(data_dir, scratch); }},
  };

  int failed = 0;
  for (const Criterion& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = c.limit_s == 0 || secs < c.limit_s;
    if (!in_time) v.detail += " [over runtime limit]";
    const bool pass = v.pass && in_time;
    if (!pass) ++failed;
    std::printf("%s criterion %d (%s): %s [%.1fs%s]\n", pass ? "PASS" : "FAIL", c.id, c.name, v.detail.c_str(), secs,
                c.limit_s > 0 ? fmt(" of %.0fs", c.limit_s).c_str() : "");
    std::fflush(stdout);
  }
  std::filesystem::remove_all(scratch);
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
