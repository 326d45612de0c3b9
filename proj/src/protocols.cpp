#include "flexp/protocols.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <string>

#include "flexp/client.hpp"
#include "flexp/error.hpp"
#include "flexp/losses.hpp"
#include "flexp/server.hpp"
#include "flexp/wire.hpp"

namespace flexp {

std::string_view to_string(Protocol p) {
  switch (p) {
    case Protocol::flexp_sfl: return "flexp_sfl";
    case Protocol::sfl: return "sfl";
    case Protocol::fedavg: return "fedavg";
  }
  return "?";
}

Protocol protocol_from_string(std::string_view name) {
  if (name == "flexp_sfl") return Protocol::flexp_sfl;
  if (name == "sfl") return Protocol::sfl;
  if (name == "fedavg") return Protocol::fedavg;
  throw InputError("unknown protocol '" + std::string(name) + "'");
}

void RunPlan::validate(std::size_t num_clients) const {
  if (target_steps.has_value() == time_budget_s.has_value()) {
    throw ValidationError("plan", "exactly one of target_steps and time_budget_s must be set");
  }
  if (target_steps && *target_steps == 0) throw ValidationError("plan.target_steps", "must be >= 1");
  if (time_budget_s && !(*time_budget_s > 0.0)) throw ValidationError("plan.time_budget_s", "must be > 0");
  for (std::size_t i = 0; i < client_q.size(); ++i) {
    if (!(client_q[i] >= 0.0 && client_q[i] <= 1.0)) {
      throw ValidationError("plan.clients[" + std::to_string(i) + "].q", "must lie in [0, 1]");
    }
  }
  if (protocol == Protocol::flexp_sfl) {
    if (client_q.size() != num_clients) {
      throw ValidationError("plan.clients", "needs one entry per client (" + std::to_string(num_clients) + ")");
    }
    if (aggregation_period || local_steps || sfl_q) {
      throw ValidationError("plan", "flexp_sfl takes no aggregation fields (aggregation_period, local_steps, sfl_q)");
    }
  }
  if (protocol == Protocol::sfl) {
    if (sfl_q && !(*sfl_q >= 0.0 && *sfl_q <= 1.0)) throw ValidationError("plan.sfl_q", "must lie in [0, 1]");
    if (!sfl_q && client_q.empty()) throw ValidationError("plan.sfl_q", "required when plan.clients is empty");
    if (local_steps) throw ValidationError("plan.local_steps", "only used by fedavg");
  }
  if (aggregation_period && *aggregation_period == 0) throw ValidationError("plan.aggregation_period", "must be >= 1");
  if (local_steps && *local_steps == 0) throw ValidationError("plan.local_steps", "must be >= 1");
  if (!(lambda >= 0.0)) throw ValidationError("plan.lambda", "must be >= 0");
  if (batch_size == 0) throw ValidationError("plan.batch_size", "must be >= 1");
  if (element_size != 4 && element_size != 8) throw ValidationError("plan.element_size", "must be 4 or 8");
  if (!(server_seconds_per_block_per_sample >= 0.0)) {
    throw ValidationError("plan.server_seconds_per_block_per_sample", "must be >= 0");
  }
  if (!(eval_interval_s >= 0.0)) throw ValidationError("plan.eval_interval_s", "must be >= 0");
  if (!(optimizer.lr > 0.0)) throw ValidationError("plan.optimizer.lr", "must be > 0");
}

double RunPlan::effective_sfl_q() const {
  if (sfl_q) return *sfl_q;
  std::vector<double> qs = client_q;
  std::sort(qs.begin(), qs.end());
  const std::size_t n = qs.size();
  return n % 2 ? qs[n / 2] : 0.5 * (qs[n / 2 - 1] + qs[n / 2]);
}

double RunResult::mean_personal_accuracy() const {
  if (personal_accuracy.empty()) return 0.0;
  return std::accumulate(personal_accuracy.begin(), personal_accuracy.end(), 0.0) /
         static_cast<double>(personal_accuracy.size());
}

double RunResult::mean_global_accuracy() const {
  if (global_accuracy.empty()) return 0.0;
  return std::accumulate(global_accuracy.begin(), global_accuracy.end(), 0.0) /
         static_cast<double>(global_accuracy.size());
}

std::vector<Tensor> weighted_average(const std::vector<std::vector<Tensor>>& sets, const std::vector<double>& weights) {
  if (sets.empty() || sets.size() != weights.size()) throw InputError("weighted_average: need one weight per set");
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total > 0.0)) throw InputError("weighted_average: weights must sum to a positive value");
  std::vector<Tensor> out = sets[0];
  for (std::size_t s = 1; s < sets.size(); ++s) {
    if (sets[s].size() != out.size()) throw DimensionError("weighted_average: parameter lists differ in length");
    for (std::size_t k = 0; k < out.size(); ++k) {
      require_same_shape(out[k], sets[s][k], "weighted_average");
      const auto base = sets[0][k].data();
      const auto other = sets[s][k].data();
      auto dst = out[k].data();
      const double w = weights[s] / total;
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += w * (other[i] - base[i]);
    }
  }
  return out;
}

std::vector<double> pretrain(LayerStack& stack, const Dataset& pooled, std::size_t steps, std::size_t batch_size,
                             const OptimizerConfig& optimizer, std::uint64_t seed) {
  std::vector<double> losses;
  if (steps == 0) return losses;
  MonolithicTrainer trainer(stack, optimizer);
  BatchSampler sampler(pooled, batch_size, seed);
  losses.reserve(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    Batch b = sampler.next();
    losses.push_back(trainer.step(b.x, b.labels));
  }
  stack = trainer.stack();
  return losses;
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_inputs(const RunPlan& plan, const Federation& fed, const std::vector<DeviceProfile>& devices,
                  const LayerStack& base) {
  const std::size_t n = fed.clients.size();
  plan.validate(n);
  if (devices.size() != n) {
    throw ValidationError("devices", "every client needs exactly one device profile (" + std::to_string(devices.size()) +
                                         " for " + std::to_string(n) + " clients)");
  }
  for (const auto& d : devices) d.validate();
  if (plan.target_steps &&
      std::all_of(devices.begin(), devices.end(), [](const DeviceProfile& d) { return d.dropout_prob >= 1.0; })) {
    throw ValidationError("devices", "every client always drops out; target_steps can never be reached");
  }
  if (fed.spec.input_dim != base.config.sample_width() || fed.spec.num_classes != base.config.num_classes) {
    throw ValidationError("model", "federation sample width/classes do not match the model");
  }
}

/// Shared plumbing of the three regimes: event loop, ledger, stop rule,
/// evaluation, result assembly.
class Driver {
 public:
  Driver(const RunPlan& plan, const Federation& fed, const std::vector<DeviceProfile>& devices, std::uint64_t seed)
      : plan_(plan), fed_(fed), devices_(devices), seed_(seed), ledger_(fed.clients.size()),
        global_test_(global_test_set(fed)) {
    ledger_.enable_trace(plan.trace);
    result_.protocol = plan.protocol;
    for (std::size_t c = 0; c < fed.clients.size(); ++c) {
      up_.emplace_back(devices[c].uplink_bytes_per_s, devices[c].latency_s);
      down_.emplace_back(devices[c].downlink_bytes_per_s, devices[c].latency_s);
    }
  }
  virtual ~Driver() = default;

  RunResult finish() {
    queue_.run();
    ledger_.set_total_time(end_time_);
    result_.sim_time_s = end_time_;
    std::vector<LayerStack> models = final_models();
    const std::size_t n = models.size();
    result_.personal_accuracy.resize(n);
    result_.global_accuracy.resize(n);
    result_.crosseval.assign(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const Dataset& test = fed_.clients[j].test;
        result_.crosseval[i][j] = accuracy(forward_logits(models[i], test.x), test.labels);
      }
      result_.personal_accuracy[i] = result_.crosseval[i][i];
      result_.global_accuracy[i] = accuracy(forward_logits(models[i], global_test_.x), global_test_.labels);
    }
    result_.over_memory_budget.resize(n);
    for (std::size_t c = 0; c < n; ++c) {
      result_.over_memory_budget[c] = ledger_.client(static_cast<std::uint32_t>(c)).peak_memory_bytes >
                                      devices_[c].memory_bytes_budget;
    }
    result_.models = std::move(models);
    result_.ledger = std::move(ledger_);
    return std::move(result_);
  }

 protected:
  virtual std::vector<LayerStack> final_models() const = 0;
  /// Whether any client still has work queued (stops periodic evaluation).
  virtual bool active() const = 0;

  bool may_start() const {
    if (plan_.target_steps) return started_ < *plan_.target_steps;
    return queue_.now() < *plan_.time_budget_s;
  }

  std::uint64_t remaining() const {
    if (!plan_.target_steps) return std::numeric_limits<std::uint64_t>::max();
    return *plan_.target_steps - started_;
  }

  /// Accounts a frame and returns (arrival time, what the receiver decodes).
  std::pair<double, Message> send(const Message& msg) {
    const std::uint32_t c = msg.client_id;
    const std::size_t bytes = message_size(msg, plan_.element_size);
    ledger_.record_frame(c, msg.tag, bytes);
    const bool up = is_uplink(msg.tag);
    ledger_.trace(queue_.now(), up ? "client" + std::to_string(c) : "server",
                  "send " + std::string(to_string(msg.tag)), bytes);
    const double arrival = (up ? up_[c] : down_[c]).send(queue_.now(), bytes);
    return {arrival, transmit(msg, plan_.element_size)};
  }

  void add_row(int client, double loss) {
    result_.timeline.push_back(TimelineRow{queue_.now(), result_.steps, client, loss, ledger_.bytes_up(),
                                           ledger_.bytes_down()});
  }

  void complete_step(std::uint32_t c, double loss) {
    ++result_.steps;
    ledger_.note_step(c, queue_.now());
    ledger_.trace(queue_.now(), "client" + std::to_string(c), "step complete");
    add_row(static_cast<int>(c), loss);
    end_time_ = std::max(end_time_, queue_.now());
  }

  void schedule_evals() {
    if (plan_.eval_interval_s > 0.0) queue_.schedule(plan_.eval_interval_s, [this] { evaluate_now(); });
  }

  void evaluate_now() {
    std::vector<LayerStack> models = final_models();
    EvalPoint p{queue_.now(), result_.steps, 0.0, 0.0};
    for (std::size_t c = 0; c < models.size(); ++c) {
      const Dataset& own = fed_.clients[c].test;
      p.mean_personal_accuracy += accuracy(forward_logits(models[c], own.x), own.labels);
      p.mean_global_accuracy += accuracy(forward_logits(models[c], global_test_.x), global_test_.labels);
    }
    p.mean_personal_accuracy /= static_cast<double>(models.size());
    p.mean_global_accuracy /= static_cast<double>(models.size());
    result_.evals.push_back(p);
    if (active()) queue_.schedule(queue_.now() + plan_.eval_interval_s, [this] { evaluate_now(); });
  }

  /// Baseline aggregation of `params[c]` for the given participants: PARAM_UP,
  /// weighted average by train-shard size, PARAM_DOWN. `load` installs the
  /// averaged parameters on a client; `done` fires after the last download.
  void aggregate(const std::vector<std::uint32_t>& who, std::uint64_t round,
                 std::function<std::vector<Tensor>(std::uint32_t)> params,
                 std::function<void(std::uint32_t, std::span<const Tensor>)> load, std::function<void()> done) {
    struct State {
      std::vector<std::vector<Tensor>> received;
      std::vector<double> weights;
      std::size_t arrived = 0;
      std::size_t downloaded = 0;
      std::vector<Tensor> layout;
    };
    auto st = std::make_shared<State>();
    st->received.resize(who.size());
    st->weights.resize(who.size());
    st->layout = params(who.front());
    for (std::size_t k = 0; k < who.size(); ++k) {
      const std::uint32_t c = who[k];
      st->weights[k] = static_cast<double>(fed_.clients[c].train.size());
      auto [arrival, msg] = send(Message{Tag::param_up, c, round, flatten_tensors(params(c))});
      queue_.schedule(arrival, [this, st, k, msg = std::move(msg), who, round, load, done] {
        st->received[k] = st->layout;
        unflatten_into(msg.payload, st->received[k]);
        if (++st->arrived < who.size()) return;
        ledger_.note_barrier();
        const Tensor avg = flatten_tensors(weighted_average(st->received, st->weights));
        for (const std::uint32_t c : who) {
          auto [down_at, down] = send(Message{Tag::param_down, c, round, avg});
          queue_.schedule(down_at, [this, st, c, down = std::move(down), who, load, done] {
            std::vector<Tensor> p = st->layout;
            unflatten_into(down.payload, p);
            load(c, p);
            if (++st->downloaded < who.size()) return;
            ledger_.note_barrier();
            end_time_ = std::max(end_time_, queue_.now());
            add_row(-1, kNaN);
            done();
          });
        }
      });
    }
  }

  const RunPlan& plan_;
  const Federation& fed_;
  const std::vector<DeviceProfile>& devices_;
  std::uint64_t seed_;
  EventQueue queue_;
  MetricsLedger ledger_;
  Dataset global_test_;
  std::vector<Link> up_, down_;
  RunResult result_;
  std::uint64_t started_ = 0;
  double end_time_ = 0.0;
};

/// Split training shared by flexp_sfl and the sfl baseline: one server, one
/// ClientRuntime per client, the four-frame step exchange plus optional probes.
class SplitDriver : public Driver {
 public:
  SplitDriver(const RunPlan& plan, const Federation& fed, const std::vector<DeviceProfile>& devices,
              const LayerStack& base, std::uint64_t seed, bool sfl)
      : Driver(plan, fed, devices, seed), server_(base, plan.optimizer) {
    const std::size_t n = fed.clients.size();
    for (std::size_t c = 0; c < n; ++c) {
      const auto id = static_cast<std::uint32_t>(c);
      ClientOptions o;
      o.client_id = id;
      o.q = sfl ? plan.effective_sfl_q() : plan.client_q[c];
      o.lambda = sfl ? 0.0 : plan.lambda;
      o.align_every = sfl ? 0 : plan.align_every;
      server_.register_client(id, o.q, o.lambda);
      clients_.emplace_back(o, base, plan.optimizer);
      samplers_.emplace_back(fed.clients[c].train, plan.batch_size, derive_seed(seed, seed_stream::batches, c));
    }
    Shape cut{plan.batch_size};
    if (base.config.block_kind == BlockKind::attention_mlp_residual) cut.push_back(base.config.seq_len);
    cut.push_back(base.config.hidden_dim);
    cut_shape_ = cut;
  }

 protected:
  std::vector<LayerStack> final_models() const override {
    std::vector<LayerStack> out;
    for (const auto& c : clients_) out.push_back(c.composite(server_.global()));
    return out;
  }

  double server_time(std::size_t blocks, Direction dir) const {
    const double t = plan_.server_seconds_per_block_per_sample * static_cast<double>(blocks) *
                     static_cast<double>(plan_.batch_size);
    return dir == Direction::backward ? 2.0 * t : t;
  }

  std::size_t server_blocks(std::uint32_t c) const { return server_.global().middle.size() - clients_[c].cl_count(); }

  /// Uncontended duration of one step, used for the idle time of a dropped step.
  double nominal_step(std::uint32_t c) const {
    const DeviceProfile& d = devices_[c];
    const std::size_t own = 1 + clients_[c].cl_count();
    const std::size_t b = plan_.batch_size;
    const Message frame{Tag::act_up, c, 0, Tensor(cut_shape_)};
    const std::size_t bytes = message_size(frame, plan_.element_size);
    return compute_time(own, b, d, Direction::forward) + compute_time(1, b, d, Direction::forward) +
           compute_time(1, b, d, Direction::backward) + compute_time(own, b, d, Direction::backward) +
           2 * transfer_time(bytes, d.uplink_bytes_per_s, d.latency_s) +
           2 * transfer_time(bytes, d.downlink_bytes_per_s, d.latency_s) +
           server_time(server_blocks(c), Direction::forward) + server_time(server_blocks(c), Direction::backward);
  }

  /// One split step of client `c` starting now; `done(c)` fires on completion.
  void run_step(std::uint32_t c, std::function<void(std::uint32_t)> done) {
    ClientRuntime& rt = clients_[c];
    const DeviceProfile& dev = devices_[c];
    const std::size_t b = plan_.batch_size;
    Batch batch = samplers_[c].next();
    ClientForward fwd = rt.forward(batch);
    ledger_.note_memory(c, (rt.param_count() + rt.cached_elements()) * plan_.element_size);
    const double tf = compute_time(1 + rt.cl_count(), b, dev, Direction::forward);
    ledger_.add_compute(c, tf);
    queue_.schedule(queue_.now() + tf, [this, c, fwd = std::move(fwd), done] {
      auto [at, up] = send(fwd.act_up);
      queue_.schedule(at, [this, c, up = std::move(up), done] { on_act_up(c, up, done); });
      if (fwd.probe) {
        auto [pat, probe] = send(*fwd.probe);
        queue_.schedule(pat, [this, c, probe = std::move(probe)] { on_probe(c, probe); });
      }
    });
  }

  void on_act_up(std::uint32_t c, const Message& up, std::function<void(std::uint32_t)> done) {
    Message act_down = server_.handle_activation_up(up);
    queue_.schedule(queue_.now() + server_time(server_blocks(c), Direction::forward),
                    [this, c, act_down = std::move(act_down), done] {
                      auto [at, msg] = send(act_down);
                      queue_.schedule(at, [this, c, msg = std::move(msg), done] { on_act_down(c, msg, done); });
                    });
  }

  void on_act_down(std::uint32_t c, const Message& act_down, std::function<void(std::uint32_t)> done) {
    ClientFinalize fin = clients_[c].finalize_forward(act_down);
    const DeviceProfile& dev = devices_[c];
    const double t = compute_time(1, plan_.batch_size, dev, Direction::forward) +
                     compute_time(1, plan_.batch_size, dev, Direction::backward);
    ledger_.add_compute(c, t);
    const double loss = fin.loss;
    queue_.schedule(queue_.now() + t, [this, c, grad_up = std::move(fin.grad_up), loss, done] {
      auto [at, msg] = send(grad_up);
      queue_.schedule(at, [this, c, msg = std::move(msg), loss, done] { on_grad_up(c, msg, loss, done); });
    });
  }

  void on_grad_up(std::uint32_t c, const Message& grad_up, double loss, std::function<void(std::uint32_t)> done) {
    Message grad_down = server_.handle_gradient_up(grad_up);
    queue_.schedule(queue_.now() + server_time(server_blocks(c), Direction::backward),
                    [this, c, grad_down = std::move(grad_down), loss, done] {
                      auto [at, msg] = send(grad_down);
                      queue_.schedule(at, [this, c, msg = std::move(msg), loss, done] {
                        const double t = compute_time(1 + clients_[c].cl_count(), plan_.batch_size, devices_[c],
                                                      Direction::backward);
                        ledger_.add_compute(c, t);
                        queue_.schedule(queue_.now() + t, [this, c, msg, loss, done] {
                          clients_[c].apply_cut_gradient(msg);
                          complete_step(c, loss);
                          done(c);
                        });
                      });
                    });
  }

  void on_probe(std::uint32_t c, const Message& probe) {
    AlignResult r = server_.handle_align_probe(probe);
    queue_.schedule(queue_.now() + server_time(clients_[c].cl_count(), Direction::forward),
                    [this, ack = std::move(r.ack)] {
                      auto [at, msg] = send(ack);
                      (void)msg;
                      queue_.schedule(at, [] {});
                    });
  }

  ServerRuntime server_;
  std::vector<ClientRuntime> clients_;
  std::vector<BatchSampler> samplers_;
  Shape cut_shape_;
};

class FlexpDriver : public SplitDriver {
 public:
  using SplitDriver::SplitDriver;

  RunResult run() {
    active_ = clients_.size();
    for (std::uint32_t c = 0; c < clients_.size(); ++c) {
      queue_.schedule(0.0, [this, c] { start(c); });
    }
    schedule_evals();
    return finish();
  }

 protected:
  bool active() const override { return active_ > 0; }

 private:
  void start(std::uint32_t c) {
    if (!may_start()) {
      --active_;
      return;
    }
    if (!sample_dropout(c, rounds_[c]++, seed_, devices_[c].dropout_prob)) {
      // A dropped step is skipped; the client sits out its would-be duration.
      ledger_.note_dropped(c);
      const double idle = nominal_step(c);
      ledger_.add_idle(c, idle);
      ledger_.trace(queue_.now(), "client" + std::to_string(c), "dropped");
      queue_.schedule(queue_.now() + idle, [this, c] { start(c); });
      return;
    }
    ++started_;
    run_step(c, [this](std::uint32_t id) { start(id); });
  }

  std::size_t active_ = 0;
  std::map<std::uint32_t, std::uint64_t> rounds_;
};

class SflDriver : public SplitDriver {
 public:
  SflDriver(const RunPlan& plan, const Federation& fed, const std::vector<DeviceProfile>& devices,
            const LayerStack& base, std::uint64_t seed)
      : SplitDriver(plan, fed, devices, base, seed, true) {}

  RunResult run() {
    queue_.schedule(0.0, [this] { start_round(); });
    schedule_evals();
    return finish();
  }

 protected:
  bool active() const override { return running_; }

 private:
  void start_round() {
    if (!may_start()) {
      running_ = false;
      return;
    }
    const std::uint64_t r = round_++;
    round_start_ = queue_.now();
    participants_.clear();
    for (std::uint32_t c = 0; c < clients_.size(); ++c) {
      if (!sample_dropout(c, r, seed_, devices_[c].dropout_prob)) {
        ledger_.note_dropped(c);
        continue;
      }
      if (remaining() == 0) break;
      ++started_;
      participants_.push_back(c);
    }
    if (participants_.empty()) {
      double idle = 0.0;
      for (std::uint32_t c = 0; c < clients_.size(); ++c) idle = std::max(idle, nominal_step(c));
      for (std::uint32_t c = 0; c < clients_.size(); ++c) ledger_.add_idle(c, idle);
      queue_.schedule(queue_.now() + idle, [this] { start_round(); });
      return;
    }
    outstanding_ = participants_.size();
    for (const std::uint32_t c : participants_) {
      run_step(c, [this, r](std::uint32_t id) {
        finished_at_[id] = queue_.now();
        if (--outstanding_ == 0) barrier(r);
      });
    }
  }

  void barrier(std::uint64_t r) {
    ledger_.note_barrier();
    const double now = queue_.now();
    for (std::uint32_t c = 0; c < clients_.size(); ++c) {
      const bool took_part = std::find(participants_.begin(), participants_.end(), c) != participants_.end();
      ledger_.add_idle(c, took_part ? now - finished_at_[c] : now - round_start_);
    }
    if ((r + 1) % plan_.effective_period() != 0) {
      start_round();
      return;
    }
    aggregate(
        participants_, r, [this](std::uint32_t c) { return clients_[c].flat_params(); },
        [this](std::uint32_t c, std::span<const Tensor> p) { clients_[c].load_params(p); },
        [this] { start_round(); });
  }

  bool running_ = true;
  std::uint64_t round_ = 0;
  double round_start_ = 0.0;
  std::vector<std::uint32_t> participants_;
  std::size_t outstanding_ = 0;
  std::map<std::uint32_t, double> finished_at_;
};

class FedAvgDriver : public Driver {
 public:
  FedAvgDriver(const RunPlan& plan, const Federation& fed, const std::vector<DeviceProfile>& devices,
               const LayerStack& base, std::uint64_t seed)
      : Driver(plan, fed, devices, seed) {
    for (std::size_t c = 0; c < fed.clients.size(); ++c) {
      trainers_.emplace_back(base, plan.optimizer);
      samplers_.emplace_back(fed.clients[c].train, plan.batch_size, derive_seed(seed, seed_stream::batches, c));
    }
    layers_ = base.num_layers();
    // Activation cache of one full-model step on a batch.
    Batch probe = gather(fed.clients[0].train, std::vector<std::size_t>(plan.batch_size, 0));
    Tensor x = model_input(base.config, probe.x);
    std::size_t cached = 0;
    for (std::size_t i = 0; i < layers_; ++i) {
      Tape t;
      x = forward_block(base.layer(i), x, t);
      cached += t.stored_elements();
    }
    memory_bytes_ = (param_count(base, 1).count + cached) * plan.element_size;
  }

  RunResult run() {
    queue_.schedule(0.0, [this] { start_round(); });
    schedule_evals();
    return finish();
  }

 protected:
  bool active() const override { return running_; }

  std::vector<LayerStack> final_models() const override {
    std::vector<LayerStack> out;
    for (const auto& t : trainers_) out.push_back(t.stack());
    return out;
  }

 private:
  double local_step_time(std::uint32_t c) const {
    return compute_time(layers_, plan_.batch_size, devices_[c], Direction::forward) +
           compute_time(layers_, plan_.batch_size, devices_[c], Direction::backward);
  }

  void start_round() {
    if (!may_start()) {
      running_ = false;
      return;
    }
    const std::uint64_t r = round_++;
    round_start_ = queue_.now();
    participants_.clear();
    const std::size_t h = plan_.effective_local_steps();
    std::vector<std::size_t> quota;
    for (std::uint32_t c = 0; c < trainers_.size(); ++c) {
      if (!sample_dropout(c, r, seed_, devices_[c].dropout_prob)) {
        ledger_.note_dropped(c);
        continue;
      }
      const auto k = static_cast<std::size_t>(std::min<std::uint64_t>(h, remaining()));
      if (k == 0) break;
      started_ += k;
      participants_.push_back(c);
      quota.push_back(k);
    }
    if (participants_.empty()) {
      double idle = 0.0;
      for (std::uint32_t c = 0; c < trainers_.size(); ++c) idle = std::max(idle, h * local_step_time(c));
      for (std::uint32_t c = 0; c < trainers_.size(); ++c) ledger_.add_idle(c, idle);
      queue_.schedule(queue_.now() + idle, [this] { start_round(); });
      return;
    }
    outstanding_ = participants_.size();
    for (std::size_t k = 0; k < participants_.size(); ++k) {
      const std::uint32_t c = participants_[k];
      ledger_.note_memory(c, memory_bytes_);
      const double t = local_step_time(c);
      for (std::size_t s = 0; s < quota[k]; ++s) {
        const bool last = s + 1 == quota[k];
        queue_.schedule(queue_.now() + t * static_cast<double>(s + 1), [this, c, t, last, r] {
          Batch b = samplers_[c].next();
          const double loss = trainers_[c].step(b.x, b.labels);
          ledger_.add_compute(c, t);
          complete_step(c, loss);
          if (last) {
            finished_at_[c] = queue_.now();
            if (--outstanding_ == 0) barrier(r);
          }
        });
      }
    }
  }

  void barrier(std::uint64_t r) {
    ledger_.note_barrier();
    const double now = queue_.now();
    for (std::uint32_t c = 0; c < trainers_.size(); ++c) {
      const bool took_part = std::find(participants_.begin(), participants_.end(), c) != participants_.end();
      ledger_.add_idle(c, took_part ? now - finished_at_[c] : now - round_start_);
    }
    if ((r + 1) % plan_.effective_period() != 0) {
      start_round();
      return;
    }
    aggregate(
        participants_, r,
        [this](std::uint32_t c) {
          std::vector<Tensor> out;
          const LayerStack& s = trainers_[c].stack();
          for (std::size_t i = 0; i < s.num_layers(); ++i) {
            const auto& t = s.layer(i).tensors;
            out.insert(out.end(), t.begin(), t.end());
          }
          return out;
        },
        [this](std::uint32_t c, std::span<const Tensor> p) {
          LayerStack& s = trainers_[c].stack();
          std::size_t k = 0;
          for (std::size_t i = 0; i < s.num_layers(); ++i)
            for (Tensor& t : s.layer(i).tensors) t = p[k++];
        },
        [this] { start_round(); });
  }

  std::vector<MonolithicTrainer> trainers_;
  std::vector<BatchSampler> samplers_;
  std::size_t layers_ = 0;
  std::size_t memory_bytes_ = 0;
  bool running_ = true;
  std::uint64_t round_ = 0;
  double round_start_ = 0.0;
  std::vector<std::uint32_t> participants_;
  std::size_t outstanding_ = 0;
  std::map<std::uint32_t, double> finished_at_;
};

}  // namespace

RunResult run_flexp_sfl(const RunPlan& plan, const Federation& federation, const std::vector<DeviceProfile>& devices,
                        const LayerStack& base, std::uint64_t seed) {
  if (plan.protocol != Protocol::flexp_sfl) throw ValidationError("plan.protocol", "expected flexp_sfl");
  check_inputs(plan, federation, devices, base);
  FlexpDriver d(plan, federation, devices, base, seed, false);
  return d.run();
}

RunResult run_sfl_baseline(const RunPlan& plan, const Federation& federation,
                           const std::vector<DeviceProfile>& devices, const LayerStack& base, std::uint64_t seed) {
  if (plan.protocol != Protocol::sfl) throw ValidationError("plan.protocol", "expected sfl");
  check_inputs(plan, federation, devices, base);
  SflDriver d(plan, federation, devices, base, seed);
  return d.run();
}

RunResult run_fedavg_baseline(const RunPlan& plan, const Federation& federation,
                              const std::vector<DeviceProfile>& devices, const LayerStack& base, std::uint64_t seed) {
  if (plan.protocol != Protocol::fedavg) throw ValidationError("plan.protocol", "expected fedavg");
  check_inputs(plan, federation, devices, base);
  FedAvgDriver d(plan, federation, devices, base, seed);
  return d.run();
}

RunResult run_protocol(const RunPlan& plan, const Federation& federation, const std::vector<DeviceProfile>& devices,
                       const LayerStack& base, std::uint64_t seed) {
  switch (plan.protocol) {
    case Protocol::flexp_sfl: return run_flexp_sfl(plan, federation, devices, base, seed);
    case Protocol::sfl: return run_sfl_baseline(plan, federation, devices, base, seed);
    case Protocol::fedavg: return run_fedavg_baseline(plan, federation, devices, base, seed);
  }
  throw InputError("unknown protocol");
}

}  // namespace flexp
