#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "flexp/wire.hpp"

namespace flexp {

struct DeviceProfile {
  std::string name = "default";
  double fwd_seconds_per_block_per_sample = 1e-3;
  double bwd_multiplier = 2.0;
  std::size_t memory_bytes_budget = 64u << 20;
  double uplink_bytes_per_s = 1e6;
  double downlink_bytes_per_s = 1e6;
  double latency_s = 0.01;
  double dropout_prob = 0.0;

  /// Throws InputError naming the offending field.
  void validate() const;
  friend bool operator==(const DeviceProfile&, const DeviceProfile&) = default;
};

enum class Direction { forward, backward };

/// latency + bytes / bytes_per_s.
double transfer_time(std::size_t bytes, double bytes_per_s, double latency_s);
/// blocks * samples * per-block-per-sample time, times bwd_multiplier for backward.
double compute_time(std::size_t blocks, std::size_t samples, const DeviceProfile& profile, Direction direction);

/// Deterministic Bernoulli(1 - dropout_prob) from (seed, client, round).
bool sample_dropout(std::uint32_t client, std::uint64_t round, std::uint64_t seed, double dropout_prob);

/// Independent sub-stream seed; `stream` names the consumer, `index` e.g. a client.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0);

namespace seed_stream {
inline constexpr std::uint64_t data = 1;
inline constexpr std::uint64_t model = 2;
inline constexpr std::uint64_t batches = 3;
inline constexpr std::uint64_t dropout = 4;
inline constexpr std::uint64_t pretrain = 5;
}  // namespace seed_stream

/// Serial event loop. Events fire in (time, insertion sequence) order.
class EventQueue {
 public:
  using Action = std::function<void()>;

  double now() const noexcept { return now_; }
  /// Throws InputError if `time` is earlier than now().
  std::uint64_t schedule(double time, Action action);
  /// Fires the next event; returns false when the queue is empty (quiescence).
  bool advance();
  /// Runs to quiescence.
  void run();
  bool empty() const noexcept { return heap_.empty(); }
  std::uint64_t fired() const noexcept { return fired_; }

 private:
  struct Entry {
    double time;
    std::uint64_t seq;
    Action action;
  };
  struct Later {
    bool operator()(const Entry& a, const Entry& b) const {
      return a.time != b.time ? a.time > b.time : a.seq > b.seq;
    }
  };
  std::priority_queue<Entry, std::vector<Entry>, Later> heap_;
  double now_ = 0.0;
  std::uint64_t next_seq_ = 0;
  std::uint64_t fired_ = 0;
};

/// One line of the optional event trace.
struct TraceRecord {
  double time = 0.0;
  std::string actor;
  std::string action;
  std::size_t bytes = 0;
};

struct ClientMetrics {
  std::uint64_t bytes_up = 0;
  std::uint64_t bytes_down = 0;
  double compute_s = 0.0;
  double idle_s = 0.0;
  std::uint64_t steps = 0;
  std::uint64_t dropped = 0;
  std::size_t peak_memory_bytes = 0;
  /// Simulated time of this client's last activity.
  double finish_s = 0.0;
};

class MetricsLedger {
 public:
  explicit MetricsLedger(std::size_t num_clients = 0) : clients_(num_clients) {}

  void record_frame(std::uint32_t client, Tag tag, std::size_t bytes);
  void add_compute(std::uint32_t client, double seconds);
  void add_idle(std::uint32_t client, double seconds);
  void note_memory(std::uint32_t client, std::size_t bytes);
  void note_step(std::uint32_t client, double time);
  void note_dropped(std::uint32_t client);
  void note_barrier() { ++barriers_; }
  void set_total_time(double seconds) { total_time_ = seconds; }
  void trace(double time, std::string actor, std::string action, std::size_t bytes = 0);
  void enable_trace(bool on) { tracing_ = on; }

  const ClientMetrics& client(std::uint32_t id) const { return clients_.at(id); }
  std::size_t num_clients() const noexcept { return clients_.size(); }
  std::uint64_t bytes_up() const noexcept { return bytes_up_; }
  std::uint64_t bytes_down() const noexcept { return bytes_down_; }
  std::uint64_t total_bytes() const noexcept { return bytes_up_ + bytes_down_; }
  std::uint64_t frames(Tag tag) const;
  std::uint64_t bytes(Tag tag) const;
  std::uint64_t param_frames() const { return frames(Tag::param_up) + frames(Tag::param_down); }
  std::uint64_t barriers() const noexcept { return barriers_; }
  double total_time() const noexcept { return total_time_; }
  const std::vector<TraceRecord>& trace_records() const noexcept { return trace_; }

 private:
  ClientMetrics& at(std::uint32_t id);

  std::vector<ClientMetrics> clients_;
  std::map<Tag, std::uint64_t> frames_;
  std::map<Tag, std::uint64_t> tag_bytes_;
  std::uint64_t bytes_up_ = 0;
  std::uint64_t bytes_down_ = 0;
  std::uint64_t barriers_ = 0;
  double total_time_ = 0.0;
  bool tracing_ = false;
  std::vector<TraceRecord> trace_;
};

/// FIFO link: frames serialize one after another; latency is added after the
/// last byte leaves.
class Link {
 public:
  Link(double bytes_per_s, double latency_s) : rate_(bytes_per_s), latency_(latency_s) {}
  /// Arrival time of a frame of `bytes` handed to the link at `now`.
  double send(double now, std::size_t bytes);

 private:
  double rate_;
  double latency_;
  double busy_until_ = 0.0;
};

}  // namespace flexp
