#include "flexp/sim.hpp"

#include <algorithm>
#include <string>

#include "flexp/error.hpp"

namespace flexp {

void DeviceProfile::validate() const {
  auto positive = [&](double v, const char* field) {
    if (!(v > 0.0)) throw InputError("device '" + name + "': " + field + " must be > 0");
  };
  positive(fwd_seconds_per_block_per_sample, "fwd_seconds_per_block_per_sample");
  positive(bwd_multiplier, "bwd_multiplier");
  positive(uplink_bytes_per_s, "uplink_bytes_per_s");
  positive(downlink_bytes_per_s, "downlink_bytes_per_s");
  if (!(latency_s >= 0.0)) throw InputError("device '" + name + "': latency_s must be >= 0");
  if (!(dropout_prob >= 0.0 && dropout_prob <= 1.0)) {
    throw InputError("device '" + name + "': dropout_prob must lie in [0, 1]");
  }
}

double transfer_time(std::size_t bytes, double bytes_per_s, double latency_s) {
  return latency_s + static_cast<double>(bytes) / bytes_per_s;
}

double compute_time(std::size_t blocks, std::size_t samples, const DeviceProfile& profile, Direction direction) {
  const double t = static_cast<double>(blocks) * static_cast<double>(samples) * profile.fwd_seconds_per_block_per_sample;
  return direction == Direction::backward ? t * profile.bwd_multiplier : t;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index);
}

bool sample_dropout(std::uint32_t client, std::uint64_t round, std::uint64_t seed, double dropout_prob) {
  if (dropout_prob <= 0.0) return true;
  const std::uint64_t h = derive_seed(derive_seed(seed, seed_stream::dropout, client), round);
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;  // [0, 1)
  return u >= dropout_prob;
}

std::uint64_t EventQueue::schedule(double time, Action action) {
  if (time < now_) throw InputError("event scheduled in the past");
  const std::uint64_t seq = next_seq_++;
  heap_.push(Entry{time, seq, std::move(action)});
  return seq;
}

bool EventQueue::advance() {
  if (heap_.empty()) return false;
  Entry e = heap_.top();
  heap_.pop();
  now_ = e.time;
  ++fired_;
  e.action();
  return true;
}

void EventQueue::run() {
  while (advance()) {
  }
}

ClientMetrics& MetricsLedger::at(std::uint32_t id) {
  if (id >= clients_.size()) clients_.resize(id + 1);
  return clients_[id];
}

void MetricsLedger::record_frame(std::uint32_t client, Tag tag, std::size_t bytes) {
  ++frames_[tag];
  tag_bytes_[tag] += bytes;
  if (is_uplink(tag)) {
    at(client).bytes_up += bytes;
    bytes_up_ += bytes;
  } else {
    at(client).bytes_down += bytes;
    bytes_down_ += bytes;
  }
}

void MetricsLedger::add_compute(std::uint32_t client, double seconds) { at(client).compute_s += seconds; }
void MetricsLedger::add_idle(std::uint32_t client, double seconds) { at(client).idle_s += seconds; }

void MetricsLedger::note_memory(std::uint32_t client, std::size_t bytes) {
  auto& c = at(client);
  c.peak_memory_bytes = std::max(c.peak_memory_bytes, bytes);
}

void MetricsLedger::note_step(std::uint32_t client, double time) {
  auto& c = at(client);
  ++c.steps;
  c.finish_s = std::max(c.finish_s, time);
}

void MetricsLedger::note_dropped(std::uint32_t client) { ++at(client).dropped; }

void MetricsLedger::trace(double time, std::string actor, std::string action, std::size_t bytes) {
  if (tracing_) trace_.push_back(TraceRecord{time, std::move(actor), std::move(action), bytes});
}

std::uint64_t MetricsLedger::frames(Tag tag) const {
  auto it = frames_.find(tag);
  return it == frames_.end() ? 0 : it->second;
}

std::uint64_t MetricsLedger::bytes(Tag tag) const {
  auto it = tag_bytes_.find(tag);
  return it == tag_bytes_.end() ? 0 : it->second;
}

double Link::send(double now, std::size_t bytes) {
  const double start = std::max(now, busy_until_);
  busy_until_ = start + static_cast<double>(bytes) / rate_;
  return busy_until_ + latency_;
}

}  // namespace flexp
