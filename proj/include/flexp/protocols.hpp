#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "flexp/data.hpp"
#include "flexp/model.hpp"
#include "flexp/optimizer.hpp"
#include "flexp/sim.hpp"

namespace flexp {

enum class Protocol { flexp_sfl, sfl, fedavg };

std::string_view to_string(Protocol p);
Protocol protocol_from_string(std::string_view name);

struct RunPlan {
  Protocol protocol = Protocol::flexp_sfl;
  /// Exactly one stop criterion. target_steps counts successful gradient
  /// applications across all clients; time_budget_s stops new steps from
  /// starting once the clock reaches it (in-flight work still completes).
  std::optional<std::uint64_t> target_steps;
  std::optional<double> time_budget_s;
  /// Per-client flexibility ratio (flexp_sfl). Also the source of the default
  /// sfl cut, which is their median.
  std::vector<double> client_q;
  /// Common cut for the sfl baseline.
  std::optional<double> sfl_q;
  /// Baselines only: aggregate every E rounds, H local steps per fedavg round.
  /// Both default to 1 when unset.
  std::optional<std::size_t> aggregation_period;
  std::optional<std::size_t> local_steps;
  double lambda = 0.0;
  /// Probe every K successful client steps; 0 disables alignment.
  std::size_t align_every = 5;
  std::size_t batch_size = 8;
  /// Bytes per element on the wire (4 or 8). 4 casts payloads to binary32.
  std::size_t element_size = 4;
  /// Server compute per block per sample; 0 models a server much faster than
  /// the clients. Server work for different clients overlaps.
  double server_seconds_per_block_per_sample = 0.0;
  /// Periodic evaluation cadence in simulated seconds; 0 evaluates only at the end.
  double eval_interval_s = 0.0;
  OptimizerConfig optimizer;
  /// Records an event trace in the ledger.
  bool trace = false;

  /// Throws ValidationError with a key path under "plan".
  void validate(std::size_t num_clients) const;
  double effective_sfl_q() const;
  std::size_t effective_period() const { return aggregation_period.value_or(1); }
  std::size_t effective_local_steps() const { return local_steps.value_or(1); }
  friend bool operator==(const RunPlan&, const RunPlan&) = default;
};

struct TimelineRow {
  double time_s = 0.0;
  std::uint64_t step = 0;
  /// -1 marks an aggregation event of a baseline.
  int client_id = 0;
  /// Not a number on aggregation rows.
  double train_loss = 0.0;
  std::uint64_t bytes_up_total = 0;
  std::uint64_t bytes_down_total = 0;
};

struct EvalPoint {
  double time_s = 0.0;
  std::uint64_t step = 0;
  double mean_personal_accuracy = 0.0;
  double mean_global_accuracy = 0.0;
};

struct RunResult {
  Protocol protocol = Protocol::flexp_sfl;
  MetricsLedger ledger;
  std::vector<TimelineRow> timeline;
  std::vector<EvalPoint> evals;
  /// Per client: composite accuracy on its own test shard / the pooled test set.
  std::vector<double> personal_accuracy;
  std::vector<double> global_accuracy;
  /// crosseval[i][j]: model i on client j's test shard.
  std::vector<std::vector<double>> crosseval;
  /// Final composite model of each client.
  std::vector<LayerStack> models;
  /// Client peak memory estimate exceeds its device budget.
  std::vector<bool> over_memory_budget;
  std::uint64_t steps = 0;
  double sim_time_s = 0.0;

  double mean_personal_accuracy() const;
  double mean_global_accuracy() const;
};

/// `devices[c]` is client c's profile. `base` is the shared starting stack.
RunResult run_flexp_sfl(const RunPlan& plan, const Federation& federation, const std::vector<DeviceProfile>& devices,
                        const LayerStack& base, std::uint64_t seed);
RunResult run_sfl_baseline(const RunPlan& plan, const Federation& federation,
                           const std::vector<DeviceProfile>& devices, const LayerStack& base, std::uint64_t seed);
RunResult run_fedavg_baseline(const RunPlan& plan, const Federation& federation,
                              const std::vector<DeviceProfile>& devices, const LayerStack& base, std::uint64_t seed);
/// Dispatches on plan.protocol.
RunResult run_protocol(const RunPlan& plan, const Federation& federation, const std::vector<DeviceProfile>& devices,
                       const LayerStack& base, std::uint64_t seed);

/// Weighted average of parameter sets: p0 + sum_i w_i (p_i - p0) / sum_i w_i,
/// so identical inputs are returned unchanged.
std::vector<Tensor> weighted_average(const std::vector<std::vector<Tensor>>& sets, const std::vector<double>& weights);

/// Brief pooled-data training of a fresh stack so every client starts from a
/// shared base. Returns the loss before each step.
std::vector<double> pretrain(LayerStack& stack, const Dataset& pooled, std::size_t steps, std::size_t batch_size,
                             const OptimizerConfig& optimizer, std::uint64_t seed);

}  // namespace flexp
