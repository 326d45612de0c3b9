#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "flexp/data.hpp"
#include "flexp/model.hpp"
#include "flexp/optimizer.hpp"
#include "flexp/protocols.hpp"
#include "flexp/sim.hpp"

namespace flexp {

/// Pooled-data warm start that gives every client the same base stack.
struct PretrainConfig {
  std::size_t steps = 200;
  std::size_t batch_size = 32;
  OptimizerConfig optimizer;
  friend bool operator==(const PretrainConfig&, const PretrainConfig&) = default;
};

/// One device profile and the clients that run on it.
struct DeviceGroup {
  DeviceProfile profile;
  std::vector<std::size_t> clients;
  friend bool operator==(const DeviceGroup&, const DeviceGroup&) = default;
};

/// Everything a run needs. federation.input_dim and federation.num_classes
/// are not configured directly: they follow the model.
struct ExperimentConfig {
  ModelConfig model;
  FederationSpec federation;
  PretrainConfig pretrain;
  std::vector<DeviceGroup> devices;
  RunPlan plan;
  std::string output_dir = "out";
  std::vector<std::uint64_t> seeds{0};

  /// Throws ValidationError with the key path of the first problem.
  void validate() const;
  /// Federation spec for one seed, with dimensions taken from the model.
  FederationSpec federation_for(std::uint64_t seed) const;
  /// Profile of each client, indexed by client id.
  std::vector<DeviceProfile> client_devices() const;
  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Strict parse of the JSON config tree: unknown keys, wrong types and
/// out-of-range values raise ValidationError naming the key path. Absent keys
/// take the defaults listed by config_reference(). Validates the result.
ExperimentConfig parse_config(std::string_view json_text);
/// Throws IoError when the file cannot be read.
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical form: every key present, fixed key order, two-space indent.
std::string dump_config(const ExperimentConfig& config);
/// Every key path with its type, default and meaning.
std::string config_reference();

/// Builds the federation and base model for `seed`, pretrains, and runs the
/// configured protocol. Deterministic in (config, seed).
RunResult run_experiment(const ExperimentConfig& config, std::uint64_t seed);

/// Columns: sim_time_s,step,client_id,train_loss,bytes_up_total,bytes_down_total.
void write_timeline_csv(const RunResult& result, std::ostream& out);
/// One row per client plus an "all" row; byte and step columns of "all"
/// are sums, accuracy columns are means.
void write_summary_csv(const ExperimentConfig& config, const RunResult& result, std::ostream& out);
/// N x N: row i is model i, column j is client j's test shard.
void write_crosseval_csv(const RunResult& result, std::ostream& out);
void write_evals_csv(const RunResult& result, std::ostream& out);
void write_trace_csv(const RunResult& result, std::ostream& out);
/// Writes the CSVs above (evals.csv only with periodic evaluation, trace.csv
/// only with tracing) and the canonical config into `dir`, creating it.
/// Throws IoError when the directory or a file cannot be written.
void write_run_outputs(const ExperimentConfig& config, const RunResult& result, const std::filesystem::path& dir);

enum class SweepParam { q, lambda, dropout };

std::string_view to_string(SweepParam p);
/// Throws ValidationError on an unknown name.
SweepParam sweep_param_from_string(std::string_view name);
/// Copy of `config` with the parameter set: q sets every client's cut (and
/// the sfl cut), lambda the alignment weight, dropout every device's
/// dropout probability. Throws ValidationError when the result is invalid.
ExperimentConfig with_sweep_value(const ExperimentConfig& config, SweepParam param, double value);

/// Scalar outcomes of one run, the quantities a sweep aggregates.
struct RunSummary {
  double mean_personal_accuracy = 0.0;
  double mean_global_accuracy = 0.0;
  double sim_time_s = 0.0;
  double total_bytes = 0.0;
  double steps = 0.0;
  double peak_memory_bytes = 0.0;
};

RunSummary summarize(const RunResult& result);

struct SweepRun {
  double value = 0.0;
  std::uint64_t seed = 0;
  RunSummary summary;
};

struct SweepRow {
  double value = 0.0;
  std::size_t runs = 0;
  RunSummary mean;
  /// Sample standard deviation over seeds; zero for a single seed.
  RunSummary std;
};

struct SweepResult {
  SweepParam param = SweepParam::q;
  /// Ordered by (value index, seed index) whatever the worker count.
  std::vector<SweepRun> runs;
  std::vector<SweepRow> rows;
};

/// Cartesian product of values and seeds on at most `jobs` worker threads.
/// Each worker owns a whole experiment, so results do not depend on `jobs`.
SweepResult sweep(const ExperimentConfig& config, SweepParam param, const std::vector<double>& values,
                  const std::vector<std::uint64_t>& seeds, std::size_t jobs = 1);
/// Columns: param,value,runs, then <metric>_mean,<metric>_std per metric.
void write_sweep_csv(const SweepResult& result, std::ostream& out);
/// Columns: param,value,seed, then one column per metric.
void write_sweep_runs_csv(const SweepResult& result, std::ostream& out);

struct VerifyOptions {
  /// Scales leaf gradients in the gradient check; 1.0 is a healthy backward.
  double backward_fault = 1.0;
};

struct OracleOutcome {
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

/// Gradient checks, split-execution equivalence, alignment fixed point, wire
/// round-trips and run determinism, all on pinned seeds.
std::vector<OracleOutcome> verify(const VerifyOptions& options = {});

/// Process exit codes of the command-line tool.
namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int validation = 1;
inline constexpr int runtime = 2;
inline constexpr int verification = 3;
}  // namespace exit_code

}  // namespace flexp
