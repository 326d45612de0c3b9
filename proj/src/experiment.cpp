#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "flexp/error.hpp"
#include "flexp/experiment.hpp"

namespace flexp {

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

double client_q(const ExperimentConfig& config, std::size_t c) {
  switch (config.plan.protocol) {
    case Protocol::flexp_sfl:
      return config.plan.client_q[c];
    case Protocol::sfl:
      return config.plan.effective_sfl_q();
    case Protocol::fedavg:
      return 1.0;
  }
  return 0.0;
}

template <class F>
void write_file(const std::filesystem::path& path, F&& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  body(out);
  out.flush();
  if (!out) throw IoError("error while writing '" + path.string() + "'");
}

constexpr const char* kMetricNames[] = {"mean_personal_accuracy", "mean_global_accuracy", "sim_time_s",
                                        "total_bytes",           "steps",                "peak_memory_bytes"};

std::vector<double> metrics(const RunSummary& s) {
  return {s.mean_personal_accuracy, s.mean_global_accuracy, s.sim_time_s, s.total_bytes, s.steps, s.peak_memory_bytes};
}

RunSummary from_metrics(const std::vector<double>& v) {
  return RunSummary{v[0], v[1], v[2], v[3], v[4], v[5]};
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& config, std::uint64_t seed) {
  config.validate();
  const Federation federation = generate_federation(config.federation_for(seed));
  LayerStack base = build_model(config.model, derive_seed(seed, seed_stream::model));
  pretrain(base, pooled_train_set(federation), config.pretrain.steps, config.pretrain.batch_size,
           config.pretrain.optimizer, derive_seed(seed, seed_stream::pretrain));
  return run_protocol(config.plan, federation, config.client_devices(), base, seed);
}

void write_timeline_csv(const RunResult& result, std::ostream& out) {
  out << "sim_time_s,step,client_id,train_loss,bytes_up_total,bytes_down_total\n";
  for (const TimelineRow& r : result.timeline) {
    out << num(r.time_s) << ',' << r.step << ',' << r.client_id << ',' << num(r.train_loss) << ',' << r.bytes_up_total
        << ',' << r.bytes_down_total << '\n';
  }
}

void write_summary_csv(const ExperimentConfig& config, const RunResult& result, std::ostream& out) {
  out << "client_id,device,q,personal_accuracy,global_accuracy,peak_memory_bytes,over_memory_budget,bytes_up,"
         "bytes_down,total_bytes,steps,dropped,compute_s,idle_s,sim_time_s\n";
  const std::vector<DeviceProfile> devices = config.client_devices();
  const std::size_t n = result.personal_accuracy.size();
  ClientMetrics sum;
  bool any_over = false;
  for (std::size_t c = 0; c < n; ++c) {
    const ClientMetrics& m = result.ledger.client(static_cast<std::uint32_t>(c));
    out << c << ',' << devices.at(c).name << ',' << num(client_q(config, c)) << ',' << num(result.personal_accuracy[c])
        << ',' << num(result.global_accuracy[c]) << ',' << m.peak_memory_bytes << ','
        << (result.over_memory_budget[c] ? 1 : 0) << ',' << m.bytes_up << ',' << m.bytes_down << ','
        << m.bytes_up + m.bytes_down << ',' << m.steps << ',' << m.dropped << ',' << num(m.compute_s) << ','
        << num(m.idle_s) << ',' << num(result.sim_time_s) << '\n';
    sum.bytes_up += m.bytes_up;
    sum.bytes_down += m.bytes_down;
    sum.steps += m.steps;
    sum.dropped += m.dropped;
    sum.compute_s += m.compute_s;
    sum.idle_s += m.idle_s;
    sum.peak_memory_bytes = std::max(sum.peak_memory_bytes, m.peak_memory_bytes);
    any_over = any_over || result.over_memory_budget[c];
  }
  out << "all,-,-," << num(result.mean_personal_accuracy()) << ',' << num(result.mean_global_accuracy()) << ','
      << sum.peak_memory_bytes << ',' << (any_over ? 1 : 0) << ',' << sum.bytes_up << ',' << sum.bytes_down << ','
      << sum.bytes_up + sum.bytes_down << ',' << sum.steps << ',' << sum.dropped << ',' << num(sum.compute_s) << ','
      << num(sum.idle_s) << ',' << num(result.sim_time_s) << '\n';
}

void write_crosseval_csv(const RunResult& result, std::ostream& out) {
  const std::size_t n = result.crosseval.size();
  out << "model";
  for (std::size_t j = 0; j < n; ++j) out << ",shard_" << j;
  out << '\n';
  for (std::size_t i = 0; i < n; ++i) {
    out << i;
    for (std::size_t j = 0; j < n; ++j) out << ',' << num(result.crosseval[i][j]);
    out << '\n';
  }
}

void write_evals_csv(const RunResult& result, std::ostream& out) {
  out << "sim_time_s,step,mean_personal_accuracy,mean_global_accuracy\n";
  for (const EvalPoint& e : result.evals) {
    out << num(e.time_s) << ',' << e.step << ',' << num(e.mean_personal_accuracy) << ','
        << num(e.mean_global_accuracy) << '\n';
  }
}

void write_trace_csv(const RunResult& result, std::ostream& out) {
  out << "sim_time_s,actor,action,bytes\n";
  for (const TraceRecord& r : result.ledger.trace_records()) {
    out << num(r.time) << ',' << r.actor << ',' << r.action << ',' << r.bytes << '\n';
  }
}

void write_run_outputs(const ExperimentConfig& config, const RunResult& result, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
  write_file(dir / "timeline.csv", [&](std::ostream& o) { write_timeline_csv(result, o); });
  write_file(dir / "summary.csv", [&](std::ostream& o) { write_summary_csv(config, result, o); });
  write_file(dir / "crosseval.csv", [&](std::ostream& o) { write_crosseval_csv(result, o); });
  if (config.plan.eval_interval_s > 0.0) {
    write_file(dir / "evals.csv", [&](std::ostream& o) { write_evals_csv(result, o); });
  }
  if (config.plan.trace) write_file(dir / "trace.csv", [&](std::ostream& o) { write_trace_csv(result, o); });
  write_file(dir / "config.json", [&](std::ostream& o) { o << dump_config(config); });
}

std::string_view to_string(SweepParam p) {
  switch (p) {
    case SweepParam::q:
      return "q";
    case SweepParam::lambda:
      return "lambda";
    case SweepParam::dropout:
      return "dropout";
  }
  return "?";
}

SweepParam sweep_param_from_string(std::string_view name) {
  if (name == "q") return SweepParam::q;
  if (name == "lambda") return SweepParam::lambda;
  if (name == "dropout") return SweepParam::dropout;
  throw ValidationError("param", "expected q, lambda or dropout, got '" + std::string(name) + "'");
}

ExperimentConfig with_sweep_value(const ExperimentConfig& config, SweepParam param, double value) {
  ExperimentConfig c = config;
  switch (param) {
    case SweepParam::q:
      c.plan.client_q.assign(c.federation.num_clients, value);
      if (c.plan.protocol == Protocol::sfl) c.plan.sfl_q = value;
      break;
    case SweepParam::lambda:
      c.plan.lambda = value;
      break;
    case SweepParam::dropout:
      for (DeviceGroup& g : c.devices) g.profile.dropout_prob = value;
      break;
  }
  c.validate();
  return c;
}

RunSummary summarize(const RunResult& result) {
  RunSummary s;
  s.mean_personal_accuracy = result.mean_personal_accuracy();
  s.mean_global_accuracy = result.mean_global_accuracy();
  s.sim_time_s = result.sim_time_s;
  s.total_bytes = static_cast<double>(result.ledger.total_bytes());
  s.steps = static_cast<double>(result.steps);
  for (std::size_t c = 0; c < result.ledger.num_clients(); ++c) {
    s.peak_memory_bytes = std::max(
        s.peak_memory_bytes, static_cast<double>(result.ledger.client(static_cast<std::uint32_t>(c)).peak_memory_bytes));
  }
  return s;
}

SweepResult sweep(const ExperimentConfig& config, SweepParam param, const std::vector<double>& values,
                  const std::vector<std::uint64_t>& seeds, std::size_t jobs) {
  if (values.empty()) throw ValidationError("values", "needs at least one value");
  if (seeds.empty()) throw ValidationError("seeds", "needs at least one seed");
  // Reject bad values before any work starts.
  std::vector<ExperimentConfig> configs;
  for (double v : values) configs.push_back(with_sweep_value(config, param, v));

  SweepResult out;
  out.param = param;
  const std::size_t total = values.size() * seeds.size();
  out.runs.resize(total);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t k = next++; k < total; k = next++) {
      const std::size_t vi = k / seeds.size();
      const std::size_t si = k % seeds.size();
      try {
        const RunResult r = run_experiment(configs[vi], seeds[si]);
        out.runs[k] = SweepRun{values[vi], seeds[si], summarize(r)};
      } catch (...) {
        const std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = total;
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(jobs, 1, total);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  for (std::size_t vi = 0; vi < values.size(); ++vi) {
    const std::size_t m = std::size(kMetricNames);
    std::vector<double> mean(m, 0.0), sd(m, 0.0);
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      const std::vector<double> x = metrics(out.runs[vi * seeds.size() + si].summary);
      for (std::size_t i = 0; i < m; ++i) mean[i] += x[i];
    }
    for (double& v : mean) v /= static_cast<double>(seeds.size());
    if (seeds.size() > 1) {
      for (std::size_t si = 0; si < seeds.size(); ++si) {
        const std::vector<double> x = metrics(out.runs[vi * seeds.size() + si].summary);
        for (std::size_t i = 0; i < m; ++i) sd[i] += (x[i] - mean[i]) * (x[i] - mean[i]);
      }
      for (double& v : sd) v = std::sqrt(v / static_cast<double>(seeds.size() - 1));
    }
    out.rows.push_back(SweepRow{values[vi], seeds.size(), from_metrics(mean), from_metrics(sd)});
  }
  return out;
}

void write_sweep_csv(const SweepResult& result, std::ostream& out) {
  out << "param,value,runs";
  for (const char* name : kMetricNames) out << ',' << name << "_mean," << name << "_std";
  out << '\n';
  for (const SweepRow& row : result.rows) {
    out << to_string(result.param) << ',' << num(row.value) << ',' << row.runs;
    const std::vector<double> mean = metrics(row.mean);
    const std::vector<double> sd = metrics(row.std);
    for (std::size_t i = 0; i < mean.size(); ++i) out << ',' << num(mean[i]) << ',' << num(sd[i]);
    out << '\n';
  }
}

void write_sweep_runs_csv(const SweepResult& result, std::ostream& out) {
  out << "param,value,seed";
  for (const char* name : kMetricNames) out << ',' << name;
  out << '\n';
  for (const SweepRun& run : result.runs) {
    out << to_string(result.param) << ',' << num(run.value) << ',' << run.seed;
    for (double v : metrics(run.summary)) out << ',' << num(v);
    out << '\n';
  }
}

}  // namespace flexp
