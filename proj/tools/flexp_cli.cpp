#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "flexp/data.hpp"
#include "flexp/error.hpp"
#include "flexp/experiment.hpp"

namespace fs = std::filesystem;
using namespace flexp;

namespace {

struct Options {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::string param;
  std::string values;
  std::size_t jobs = 1;
  double backward_fault = 1.0;
  bool canonical = false;
};

ExperimentConfig resolve(const Options& o) {
  ExperimentConfig c = o.config.empty() ? parse_config("{}") : load_config(o.config);
  if (!o.seeds.empty()) c.seeds = o.seeds;
  if (!o.out.empty()) c.output_dir = o.out;
  return c;
}

std::vector<double> parse_values(const std::string& list) {
  std::vector<double> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw ValidationError("values", "'" + item + "' is not a number");
    out.push_back(v);
  }
  if (out.empty()) throw ValidationError("values", "needs at least one value");
  return out;
}

template <class F>
void write_text(const fs::path& path, F&& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  body(f);
  if (!f) throw IoError("error while writing '" + path.string() + "'");
}

int cmd_run(const Options& o) {
  const ExperimentConfig c = resolve(o);
  for (std::uint64_t seed : c.seeds) {
    const RunResult r = run_experiment(c, seed);
    const fs::path dir = fs::path(c.output_dir) / ("seed_" + std::to_string(seed));
    write_run_outputs(c, r, dir);
    std::printf("seed %llu: %s, %llu steps, %.3f sim s, personal %.4f, global %.4f, %llu bytes -> %s\n",
                static_cast<unsigned long long>(seed), std::string(to_string(r.protocol)).c_str(),
                static_cast<unsigned long long>(r.steps), r.sim_time_s, r.mean_personal_accuracy(),
                r.mean_global_accuracy(), static_cast<unsigned long long>(r.ledger.total_bytes()),
                dir.string().c_str());
  }
  return exit_code::ok;
}

int cmd_sweep(const Options& o) {
  const ExperimentConfig c = resolve(o);
  const SweepParam param = sweep_param_from_string(o.param);
  const std::vector<double> values = parse_values(o.values);
  const SweepResult s = sweep(c, param, values, c.seeds, o.jobs);
  std::error_code ec;
  fs::create_directories(c.output_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + c.output_dir + "': " + ec.message());
  const std::string stem = "sweep_" + std::string(to_string(param));
  write_text(fs::path(c.output_dir) / (stem + ".csv"), [&](std::ostream& f) { write_sweep_csv(s, f); });
  write_text(fs::path(c.output_dir) / (stem + "_runs.csv"), [&](std::ostream& f) { write_sweep_runs_csv(s, f); });
  std::printf("%-8s %6s %22s %22s %20s\n", "value", "runs", "personal mean+-std", "global mean+-std",
              "sim s mean+-std");
  for (const SweepRow& row : s.rows) {
    std::printf("%-8g %6zu %12.4f +- %-7.4f %12.4f +- %-7.4f %10.3f +- %-7.3f\n", row.value, row.runs,
                row.mean.mean_personal_accuracy, row.std.mean_personal_accuracy, row.mean.mean_global_accuracy,
                row.std.mean_global_accuracy, row.mean.sim_time_s, row.std.sim_time_s);
  }
  return exit_code::ok;
}

int cmd_verify(const Options& o) {
  VerifyOptions v;
  v.backward_fault = o.backward_fault;
  bool ok = true;
  for (const OracleOutcome& r : verify(v)) {
    std::printf("%s %-36s measured %.3e tolerance %.1e (%s)\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.measured,
                r.tolerance, r.detail.c_str());
    ok = ok && r.passed;
  }
  return ok ? exit_code::ok : exit_code::verification;
}

int cmd_gen_data(const Options& o) {
  const ExperimentConfig c = resolve(o);
  std::error_code ec;
  fs::create_directories(c.output_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + c.output_dir + "': " + ec.message());
  for (std::uint64_t seed : c.seeds) {
    const Federation fed = generate_federation(c.federation_for(seed));
    const fs::path path = fs::path(c.output_dir) / ("federation_seed_" + std::to_string(seed) + ".csv");
    write_text(path, [&](std::ostream& f) { write_federation_csv(fed, f); });
    std::printf("seed %llu: %zu clients, prototype displacement %.4f -> %s\n", static_cast<unsigned long long>(seed),
                fed.clients.size(), mean_prototype_displacement(fed), path.string().c_str());
  }
  return exit_code::ok;
}

int cmd_reference(const Options& o) {
  if (o.canonical) {
    std::cout << dump_config(resolve(o));
  } else {
    std::cout << config_reference();
  }
  return exit_code::ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flexible-cut split federated learning simulator"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* opt = sub->add_option("--config", o.config, "JSON config file");
    if (config_required) opt->required();
    sub->add_option("--seed", o.seeds, "seed to run (repeatable); overrides the config's seed list");
    sub->add_option("--out", o.out, "output directory; overrides the config's output_dir");
  };

  CLI::App* run = app.add_subcommand("run", "run one experiment per seed and write CSV metrics");
  add_common(run, true);
  CLI::App* sw = app.add_subcommand("sweep", "sweep q, lambda or dropout over values and seeds");
  add_common(sw, true);
  sw->add_option("--param", o.param, "q, lambda or dropout")->required();
  sw->add_option("--values", o.values, "comma-separated values, e.g. 0.1,0.2,0.5")->required();
  sw->add_option("--jobs", o.jobs, "worker threads")->check(CLI::PositiveNumber);
  CLI::App* ver = app.add_subcommand("verify", "run the oracle suite; exit 3 on any failure");
  ver->add_option("--corrupt-backward", o.backward_fault,
                  "scale leaf gradients in the gradient check by this factor (mutation check)");
  CLI::App* gen = app.add_subcommand("gen-data", "write the synthetic federation as CSV");
  add_common(gen, false);
  CLI::App* ref = app.add_subcommand("print-config-reference", "print every config key with its default");
  ref->add_option("--config", o.config, "with --canonical: config to print");
  ref->add_flag("--canonical", o.canonical, "print the canonical form of --config (or the defaults) instead");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return exit_code::validation;
  }

  try {
    if (*run) return cmd_run(o);
    if (*sw) return cmd_sweep(o);
    if (*ver) return cmd_verify(o);
    if (*gen) return cmd_gen_data(o);
    if (*ref) return cmd_reference(o);
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return exit_code::validation;
  } catch (const InputError& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return exit_code::validation;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code::runtime;
  }
  return exit_code::runtime;
}
