#pragma once

#include <cstdint>
#include <vector>

#include "flexp/data.hpp"
#include "flexp/model.hpp"
#include "flexp/protocols.hpp"
#include "flexp/sim.hpp"

namespace flexp::testing {

/// Small federation and matching model, fast enough for many runs per test.
struct Setup {
  Federation fed;
  LayerStack base;
  std::vector<DeviceProfile> devices;
};

inline Setup small_setup(std::size_t clients, std::uint64_t seed = 0, std::size_t samples = 120) {
  FederationSpec fs;
  fs.num_clients = clients;
  fs.input_dim = 6;
  fs.num_classes = 4;
  fs.samples_per_client = samples;
  fs.seed = seed;
  ModelConfig mc;
  mc.input_dim = 6;
  mc.hidden_dim = 8;
  mc.num_middle_blocks = 4;
  mc.num_classes = 4;
  Setup s{generate_federation(fs), build_model(mc, seed + 100), std::vector<DeviceProfile>(clients)};
  return s;
}

/// Per-client compute speeds spanning 10:1, slowest last.
inline void spread_speeds(std::vector<DeviceProfile>& devices) {
  const std::size_t n = devices.size();
  for (std::size_t c = 0; c < n; ++c) {
    devices[c].fwd_seconds_per_block_per_sample = n == 1 ? 1e-3 : 1e-3 * (1.0 + 9.0 * static_cast<double>(c) / (n - 1));
  }
}

inline RunPlan flexp_plan(std::size_t clients, double q = 0.5) {
  RunPlan p;
  p.protocol = Protocol::flexp_sfl;
  p.client_q.assign(clients, q);
  p.target_steps = 40;
  return p;
}

}  // namespace flexp::testing
