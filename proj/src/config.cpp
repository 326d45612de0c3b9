#include <cstddef>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "flexp/error.hpp"
#include "flexp/experiment.hpp"
#include "json.hpp"

namespace flexp {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr std::uint64_t kDefaultTargetSteps = 500;
constexpr double kDefaultQ = 0.5;

std::string child(const std::string& path, std::string_view key) {
  return path.empty() ? std::string(key) : path + "." + std::string(key);
}

std::string index(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

std::string type_of(const json& v) {
  if (v.is_number_float()) return "number";
  if (v.is_number()) return "integer";
  return v.type_name();
}

[[noreturn]] void wrong_type(const json& v, const std::string& path, const char* expected) {
  throw ValidationError(path, std::string("expected ") + expected + ", got " + type_of(v));
}

std::uint64_t as_u64(const json& v, const std::string& path) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
  wrong_type(v, path, "non-negative integer");
}

std::size_t as_size(const json& v, const std::string& path) {
  const std::uint64_t n = as_u64(v, path);
  if (n > std::numeric_limits<std::size_t>::max()) throw ValidationError(path, "value too large");
  return static_cast<std::size_t>(n);
}

double as_number(const json& v, const std::string& path) {
  if (!v.is_number()) wrong_type(v, path, "number");
  return v.get<double>();
}

std::string as_string(const json& v, const std::string& path) {
  if (!v.is_string()) wrong_type(v, path, "string");
  return v.get<std::string>();
}

bool as_bool(const json& v, const std::string& path) {
  if (!v.is_boolean()) wrong_type(v, path, "boolean");
  return v.get<bool>();
}

const json& as_array(const json& v, const std::string& path) {
  if (!v.is_array()) wrong_type(v, path, "array");
  return v;
}

/// An object whose keys must all come from a fixed list.
class Section {
 public:
  Section(const json& j, std::string path, std::initializer_list<std::string_view> allowed)
      : j_(j), path_(std::move(path)) {
    if (!j.is_object()) wrong_type(j, path_.empty() ? "(root)" : path_, "object");
    for (const auto& [key, value] : j.items()) {
      bool known = false;
      for (std::string_view a : allowed) known = known || a == key;
      if (!known) throw ValidationError(child(path_, key), "unknown key");
    }
  }

  /// Calls `parse(value, key_path)` when the key is present.
  template <class F>
  void read(std::string_view key, F&& parse) const {
    const auto it = j_.find(std::string(key));
    if (it != j_.end()) parse(*it, child(path_, key));
  }

  bool has(std::string_view key) const { return j_.contains(std::string(key)); }
  const std::string& path() const { return path_; }

 private:
  const json& j_;
  std::string path_;
};

template <class T, class F>
void read_optional(const Section& s, std::string_view key, std::optional<T>& out, F&& convert) {
  s.read(key, [&](const json& v, const std::string& p) {
    if (v.is_null()) {
      out.reset();
    } else {
      out = convert(v, p);
    }
  });
}

void parse_optimizer(const json& j, const std::string& path, OptimizerConfig& o) {
  Section s(j, path, {"kind", "lr", "beta1", "beta2", "eps"});
  s.read("kind", [&](const json& v, const std::string& p) {
    const std::string name = as_string(v, p);
    if (name == "sgd") {
      o.kind = OptimizerKind::sgd;
    } else if (name == "adam") {
      o.kind = OptimizerKind::adam;
    } else {
      throw ValidationError(p, "expected \"sgd\" or \"adam\", got \"" + name + "\"");
    }
  });
  s.read("lr", [&](const json& v, const std::string& p) { o.lr = as_number(v, p); });
  s.read("beta1", [&](const json& v, const std::string& p) { o.beta1 = as_number(v, p); });
  s.read("beta2", [&](const json& v, const std::string& p) { o.beta2 = as_number(v, p); });
  s.read("eps", [&](const json& v, const std::string& p) { o.eps = as_number(v, p); });
}

void check_optimizer(const OptimizerConfig& o, const std::string& path) {
  if (!(o.lr > 0.0)) throw ValidationError(path + ".lr", "must be > 0");
  if (!(o.beta1 >= 0.0 && o.beta1 < 1.0)) throw ValidationError(path + ".beta1", "must lie in [0, 1)");
  if (!(o.beta2 >= 0.0 && o.beta2 < 1.0)) throw ValidationError(path + ".beta2", "must lie in [0, 1)");
  if (!(o.eps > 0.0)) throw ValidationError(path + ".eps", "must be > 0");
}

void parse_model(const json& j, ModelConfig& m) {
  Section s(j, "model", {"input_dim", "hidden_dim", "num_middle_blocks", "num_classes", "block_kind", "seq_len"});
  s.read("input_dim", [&](const json& v, const std::string& p) { m.input_dim = as_size(v, p); });
  s.read("hidden_dim", [&](const json& v, const std::string& p) { m.hidden_dim = as_size(v, p); });
  s.read("num_middle_blocks", [&](const json& v, const std::string& p) { m.num_middle_blocks = as_size(v, p); });
  s.read("num_classes", [&](const json& v, const std::string& p) { m.num_classes = as_size(v, p); });
  s.read("seq_len", [&](const json& v, const std::string& p) { m.seq_len = as_size(v, p); });
  s.read("block_kind", [&](const json& v, const std::string& p) {
    const std::string name = as_string(v, p);
    if (name == "mlp_residual") {
      m.block_kind = BlockKind::mlp_residual;
    } else if (name == "attention_mlp_residual") {
      m.block_kind = BlockKind::attention_mlp_residual;
    } else {
      throw ValidationError(p, "expected \"mlp_residual\" or \"attention_mlp_residual\", got \"" + name + "\"");
    }
  });
}

void parse_federation(const json& j, FederationSpec& f) {
  Section s(j, "federation",
            {"num_clients", "samples_per_client", "theta_max", "label_skew_alpha", "noise_sigma", "train_fraction"});
  s.read("num_clients", [&](const json& v, const std::string& p) { f.num_clients = as_size(v, p); });
  s.read("samples_per_client", [&](const json& v, const std::string& p) { f.samples_per_client = as_size(v, p); });
  s.read("theta_max", [&](const json& v, const std::string& p) { f.theta_max = as_number(v, p); });
  s.read("label_skew_alpha", [&](const json& v, const std::string& p) { f.label_skew_alpha = as_number(v, p); });
  s.read("noise_sigma", [&](const json& v, const std::string& p) { f.noise_sigma = as_number(v, p); });
  s.read("train_fraction", [&](const json& v, const std::string& p) { f.train_fraction = as_number(v, p); });
}

void parse_pretrain(const json& j, PretrainConfig& pt) {
  Section s(j, "pretrain", {"steps", "batch_size", "optimizer"});
  s.read("steps", [&](const json& v, const std::string& p) { pt.steps = as_size(v, p); });
  s.read("batch_size", [&](const json& v, const std::string& p) { pt.batch_size = as_size(v, p); });
  s.read("optimizer", [&](const json& v, const std::string& p) { parse_optimizer(v, p, pt.optimizer); });
}

DeviceGroup parse_device(const json& j, const std::string& path) {
  Section s(j, path,
            {"name", "clients", "fwd_seconds_per_block_per_sample", "bwd_multiplier", "memory_bytes_budget",
             "uplink_bytes_per_s", "downlink_bytes_per_s", "latency_s", "dropout_prob"});
  if (!s.has("clients")) throw ValidationError(child(path, "clients"), "required: ids of the clients on this device");
  DeviceGroup g;
  DeviceProfile& d = g.profile;
  s.read("name", [&](const json& v, const std::string& p) { d.name = as_string(v, p); });
  s.read("clients", [&](const json& v, const std::string& p) {
    const json& arr = as_array(v, p);
    for (std::size_t i = 0; i < arr.size(); ++i) g.clients.push_back(as_size(arr[i], index(p, i)));
  });
  s.read("fwd_seconds_per_block_per_sample",
         [&](const json& v, const std::string& p) { d.fwd_seconds_per_block_per_sample = as_number(v, p); });
  s.read("bwd_multiplier", [&](const json& v, const std::string& p) { d.bwd_multiplier = as_number(v, p); });
  s.read("memory_bytes_budget", [&](const json& v, const std::string& p) { d.memory_bytes_budget = as_size(v, p); });
  s.read("uplink_bytes_per_s", [&](const json& v, const std::string& p) { d.uplink_bytes_per_s = as_number(v, p); });
  s.read("downlink_bytes_per_s",
         [&](const json& v, const std::string& p) { d.downlink_bytes_per_s = as_number(v, p); });
  s.read("latency_s", [&](const json& v, const std::string& p) { d.latency_s = as_number(v, p); });
  s.read("dropout_prob", [&](const json& v, const std::string& p) { d.dropout_prob = as_number(v, p); });
  return g;
}

void parse_plan(const json& j, RunPlan& plan, std::size_t num_clients) {
  Section s(j, "plan",
            {"protocol", "target_steps", "time_budget_s", "clients", "sfl_q", "aggregation_period", "local_steps",
             "lambda", "align_every", "batch_size", "element_size", "server_seconds_per_block_per_sample",
             "eval_interval_s", "optimizer", "trace"});
  s.read("protocol", [&](const json& v, const std::string& p) {
    const std::string name = as_string(v, p);
    if (name == "flexp_sfl") {
      plan.protocol = Protocol::flexp_sfl;
    } else if (name == "sfl") {
      plan.protocol = Protocol::sfl;
    } else if (name == "fedavg") {
      plan.protocol = Protocol::fedavg;
    } else {
      throw ValidationError(p, "expected \"flexp_sfl\", \"sfl\" or \"fedavg\", got \"" + name + "\"");
    }
  });
  // A budget given without a step target replaces the default target.
  if (s.has("time_budget_s") && !j.at("time_budget_s").is_null() && !s.has("target_steps")) plan.target_steps.reset();
  read_optional(s, "target_steps", plan.target_steps, as_u64);
  read_optional(s, "time_budget_s", plan.time_budget_s, as_number);
  plan.client_q.assign(num_clients, kDefaultQ);
  s.read("clients", [&](const json& v, const std::string& p) {
    const json& arr = as_array(v, p);
    plan.client_q.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string ip = index(p, i);
      Section c(arr[i], ip, {"q"});
      if (!c.has("q")) throw ValidationError(child(ip, "q"), "required");
      c.read("q", [&](const json& qv, const std::string& qp) { plan.client_q.push_back(as_number(qv, qp)); });
    }
  });
  read_optional(s, "sfl_q", plan.sfl_q, as_number);
  read_optional(s, "aggregation_period", plan.aggregation_period, as_size);
  read_optional(s, "local_steps", plan.local_steps, as_size);
  s.read("lambda", [&](const json& v, const std::string& p) { plan.lambda = as_number(v, p); });
  s.read("align_every", [&](const json& v, const std::string& p) { plan.align_every = as_size(v, p); });
  s.read("batch_size", [&](const json& v, const std::string& p) { plan.batch_size = as_size(v, p); });
  s.read("element_size", [&](const json& v, const std::string& p) { plan.element_size = as_size(v, p); });
  s.read("server_seconds_per_block_per_sample",
         [&](const json& v, const std::string& p) { plan.server_seconds_per_block_per_sample = as_number(v, p); });
  s.read("eval_interval_s", [&](const json& v, const std::string& p) { plan.eval_interval_s = as_number(v, p); });
  s.read("optimizer", [&](const json& v, const std::string& p) { parse_optimizer(v, p, plan.optimizer); });
  s.read("trace", [&](const json& v, const std::string& p) { plan.trace = as_bool(v, p); });
}

// Library validators report "section.field must ..."; recover the key path.
[[noreturn]] void rethrow_with_path(const InputError& e, const std::string& fallback) {
  const std::string msg = e.what();
  const std::size_t space = msg.find(' ');
  if (space != std::string::npos && msg.compare(0, fallback.size() + 1, fallback + ".") == 0) {
    throw ValidationError(msg.substr(0, space), msg.substr(space + 1));
  }
  throw ValidationError(fallback, msg);
}

ordered_json optimizer_json(const OptimizerConfig& o) {
  ordered_json j;
  j["kind"] = std::string(to_string(o.kind));
  j["lr"] = o.lr;
  j["beta1"] = o.beta1;
  j["beta2"] = o.beta2;
  j["eps"] = o.eps;
  return j;
}

template <class T>
ordered_json optional_json(const std::optional<T>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

struct RefEntry {
  const char* path;
  const char* type;
  const char* doc;
};

// One entry per key of the canonical form, in canonical order.
constexpr RefEntry kReference[] = {
    {"model.input_dim", "integer >= 1", "features per token; a raw sample has seq_len * input_dim features"},
    {"model.hidden_dim", "integer >= 1", "width of every middle block"},
    {"model.num_middle_blocks", "integer >= 1", "middle blocks between the input block and the head"},
    {"model.num_classes", "integer >= 2", "output classes"},
    {"model.block_kind", "string", "\"mlp_residual\" or \"attention_mlp_residual\""},
    {"model.seq_len", "integer >= 1", "tokens per sample; must be 1 for mlp_residual"},
    {"federation.num_clients", "integer >= 1", "clients in the federation"},
    {"federation.samples_per_client", "integer >= 2", "samples drawn per client before the train/test split"},
    {"federation.theta_max", "number in [0, pi]", "largest per-client prototype rotation (task shift)"},
    {"federation.label_skew_alpha", "number > 0", "Dirichlet concentration of client label mixes; small is skewed"},
    {"federation.noise_sigma", "number >= 0", "isotropic Gaussian noise around each prototype"},
    {"federation.train_fraction", "number in (0, 1)", "share of each client's samples used for training"},
    {"pretrain.steps", "integer >= 0", "pooled-data steps that produce the shared base model; 0 skips"},
    {"pretrain.batch_size", "integer >= 1", "pretraining batch size"},
    {"pretrain.optimizer.kind", "string", "\"sgd\" or \"adam\""},
    {"pretrain.optimizer.lr", "number > 0", "learning rate"},
    {"pretrain.optimizer.beta1", "number in [0, 1)", "Adam first-moment decay"},
    {"pretrain.optimizer.beta2", "number in [0, 1)", "Adam second-moment decay"},
    {"pretrain.optimizer.eps", "number > 0", "Adam denominator offset"},
    {"devices", "array of objects", "device profiles; absent means one default profile for every client"},
    {"devices[].name", "string", "label used in diagnostics and summary.csv"},
    {"devices[].clients", "array of integers", "required; ids of the clients on this device, each client exactly once"},
    {"devices[].fwd_seconds_per_block_per_sample", "number > 0", "forward compute time per block per sample"},
    {"devices[].bwd_multiplier", "number > 0", "backward time as a multiple of forward time"},
    {"devices[].memory_bytes_budget", "integer >= 0", "memory budget; summary.csv flags clients whose peak exceeds it"},
    {"devices[].uplink_bytes_per_s", "number > 0", "client to server bandwidth"},
    {"devices[].downlink_bytes_per_s", "number > 0", "server to client bandwidth"},
    {"devices[].latency_s", "number >= 0", "one-way latency added to every frame"},
    {"devices[].dropout_prob", "number in [0, 1]", "probability that a client skips a step or round"},
    {"plan.protocol", "string", "\"flexp_sfl\", \"sfl\" or \"fedavg\""},
    {"plan.target_steps", "integer >= 1 or null",
     "stop after this many successful client steps; default 500 unless time_budget_s is given"},
    {"plan.time_budget_s", "number > 0 or null", "stop starting new steps at this simulated time"},
    {"plan.clients", "array of objects", "one entry per client; absent means q = 0.5 for every client"},
    {"plan.clients[].q", "number in [0, 1]", "share of middle blocks kept on the client"},
    {"plan.sfl_q", "number in [0, 1] or null", "sfl only: common cut; null takes the median client q"},
    {"plan.aggregation_period", "integer >= 1 or null", "baselines only: aggregate every E rounds; null means 1"},
    {"plan.local_steps", "integer >= 1 or null", "fedavg only: local steps per round; null means 1"},
    {"plan.lambda", "number >= 0", "weight of the alignment term"},
    {"plan.align_every", "integer >= 0", "probe every K successful client steps; 0 disables alignment"},
    {"plan.batch_size", "integer >= 1", "client batch size"},
    {"plan.element_size", "4 or 8", "bytes per element on the wire; 4 casts payloads to single precision"},
    {"plan.server_seconds_per_block_per_sample", "number >= 0", "server compute time; 0 models an idle-fast server"},
    {"plan.eval_interval_s", "number >= 0", "periodic evaluation cadence in simulated seconds; 0 evaluates at the end"},
    {"plan.optimizer.kind", "string", "\"sgd\" or \"adam\""},
    {"plan.optimizer.lr", "number > 0", "learning rate"},
    {"plan.optimizer.beta1", "number in [0, 1)", "Adam first-moment decay"},
    {"plan.optimizer.beta2", "number in [0, 1)", "Adam second-moment decay"},
    {"plan.optimizer.eps", "number > 0", "Adam denominator offset"},
    {"plan.trace", "boolean", "write an event trace (trace.csv)"},
    {"output_dir", "string", "directory for run and sweep outputs; --out overrides"},
    {"seeds", "array of integers", "seeds to run; --seed overrides"},
};

}  // namespace

void ExperimentConfig::validate() const {
  try {
    model.validate();
  } catch (const InputError& e) {
    rethrow_with_path(e, "model");
  }
  try {
    federation_for(0).validate();
  } catch (const InputError& e) {
    rethrow_with_path(e, "federation");
  }
  if (pretrain.batch_size == 0) throw ValidationError("pretrain.batch_size", "must be >= 1");
  check_optimizer(pretrain.optimizer, "pretrain.optimizer");

  const std::size_t n = federation.num_clients;
  std::vector<int> owner(n, -1);
  for (std::size_t g = 0; g < devices.size(); ++g) {
    const std::string gp = index("devices", g);
    try {
      devices[g].profile.validate();
    } catch (const InputError& e) {
      const std::string msg = e.what();
      const std::size_t colon = msg.find("': ");
      const std::string rest = colon == std::string::npos ? msg : msg.substr(colon + 3);
      const std::size_t space = rest.find(' ');
      if (space == std::string::npos) throw ValidationError(gp, msg);
      throw ValidationError(child(gp, rest.substr(0, space)), rest.substr(space + 1));
    }
    for (std::size_t k = 0; k < devices[g].clients.size(); ++k) {
      const std::size_t c = devices[g].clients[k];
      const std::string kp = index(child(gp, "clients"), k);
      if (c >= n) throw ValidationError(kp, "client " + std::to_string(c) + " does not exist");
      if (owner[c] >= 0) {
        throw ValidationError(kp, "client " + std::to_string(c) + " already runs on devices[" +
                                      std::to_string(owner[c]) + "]");
      }
      owner[c] = static_cast<int>(g);
    }
  }
  for (std::size_t c = 0; c < n; ++c) {
    if (owner[c] < 0) throw ValidationError("devices", "client " + std::to_string(c) + " has no device profile");
  }

  plan.validate(n);
  check_optimizer(plan.optimizer, "plan.optimizer");
  if (output_dir.empty()) throw ValidationError("output_dir", "must not be empty");
  if (seeds.empty()) throw ValidationError("seeds", "needs at least one seed");
}

FederationSpec ExperimentConfig::federation_for(std::uint64_t seed) const {
  FederationSpec f = federation;
  f.input_dim = model.sample_width();
  f.num_classes = model.num_classes;
  f.seed = derive_seed(seed, seed_stream::data);
  return f;
}

std::vector<DeviceProfile> ExperimentConfig::client_devices() const {
  std::vector<DeviceProfile> out(federation.num_clients);
  for (const DeviceGroup& g : devices)
    for (std::size_t c : g.clients) out.at(c) = g.profile;
  return out;
}

ExperimentConfig parse_config(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ValidationError("(root)", std::string("invalid JSON: ") + e.what());
  }
  ExperimentConfig c;
  Section s(root, "", {"model", "federation", "pretrain", "devices", "plan", "output_dir", "seeds"});
  s.read("model", [&](const json& v, const std::string&) { parse_model(v, c.model); });
  s.read("federation", [&](const json& v, const std::string&) { parse_federation(v, c.federation); });
  s.read("pretrain", [&](const json& v, const std::string&) { parse_pretrain(v, c.pretrain); });
  c.devices.clear();
  s.read("devices", [&](const json& v, const std::string& p) {
    const json& arr = as_array(v, p);
    for (std::size_t i = 0; i < arr.size(); ++i) c.devices.push_back(parse_device(arr[i], index(p, i)));
  });
  if (!s.has("devices")) {
    DeviceGroup all;
    for (std::size_t i = 0; i < c.federation.num_clients; ++i) all.clients.push_back(i);
    c.devices.push_back(all);
  }
  c.plan.target_steps = kDefaultTargetSteps;
  parse_plan(s.has("plan") ? root.at("plan") : json::object(), c.plan, c.federation.num_clients);
  s.read("output_dir", [&](const json& v, const std::string& p) { c.output_dir = as_string(v, p); });
  s.read("seeds", [&](const json& v, const std::string& p) {
    const json& arr = as_array(v, p);
    c.seeds.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) c.seeds.push_back(as_u64(arr[i], index(p, i)));
  });
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config file '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  if (in.bad()) throw IoError("error while reading config file '" + path.string() + "'");
  return parse_config(text.str());
}

std::string dump_config(const ExperimentConfig& c) {
  ordered_json root;
  ordered_json& m = root["model"];
  m["input_dim"] = c.model.input_dim;
  m["hidden_dim"] = c.model.hidden_dim;
  m["num_middle_blocks"] = c.model.num_middle_blocks;
  m["num_classes"] = c.model.num_classes;
  m["block_kind"] = std::string(to_string(c.model.block_kind));
  m["seq_len"] = c.model.seq_len;

  ordered_json& f = root["federation"];
  f["num_clients"] = c.federation.num_clients;
  f["samples_per_client"] = c.federation.samples_per_client;
  f["theta_max"] = c.federation.theta_max;
  f["label_skew_alpha"] = c.federation.label_skew_alpha;
  f["noise_sigma"] = c.federation.noise_sigma;
  f["train_fraction"] = c.federation.train_fraction;

  ordered_json& pt = root["pretrain"];
  pt["steps"] = c.pretrain.steps;
  pt["batch_size"] = c.pretrain.batch_size;
  pt["optimizer"] = optimizer_json(c.pretrain.optimizer);

  ordered_json& devices = root["devices"];
  devices = ordered_json::array();
  for (const DeviceGroup& g : c.devices) {
    ordered_json d;
    d["name"] = g.profile.name;
    d["clients"] = g.clients;
    d["fwd_seconds_per_block_per_sample"] = g.profile.fwd_seconds_per_block_per_sample;
    d["bwd_multiplier"] = g.profile.bwd_multiplier;
    d["memory_bytes_budget"] = g.profile.memory_bytes_budget;
    d["uplink_bytes_per_s"] = g.profile.uplink_bytes_per_s;
    d["downlink_bytes_per_s"] = g.profile.downlink_bytes_per_s;
    d["latency_s"] = g.profile.latency_s;
    d["dropout_prob"] = g.profile.dropout_prob;
    devices.push_back(d);
  }

  ordered_json& p = root["plan"];
  p["protocol"] = std::string(to_string(c.plan.protocol));
  p["target_steps"] = optional_json(c.plan.target_steps);
  p["time_budget_s"] = optional_json(c.plan.time_budget_s);
  p["clients"] = ordered_json::array();
  for (double q : c.plan.client_q) p["clients"].push_back(ordered_json{{"q", q}});
  p["sfl_q"] = optional_json(c.plan.sfl_q);
  p["aggregation_period"] = optional_json(c.plan.aggregation_period);
  p["local_steps"] = optional_json(c.plan.local_steps);
  p["lambda"] = c.plan.lambda;
  p["align_every"] = c.plan.align_every;
  p["batch_size"] = c.plan.batch_size;
  p["element_size"] = c.plan.element_size;
  p["server_seconds_per_block_per_sample"] = c.plan.server_seconds_per_block_per_sample;
  p["eval_interval_s"] = c.plan.eval_interval_s;
  p["optimizer"] = optimizer_json(c.plan.optimizer);
  p["trace"] = c.plan.trace;

  root["output_dir"] = c.output_dir;
  root["seeds"] = c.seeds;
  return root.dump(2) + "\n";
}

std::string config_reference() {
  // Defaults come from the canonical form of an empty config so the table
  // cannot drift from the parser.
  const json defaults = json::parse(dump_config(parse_config("{}")));
  std::ostringstream out;
  out << "# Config reference. Key path, type, default, meaning.\n"
      << "# Unknown keys are errors. federation.input_dim and federation.num_classes follow the model.\n";
  for (const RefEntry& e : kReference) {
    std::string path = e.path;
    std::string pointer;
    std::size_t pos = 0;
    while (pos <= path.size()) {
      const std::size_t dot = path.find('.', pos);
      std::string part = path.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
      if (part.size() > 2 && part.ends_with("[]")) part = part.substr(0, part.size() - 2) + "/0";
      pointer += "/" + part;
      if (dot == std::string::npos) break;
      pos = dot + 1;
    }
    const json::json_pointer ptr(pointer);
    std::string def = "-";
    if (defaults.contains(ptr) && !defaults.at(ptr).is_array()) def = defaults.at(ptr).dump();
    if (path == "devices") def = "one \"default\" profile covering every client";
    if (path == "plan.clients") def = "[{\"q\": 0.5}] per client";
    if (path == "seeds") def = defaults.at(ptr).dump();
    if (path == "devices[].clients") def = "(required)";
    out << e.path << "\n  type: " << e.type << "\n  default: " << def << "\n  " << e.doc << "\n";
  }
  return out.str();
}

}  // namespace flexp
