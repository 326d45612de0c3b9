#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "flexp/data.hpp"
#include "flexp/model.hpp"
#include "flexp/optimizer.hpp"
#include "flexp/tape.hpp"
#include "flexp/wire.hpp"

namespace flexp {

struct ClientOptions {
  std::uint32_t client_id = 0;
  double q = 0.5;
  double lambda = 0.0;
  /// Probe cadence in successful steps; 0 disables alignment probes.
  std::size_t align_every = 5;
};

struct ClientForward {
  Message act_up;
  std::optional<Message> probe;
};

struct ClientFinalize {
  double loss = 0.0;
  Message grad_up;
};

/// One client's private blocks (input, client layers, head) and the client
/// half of a split step. At most one step is in flight at a time.
class ClientRuntime {
 public:
  /// Copies the input block, the first partition(M, q) middle blocks and the
  /// head out of `base`.
  ClientRuntime(ClientOptions options, const LayerStack& base, OptimizerConfig optimizer);

  /// Runs the input block and client layers on `batch`. Throws StateError if
  /// a step is already pending.
  ClientForward forward(const Batch& batch);
  /// Head forward, loss, head update. Returns dF/dz_SL in GRAD_UP.
  ClientFinalize finalize_forward(const Message& act_down);
  /// Backward through the client layers and input block, update, close the step.
  void apply_cut_gradient(const Message& grad_down);

  /// Composite stack: this client's blocks around `server`'s server-layer blocks.
  LayerStack composite(const LayerStack& server) const;
  /// Argmax accuracy of the composite on `data`; throws InputError when empty.
  double evaluate(const Dataset& data, const LayerStack& server) const;

  /// Replace/read the client-resident parameters (baseline aggregation only).
  /// Order: input block, client layers, head.
  std::vector<Tensor> flat_params() const;
  void load_params(std::span<const Tensor> tensors);

  const ClientOptions& options() const noexcept { return options_; }
  std::uint32_t id() const noexcept { return options_.client_id; }
  std::size_t cl_count() const noexcept { return cl_.size(); }
  std::uint64_t steps_completed() const noexcept { return step_; }
  bool pending() const noexcept { return pending_.has_value(); }
  /// Elements of activation state cached for the in-flight step.
  std::size_t cached_elements() const;
  /// Client-resident parameter count.
  std::size_t param_count() const;

  const BlockParams& input_block() const noexcept { return input_; }
  const std::vector<BlockParams>& client_layers() const noexcept { return cl_; }
  const BlockParams& head() const noexcept { return head_; }
  /// Test hook: overwrite a client-layer block.
  BlockParams& mutable_client_layer(std::size_t i) { return cl_.at(i); }

 private:
  struct Pending {
    std::uint64_t step_id = 0;
    std::vector<int> labels;
    std::vector<Tape> tapes;  // input block, then client layers
    Tensor z_cl;
    bool finalized = false;
  };

  void check_step(const Message& msg, Tag tag) const;
  std::vector<BlockParams*> blocks();

  ClientOptions options_;
  ModelConfig config_;
  OptimizerConfig optimizer_;
  BlockParams input_;
  std::vector<BlockParams> cl_;
  BlockParams head_;
  std::vector<OptimizerState> states_;  // input, client layers, head
  std::optional<Pending> pending_;
  std::uint64_t step_ = 0;
};

}  // namespace flexp
