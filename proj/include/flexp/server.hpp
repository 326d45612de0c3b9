#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "flexp/model.hpp"
#include "flexp/optimizer.hpp"
#include "flexp/tape.hpp"
#include "flexp/wire.hpp"

namespace flexp {

struct AlignResult {
  double value = 0.0;
  /// dR/dz_CL, unscaled.
  Tensor grad;
  Message ack;
};

/// Holds the single global stack and serves every client's server-layer view.
/// Only middle blocks at or beyond a client's cut are updated while serving
/// that client; the input and head blocks are never touched.
class ServerRuntime {
 public:
  ServerRuntime(LayerStack global, OptimizerConfig optimizer);

  /// Throws RegistrationError on a duplicate id, InputError on q outside [0, 1].
  /// `lambda` scales the alignment gradient folded into this client's GRAD_DOWN.
  void register_client(std::uint32_t client_id, double q, double lambda = 0.0);
  bool is_registered(std::uint32_t client_id) const { return clients_.contains(client_id); }
  std::size_t cl_count(std::uint32_t client_id) const;

  Message handle_activation_up(const Message& msg);
  Message handle_gradient_up(const Message& msg);
  /// Requires the ACT_UP of the same step to have been handled. The server
  /// copies of the client-layer blocks are read, never updated.
  AlignResult handle_align_probe(const Message& msg);
  /// Dispatches on tag. PARAM_* frames raise ProtocolError.
  std::optional<Message> handle(const Message& msg);

  const LayerStack& global() const noexcept { return global_; }
  /// Baselines replace server state wholesale; never used by the FlexP path.
  LayerStack& mutable_global() noexcept { return global_; }

  std::size_t live_sessions() const noexcept { return sessions_.size(); }
  /// Alignment gradients waiting for a GRAD_DOWN.
  std::size_t pending_alignments() const noexcept { return pending_.size(); }
  /// Number of optimizer updates applied to each middle block.
  const std::vector<std::uint64_t>& block_updates() const noexcept { return block_updates_; }
  std::uint64_t frames_in() const noexcept { return frames_in_; }
  std::uint64_t frames_out() const noexcept { return frames_out_; }

 private:
  struct ClientEntry {
    std::size_t cl_count = 0;
    double lambda = 0.0;
  };
  struct Session {
    std::size_t first_block = 0;  // middle index
    std::vector<Tape> tapes;
  };
  struct CutCache {
    std::uint64_t step_id = 0;
    Tensor z_cl;
  };
  struct PendingAlign {
    std::uint64_t step_id = 0;
    Tensor grad;  // already scaled by lambda
  };

  const ClientEntry& entry(std::uint32_t client_id) const;

  LayerStack global_;
  OptimizerConfig optimizer_;
  std::vector<OptimizerState> states_;  // per middle block
  std::vector<std::uint64_t> block_updates_;
  std::map<std::uint32_t, ClientEntry> clients_;
  std::map<SessionKey, Session> sessions_;
  std::map<std::uint32_t, CutCache> last_cut_;
  std::map<std::uint32_t, PendingAlign> pending_;
  std::uint64_t frames_in_ = 0;
  std::uint64_t frames_out_ = 0;
};

}  // namespace flexp
