#include "flexp/server.hpp"

#include <string>

#include "flexp/error.hpp"
#include "flexp/losses.hpp"

namespace flexp {

namespace {

std::string session_str(const Message& msg) {
  return "client " + std::to_string(msg.client_id) + " step " + std::to_string(msg.step_id);
}

void expect_tag(const Message& msg, Tag tag) {
  if (msg.tag != tag) {
    throw ProtocolError("expected " + std::string(to_string(tag)) + ", got " + std::string(to_string(msg.tag)));
  }
}

}  // namespace

ServerRuntime::ServerRuntime(LayerStack global, OptimizerConfig optimizer)
    : global_(std::move(global)),
      optimizer_(optimizer),
      states_(global_.middle.size()),
      block_updates_(global_.middle.size(), 0) {}

void ServerRuntime::register_client(std::uint32_t client_id, double q, double lambda) {
  if (clients_.contains(client_id)) {
    throw RegistrationError("client " + std::to_string(client_id) + " is already registered");
  }
  if (!(lambda >= 0.0)) throw InputError("lambda must be >= 0");
  const ClientEntry e{partition(global_.middle.size(), q), lambda};
  clients_.emplace(client_id, e);
}

const ServerRuntime::ClientEntry& ServerRuntime::entry(std::uint32_t client_id) const {
  auto it = clients_.find(client_id);
  if (it == clients_.end()) throw ProtocolError("unknown client " + std::to_string(client_id));
  return it->second;
}

std::size_t ServerRuntime::cl_count(std::uint32_t client_id) const { return entry(client_id).cl_count; }

Message ServerRuntime::handle_activation_up(const Message& msg) {
  expect_tag(msg, Tag::act_up);
  const ClientEntry& e = entry(msg.client_id);
  const SessionKey key{msg.client_id, msg.step_id};
  if (sessions_.contains(key)) throw ProtocolError("duplicate session for " + session_str(msg));
  if (msg.payload.empty()) throw ProtocolError("ACT_UP without payload for " + session_str(msg));
  ++frames_in_;

  Session s;
  s.first_block = e.cl_count;
  const std::size_t n = global_.middle.size() - e.cl_count;
  s.tapes.resize(n);
  Tensor z = msg.payload;
  for (std::size_t i = 0; i < n; ++i) z = forward_block(global_.middle[e.cl_count + i], z, s.tapes[i]);
  last_cut_[msg.client_id] = CutCache{msg.step_id, msg.payload};
  sessions_.emplace(key, std::move(s));

  ++frames_out_;
  return Message{Tag::act_down, msg.client_id, msg.step_id, std::move(z)};
}

Message ServerRuntime::handle_gradient_up(const Message& msg) {
  expect_tag(msg, Tag::grad_up);
  entry(msg.client_id);
  auto it = sessions_.find(SessionKey{msg.client_id, msg.step_id});
  if (it == sessions_.end()) throw ProtocolError("no cached forward for " + session_str(msg));
  ++frames_in_;
  Session s = std::move(it->second);
  sessions_.erase(it);

  Tensor g = msg.payload;
  std::vector<BlockParams> grads(s.tapes.size());
  for (std::size_t i = s.tapes.size(); i-- > 0;) {
    BlockGrads bg = backward_block(s.tapes[i], g);
    g = std::move(bg.input_grad);
    grads[i] = std::move(bg.param_grads);
  }
  // Updates land on the current parameters, which other clients may have
  // moved since this session's forward.
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const std::size_t j = s.first_block + i;
    optimizer_step(global_.middle[j].tensors, grads[i].tensors, states_[j], optimizer_);
    ++block_updates_[j];
  }

  auto p = pending_.find(msg.client_id);
  if (p != pending_.end() && p->second.step_id <= msg.step_id) {
    require_same_shape(g, p->second.grad, "alignment gradient");
    g.add_scaled(p->second.grad, 1.0);
    pending_.erase(p);
  }
  ++frames_out_;
  return Message{Tag::grad_down, msg.client_id, msg.step_id, std::move(g)};
}

AlignResult ServerRuntime::handle_align_probe(const Message& msg) {
  expect_tag(msg, Tag::align_probe);
  const ClientEntry& e = entry(msg.client_id);
  if (e.cl_count == 0) throw ProtocolError("alignment probe from client without client layers");
  auto cut = last_cut_.find(msg.client_id);
  if (cut == last_cut_.end() || cut->second.step_id != msg.step_id) {
    throw ProtocolError("no cut activation cached for " + session_str(msg));
  }
  ++frames_in_;

  Tensor z_hat = msg.payload;
  for (std::size_t i = 0; i < e.cl_count; ++i) z_hat = apply_block(global_.middle[i], z_hat);
  const Tensor& z_cl = cut->second.z_cl;
  require_same_shape(z_cl, z_hat, "alignment probe");
  KlResult kl = kl_divergence(z_cl, z_hat, z_cl.rank() - 1);

  AlignResult r;
  r.value = kl.value;
  r.grad = std::move(kl.grad_p);
  if (e.lambda != 0.0) {
    Tensor scaled = r.grad;
    for (double& v : scaled.data()) v *= e.lambda;
    auto [slot, inserted] = pending_.try_emplace(msg.client_id, PendingAlign{msg.step_id, scaled});
    if (!inserted) {
      // An unconsumed older result: both ride on the next GRAD_DOWN.
      slot->second.grad.add_scaled(scaled, 1.0);
      slot->second.step_id = msg.step_id;
    }
  }
  r.ack = Message{Tag::align_ack, msg.client_id, msg.step_id, Tensor::scalar(kl.value)};
  ++frames_out_;
  return r;
}

std::optional<Message> ServerRuntime::handle(const Message& msg) {
  switch (msg.tag) {
    case Tag::act_up: return handle_activation_up(msg);
    case Tag::grad_up: return handle_gradient_up(msg);
    case Tag::align_probe: return handle_align_probe(msg).ack;
    default:
      throw ProtocolError("server does not accept " + std::string(to_string(msg.tag)) + " frames");
  }
}

}  // namespace flexp
