#include "flexp/client.hpp"

#include <string>

#include "flexp/error.hpp"
#include "flexp/losses.hpp"

namespace flexp {

ClientRuntime::ClientRuntime(ClientOptions options, const LayerStack& base, OptimizerConfig optimizer)
    : options_(options), config_(base.config), optimizer_(optimizer), input_(base.input_block), head_(base.head) {
  if (!(options_.lambda >= 0.0)) throw InputError("lambda must be >= 0");
  const std::size_t cl = partition(base.middle.size(), options_.q);
  cl_.assign(base.middle.begin(), base.middle.begin() + static_cast<std::ptrdiff_t>(cl));
  states_.resize(cl + 2);
}

std::vector<BlockParams*> ClientRuntime::blocks() {
  std::vector<BlockParams*> out{&input_};
  for (auto& b : cl_) out.push_back(&b);
  out.push_back(&head_);
  return out;
}

ClientForward ClientRuntime::forward(const Batch& batch) {
  if (pending_) throw StateError("client " + std::to_string(id()) + " already has a step in flight");
  Pending p;
  p.step_id = step_;
  p.labels = batch.labels;
  p.tapes.resize(cl_.size() + 1);
  Tensor z = forward_block(input_, model_input(config_, batch.x), p.tapes[0]);
  Tensor z_pl1 = z;
  for (std::size_t i = 0; i < cl_.size(); ++i) z = forward_block(cl_[i], z, p.tapes[i + 1]);
  p.z_cl = z;

  ClientForward out;
  out.act_up = Message{Tag::act_up, id(), step_, std::move(z)};
  if (options_.align_every > 0 && !cl_.empty() && step_ % options_.align_every == 0) {
    out.probe = Message{Tag::align_probe, id(), step_, std::move(z_pl1)};
  }
  pending_ = std::move(p);
  return out;
}

void ClientRuntime::check_step(const Message& msg, Tag tag) const {
  if (msg.tag != tag) {
    throw ProtocolError("client expected " + std::string(to_string(tag)) + ", got " + std::string(to_string(msg.tag)));
  }
  if (!pending_) throw ProtocolError("client " + std::to_string(id()) + " has no step in flight");
  if (msg.client_id != id() || msg.step_id != pending_->step_id) {
    throw ProtocolError("frame for client " + std::to_string(msg.client_id) + " step " + std::to_string(msg.step_id) +
                        " does not match pending step " + std::to_string(pending_->step_id));
  }
}

ClientFinalize ClientRuntime::finalize_forward(const Message& act_down) {
  check_step(act_down, Tag::act_down);
  if (pending_->finalized) throw ProtocolError("ACT_DOWN already consumed for this step");
  Tape tape;
  Tensor logits = forward_block(head_, act_down.payload, tape);
  CrossEntropy ce = cross_entropy_loss(logits, pending_->labels);
  BlockGrads g = backward_block(tape, ce.logits_grad());
  optimizer_step(head_.tensors, g.param_grads.tensors, states_.back(), optimizer_);
  pending_->finalized = true;
  return ClientFinalize{ce.loss, Message{Tag::grad_up, id(), pending_->step_id, std::move(g.input_grad)}};
}

void ClientRuntime::apply_cut_gradient(const Message& grad_down) {
  check_step(grad_down, Tag::grad_down);
  if (!pending_->finalized) throw ProtocolError("GRAD_DOWN before ACT_DOWN");
  require_same_shape(grad_down.payload, pending_->z_cl, "cut gradient");
  std::vector<BlockParams*> bs = blocks();
  std::vector<BlockParams> grads(pending_->tapes.size());
  Tensor g = grad_down.payload;
  for (std::size_t i = pending_->tapes.size(); i-- > 0;) {
    BlockGrads bg = backward_block(pending_->tapes[i], g);
    g = std::move(bg.input_grad);
    grads[i] = std::move(bg.param_grads);
  }
  for (std::size_t i = 0; i < grads.size(); ++i) optimizer_step(bs[i]->tensors, grads[i].tensors, states_[i], optimizer_);
  pending_.reset();
  ++step_;
}

LayerStack ClientRuntime::composite(const LayerStack& server) const {
  if (server.middle.size() < cl_.size()) throw DimensionError("server stack has fewer middle blocks than the client");
  LayerStack s = server;
  s.input_block = input_;
  for (std::size_t i = 0; i < cl_.size(); ++i) s.middle[i] = cl_[i];
  s.head = head_;
  return s;
}

double ClientRuntime::evaluate(const Dataset& data, const LayerStack& server) const {
  if (data.size() == 0) throw InputError("evaluate: empty test set");
  return accuracy(forward_logits(composite(server), data.x), data.labels);
}

std::vector<Tensor> ClientRuntime::flat_params() const {
  std::vector<Tensor> out(input_.tensors);
  for (const auto& b : cl_) out.insert(out.end(), b.tensors.begin(), b.tensors.end());
  out.insert(out.end(), head_.tensors.begin(), head_.tensors.end());
  return out;
}

void ClientRuntime::load_params(std::span<const Tensor> tensors) {
  std::size_t k = 0;
  for (BlockParams* b : blocks()) {
    for (Tensor& t : b->tensors) {
      if (k >= tensors.size()) throw DimensionError("load_params: too few tensors");
      require_same_shape(t, tensors[k], "load_params");
      t = tensors[k++];
    }
  }
  if (k != tensors.size()) throw DimensionError("load_params: too many tensors");
}

std::size_t ClientRuntime::cached_elements() const {
  if (!pending_) return 0;
  std::size_t n = pending_->z_cl.numel();
  for (const Tape& t : pending_->tapes) n += t.stored_elements();
  return n;
}

std::size_t ClientRuntime::param_count() const {
  std::size_t n = input_.param_count() + head_.param_count();
  for (const auto& b : cl_) n += b.param_count();
  return n;
}

}  // namespace flexp
