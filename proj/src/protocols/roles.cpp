#include <exception>
#include <thread>

#include "sfl/error.hpp"
#include "sfl/loss.hpp"
#include "sfl/roles.hpp"

namespace sfl::roles {

namespace {

using transport::Endpoint;
using transport::MsgType;

void send_tensor(Endpoint& ep, MsgType type, const Tensor& t) {
  ep.send(transport::tensor_message(type, t));
}

Tensor recv_tensor(Endpoint& ep, MsgType type) {
  return codec::decode_tensor(ep.recv_expect(type).payload);
}

void send_done(Endpoint& ep) { ep.send(transport::control_message("done")); }

// Several portions travel as one flat PARAMS tensor, in the given order.
void send_params(Endpoint& ep, std::initializer_list<const Network*> nets) {
  std::vector<float> flat;
  for (const Network* n : nets) {
    const auto p = n->flat_params();
    flat.insert(flat.end(), p.begin(), p.end());
  }
  const std::size_t count = flat.size();
  send_tensor(ep, MsgType::kParams, Tensor({count}, std::move(flat)));
}

void load_params(const Tensor& t, std::initializer_list<Network*> nets) {
  std::size_t total = 0;
  for (const Network* n : nets) total += n->param_count();
  if (t.rank() != 1 || t.numel() != total)
    throw DecodeError("PARAMS tensor has " + std::to_string(t.numel()) + " values, expected " +
                      std::to_string(total));
  std::size_t off = 0;
  for (Network* n : nets) {
    const std::size_t p = n->param_count();
    n->set_flat_params(t.data().subspan(off, p));
    off += p;
  }
}

void recv_params(Endpoint& ep, std::initializer_list<Network*> nets) {
  load_params(recv_tensor(ep, MsgType::kParams), nets);
}

uint64_t payload_sent(const Links& l) {
  uint64_t s = 0;
  for (Endpoint* e : {l.server, l.fed, l.prev, l.next})
    if (e) s += e->payload_sent();
  return s;
}

uint64_t payload_received(const Links& l) {
  uint64_t s = 0;
  for (Endpoint* e : {l.server, l.fed, l.prev, l.next})
    if (e) s += e->payload_received();
  return s;
}

Deposit deposit(std::string role, std::size_t r, const RoundStats& st = {}) {
  Deposit d;
  d.role = std::move(role);
  d.round = r;
  d.stats = st;
  return d;
}

Deposit client_deposit(std::size_t k, std::size_t r, const RoundStats& st, const Links& l) {
  Deposit d = deposit(client_name(k), r, st);
  d.is_client = true;
  d.bytes_up = payload_sent(l);
  d.bytes_down = payload_received(l);
  return d;
}

std::size_t global_epoch(const ExperimentSetup& s, std::size_t r, std::size_t e) {
  return r * s.train.local_epochs + e;
}

// Per-example gradients under the clipped, noised aggregate; `grad_out` is
// the gradient of the batch-mean loss, so row i scaled by B is the gradient
// of example i's own loss.
Gradients dp_gradients(const Network& net, const Tensor& x, const Tensor& grad_out,
                       const privacy::PrivacyConfig& p, Rng& rng) {
  const std::size_t b = x.dim(0);
  std::vector<std::vector<float>> per_example;
  per_example.reserve(b);
  for (std::size_t i = 0; i < b; ++i) {
    Tape tape;
    net.forward(x.rows(i, i + 1), &tape);
    Tensor g = grad_out.rows(i, i + 1);
    for (float& v : g.data()) v *= static_cast<float>(b);
    per_example.push_back(net.backward(tape, g, false).grads.flat());
  }
  const auto noisy = privacy::dp_local_gradient(per_example, p.clip_norm, p.noise_multiplier, b, rng);
  return Gradients::from_flat(net, noisy);
}

// Forward, loss and update of a portion that owns the loss. Returns the
// gradient with respect to its input.
Tensor loss_step(Network& net, const Tensor& input, std::span<const uint32_t> y,
                 const ExperimentSetup& s, RoundStats& st, bool need_input_grad = true) {
  Tape tape;
  const Tensor logits = net.forward(input, &tape);
  LossResult ce = cross_entropy_loss(logits, y);
  double loss = ce.loss;
  if (s.privacy.nopeek) {
    const float a2 = static_cast<float>(s.privacy.alpha2);
    for (float& v : ce.grad.data()) v *= a2;
    loss *= s.privacy.alpha2;
  }
  BackwardResult bw = net.backward(tape, ce.grad, need_input_grad);
  net.sgd_step(bw.grads, s.train.lr);
  st.loss_sum += loss;
  st.batches += 1;
  st.correct += ce.correct;
  st.seen += y.size();
  return std::move(bw.input_grad);
}

// Client-side portion ahead of the cut: optional Laplace layer on the way
// out, optional distance-correlation term and DP-SGD on the way back.
class FrontTrainer {
 public:
  FrontTrainer(const ExperimentSetup& s, Network net, std::size_t client)
      : net(std::move(net)), s_(s), client_(client) {}

  void begin_round(std::size_t r, const Dataset& data, std::span<const std::size_t> shard) {
    const uint64_t seed = s_.train.seed;
    lap_rng_ = make_rng(seed, {stream::kLaplace, client_, r});
    dp_rng_ = make_rng(seed, {stream::kDpNoise, client_, r});
    if (s_.privacy.laplace && s_.privacy.bounds == privacy::BoundsMode::kCalibration) {
      calib_ = {};
      std::vector<std::size_t> idx;
      for (std::size_t b = 0; b < shard.size(); b += 256) {
        idx.assign(shard.begin() + b, shard.begin() + std::min(shard.size(), b + 256));
        calib_.merge(net.forward(data.batch(idx)));
      }
    }
  }

  Tensor forward(const Tensor& x) {
    tape_ = Tape{};
    x_ = x;
    a_ = net.forward(x, &tape_);
    if (!s_.privacy.laplace) return a_;
    const privacy::SmashBounds bounds =
        s_.privacy.bounds == privacy::BoundsMode::kCalibration ? calib_
                                                                : privacy::SmashBounds::of(a_);
    return privacy::laplace_smash(a_, s_.privacy.laplace_epsilon, bounds, lap_rng_);
  }

  void backward(Tensor grad, RoundStats& st) {
    if (grad.shape() != a_.shape())
      throw ShapeError("smashed gradient " + shape_str(grad.shape()) + " does not match " +
                       shape_str(a_.shape()));
    if (s_.privacy.nopeek) {
      const privacy::DcorWithGrad d = privacy::distance_correlation_grad(x_, a_);
      const float a1 = static_cast<float>(s_.privacy.alpha1);
      for (std::size_t i = 0; i < grad.numel(); ++i) grad[i] += a1 * d.grad_z[i];
      st.loss_sum += s_.privacy.alpha1 * d.value;
    }
    if (s_.privacy.dp_sgd) {
      net.sgd_step(dp_gradients(net, x_, grad, s_.privacy, dp_rng_), s_.train.lr);
    } else {
      net.sgd_step(net.backward(tape_, grad, false).grads, s_.train.lr);
    }
  }

  Network net;

 private:
  const ExperimentSetup& s_;
  std::size_t client_;
  Tape tape_;
  Tensor x_, a_;
  Rng lap_rng_, dp_rng_;
  privacy::SmashBounds calib_;
};

// Whole-model step for the baseline and for FL clients.
void local_step(Network& net, const Tensor& x, std::span<const uint32_t> y,
                const ExperimentSetup& s, bool dp, Rng& dp_rng, RoundStats& st) {
  if (!dp) {
    loss_step(net, x, y, s, st, false);
    return;
  }
  Tape tape;
  const Tensor logits = net.forward(x, &tape);
  const LossResult ce = cross_entropy_loss(logits, y);
  net.sgd_step(dp_gradients(net, x, ce.grad, s.privacy, dp_rng), s.train.lr);
  st.loss_sum += ce.loss;
  st.batches += 1;
  st.correct += ce.correct;
  st.seen += y.size();
}

bool is_done(const transport::WireMessage& m) {
  if (m.type != MsgType::kControl) return false;
  const std::string text = transport::control_text(m);
  if (text != "done") throw TransportError("unexpected control message '" + text + "'");
  return true;
}

// Serves one client batch against `net`. Returns false when the client ended
// its turn instead.
bool serve_batch(Endpoint& ep, Network& net, const ExperimentSetup& s, RoundStats& st) {
  transport::WireMessage m = ep.recv();
  if (is_done(m)) return false;
  if (m.type != MsgType::kSmash)
    throw TransportError(std::string("expected SMASH, got ") + msg_type_name(m.type));
  const Tensor a = codec::decode_tensor(m.payload);
  if (s.protocol == Protocol::kSlUShaped) {
    Tape tape;
    send_tensor(ep, MsgType::kServerAct, net.forward(a, &tape));
    const Tensor g = recv_tensor(ep, MsgType::kServerActGrad);
    BackwardResult bw = net.backward(tape, g);
    net.sgd_step(bw.grads, s.train.lr);
    send_tensor(ep, MsgType::kSmashGrad, bw.input_grad);
    return true;
  }
  const auto y = codec::decode_labels(ep.recv_expect(MsgType::kLabels).payload);
  send_tensor(ep, MsgType::kSmashGrad, loss_step(net, a, y, s, st));
  return true;
}

// One client's share of a round against the main server: E local epochs.
void client_round(const RoleContext& ctx, std::size_t k, std::size_t r, FrontTrainer& front,
                  Network* tail, Endpoint& server, RoundStats& st) {
  const ExperimentSetup& s = ctx.setup;
  const auto& shard = s.plan.indices.at(k);
  front.begin_round(r, ctx.train, shard);
  for (std::size_t e = 0; e < s.train.local_epochs; ++e) {
    for (const auto& idx :
         epoch_batches(shard, s.train.batch, ctx.shuffle_seed, k, global_epoch(s, r, e))) {
      const Tensor x = ctx.train.batch(idx);
      const auto y = ctx.train.batch_labels(idx);
      send_tensor(server, MsgType::kSmash, front.forward(x));
      if (tail) {
        const Tensor act = recv_tensor(server, MsgType::kServerAct);
        send_tensor(server, MsgType::kServerActGrad, loss_step(*tail, act, y, s, st));
      } else {
        server.send({MsgType::kLabels, codec::encode_labels(y)});
      }
      front.backward(recv_tensor(server, MsgType::kSmashGrad), st);
    }
  }
  send_done(server);
}

RelayMode effective_relay(const ExperimentSetup& s) {
  if (s.protocol == Protocol::kSlNoSync || s.plan.client_count() < 2) return RelayMode::kNone;
  return s.relay;
}

void sl_client(const RoleContext& ctx, std::size_t k, const Links& links) {
  const ExperimentSetup& s = ctx.setup;
  const std::size_t K = s.plan.client_count(), R = s.train.rounds;
  auto init = initial_portions(s);
  const bool ushaped = s.protocol == Protocol::kSlUShaped;
  FrontTrainer front(s, std::move(init[0]), k);
  Network tail = ushaped ? std::move(init[2]) : Network();
  const RelayMode relay = effective_relay(s);
  Endpoint* in = relay == RelayMode::kCentralized ? links.server : links.prev;
  Endpoint* out = relay == RelayMode::kCentralized ? links.server : links.next;

  for (std::size_t r = 0; r < R; ++r) {
    if (relay != RelayMode::kNone && !(r == 0 && k == 0)) {
      if (ushaped) recv_params(*in, {&front.net, &tail});
      else recv_params(*in, {&front.net});
    }
    RoundStats st;
    client_round(ctx, k, r, front, ushaped ? &tail : nullptr, *links.server, st);
    if (relay != RelayMode::kNone && !(r + 1 == R && k + 1 == K)) {
      if (ushaped) send_params(*out, {&front.net, &tail});
      else send_params(*out, {&front.net});
    }
    Deposit d = client_deposit(k, r, st, links);
    d.snapshots["front"] = front.net.flat_params();
    if (ushaped) d.snapshots["tail"] = tail.flat_params();
    ctx.board.post(std::move(d));
  }
}

void sl_server(const RoleContext& ctx, const Links& links) {
  const ExperimentSetup& s = ctx.setup;
  const std::size_t K = s.plan.client_count(), R = s.train.rounds;
  Network net = std::move(initial_portions(s)[1]);
  const bool relay = effective_relay(s) == RelayMode::kCentralized;
  transport::WireMessage held;
  for (std::size_t r = 0; r < R; ++r) {
    RoundStats st;
    for (std::size_t k = 0; k < K; ++k) {
      Endpoint& ep = *links.clients.at(k);
      if (relay && !(r == 0 && k == 0)) ep.send(held);
      while (serve_batch(ep, net, s, st)) {
      }
      if (relay && !(r + 1 == R && k + 1 == K)) held = ep.recv_expect(MsgType::kParams);
    }
    Deposit d = deposit(kServer, r, st);
    d.snapshots["server"] = net.flat_params();
    ctx.board.post(std::move(d));
  }
}

bool sfl_broadcast_round(const ExperimentSetup& s, std::size_t r) {
  return r == 0 || r % s.train.sync_interval == 0;
}

bool sfl_sync_after(const ExperimentSetup& s, std::size_t r) {
  return (r + 1) % s.train.sync_interval == 0 || r + 1 == s.train.rounds;
}

std::vector<std::size_t> shard_sizes(const ExperimentSetup& s) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < s.plan.client_count(); ++k) out.push_back(s.plan.shard_size(k));
  return out;
}

void sfl_client(const RoleContext& ctx, std::size_t k, const Links& links) {
  const ExperimentSetup& s = ctx.setup;
  FrontTrainer front(s, std::move(initial_portions(s)[0]), k);
  for (std::size_t r = 0; r < s.train.rounds; ++r) {
    if (sfl_broadcast_round(s, r)) recv_params(*links.fed, {&front.net});
    RoundStats st;
    client_round(ctx, k, r, front, nullptr, *links.server, st);
    if (sfl_sync_after(s, r)) send_params(*links.fed, {&front.net});
    Deposit d = client_deposit(k, r, st, links);
    d.snapshots["front"] = front.net.flat_params();
    ctx.board.post(std::move(d));
  }
}

void sfl_fed(const RoleContext& ctx, const Links& links) {
  const ExperimentSetup& s = ctx.setup;
  const std::size_t K = s.plan.client_count();
  Network global = std::move(initial_portions(s)[0]);
  const auto sizes = shard_sizes(s);
  for (std::size_t r = 0; r < s.train.rounds; ++r) {
    if (sfl_broadcast_round(s, r))
      for (std::size_t k = 0; k < K; ++k) send_params(*links.clients.at(k), {&global});
    Deposit d = deposit(kFed, r);
    if (sfl_sync_after(s, r)) {
      std::vector<std::vector<float>> locals;
      for (std::size_t k = 0; k < K; ++k) {
        Network local = global;
        recv_params(*links.clients.at(k), {&local});
        locals.push_back(local.flat_params());
      }
      global.set_flat_params(fedavg_aggregate(locals, sizes));
      d.snapshots["front"] = global.flat_params();
    }
    ctx.board.post(std::move(d));
  }
}

void close_all(const Links& links) {
  for (Endpoint* e : links.clients)
    if (e) e->close();
}

void sfl_main_v1(const RoleContext& ctx, const Links& links) {
  const ExperimentSetup& s = ctx.setup;
  const std::size_t K = s.plan.client_count();
  Network global = std::move(initial_portions(s)[1]);
  const auto sizes = shard_sizes(s);
  for (std::size_t r = 0; r < s.train.rounds; ++r) {
    std::vector<Network> copies(K, global);
    std::vector<RoundStats> stats(K);
    std::vector<std::exception_ptr> errors(K);
    std::vector<std::thread> sessions;
    for (std::size_t k = 0; k < K; ++k) {
      sessions.emplace_back([&, k] {
        try {
          while (serve_batch(*links.clients.at(k), copies[k], s, stats[k])) {
          }
        } catch (...) {
          errors[k] = std::current_exception();
          close_all(links);
        }
      });
    }
    for (auto& t : sessions) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
    std::vector<std::vector<float>> flats;
    RoundStats st;
    for (std::size_t k = 0; k < K; ++k) {
      flats.push_back(copies[k].flat_params());
      st += stats[k];
    }
    global.set_flat_params(fedavg_aggregate(flats, sizes));
    Deposit d = deposit(kServer, r, st);
    d.snapshots["server"] = global.flat_params();
    ctx.board.post(std::move(d));
  }
}

void sfl_main_v2(const RoleContext& ctx, const Links& links) {
  const ExperimentSetup& s = ctx.setup;
  const std::size_t K = s.plan.client_count();
  Network net = std::move(initial_portions(s)[1]);
  for (std::size_t r = 0; r < s.train.rounds; ++r) {
    RoundStats st;
    std::vector<std::size_t> active(K);
    for (std::size_t k = 0; k < K; ++k) active[k] = k;
    while (!active.empty()) {
      std::vector<std::size_t> still;
      for (std::size_t k : active)
        if (serve_batch(*links.clients.at(k), net, s, st)) still.push_back(k);
      active = std::move(still);
    }
    Deposit d = deposit(kServer, r, st);
    d.snapshots["server"] = net.flat_params();
    ctx.board.post(std::move(d));
  }
}

void fl_client(const RoleContext& ctx, std::size_t k, const Links& links) {
  const ExperimentSetup& s = ctx.setup;
  Network net = std::move(initial_portions(s)[0]);
  const auto& shard = s.plan.indices.at(k);
  for (std::size_t r = 0; r < s.train.rounds; ++r) {
    recv_params(*links.server, {&net});
    Rng dp_rng = make_rng(s.train.seed, {stream::kDpNoise, k, r});
    RoundStats st;
    for (std::size_t e = 0; e < s.train.local_epochs; ++e)
      for (const auto& idx :
           epoch_batches(shard, s.train.batch, ctx.shuffle_seed, k, global_epoch(s, r, e)))
        local_step(net, ctx.train.batch(idx), ctx.train.batch_labels(idx), s,
                   s.privacy.dp_sgd, dp_rng, st);
    send_params(*links.server, {&net});
    ctx.board.post(client_deposit(k, r, st, links));
  }
}

void fl_server(const RoleContext& ctx, const Links& links) {
  const ExperimentSetup& s = ctx.setup;
  const std::size_t K = s.plan.client_count();
  Network global = std::move(initial_portions(s)[0]);
  const auto sizes = shard_sizes(s);
  for (std::size_t r = 0; r < s.train.rounds; ++r) {
    for (std::size_t k = 0; k < K; ++k) send_params(*links.clients.at(k), {&global});
    std::vector<std::vector<float>> locals;
    for (std::size_t k = 0; k < K; ++k) {
      Network local = global;
      recv_params(*links.clients.at(k), {&local});
      locals.push_back(local.flat_params());
    }
    if (s.privacy.dp_fl) {
      const auto w = global.flat_params();
      for (auto& l : locals)
        for (std::size_t i = 0; i < l.size(); ++i) l[i] -= w[i];
      Rng rng = make_rng(s.train.seed, {stream::kDpNoise, K, r});
      global.set_flat_params(privacy::dp_fl_server_update(w, locals, s.privacy.clip_norm,
                                                          s.privacy.noise_multiplier, rng));
    } else {
      global.set_flat_params(fedavg_aggregate(locals, sizes));
    }
    Deposit d = deposit(kServer, r);
    d.snapshots["model"] = global.flat_params();
    ctx.board.post(std::move(d));
  }
}

void vertical_client(const RoleContext& ctx, std::size_t k, const Links& links) {
  const ExperimentSetup& s = ctx.setup;
  const FeatureRange range = s.plan.features.at(k);
  const Dataset local = ctx.train.feature_slice(range.begin, range.end);
  FrontTrainer front(s, std::move(initial_portions(s)[k]), k);
  // Every party walks the same sample order so rows line up at the server.
  const auto& shard = s.plan.indices.at(0);
  for (std::size_t r = 0; r < s.train.rounds; ++r) {
    front.begin_round(r, local, shard);
    RoundStats st;
    for (std::size_t e = 0; e < s.train.local_epochs; ++e) {
      for (const auto& idx :
           epoch_batches(shard, s.train.batch, ctx.shuffle_seed, 0, global_epoch(s, r, e))) {
        send_tensor(*links.server, MsgType::kSmash, front.forward(local.batch(idx)));
        if (k == 0)
          links.server->send({MsgType::kLabels, codec::encode_labels(ctx.train.batch_labels(idx))});
        front.backward(recv_tensor(*links.server, MsgType::kSmashGrad), st);
      }
    }
    send_done(*links.server);
    Deposit d = client_deposit(k, r, st, links);
    d.snapshots["front"] = front.net.flat_params();
    ctx.board.post(std::move(d));
  }
}

void vertical_server(const RoleContext& ctx, const Links& links) {
  const ExperimentSetup& s = ctx.setup;
  const std::size_t K = s.plan.client_count();
  Network net = std::move(initial_portions(s).back());
  for (std::size_t r = 0; r < s.train.rounds; ++r) {
    RoundStats st;
    for (;;) {
      std::vector<Tensor> parts;
      std::vector<uint32_t> y;
      std::size_t done = 0;
      for (std::size_t k = 0; k < K; ++k) {
        Endpoint& ep = *links.clients.at(k);
        transport::WireMessage m = ep.recv();
        if (is_done(m)) {
          ++done;
          continue;
        }
        if (m.type != MsgType::kSmash)
          throw TransportError(std::string("expected SMASH, got ") + msg_type_name(m.type));
        parts.push_back(codec::decode_tensor(m.payload));
        if (k == 0) y = codec::decode_labels(ep.recv_expect(MsgType::kLabels).payload);
      }
      if (done == K) break;
      if (done != 0) throw TransportError("vertical clients ended their epoch out of step");
      const Tensor grad = loss_step(net, merge_forward(parts, s.merge), y, s, st);
      const auto grads = merge_backward(parts, grad, s.merge);
      for (std::size_t k = 0; k < K; ++k)
        send_tensor(*links.clients[k], MsgType::kSmashGrad, grads[k]);
    }
    Deposit d = deposit(kServer, r, st);
    d.snapshots["server"] = net.flat_params();
    ctx.board.post(std::move(d));
  }
}

}  // namespace

void run_central(const RoleContext& ctx) {
  const ExperimentSetup& s = ctx.setup;
  Network net = std::move(initial_portions(s)[0]);
  std::vector<std::size_t> all(ctx.train.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  Rng unused;
  for (std::size_t r = 0; r < s.train.rounds; ++r) {
    RoundStats st;
    for (std::size_t e = 0; e < s.train.local_epochs; ++e)
      for (const auto& idx :
           epoch_batches(all, s.train.batch, ctx.shuffle_seed, 0, global_epoch(s, r, e)))
        local_step(net, ctx.train.batch(idx), ctx.train.batch_labels(idx), s, false, unused, st);
    Deposit d = deposit("central", r, st);
    d.snapshots["model"] = net.flat_params();
    ctx.board.post(std::move(d));
  }
}

void run_role(const RoleContext& ctx, const std::string& role, const Links& links) {
  const Protocol p = ctx.setup.protocol;
  const bool server = role == kServer, fed = role == kFed;
  std::size_t k = 0;
  if (!server && !fed) {
    if (role.rfind("client/", 0) != 0) throw ConfigError("unknown role '" + role + "'");
    k = std::stoul(role.substr(7));
    if (k >= ctx.setup.plan.client_count()) throw ConfigError("no such client: " + role);
  }
  switch (p) {
    case Protocol::kCentral:
      throw ConfigError("the centralized baseline has no roles");
    case Protocol::kSl:
    case Protocol::kSlNoSync:
    case Protocol::kSlUShaped:
      if (fed) break;
      return server ? sl_server(ctx, links) : sl_client(ctx, k, links);
    case Protocol::kSlVertical:
      if (fed) break;
      return server ? vertical_server(ctx, links) : vertical_client(ctx, k, links);
    case Protocol::kFl:
      if (fed) break;
      return server ? fl_server(ctx, links) : fl_client(ctx, k, links);
    case Protocol::kSflV1:
    case Protocol::kSflV2:
      if (fed) return sfl_fed(ctx, links);
      if (!server) return sfl_client(ctx, k, links);
      return p == Protocol::kSflV1 ? sfl_main_v1(ctx, links) : sfl_main_v2(ctx, links);
  }
  throw ConfigError("role '" + role + "' does not take part in " + protocol_name(p));
}

}  // namespace sfl::roles
