#include <chrono>
#include <cstdio>
#include <exception>
#include <mutex>
#include <random>
#include <thread>

#include "internal.hpp"
#include "sfl/error.hpp"
#include "sfl/roles.hpp"

namespace sfl {

namespace {

using roles::Deposit;
using roles::RoundBoard;

bool is_split(Protocol p) { return p != Protocol::kCentral && p != Protocol::kFl; }

void validate_setup(const ExperimentSetup& s, const Dataset& train, const Dataset& test) {
  s.train.validate();
  s.privacy.validate();
  validate_model_spec(s.model);
  train.validate();
  test.validate();
  const bool vertical = s.protocol == Protocol::kSlVertical;
  if (vertical) {
    if (s.model.input_shape.size() != 1 || s.model.input_shape[0] != train.sample_size())
      throw ConfigError("vertical: model input must be the flat feature width");
  } else if (s.model.input_shape != train.sample_shape) {
    throw ConfigError("model input " + shape_str(s.model.input_shape) +
                      " does not match the data " + shape_str(train.sample_shape));
  }
  if (test.sample_size() != train.sample_size()) throw DataError("train/test widths differ");
  if (s.protocol != Protocol::kCentral) {
    const std::size_t K = s.plan.client_count();
    if (K == 0) throw ConfigError("at least one client is required");
    if (vertical != (s.plan.scheme == PartitionScheme::kVertical))
      throw ConfigError("vertical training needs a vertical partition and vice versa");
    if (vertical && s.plan.features.size() != K)
      throw ConfigError("vertical: one feature range per client required");
    for (const auto& shard : s.plan.indices) {
      if (shard.empty()) throw ConfigError("a client holds no samples");
      for (std::size_t i : shard)
        if (i >= train.size()) throw ConfigError("partition index out of range");
    }
  }
  const auto& p = s.privacy;
  if ((p.laplace || p.nopeek) && !is_split(s.protocol))
    throw ConfigError("laplace/nopeek apply to split protocols only");
  if (p.dp_sgd && s.protocol == Protocol::kCentral)
    throw ConfigError("dp_sgd needs a client portion");
  if (p.dp_fl && s.protocol != Protocol::kFl) throw ConfigError("dp_fl applies to fl only");
  if (p.nopeek && s.train.batch > p.nopeek_max_batch)
    throw ConfigError("nopeek: batch " + std::to_string(s.train.batch) + " exceeds the cap of " +
                      std::to_string(p.nopeek_max_batch));
  // Builds and splits once so bad cuts surface as configuration errors.
  try {
    roles::initial_portions(s);
  } catch (const ShapeError& e) {
    throw ConfigError(std::string("model: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
}

// Runs every role on its own thread; the first failure closes every channel
// so that blocked peers unwind, then gets rethrown.
class RoleGroup {
 public:
  explicit RoleGroup(std::vector<transport::Endpoint*> endpoints)
      : endpoints_(std::move(endpoints)) {}

  template <typename Fn>
  void spawn(Fn fn) {
    threads_.emplace_back([this, fn = std::move(fn)] {
      try {
        fn();
      } catch (...) {
        fail(std::current_exception());
      }
    });
  }

  void join() {
    for (auto& t : threads_) t.join();
    threads_.clear();
    if (error_) std::rethrow_exception(error_);
  }

 private:
  void fail(std::exception_ptr e) {
    {
      std::lock_guard lk(mu_);
      if (error_) return;
      error_ = e;
    }
    for (auto* ep : endpoints_) ep->close();
  }

  std::vector<transport::Endpoint*> endpoints_;
  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::exception_ptr error_;
};

std::size_t client_index(const std::string& role) { return std::stoul(role.substr(7)); }

void run_roles(const roles::RoleContext& ctx, transport::CommLedger& ledger) {
  const ExperimentSetup& s = ctx.setup;
  std::map<std::string, roles::Links> links;
  const auto names = roles::role_names(s);
  for (const auto& n : names) links[n].clients.resize(s.plan.client_count(), nullptr);
  std::vector<transport::EndpointPtr> owned;
  for (const auto& [a, b] : roles::channels(s)) {
    auto pair = s.transport == TransportKind::kTcp ? transport::make_tcp_pair(&ledger, a, b)
                                                   : transport::make_inproc_pair(&ledger, a, b);
    if (b == roles::kServer) {
      links[a].server = pair.first.get();
      links[b].clients[client_index(a)] = pair.second.get();
    } else if (b == roles::kFed) {
      links[a].fed = pair.first.get();
      links[b].clients[client_index(a)] = pair.second.get();
    } else {
      links[a].next = pair.first.get();
      links[b].prev = pair.second.get();
    }
    owned.push_back(std::move(pair.first));
    owned.push_back(std::move(pair.second));
  }
  std::vector<transport::Endpoint*> raw;
  for (auto& e : owned) raw.push_back(e.get());
  RoleGroup group(raw);
  for (const auto& n : names) {
    const roles::Links* l = &links.at(n);
    group.spawn([&ctx, n, l] { roles::run_role(ctx, n, *l); });
  }
  group.join();
}

std::vector<float> need(const RoundBoard& board, const std::string& role, std::size_t r,
                        const std::string& key) {
  const auto* v = board.snapshot(role, r, key);
  if (!v) throw std::logic_error(role + " left no '" + key + "' snapshot for round " +
                                 std::to_string(r));
  return *v;
}

// Model state at the end of round r, as portions in forward order.
std::vector<Network> portions_at(const ExperimentSetup& s, const RoundBoard& board,
                                 std::size_t r) {
  std::vector<Network> nets = roles::initial_portions(s);
  const std::size_t K = s.plan.client_count();
  const std::string last = roles::client_name(K ? K - 1 : 0);
  switch (s.protocol) {
    case Protocol::kCentral:
      nets[0].set_flat_params(need(board, "central", r, "model"));
      break;
    case Protocol::kFl:
      nets[0].set_flat_params(need(board, roles::kServer, r, "model"));
      break;
    case Protocol::kSl:
    case Protocol::kSlNoSync:
      nets[0].set_flat_params(need(board, last, r, "front"));
      nets[1].set_flat_params(need(board, roles::kServer, r, "server"));
      break;
    case Protocol::kSlUShaped:
      nets[0].set_flat_params(need(board, last, r, "front"));
      nets[1].set_flat_params(need(board, roles::kServer, r, "server"));
      nets[2].set_flat_params(need(board, last, r, "tail"));
      break;
    case Protocol::kSlVertical:
      for (std::size_t k = 0; k < K; ++k)
        nets[k].set_flat_params(need(board, roles::client_name(k), r, "front"));
      nets[K].set_flat_params(need(board, roles::kServer, r, "server"));
      break;
    case Protocol::kSflV1:
    case Protocol::kSflV2: {
      const auto* synced = board.snapshot(roles::kFed, r, "front");
      nets[0].set_flat_params(synced ? *synced : need(board, roles::client_name(0), r, "front"));
      nets[1].set_flat_params(need(board, roles::kServer, r, "server"));
      break;
    }
  }
  return nets;
}

EvalResult evaluate_portions(const ExperimentSetup& s, const std::vector<Network>& nets,
                             const Dataset& test) {
  if (s.protocol == Protocol::kSlVertical) {
    const std::vector<Network> fronts(nets.begin(), nets.end() - 1);
    return evaluate_vertical(fronts, nets.back(), s.plan.features, s.merge, test, s.eval_batch);
  }
  Network full = nets[0];
  for (std::size_t i = 1; i < nets.size(); ++i) full = Network::concat(full, nets[i]);
  return evaluate(full, test, s.eval_batch);
}

// Raw test rows and what the first client would transmit for them.
std::pair<Tensor, Tensor> leakage_sample(const ExperimentSetup& s,
                                         const std::vector<Network>& nets, const Dataset& test,
                                         std::size_t r) {
  const std::size_t m = std::min<std::size_t>(256, test.size());
  std::vector<std::size_t> idx(m);
  for (std::size_t i = 0; i < m; ++i) idx[i] = i;
  Tensor raw = test.batch(idx);
  if (s.protocol == Protocol::kSlVertical) {
    const FeatureRange f = s.plan.features[0];
    raw = test.feature_slice(f.begin, f.end).batch(idx);
  }
  Tensor smashed = nets[0].forward(raw);
  if (s.privacy.laplace) {
    Rng rng = make_rng(s.train.seed, {stream::kLaplace, ~0ull, r});
    smashed = privacy::laplace_smash(smashed, s.privacy.laplace_epsilon,
                                     privacy::SmashBounds::of(smashed), rng);
  }
  return {std::move(raw), std::move(smashed)};
}

}  // namespace

RunMetrics run_experiment(const ExperimentSetup& setup, const Dataset& train,
                          const Dataset& test) {
  validate_setup(setup, train, test);
  const auto t0 = std::chrono::steady_clock::now();
  uint64_t shuffle_seed = setup.train.seed;
  if (!setup.train.deterministic) {
    std::random_device rd;
    shuffle_seed = (static_cast<uint64_t>(rd()) << 32) ^ rd();
  }
  RoundBoard board;
  transport::CommLedger ledger;
  const roles::RoleContext ctx{setup, train, board, shuffle_seed};
  if (setup.protocol == Protocol::kCentral) roles::run_central(ctx);
  else run_roles(ctx, ledger);

  RunMetrics out;
  std::vector<Network> nets = roles::initial_portions(setup);
  out.initial = evaluate_portions(setup, nets, test);
  out.final_eval = out.initial;
  const bool leak = setup.leakage_report && is_split(setup.protocol);
  for (std::size_t r = 0; r < setup.train.rounds; ++r) {
    EpochMetrics em;
    em.epoch = r + 1;
    roles::RoundStats st;
    for (const Deposit& d : board.round(r)) {
      st += d.stats;
      if (d.is_client) {
        em.bytes_up += d.bytes_up;
        em.bytes_down += d.bytes_down;
      }
    }
    em.train_loss = st.batches ? st.loss_sum / static_cast<double>(st.batches) : 0.0;
    em.train_accuracy = st.seen ? static_cast<double>(st.correct) / static_cast<double>(st.seen) : 0.0;
    nets = portions_at(setup, board, r);
    const EvalResult ev = evaluate_portions(setup, nets, test);
    em.test_loss = ev.loss;
    em.test_accuracy = ev.accuracy;
    if (leak) {
      auto [raw, smashed] = leakage_sample(setup, nets, test, r);
      const auto rep = privacy::smashed_leakage_report(raw, smashed, setup.leakage_bins);
      em.dcor = rep.dcor;
      em.kl_nats = rep.kl_nats;
    }
    out.final_eval = ev;
    out.epochs.push_back(em);
  }
  if (is_split(setup.protocol)) {
    const std::size_t r = setup.train.rounds ? setup.train.rounds - 1 : 0;
    auto [raw, smashed] = leakage_sample(setup, nets, test, r);
    out.leakage_raw = std::move(raw);
    out.leakage_smashed = std::move(smashed);
  }
  out.final_model.portions = std::move(nets);
  out.ledger = ledger.report();
  out.ledger_entries = ledger.entries();
  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

std::string RunMetrics::to_csv(bool with_leakage) const {
  std::string s = "epoch,phase,loss,accuracy,bytes_up,bytes_down";
  if (with_leakage) s += ",dcor,kl_nats";
  s += "\n";
  char buf[256];
  auto opt = [](const std::optional<double>& v) { return v ? *v : 0.0; };
  for (const auto& e : epochs) {
    for (int phase = 0; phase < 2; ++phase) {
      const bool tr = phase == 0;
      std::snprintf(buf, sizeof buf, "%zu,%s,%.9g,%.9g,%llu,%llu", e.epoch, tr ? "train" : "test",
                    tr ? e.train_loss : e.test_loss, tr ? e.train_accuracy : e.test_accuracy,
                    static_cast<unsigned long long>(e.bytes_up),
                    static_cast<unsigned long long>(e.bytes_down));
      s += buf;
      if (with_leakage) {
        std::snprintf(buf, sizeof buf, ",%.9g,%.9g", opt(e.dcor), opt(e.kl_nats));
        s += buf;
      }
      s += "\n";
    }
  }
  return s;
}

namespace {
RunMetrics run_as(ExperimentSetup s, Protocol p, const Dataset& train, const Dataset& test) {
  s.protocol = p;
  return run_experiment(s, train, test);
}
}  // namespace

RunMetrics run_centralized(ExperimentSetup s, const Dataset& tr, const Dataset& te) {
  return run_as(std::move(s), Protocol::kCentral, tr, te);
}
RunMetrics run_sl(ExperimentSetup s, const Dataset& tr, const Dataset& te) {
  return run_as(std::move(s), Protocol::kSl, tr, te);
}
RunMetrics run_sl_no_sync(ExperimentSetup s, const Dataset& tr, const Dataset& te) {
  return run_as(std::move(s), Protocol::kSlNoSync, tr, te);
}
RunMetrics run_sl_ushaped(ExperimentSetup s, const Dataset& tr, const Dataset& te) {
  return run_as(std::move(s), Protocol::kSlUShaped, tr, te);
}
RunMetrics run_sl_vertical(ExperimentSetup s, const Dataset& tr, const Dataset& te) {
  return run_as(std::move(s), Protocol::kSlVertical, tr, te);
}
RunMetrics run_fl(ExperimentSetup s, const Dataset& tr, const Dataset& te) {
  return run_as(std::move(s), Protocol::kFl, tr, te);
}
RunMetrics run_sfl(ExperimentSetup s, bool v2, const Dataset& tr, const Dataset& te) {
  return run_as(std::move(s), v2 ? Protocol::kSflV2 : Protocol::kSflV1, tr, te);
}

}  // namespace sfl
