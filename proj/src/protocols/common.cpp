#include <algorithm>
#include <cmath>
#include <cstring>

#include "sfl/error.hpp"
#include "sfl/loss.hpp"
#include "sfl/roles.hpp"
#include "internal.hpp"

namespace sfl {

namespace {

template <typename E, std::size_t N>
std::optional<E> lookup(const std::pair<E, const char*> (&table)[N], const std::string& s) {
  for (const auto& [e, name] : table)
    if (s == name) return e;
  return std::nullopt;
}

template <typename E, std::size_t N>
const char* name_of(const std::pair<E, const char*> (&table)[N], E e) {
  for (const auto& [v, name] : table)
    if (v == e) return name;
  return "?";
}

const std::pair<Protocol, const char*> kProtocols[] = {
    {Protocol::kCentral, "central"},       {Protocol::kFl, "fl"},
    {Protocol::kSl, "sl"},                 {Protocol::kSlNoSync, "sl_no_sync"},
    {Protocol::kSlUShaped, "sl_ushaped"},  {Protocol::kSlVertical, "sl_vertical"},
    {Protocol::kSflV1, "sfl_v1"},          {Protocol::kSflV2, "sfl_v2"},
};
const std::pair<RelayMode, const char*> kRelays[] = {
    {RelayMode::kCentralized, "centralized"},
    {RelayMode::kPeerToPeer, "p2p"},
    {RelayMode::kNone, "none"},
};
const std::pair<MergeMode, const char*> kMerges[] = {
    {MergeMode::kConcat, "concat"}, {MergeMode::kAverage, "avg"}, {MergeMode::kMax, "max"},
    {MergeMode::kSum, "sum"},       {MergeMode::kMult, "mult"},
};

}  // namespace

const char* protocol_name(Protocol p) { return name_of(kProtocols, p); }
std::optional<Protocol> parse_protocol(const std::string& s) { return lookup(kProtocols, s); }
const char* relay_name(RelayMode m) { return name_of(kRelays, m); }
std::optional<RelayMode> parse_relay(const std::string& s) { return lookup(kRelays, s); }
const char* merge_name(MergeMode m) { return name_of(kMerges, m); }
std::optional<MergeMode> parse_merge(const std::string& s) { return lookup(kMerges, s); }

void TrainingConfig::validate() const {
  if (!(lr > 0.0f) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (local_epochs == 0) throw ConfigError("local epochs must be >= 1");
  if (batch == 0) throw ConfigError("batch must be >= 1");
  if (sync_interval == 0) throw ConfigError("sync_interval must be >= 1");
}

std::vector<float> fedavg_aggregate(const std::vector<std::vector<float>>& portions,
                                    std::span<const std::size_t> shard_sizes) {
  if (portions.empty()) throw std::invalid_argument("fedavg: no portions");
  if (portions.size() != shard_sizes.size())
    throw std::invalid_argument("fedavg: one shard size per portion required");
  const std::size_t p = portions[0].size();
  double n = 0.0;
  for (std::size_t s : shard_sizes) n += static_cast<double>(s);
  if (n <= 0.0) throw std::invalid_argument("fedavg: empty shards");
  std::vector<double> acc(p, 0.0);
  for (std::size_t k = 0; k < portions.size(); ++k) {
    if (portions[k].size() != p) throw ShapeError("fedavg: portion sizes differ");
    const double w = static_cast<double>(shard_sizes[k]) / n;
    for (std::size_t i = 0; i < p; ++i) acc[i] += w * static_cast<double>(portions[k][i]);
  }
  std::vector<float> out(p);
  for (std::size_t i = 0; i < p; ++i) out[i] = static_cast<float>(acc[i]);
  return out;
}

namespace {

template <typename Logits>
EvalResult eval_batches(const Dataset& test, std::size_t batch, Logits&& logits_of) {
  EvalResult r;
  const std::size_t n = test.size();
  if (n == 0) return r;
  if (batch == 0) batch = 256;
  double loss = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t b = 0; b < n; b += batch) {
    const std::size_t e = std::min(n, b + batch);
    idx.resize(e - b);
    for (std::size_t i = b; i < e; ++i) idx[i - b] = i;
    const auto y = test.batch_labels(idx);
    const LossResult lr = cross_entropy_loss(logits_of(idx), y);
    loss += lr.loss * static_cast<double>(e - b);
    correct += lr.correct;
  }
  r.loss = loss / static_cast<double>(n);
  r.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return r;
}

}  // namespace

EvalResult evaluate(const Network& model, const Dataset& test, std::size_t batch) {
  return eval_batches(test, batch, [&](std::span<const std::size_t> idx) {
    return model.forward(test.batch(idx));
  });
}

EvalResult evaluate(const SplitModel& model, const Dataset& test, std::size_t batch) {
  return eval_batches(test, batch, [&](std::span<const std::size_t> idx) {
    return model.server.forward(model.client.forward(test.batch(idx)));
  });
}

EvalResult evaluate_vertical(const std::vector<Network>& fronts, const Network& server,
                             const std::vector<FeatureRange>& ranges, MergeMode merge,
                             const Dataset& test, std::size_t batch) {
  std::vector<Dataset> slices;
  for (const auto& r : ranges) slices.push_back(test.feature_slice(r.begin, r.end));
  return eval_batches(test, batch, [&](std::span<const std::size_t> idx) {
    std::vector<Tensor> parts;
    for (std::size_t k = 0; k < fronts.size(); ++k)
      parts.push_back(fronts[k].forward(slices[k].batch(idx)));
    return server.forward(merge_forward(parts, merge));
  });
}

Tensor merge_forward(const std::vector<Tensor>& parts, MergeMode mode) {
  if (parts.empty()) throw std::invalid_argument("merge: no parts");
  const std::size_t b = parts[0].dim(0);
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != b) throw ShapeError("merge: parts must be [batch, width]");
    if (mode != MergeMode::kConcat && p.shape() != parts[0].shape())
      throw ShapeError("merge: element-wise merges need equal shapes");
  }
  if (mode == MergeMode::kConcat) {
    std::size_t width = 0;
    for (const auto& p : parts) width += p.dim(1);
    Tensor out({b, width});
    for (std::size_t i = 0; i < b; ++i) {
      std::size_t off = 0;
      for (const auto& p : parts) {
        const std::size_t w = p.dim(1);
        std::memcpy(out.ptr() + i * width + off, p.ptr() + i * w, w * sizeof(float));
        off += w;
      }
    }
    return out;
  }
  Tensor out = parts[0];
  const float k = static_cast<float>(parts.size());
  for (std::size_t j = 1; j < parts.size(); ++j) {
    for (std::size_t i = 0; i < out.numel(); ++i) {
      const float v = parts[j][i];
      switch (mode) {
        case MergeMode::kAverage:
        case MergeMode::kSum: out[i] += v; break;
        case MergeMode::kMax: out[i] = v > out[i] ? v : out[i]; break;
        case MergeMode::kMult: out[i] *= v; break;
        default: break;
      }
    }
  }
  if (mode == MergeMode::kAverage)
    for (float& v : out.data()) v /= k;
  return out;
}

std::vector<Tensor> merge_backward(const std::vector<Tensor>& parts, const Tensor& grad,
                                   MergeMode mode) {
  std::vector<Tensor> out;
  out.reserve(parts.size());
  if (mode == MergeMode::kConcat) {
    const std::size_t b = grad.dim(0), width = grad.dim(1);
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t w = p.dim(1);
      Tensor g({b, w});
      for (std::size_t i = 0; i < b; ++i)
        std::memcpy(g.ptr() + i * w, grad.ptr() + i * width + off, w * sizeof(float));
      off += w;
      out.push_back(std::move(g));
    }
    if (off != width) throw ShapeError("merge: gradient width mismatch");
    return out;
  }
  for (const auto& p : parts)
    if (p.shape() != grad.shape()) throw ShapeError("merge: gradient shape mismatch");
  const std::size_t n = grad.numel(), k = parts.size();
  for (std::size_t j = 0; j < k; ++j) out.emplace_back(grad.shape());
  for (std::size_t i = 0; i < n; ++i) {
    switch (mode) {
      case MergeMode::kSum:
        for (std::size_t j = 0; j < k; ++j) out[j][i] = grad[i];
        break;
      case MergeMode::kAverage:
        for (std::size_t j = 0; j < k; ++j) out[j][i] = grad[i] / static_cast<float>(k);
        break;
      case MergeMode::kMax: {
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j)
          if (parts[j][i] > parts[best][i]) best = j;
        out[best][i] = grad[i];
        break;
      }
      case MergeMode::kMult:
        for (std::size_t j = 0; j < k; ++j) {
          float prod = grad[i];
          for (std::size_t m = 0; m < k; ++m)
            if (m != j) prod *= parts[m][i];
          out[j][i] = prod;
        }
        break;
      default: break;
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::span<const std::size_t> shard,
                                                    std::size_t batch, uint64_t seed,
                                                    std::size_t client, std::size_t epoch_index) {
  std::vector<std::size_t> order(shard.begin(), shard.end());
  std::sort(order.begin(), order.end());
  Rng rng = make_rng(seed, {stream::kShuffle, client, epoch_index});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < order.size(); b += batch)
    out.emplace_back(order.begin() + b, order.begin() + std::min(order.size(), b + batch));
  return out;
}

namespace roles {

RoundStats& RoundStats::operator+=(const RoundStats& o) {
  loss_sum += o.loss_sum;
  batches += o.batches;
  correct += o.correct;
  seen += o.seen;
  return *this;
}

void RoundBoard::post(Deposit d) {
  std::lock_guard lk(mu_);
  deposits_.push_back(std::move(d));
}

std::vector<Deposit> RoundBoard::round(std::size_t r) const {
  std::lock_guard lk(mu_);
  std::vector<Deposit> out;
  for (const auto& d : deposits_)
    if (d.round == r) out.push_back(d);
  // Stable order regardless of thread timing.
  std::sort(out.begin(), out.end(),
            [](const Deposit& a, const Deposit& b) { return a.role < b.role; });
  return out;
}

const std::vector<float>* RoundBoard::snapshot(const std::string& role, std::size_t r,
                                               const std::string& key) const {
  std::lock_guard lk(mu_);
  for (const auto& d : deposits_) {
    if (d.role != role || d.round != r) continue;
    auto it = d.snapshots.find(key);
    if (it != d.snapshots.end()) return &it->second;
  }
  return nullptr;
}

std::string client_name(std::size_t k) { return "client/" + std::to_string(k); }

std::vector<std::string> role_names(const ExperimentSetup& setup) {
  std::vector<std::string> out;
  if (setup.protocol == Protocol::kCentral) return out;
  for (std::size_t k = 0; k < setup.plan.client_count(); ++k) out.push_back(client_name(k));
  out.push_back(kServer);
  if (setup.protocol == Protocol::kSflV1 || setup.protocol == Protocol::kSflV2)
    out.push_back(kFed);
  return out;
}

std::vector<std::pair<std::string, std::string>> channels(const ExperimentSetup& setup) {
  std::vector<std::pair<std::string, std::string>> out;
  if (setup.protocol == Protocol::kCentral) return out;
  const std::size_t K = setup.plan.client_count();
  for (std::size_t k = 0; k < K; ++k) out.emplace_back(client_name(k), kServer);
  if (setup.protocol == Protocol::kSflV1 || setup.protocol == Protocol::kSflV2)
    for (std::size_t k = 0; k < K; ++k) out.emplace_back(client_name(k), kFed);
  const bool relayed = setup.protocol == Protocol::kSl || setup.protocol == Protocol::kSlUShaped;
  if (relayed && setup.relay == RelayMode::kPeerToPeer && K > 1)
    for (std::size_t k = 0; k < K; ++k) out.emplace_back(client_name(k), client_name((k + 1) % K));
  return out;
}

std::vector<Network> initial_portions(const ExperimentSetup& setup) {
  const ModelSpec& m = setup.model;
  const uint64_t seed = setup.train.seed;
  switch (setup.protocol) {
    case Protocol::kCentral:
    case Protocol::kFl:
      return {build_network(m, seed)};
    case Protocol::kSl:
    case Protocol::kSlNoSync:
    case Protocol::kSflV1:
    case Protocol::kSflV2: {
      SplitModel s = split(build_network(m, seed), setup.cut);
      return {std::move(s.client), std::move(s.server)};
    }
    case Protocol::kSlUShaped: {
      UShapedModel u = split_ushaped(build_network(m, seed), setup.cut, setup.back_cut);
      return {std::move(u.front), std::move(u.middle), std::move(u.tail)};
    }
    case Protocol::kSlVertical: {
      const std::vector<LayerSpec> front(m.layers.begin(), m.layers.begin() + setup.cut + 1);
      const std::vector<LayerSpec> back(m.layers.begin() + setup.cut + 1, m.layers.end());
      std::vector<Network> out;
      std::size_t width = 0;
      for (std::size_t k = 0; k < setup.plan.features.size(); ++k) {
        Network f({setup.plan.features[k].size()}, front);
        if (f.output_shape().size() != 1)
          throw ConfigError("vertical: the client portion must emit flat activations");
        f.init_xavier(k == 0 ? seed : derive_seed(seed, {k}), 0);
        if (setup.merge == MergeMode::kConcat || k == 0) width += f.output_shape()[0];
        out.push_back(std::move(f));
      }
      Network server({width}, back);
      server.init_xavier(seed, setup.cut + 1);
      out.push_back(std::move(server));
      return out;
    }
  }
  throw std::logic_error("unhandled protocol");
}

}  // namespace roles
}  // namespace sfl
