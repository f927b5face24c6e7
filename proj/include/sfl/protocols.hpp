#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sfl/data.hpp"
#include "sfl/model.hpp"
#include "sfl/privacy.hpp"
#include "sfl/transport.hpp"

namespace sfl {

enum class Protocol { kCentral, kFl, kSl, kSlNoSync, kSlUShaped, kSlVertical, kSflV1, kSflV2 };
enum class RelayMode { kCentralized, kPeerToPeer, kNone };
enum class MergeMode { kConcat, kAverage, kMax, kSum, kMult };
enum class TransportKind { kInProc, kTcp };

const char* protocol_name(Protocol p);
std::optional<Protocol> parse_protocol(const std::string& s);
const char* relay_name(RelayMode m);
std::optional<RelayMode> parse_relay(const std::string& s);
const char* merge_name(MergeMode m);
std::optional<MergeMode> parse_merge(const std::string& s);

struct TrainingConfig {
  float lr = 0.05f;
  std::size_t local_epochs = 1;  // E
  std::size_t batch = 32;
  std::size_t rounds = 1;        // metric rows; each round runs E local epochs
  uint64_t seed = 42;
  bool deterministic = true;
  std::size_t sync_interval = 1;  // SFL: rounds between fed-server syncs

  void validate() const;
};

struct ExperimentSetup {
  Protocol protocol = Protocol::kSl;
  ModelSpec model;
  std::size_t cut = 1;       // last client-side layer
  std::size_t back_cut = 0;  // u-shaped: last server-side layer
  RelayMode relay = RelayMode::kCentralized;
  MergeMode merge = MergeMode::kConcat;
  TransportKind transport = TransportKind::kInProc;
  TrainingConfig train;
  privacy::PrivacyConfig privacy;
  PartitionPlan plan;
  bool leakage_report = false;
  std::size_t leakage_bins = 32;
  std::size_t eval_batch = 256;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double test_loss = 0.0;
  double test_accuracy = 0.0;
  uint64_t bytes_up = 0;    // cumulative payload bytes sent by clients
  uint64_t bytes_down = 0;  // cumulative payload bytes received by clients
  std::optional<double> dcor;
  std::optional<double> kl_nats;
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Full-model parameters recovered after the final round.
struct FinalModel {
  std::vector<Network> portions;  // in forward order (vertical: fronts then server)
};

struct RunMetrics {
  std::vector<EpochMetrics> epochs;
  EvalResult initial;  // untrained model on the test set
  EvalResult final_eval;
  transport::LedgerReport ledger;
  std::map<transport::LedgerKey, transport::LedgerCounts> ledger_entries;
  FinalModel final_model;
  // Last-round leakage sample (raw test rows and the smashed data a client
  // would transmit for them); empty for protocols without a cut.
  Tensor leakage_raw;
  Tensor leakage_smashed;
  double wall_seconds = 0.0;

  // Header: epoch,phase,loss,accuracy,bytes_up,bytes_down[,dcor,kl_nats].
  // Two rows per round: phase=train and phase=test.
  std::string to_csv(bool with_leakage) const;
};

RunMetrics run_experiment(const ExperimentSetup& setup, const Dataset& train, const Dataset& test);

// Named entry points; each forces `setup.protocol` and delegates to
// run_experiment.
RunMetrics run_centralized(ExperimentSetup setup, const Dataset& train, const Dataset& test);
RunMetrics run_sl(ExperimentSetup setup, const Dataset& train, const Dataset& test);
RunMetrics run_sl_no_sync(ExperimentSetup setup, const Dataset& train, const Dataset& test);
RunMetrics run_sl_ushaped(ExperimentSetup setup, const Dataset& train, const Dataset& test);
RunMetrics run_sl_vertical(ExperimentSetup setup, const Dataset& train, const Dataset& test);
RunMetrics run_fl(ExperimentSetup setup, const Dataset& train, const Dataset& test);
RunMetrics run_sfl(ExperimentSetup setup, bool v2, const Dataset& train, const Dataset& test);

// sum_k (n_k / n) * portion_k, accumulated in binary64 in ascending k.
std::vector<float> fedavg_aggregate(const std::vector<std::vector<float>>& portions,
                                    std::span<const std::size_t> shard_sizes);

EvalResult evaluate(const Network& model, const Dataset& test, std::size_t batch = 256);
EvalResult evaluate(const SplitModel& model, const Dataset& test, std::size_t batch = 256);

// Merge of per-client smashed tensors for vertically partitioned training.
// Non-concat merges need identical shapes.
Tensor merge_forward(const std::vector<Tensor>& parts, MergeMode mode);
std::vector<Tensor> merge_backward(const std::vector<Tensor>& parts, const Tensor& grad,
                                   MergeMode mode);

// Mini-batches of `shard` for one epoch: the shard is sorted, then shuffled
// by a stream keyed on (seed, client, epoch_index).
std::vector<std::vector<std::size_t>> epoch_batches(std::span<const std::size_t> shard,
                                                    std::size_t batch, uint64_t seed,
                                                    std::size_t client, std::size_t epoch_index);

}  // namespace sfl
