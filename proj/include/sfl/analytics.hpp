#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sfl/network.hpp"
#include "sfl/transport.hpp"

namespace sfl::analytics {

enum class CommMethod { kSlWithSharing, kSlNoSharing, kFl };

// "sl-sharing", "sl-no-sharing", "fl".
const char* method_name(CommMethod m);
std::optional<CommMethod> parse_method(const std::string& s);

struct CommModelParams {
  double K = 1;                  // clients
  double N = 1;                  // model parameters
  double p = 1;                  // total dataset size (samples)
  double q = 1;                  // smashed values per sample
  double client_fraction = 0.5;  // share of N held by the client portion

  void validate() const;  // throws std::invalid_argument
};

// Values (not bytes) moved per epoch.
struct CommCost {
  double per_client = 0.0;
  double total = 0.0;
};

//   SL with sharing  2(p/K)q + eta N    2pq + eta N K
//   SL no sharing    2(p/K)q            2pq
//   FL               2N                 2KN
CommCost analytical_comm(CommMethod method, const CommModelParams& params);

struct CrossoverPoint {
  double K = 0, N = 0;
  double sl_total = 0, fl_total = 0;  // SL with weight sharing vs FL
  bool sl_wins = false;               // strictly fewer values
};

// Row-major over Ks x Ns.
std::vector<CrossoverPoint> crossover_sweep(std::span<const double> Ks, std::span<const double> Ns,
                                            double p, double q, double client_fraction);

// N at which 2pq + eta N K = 2 K N.
double crossover_n(double K, double p, double q, double client_fraction);

struct CompressionFactors {
  double height = 1.0;
  double width = 1.0;
};

// n / floor((n - f) / s + 1) along each axis.
CompressionFactors maxpool_compression(std::size_t n_h, std::size_t n_w, std::size_t f,
                                       std::size_t s);
// Factors for a cut placed after `layer`; only max-pooling compresses.
CompressionFactors cut_compression(const Layer& layer);

struct ReconcileLine {
  std::string client;
  double analytical_values = 0;
  double analytical_bytes = 0;  // 4 bytes per binary32 value
  uint64_t measured_bytes = 0;  // tensor value bytes of the compared types
  double deviation = 0;         // (measured - analytical) / analytical
  // Itemized traffic outside the formula.
  uint64_t header_bytes = 0;        // type bytes + tensor headers of the compared types
  uint64_t label_bytes = 0;         // LABELS payload
  uint64_t framing_bytes = 0;       // length prefixes of every frame
  uint64_t smashed_value_bytes = 0; // SMASH + SMASH_GRAD values
  uint64_t params_value_bytes = 0;  // PARAMS values
};

struct ReconcileReport {
  CommMethod method = CommMethod::kSlNoSharing;
  double periods = 0;  // epochs (SL) or rounds (FL) the ledger covers
  std::vector<ReconcileLine> clients;

  double max_abs_deviation() const;
  double header_share() const;  // header_bytes / measured_bytes over all clients
  std::string to_csv() const;
};

// Compares a finished run's ledger against the formula, per client. Throws
// std::invalid_argument when the ledger's traffic does not fit `method`.
ReconcileReport reconcile(const transport::LedgerReport& ledger, CommMethod method,
                          const CommModelParams& params, double periods);

}  // namespace sfl::analytics
