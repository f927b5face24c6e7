#pragma once

// Protocol participants. Every role runs on its own thread (or process) and
// talks to the others only through transport endpoints.

#include <map>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "sfl/protocols.hpp"

namespace sfl::roles {

struct RoundStats {
  double loss_sum = 0.0;  // sum of per-batch loss contributions
  std::size_t batches = 0;
  std::size_t correct = 0;
  std::size_t seen = 0;

  RoundStats& operator+=(const RoundStats& o);
};

// What a role reports at the end of a round.
struct Deposit {
  std::string role;
  std::size_t round = 0;
  RoundStats stats;
  bool is_client = false;
  uint64_t bytes_up = 0;    // cumulative payload sent by this client
  uint64_t bytes_down = 0;  // cumulative payload received by this client
  std::map<std::string, std::vector<float>> snapshots;
};

class RoundBoard {
 public:
  void post(Deposit d);
  std::vector<Deposit> round(std::size_t r) const;
  // nullptr when the role posted nothing under `key` for round r.
  const std::vector<float>* snapshot(const std::string& role, std::size_t r,
                                     const std::string& key) const;

 private:
  mutable std::mutex mu_;
  std::vector<Deposit> deposits_;
};

struct RoleContext {
  const ExperimentSetup& setup;
  const Dataset& train;
  RoundBoard& board;
  uint64_t shuffle_seed;
};

// Endpoints a role owns. Unused members stay null.
struct Links {
  transport::Endpoint* server = nullptr;
  transport::Endpoint* fed = nullptr;
  transport::Endpoint* prev = nullptr;  // peer-to-peer relay: previous client
  transport::Endpoint* next = nullptr;  // peer-to-peer relay: next client
  std::vector<transport::Endpoint*> clients;  // server-side, indexed by client id
};

std::string client_name(std::size_t k);
inline const char* kServer = "server";
inline const char* kFed = "fed";

// Role names taking part in a protocol ("client/k", "server", "fed").
std::vector<std::string> role_names(const ExperimentSetup& setup);
// Unordered channels to create, as (a, b) entity pairs. For the peer-to-peer
// relay the pair (client/k, client/k+1) carries k's outbound weights.
std::vector<std::pair<std::string, std::string>> channels(const ExperimentSetup& setup);

// Runs one role to completion. Throws on protocol violations.
void run_role(const RoleContext& ctx, const std::string& role, const Links& links);

// Runs the non-distributed baseline in the calling thread.
void run_central(const RoleContext& ctx);

// Freshly initialised portions for the configured protocol, in the order the
// evaluator consumes them (client front, [middle], [tail] / fronts, server).
std::vector<Network> initial_portions(const ExperimentSetup& setup);

}  // namespace sfl::roles
