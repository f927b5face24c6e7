#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "sfl/codec.hpp"

namespace sfl::transport {

enum class MsgType : uint8_t {
  kSmash = 1,
  kSmashGrad = 2,
  kParams = 3,
  kLabels = 4,
  kControl = 5,
  kServerAct = 6,
  kServerActGrad = 7,
};
inline constexpr std::size_t kMsgTypeCount = 8;  // indexable by the raw u8 value

const char* msg_type_name(MsgType t);
bool carries_tensor(MsgType t);

struct WireMessage {
  MsgType type = MsgType::kControl;
  codec::Bytes payload;

  friend bool operator==(const WireMessage&, const WireMessage&) = default;
};

WireMessage tensor_message(MsgType type, const Tensor& t);
WireMessage control_message(const std::string& text);
std::string control_text(const WireMessage& m);

// Frame layout: u32 little-endian length of (type + payload), the type byte,
// then the payload. The 4-byte prefix is framing; everything after it is
// counted as payload by the ledger.
inline constexpr std::size_t kFramingBytes = 4;
inline constexpr std::size_t kMaxPayload = 0xFFFFFFFFull - 5;

codec::Bytes frame_encode(const WireMessage& msg);
// Decodes exactly one complete frame.
WireMessage frame_decode(std::span<const uint8_t> frame);

// Payload bytes that are tensor values (excludes the type byte and the
// tensor's rank/dims header). Zero for CONTROL.
std::size_t value_bytes(const WireMessage& msg);

enum class Direction : uint8_t { kSent = 0, kReceived = 1 };

struct LedgerCounts {
  uint64_t messages = 0;
  uint64_t payload_bytes = 0;  // type byte + payload
  uint64_t value_bytes = 0;    // tensor values only
  uint64_t framing_bytes = 0;  // length prefixes

  uint64_t overhead_bytes() const { return payload_bytes - value_bytes; }
  LedgerCounts& operator+=(const LedgerCounts& o);
  friend bool operator==(const LedgerCounts&, const LedgerCounts&) = default;
};

struct LedgerKey {
  std::string entity;
  std::string peer;
  Direction direction;
  MsgType type;
  auto operator<=>(const LedgerKey&) const = default;
};

struct EntityTotals {
  std::array<LedgerCounts, kMsgTypeCount> sent{};
  std::array<LedgerCounts, kMsgTypeCount> received{};
  LedgerCounts total_sent;
  LedgerCounts total_received;

  const LedgerCounts& sent_of(MsgType t) const { return sent[static_cast<std::size_t>(t)]; }
  const LedgerCounts& received_of(MsgType t) const {
    return received[static_cast<std::size_t>(t)];
  }
};

using LedgerReport = std::map<std::string, EntityTotals>;

// Byte accounting for every frame crossing an endpoint, keyed by
// (entity, peer, direction, type). Safe for concurrent recording.
class CommLedger {
 public:
  void record(const std::string& entity, const std::string& peer, Direction dir,
              const WireMessage& msg);
  std::map<LedgerKey, LedgerCounts> entries() const;
  LedgerReport report() const;
  void clear();

 private:
  mutable std::mutex mu_;
  std::map<LedgerKey, LedgerCounts> entries_;
};

LedgerReport ledger_report(const CommLedger& ledger);

// One end of a bidirectional, FIFO, framed channel between two entities.
// Every send/recv is recorded in the shared ledger (if any) and in the
// endpoint's own counters.
class Endpoint {
 public:
  Endpoint(std::string entity, std::string peer, CommLedger* ledger);
  virtual ~Endpoint() = default;
  Endpoint(const Endpoint&) = delete;
  Endpoint& operator=(const Endpoint&) = delete;

  void send(const WireMessage& msg);
  WireMessage recv();
  // recv() that throws TransportError unless the message has type `t`.
  WireMessage recv_expect(MsgType t);

  // Wakes any blocked recv on either side with a TransportError.
  virtual void close() = 0;

  const std::string& entity() const { return entity_; }
  const std::string& peer() const { return peer_; }
  // Counters seen by this endpoint alone, indexed by raw msg type.
  const std::array<LedgerCounts, kMsgTypeCount>& sent_counts() const { return sent_; }
  const std::array<LedgerCounts, kMsgTypeCount>& received_counts() const { return received_; }
  uint64_t payload_sent() const;
  uint64_t payload_received() const;

 protected:
  virtual void write_frame(codec::Bytes frame) = 0;
  virtual codec::Bytes read_frame() = 0;

 private:
  std::string entity_;
  std::string peer_;
  CommLedger* ledger_;
  std::array<LedgerCounts, kMsgTypeCount> sent_{};
  std::array<LedgerCounts, kMsgTypeCount> received_{};
};

using EndpointPtr = std::unique_ptr<Endpoint>;
using EndpointPair = std::pair<EndpointPtr, EndpointPtr>;

// first belongs to entity `a` (peer `b`), second to `b` (peer `a`).
EndpointPair make_inproc_pair(CommLedger* ledger, const std::string& a, const std::string& b);
// Same contract over a loopback TCP connection.
EndpointPair make_tcp_pair(CommLedger* ledger, const std::string& a, const std::string& b);

class TcpListener {
 public:
  // port 0 picks an ephemeral port.
  TcpListener(const std::string& host, uint16_t port);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  uint16_t port() const { return port_; }
  // The connecting side announces its entity name in a handshake frame that
  // is not part of the ledger; it becomes the returned endpoint's peer.
  EndpointPtr accept(const std::string& entity, CommLedger* ledger);

 private:
  int fd_ = -1;
  uint16_t port_ = 0;
};

// Retries for up to `timeout_ms` while the listener is not yet up.
EndpointPtr tcp_connect(const std::string& host, uint16_t port, const std::string& entity,
                        const std::string& peer, CommLedger* ledger, int timeout_ms = 10000);

}  // namespace sfl::transport
