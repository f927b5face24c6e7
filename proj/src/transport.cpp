#include "sfl/transport.hpp"

#include <condition_variable>
#include <deque>

#include "sfl/error.hpp"

namespace sfl::transport {

const char* msg_type_name(MsgType t) {
  switch (t) {
    case MsgType::kSmash: return "SMASH";
    case MsgType::kSmashGrad: return "SMASH_GRAD";
    case MsgType::kParams: return "PARAMS";
    case MsgType::kLabels: return "LABELS";
    case MsgType::kControl: return "CONTROL";
    case MsgType::kServerAct: return "SERVER_ACT";
    case MsgType::kServerActGrad: return "SERVER_ACT_GRAD";
  }
  return "?";
}

bool carries_tensor(MsgType t) { return t != MsgType::kControl; }

WireMessage tensor_message(MsgType type, const Tensor& t) {
  return WireMessage{type, codec::encode_tensor(t)};
}

WireMessage control_message(const std::string& text) {
  return WireMessage{MsgType::kControl, codec::Bytes(text.begin(), text.end())};
}

std::string control_text(const WireMessage& m) {
  return std::string(m.payload.begin(), m.payload.end());
}

codec::Bytes frame_encode(const WireMessage& msg) {
  if (msg.payload.size() >= kMaxPayload) throw TransportError("payload too large for framing");
  codec::Bytes out;
  out.reserve(kFramingBytes + 1 + msg.payload.size());
  codec::put_u32(out, static_cast<uint32_t>(msg.payload.size() + 1));
  out.push_back(static_cast<uint8_t>(msg.type));
  out.insert(out.end(), msg.payload.begin(), msg.payload.end());
  return out;
}

WireMessage frame_decode(std::span<const uint8_t> frame) {
  if (frame.size() < kFramingBytes + 1) throw DecodeError("partial frame");
  const uint32_t len = codec::get_u32(frame, 0);
  if (len == 0) throw DecodeError("frame length must cover the type byte");
  if (frame.size() != kFramingBytes + len) {
    throw DecodeError(frame.size() < kFramingBytes + len ? "partial frame"
                                                         : "trailing bytes after frame");
  }
  const uint8_t type = frame[4];
  if (type < 1 || type > 7) throw DecodeError("unknown message type " + std::to_string(type));
  return WireMessage{static_cast<MsgType>(type), codec::Bytes(frame.begin() + 5, frame.end())};
}

std::size_t value_bytes(const WireMessage& msg) {
  if (!carries_tensor(msg.type) || msg.payload.size() < 4) return 0;
  const std::size_t rank = codec::get_u32(msg.payload, 0);
  const std::size_t header = codec::tensor_header_size(rank);
  return msg.payload.size() >= header ? msg.payload.size() - header : 0;
}

LedgerCounts& LedgerCounts::operator+=(const LedgerCounts& o) {
  messages += o.messages;
  payload_bytes += o.payload_bytes;
  value_bytes += o.value_bytes;
  framing_bytes += o.framing_bytes;
  return *this;
}

namespace {
LedgerCounts counts_of(const WireMessage& msg) {
  return LedgerCounts{1, 1 + msg.payload.size(), value_bytes(msg), kFramingBytes};
}
}  // namespace

void CommLedger::record(const std::string& entity, const std::string& peer, Direction dir,
                        const WireMessage& msg) {
  const LedgerCounts c = counts_of(msg);
  std::lock_guard lock(mu_);
  entries_[LedgerKey{entity, peer, dir, msg.type}] += c;
}

std::map<LedgerKey, LedgerCounts> CommLedger::entries() const {
  std::lock_guard lock(mu_);
  return entries_;
}

LedgerReport CommLedger::report() const {
  LedgerReport out;
  for (const auto& [key, counts] : entries()) {
    EntityTotals& t = out[key.entity];
    const auto idx = static_cast<std::size_t>(key.type);
    if (key.direction == Direction::kSent) {
      t.sent[idx] += counts;
      t.total_sent += counts;
    } else {
      t.received[idx] += counts;
      t.total_received += counts;
    }
  }
  return out;
}

void CommLedger::clear() {
  std::lock_guard lock(mu_);
  entries_.clear();
}

LedgerReport ledger_report(const CommLedger& ledger) { return ledger.report(); }

Endpoint::Endpoint(std::string entity, std::string peer, CommLedger* ledger)
    : entity_(std::move(entity)), peer_(std::move(peer)), ledger_(ledger) {}

void Endpoint::send(const WireMessage& msg) {
  write_frame(frame_encode(msg));
  sent_[static_cast<std::size_t>(msg.type)] += counts_of(msg);
  if (ledger_) ledger_->record(entity_, peer_, Direction::kSent, msg);
}

WireMessage Endpoint::recv() {
  WireMessage msg = frame_decode(read_frame());
  received_[static_cast<std::size_t>(msg.type)] += counts_of(msg);
  if (ledger_) ledger_->record(entity_, peer_, Direction::kReceived, msg);
  return msg;
}

WireMessage Endpoint::recv_expect(MsgType t) {
  WireMessage msg = recv();
  if (msg.type != t) {
    throw TransportError(entity_ + " expected " + msg_type_name(t) + " from " + peer_ + ", got " +
                         msg_type_name(msg.type));
  }
  return msg;
}

uint64_t Endpoint::payload_sent() const {
  uint64_t n = 0;
  for (const auto& c : sent_) n += c.payload_bytes;
  return n;
}

uint64_t Endpoint::payload_received() const {
  uint64_t n = 0;
  for (const auto& c : received_) n += c.payload_bytes;
  return n;
}

namespace {

struct Pipe {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<codec::Bytes> frames;
  bool closed = false;
};

class InProcEndpoint final : public Endpoint {
 public:
  InProcEndpoint(std::string entity, std::string peer, CommLedger* ledger,
                 std::shared_ptr<Pipe> out, std::shared_ptr<Pipe> in)
      : Endpoint(std::move(entity), std::move(peer), ledger), out_(std::move(out)), in_(std::move(in)) {}

  ~InProcEndpoint() override { close(); }

  void close() override {
    for (Pipe* p : {out_.get(), in_.get()}) {
      std::lock_guard lock(p->mu);
      p->closed = true;
      p->cv.notify_all();
    }
  }

 protected:
  void write_frame(codec::Bytes frame) override {
    std::lock_guard lock(out_->mu);
    if (out_->closed) throw TransportError(entity() + ": channel to " + peer() + " is closed");
    out_->frames.push_back(std::move(frame));
    out_->cv.notify_one();
  }

  codec::Bytes read_frame() override {
    std::unique_lock lock(in_->mu);
    in_->cv.wait(lock, [&] { return !in_->frames.empty() || in_->closed; });
    if (in_->frames.empty()) throw TransportError(entity() + ": peer " + peer() + " disconnected");
    codec::Bytes f = std::move(in_->frames.front());
    in_->frames.pop_front();
    return f;
  }

 private:
  std::shared_ptr<Pipe> out_;
  std::shared_ptr<Pipe> in_;
};

}  // namespace

EndpointPair make_inproc_pair(CommLedger* ledger, const std::string& a, const std::string& b) {
  auto ab = std::make_shared<Pipe>();
  auto ba = std::make_shared<Pipe>();
  return {std::make_unique<InProcEndpoint>(a, b, ledger, ab, ba),
          std::make_unique<InProcEndpoint>(b, a, ledger, ba, ab)};
}

}  // namespace sfl::transport
