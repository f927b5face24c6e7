#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <thread>

#include "sfl/error.hpp"
#include "sfl/transport.hpp"

namespace sfl::transport {

namespace {

std::string errno_text() { return std::strerror(errno); }

void write_all(int fd, const uint8_t* data, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::send(fd, data, n, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw TransportError("tcp send failed: " + errno_text());
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

// Returns bytes read; less than n only on orderly shutdown by the peer.
std::size_t read_all(int fd, uint8_t* data, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::recv(fd, data + got, n - got, 0);
    if (r < 0) {
      if (errno == EINTR) continue;
      throw TransportError("tcp recv failed: " + errno_text());
    }
    if (r == 0) break;
    got += static_cast<std::size_t>(r);
  }
  return got;
}

codec::Bytes read_one_frame(int fd, const std::string& who) {
  codec::Bytes frame(kFramingBytes);
  const std::size_t got = read_all(fd, frame.data(), kFramingBytes);
  if (got == 0) throw TransportError(who + ": peer disconnected");
  if (got < kFramingBytes) throw DecodeError(who + ": partial frame (length prefix)");
  const uint32_t len = codec::get_u32(frame, 0);
  frame.resize(kFramingBytes + len);
  if (read_all(fd, frame.data() + kFramingBytes, len) < len) {
    throw DecodeError(who + ": partial frame (peer closed mid-message)");
  }
  return frame;
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

sockaddr_in resolve(const std::string& host, uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host == "localhost" ? "127.0.0.1" : host.c_str(), &addr.sin_addr) != 1) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    addrinfo* res = nullptr;
    if (::getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || !res) {
      throw TransportError("cannot resolve host " + host);
    }
    addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
    ::freeaddrinfo(res);
  }
  return addr;
}

class TcpEndpoint final : public Endpoint {
 public:
  TcpEndpoint(std::string entity, std::string peer, CommLedger* ledger, int fd)
      : Endpoint(std::move(entity), std::move(peer), ledger), fd_(fd) {}

  ~TcpEndpoint() override {
    if (fd_ >= 0) ::close(fd_);
  }

  void close() override { ::shutdown(fd_, SHUT_RDWR); }

 protected:
  void write_frame(codec::Bytes frame) override { write_all(fd_, frame.data(), frame.size()); }
  codec::Bytes read_frame() override { return read_one_frame(fd_, entity() + "<-" + peer()); }

 private:
  int fd_;
};

}  // namespace

TcpListener::TcpListener(const std::string& host, uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw TransportError("socket: " + errno_text());
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr = resolve(host, port);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    const std::string err = errno_text();
    ::close(fd_);
    throw TransportError("bind " + host + ":" + std::to_string(port) + ": " + err);
  }
  if (::listen(fd_, 64) != 0) {
    const std::string err = errno_text();
    ::close(fd_);
    throw TransportError("listen: " + err);
  }
  socklen_t len = sizeof(addr);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

EndpointPtr TcpListener::accept(const std::string& entity, CommLedger* ledger) {
  int fd;
  do {
    fd = ::accept(fd_, nullptr, nullptr);
  } while (fd < 0 && errno == EINTR);
  if (fd < 0) throw TransportError("accept: " + errno_text());
  set_nodelay(fd);
  try {
    const WireMessage hello = frame_decode(read_one_frame(fd, entity + " handshake"));
    if (hello.type != MsgType::kControl) throw TransportError("handshake must be CONTROL");
    return std::make_unique<TcpEndpoint>(entity, control_text(hello), ledger, fd);
  } catch (...) {
    ::close(fd);
    throw;
  }
}

EndpointPtr tcp_connect(const std::string& host, uint16_t port, const std::string& entity,
                        const std::string& peer, CommLedger* ledger, int timeout_ms) {
  const sockaddr_in addr = resolve(host, port);
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  while (true) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw TransportError("socket: " + errno_text());
    if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) == 0) {
      set_nodelay(fd);
      const codec::Bytes hello = frame_encode(control_message(entity));
      write_all(fd, hello.data(), hello.size());
      return std::make_unique<TcpEndpoint>(entity, peer, ledger, fd);
    }
    const std::string err = errno_text();
    ::close(fd);
    if (std::chrono::steady_clock::now() >= deadline) {
      throw TransportError("connect " + host + ":" + std::to_string(port) + ": " + err);
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

EndpointPair make_tcp_pair(CommLedger* ledger, const std::string& a, const std::string& b) {
  TcpListener listener("127.0.0.1", 0);
  EndpointPtr first = tcp_connect("127.0.0.1", listener.port(), a, b, ledger);
  EndpointPtr second = listener.accept(b, ledger);
  if (second->peer() != a) throw TransportError("tcp pair handshake mismatch");
  return {std::move(first), std::move(second)};
}

}  // namespace sfl::transport
