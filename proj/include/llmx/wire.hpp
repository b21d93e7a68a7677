#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstdint>
#include <cstring>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "llmx/envelope.hpp"
#include "llmx/error.hpp"
#include "llmx/gateway.hpp"
#include "llmx/time.hpp"
#include "llmx/transport.hpp"

namespace llmx {

inline constexpr std::size_t kMaxFrameBytes = 16u << 20;

/// 4-byte big-endian length followed by the body bytes.
inline std::string encode_frame(std::string_view body) {
  if (body.size() > kMaxFrameBytes) throw Error(ErrorCode::parse_error, "frame exceeds size limit");
  const auto n = static_cast<std::uint32_t>(body.size());
  std::string out;
  out.reserve(4 + body.size());
  out.push_back(static_cast<char>((n >> 24) & 0xff));
  out.push_back(static_cast<char>((n >> 16) & 0xff));
  out.push_back(static_cast<char>((n >> 8) & 0xff));
  out.push_back(static_cast<char>(n & 0xff));
  out.append(body);
  return out;
}

inline std::string encode_frame(const Envelope& env) { return encode_frame(serialize(env)); }

/// Incremental frame splitter for a byte stream.
class FrameDecoder {
 public:
  void feed(std::string_view bytes) { buf_.append(bytes); }

  /// Next complete frame body, if buffered. Throws ParseError on an oversize
  /// length prefix.
  std::optional<std::string> next() {
    if (buf_.size() - pos_ < 4) return std::nullopt;
    const auto* p = reinterpret_cast<const unsigned char*>(buf_.data() + pos_);
    const std::uint32_t n = (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
    if (n > kMaxFrameBytes) throw Error(ErrorCode::parse_error, "frame length " + std::to_string(n) + " exceeds limit");
    if (buf_.size() - pos_ < 4 + std::size_t{n}) return std::nullopt;
    std::string body = buf_.substr(pos_ + 4, n);
    pos_ += 4 + n;
    if (pos_ > 4096 && pos_ * 2 > buf_.size()) {
      buf_.erase(0, pos_);
      pos_ = 0;
    }
    return body;
  }

  std::size_t buffered() const { return buf_.size() - pos_; }

 private:
  std::string buf_;
  std::size_t pos_ = 0;
};

namespace detail {

inline std::string to_hex(const Bytes& b) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  for (auto c : b) {
    s.push_back(digits[c >> 4]);
    s.push_back(digits[c & 0xf]);
  }
  return s;
}

inline Bytes from_hex(std::string_view s) {
  auto val = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    return -1;
  };
  Bytes out;
  for (std::size_t i = 0; i + 1 < s.size(); i += 2) {
    const int hi = val(s[i]), lo = val(s[i + 1]);
    if (hi < 0 || lo < 0) return {};
    out.push_back(static_cast<std::uint8_t>(hi * 16 + lo));
  }
  return out;
}

inline bool write_all(int fd, std::string_view data) {
  while (!data.empty()) {
    const ssize_t n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

}  // namespace detail

/// The first frame on a connection: {"hello": {"agent_id", "iat", "exp", "sig"}}.
inline Json hello_frame(const AuthToken& token) {
  using std::chrono::duration_cast;
  using std::chrono::milliseconds;
  return {{"hello",
           {{"agent_id", token.agent_id},
            {"iat", duration_cast<milliseconds>(token.issued_at.time_since_epoch()).count()},
            {"exp", duration_cast<milliseconds>(token.expires_at.time_since_epoch()).count()},
            {"sig", detail::to_hex(token.signature)}}}};
}

inline std::optional<AuthToken> token_from_hello(const Json& j) {
  if (!j.is_object() || !j.contains("hello") || !j["hello"].is_object()) return std::nullopt;
  const Json& h = j["hello"];
  if (!h.contains("agent_id") || !h.contains("iat") || !h.contains("exp") || !h.contains("sig")) return std::nullopt;
  if (!h["agent_id"].is_string() || !h["iat"].is_number_integer() || !h["exp"].is_number_integer() ||
      !h["sig"].is_string()) {
    return std::nullopt;
  }
  AuthToken t;
  t.agent_id = h["agent_id"].get<std::string>();
  t.issued_at = Timestamp{std::chrono::milliseconds(h["iat"].get<std::int64_t>())};
  t.expires_at = Timestamp{std::chrono::milliseconds(h["exp"].get<std::int64_t>())};
  t.signature = detail::from_hex(h["sig"].get<std::string>());
  return t;
}

/// TCP front end for a Bus on 127.0.0.1. Each connection authenticates with a
/// hello frame, then exchanges envelope frames. Inbound envelopes pass the
/// gateway and are published ack-required; inbound Ack envelopes ack on the
/// bus; envelopes routed to the agent's inbox are written back as frames.
/// Rejections come back as {"error": {"msg_id", "reason", "detail"}}.
class SocketServer {
 public:
  SocketServer(Bus& bus, Gateway& gateway, RetryPolicy retry = {}) : bus_(bus), gateway_(gateway), retry_(retry) {}

  SocketServer(const SocketServer&) = delete;
  SocketServer& operator=(const SocketServer&) = delete;

  ~SocketServer() { stop(); }

  /// Binds 127.0.0.1:`port` (0 picks a free port) and starts accepting.
  std::uint16_t start(std::uint16_t port = 0) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw Error(ErrorCode::io_error, std::string("socket: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(listen_fd_, 16) < 0) {
      const std::string err = std::strerror(errno);
      ::close(listen_fd_);
      listen_fd_ = -1;
      throw Error(ErrorCode::io_error, "bind/listen: " + err);
    }
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    running_ = true;
    acceptor_ = std::thread([this] { accept_loop(); });
    return port_;
  }

  void stop() {
    if (!running_.exchange(false)) return;
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    if (acceptor_.joinable()) acceptor_.join();
    std::vector<std::shared_ptr<Conn>> conns;
    {
      std::lock_guard lock(mu_);
      conns = conns_;
    }
    for (auto& c : conns) ::shutdown(c->fd, SHUT_RDWR);
    for (auto& c : conns) {
      if (c->reader.joinable()) c->reader.join();
      if (c->sub) bus_.unsubscribe(c->sub);
      ::close(c->fd);
    }
  }

  std::uint16_t port() const { return port_; }

 private:
  struct Conn {
    int fd = -1;
    std::thread reader;
    std::mutex write_mu;
    std::optional<AuthToken> token;
    SubscriptionPtr sub;

    void write(const Json& j) {
      std::lock_guard lock(write_mu);
      detail::write_all(fd, encode_frame(j.dump()));
    }
  };

  void accept_loop() {
    while (running_) {
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) {
        if (errno == EINTR) continue;
        return;
      }
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      auto c = std::make_shared<Conn>();
      c->fd = fd;
      std::lock_guard lock(mu_);
      conns_.push_back(c);
      c->reader = std::thread([this, c] { read_loop(*c); });
    }
  }

  void read_loop(Conn& c) {
    FrameDecoder dec;
    char buf[8192];
    while (true) {
      const ssize_t n = ::recv(c.fd, buf, sizeof buf, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) return;
      dec.feed(std::string_view(buf, static_cast<std::size_t>(n)));
      try {
        while (auto body = dec.next()) on_frame(c, *body);
      } catch (const Error&) {
        return;
      }
    }
  }

  void on_frame(Conn& c, const std::string& body) {
    Json doc = Json::parse(body, nullptr, false);
    if (!c.token) {
      c.token = token_from_hello(doc);
      if (!c.token || verify_token(*c.token, gateway_.config().secret, bus_.loop()) != TokenStatus::ok) {
        c.write({{"error", {{"msg_id", ""}, {"reason", "invalid-token"}, {"detail", "bad hello"}}}});
        c.token.reset();
        return;
      }
      Conn* self = &c;
      c.sub = bus_.subscribe(inbox_subject(c.token->agent_id).str(), c.token->agent_id,
                             [self](const Delivery& d) { self->write(to_json(d.envelope)); });
      return;
    }
    AdmissionResult r = gateway_.admit_document(doc, *c.token, bus_.loop());
    if (!r) {
      std::string msg_id;
      if (doc.is_object() && doc.contains("envelope") && doc["envelope"].is_object()) {
        msg_id = doc["envelope"].value("msg_id", "");
      }
      c.write({{"error", {{"msg_id", msg_id}, {"reason", to_string(*r.reason)}, {"detail", r.detail}}}});
      return;
    }
    Envelope env = from_json(doc);
    if (const Ack* ack = env.as<Ack>()) {
      bus_.ack(ack->ref_msg_id, c.token->agent_id);
      return;
    }
    try {
      bus_.publish(env, Reliability::ack_required, retry_);
    } catch (const Error& e) {
      c.write({{"error", {{"msg_id", env.msg_id}, {"reason", to_string(e.code())}, {"detail", e.what()}}}});
    }
  }

  Bus& bus_;
  Gateway& gateway_;
  RetryPolicy retry_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::vector<std::shared_ptr<Conn>> conns_;
};

/// Blocking client for SocketServer.
class SocketClient {
 public:
  SocketClient() = default;
  SocketClient(const SocketClient&) = delete;
  SocketClient& operator=(const SocketClient&) = delete;
  ~SocketClient() { close(); }

  void connect(std::uint16_t port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    if (fd_ < 0 || ::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
      throw Error(ErrorCode::io_error, std::string("connect: ") + std::strerror(errno));
    }
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  }

  void hello(const AuthToken& token) { send_raw(hello_frame(token).dump()); }
  void send(const Envelope& env) { send_raw(serialize(env)); }
  void send_raw(std::string_view body) {
    if (!detail::write_all(fd_, encode_frame(body))) throw Error(ErrorCode::io_error, "send failed");
  }

  /// Next frame body, or nullopt on timeout or close.
  std::optional<std::string> receive(std::chrono::milliseconds timeout) {
    const auto until = std::chrono::steady_clock::now() + timeout;
    while (true) {
      if (auto body = dec_.next()) return body;
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(until - std::chrono::steady_clock::now());
      if (left.count() <= 0) return std::nullopt;
      pollfd p{fd_, POLLIN, 0};
      if (::poll(&p, 1, static_cast<int>(left.count())) <= 0) continue;
      char buf[8192];
      const ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
      if (n <= 0) return std::nullopt;
      dec_.feed(std::string_view(buf, static_cast<std::size_t>(n)));
    }
  }

  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
  FrameDecoder dec_;
};

}  // namespace llmx
