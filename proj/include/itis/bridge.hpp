// Copyright 2026 The ITIS Engine Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Predictor bridge, protocol v1.
//
// On connect the bridge writes one handshake line:
//
//   ITIS-BRIDGE 1 <uses_mask:0|1> <concurrent:0|1>\n
//
// Each request is a GSTK1 tensor block. Each response is a u32 little-endian
// byte count followed by a 16-bit grayscale PNG of the same width and height,
// probability = value / 65535. One request is in flight per connection.
//
// Endpoints are "cmd:<shell command>" (the command speaks the protocol on its
// stdin/stdout) or "tcp:<host>:<port>".

#ifndef ITIS_BRIDGE_HPP
#define ITIS_BRIDGE_HPP

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include "itis/errors.hpp"
#include "itis/guidance.hpp"
#include "itis/png_io.hpp"
#include "itis/predictor.hpp"

namespace itis {

inline constexpr std::string_view kBridgeHandshakePrefix = "ITIS-BRIDGE";
inline constexpr std::size_t kMaxBridgeResponseBytes = 256u << 20;

using Clock = std::chrono::steady_clock;

/// Blocking byte stream with deadlines. Not thread-safe.
class ByteStream {
 public:
  virtual ~ByteStream() = default;
  virtual void write_all(std::span<const std::uint8_t> data, Clock::time_point deadline) = 0;
  virtual void read_exact(std::span<std::uint8_t> out, Clock::time_point deadline) = 0;

  std::string read_line(Clock::time_point deadline, std::size_t max_length = 256) {
    std::string line;
    std::uint8_t c = 0;
    while (true) {
      read_exact(std::span(&c, 1), deadline);
      if (c == '\n') return line;
      line.push_back(static_cast<char>(c));
      if (line.size() > max_length) throw BridgeMalformedResponse("handshake line too long");
    }
  }
};

namespace detail {

inline void wait_fd(int fd, short events, Clock::time_point deadline) {
  while (true) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
    if (left.count() <= 0) throw BridgeTimeout("bridge did not respond before the deadline");
    pollfd p{fd, events, 0};
    const int r = ::poll(&p, 1, static_cast<int>(std::min<std::int64_t>(left.count(), 1 << 30)));
    if (r > 0) return;
    if (r == 0) continue;
    if (errno == EINTR) continue;
    throw BridgeTransportError(std::string("poll failed: ") + std::strerror(errno));
  }
}

inline void ignore_sigpipe() {
  static const bool once = [] {
    ::signal(SIGPIPE, SIG_IGN);
    return true;
  }();
  (void)once;
}

}  // namespace detail

/// Stream over a pair of file descriptors (the same one for sockets).
class FdStream : public ByteStream {
 public:
  FdStream(int read_fd, int write_fd) : read_fd_(read_fd), write_fd_(write_fd) {}
  FdStream(const FdStream&) = delete;
  FdStream& operator=(const FdStream&) = delete;

  ~FdStream() override { close_fds(); }

  void write_all(std::span<const std::uint8_t> data, Clock::time_point deadline) override {
    std::size_t done = 0;
    while (done < data.size()) {
      detail::wait_fd(write_fd_, POLLOUT, deadline);
      const ssize_t n = ::write(write_fd_, data.data() + done, data.size() - done);
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        throw BridgeTransportError(std::string("bridge write failed: ") + std::strerror(errno));
      }
      done += static_cast<std::size_t>(n);
    }
  }

  void read_exact(std::span<std::uint8_t> out, Clock::time_point deadline) override {
    std::size_t done = 0;
    while (done < out.size()) {
      detail::wait_fd(read_fd_, POLLIN, deadline);
      const ssize_t n = ::read(read_fd_, out.data() + done, out.size() - done);
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        throw BridgeTransportError(std::string("bridge read failed: ") + std::strerror(errno));
      }
      if (n == 0) throw BridgeTransportError("bridge closed the connection");
      done += static_cast<std::size_t>(n);
    }
  }

 protected:
  void close_fds() {
    if (read_fd_ >= 0) ::close(read_fd_);
    if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
    read_fd_ = write_fd_ = -1;
  }

 private:
  int read_fd_;
  int write_fd_;
};

/// Runs `/bin/sh -c command` in its own process group with its stdin/stdout
/// connected to the stream. Destroying the stream terminates the group.
class SubprocessStream final : public FdStream {
 public:
  static std::unique_ptr<SubprocessStream> spawn(const std::string& command) {
    detail::ignore_sigpipe();
    int to_child[2];
    int from_child[2];
    if (::pipe(to_child) != 0) throw BridgeTransportError("pipe failed");
    if (::pipe(from_child) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw BridgeTransportError("pipe failed");
    }
    const pid_t pid = ::fork();
    if (pid < 0) {
      for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) ::close(fd);
      throw BridgeTransportError("fork failed");
    }
    if (pid == 0) {
      ::setpgid(0, 0);
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) ::close(fd);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    ::setpgid(pid, pid);
    for (int fd : {to_child[1], from_child[0]}) {
      ::fcntl(fd, F_SETFD, FD_CLOEXEC);
      ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL, 0) | O_NONBLOCK);
    }
    return std::unique_ptr<SubprocessStream>(new SubprocessStream(from_child[0], to_child[1], pid));
  }

  ~SubprocessStream() override {
    close_fds();
    if (pid_ > 0) {
      ::kill(-pid_, SIGTERM);  // the shell and everything it started
      int status = 0;
      ::waitpid(pid_, &status, 0);
    }
  }

 private:
  SubprocessStream(int read_fd, int write_fd, pid_t pid) : FdStream(read_fd, write_fd), pid_(pid) {}
  pid_t pid_;
};

class TcpStream final : public FdStream {
 public:
  static std::unique_ptr<TcpStream> connect(const std::string& host, int port,
                                            Clock::time_point deadline) {
    detail::ignore_sigpipe();
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* found = nullptr;
    if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &found) != 0 || !found) {
      throw BridgeTransportError("cannot resolve " + host);
    }
    std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(found, &::freeaddrinfo);
    for (addrinfo* ai = found; ai != nullptr; ai = ai->ai_next) {
      const int fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
      if (fd < 0) continue;
      const int flags = ::fcntl(fd, F_GETFL, 0);
      ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
      int rc = ::connect(fd, ai->ai_addr, ai->ai_addrlen);
      if (rc != 0 && errno == EINPROGRESS) {
        try {
          detail::wait_fd(fd, POLLOUT, deadline);
        } catch (...) {
          ::close(fd);
          throw;
        }
        int err = 0;
        socklen_t len = sizeof err;
        ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
        rc = err == 0 ? 0 : -1;
      }
      if (rc == 0) {
        int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        return std::unique_ptr<TcpStream>(new TcpStream(fd));
      }
      ::close(fd);
    }
    throw BridgeTransportError("cannot connect to " + host + ":" + std::to_string(port));
  }

 private:
  explicit TcpStream(int fd) : FdStream(fd, fd) {}
};

struct BridgeHandshake {
  bool uses_mask = false;
  bool concurrent = false;
};

inline std::string format_handshake(const BridgeHandshake& h) {
  return std::string(kBridgeHandshakePrefix) + " 1 " + (h.uses_mask ? "1" : "0") + " " +
         (h.concurrent ? "1" : "0") + "\n";
}

inline BridgeHandshake parse_handshake(const std::string& line) {
  std::istringstream in(line);
  std::string magic;
  int version = 0;
  std::string mask;
  std::string conc;
  std::string extra;
  if (!(in >> magic >> version >> mask >> conc) || (in >> extra) || magic != kBridgeHandshakePrefix ||
      version != 1 || (mask != "0" && mask != "1") || (conc != "0" && conc != "1")) {
    throw BridgeMalformedResponse("bad bridge handshake: '" + line + "'");
  }
  return {mask == "1", conc == "1"};
}

/// Probabilities quantised to 16 bits (round to nearest).
inline Grid<std::uint16_t> quantize_probabilities(std::span<const float> p, int width, int height) {
  Grid<std::uint16_t> q(width, height, 0);
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double v = std::clamp(static_cast<double>(p[i]), 0.0, 1.0);
    q[i] = static_cast<std::uint16_t>(std::lround(v * 65535.0));
  }
  return q;
}

inline ProbabilityMap dequantize_probabilities(const Grid<std::uint16_t>& q) {
  ProbabilityMap p(q.width(), q.height(), 0.0);
  for (std::size_t i = 0; i < q.size(); ++i) p[i] = q[i] / 65535.0;
  return p;
}

/// One protocol connection: handshake read at construction.
class BridgeConnection {
 public:
  BridgeConnection(std::unique_ptr<ByteStream> stream, std::chrono::milliseconds timeout)
      : stream_(std::move(stream)), timeout_(timeout) {
    handshake_ = parse_handshake(stream_->read_line(Clock::now() + timeout_));
  }

  const BridgeHandshake& handshake() const noexcept { return handshake_; }

  ProbabilityMap request(const GuidanceStack& stack) {
    const auto deadline = Clock::now() + timeout_;
    stream_->write_all(encode_gstk(stack), deadline);
    std::uint8_t len_bytes[4];
    stream_->read_exact(len_bytes, deadline);
    const std::uint32_t len = detail::get_u32le(len_bytes);
    if (len == 0 || len > kMaxBridgeResponseBytes) {
      throw BridgeMalformedResponse("bridge response length " + std::to_string(len) + " out of range");
    }
    Bytes png(len);
    stream_->read_exact(png, deadline);
    Grid<std::uint16_t> q;
    try {
      q = decode_gray16_png(png);
    } catch (const ImageIoError& e) {
      throw BridgeMalformedResponse(std::string("bridge response is not a 16-bit PNG: ") + e.what());
    }
    if (q.width() != stack.width() || q.height() != stack.height()) {
      throw BridgeDimensionMismatch("bridge returned " + std::to_string(q.width()) + "x" +
                                    std::to_string(q.height()) + " for a " +
                                    std::to_string(stack.width()) + "x" +
                                    std::to_string(stack.height()) + " request");
    }
    return dequantize_probabilities(q);
  }

 private:
  std::unique_ptr<ByteStream> stream_;
  std::chrono::milliseconds timeout_;
  BridgeHandshake handshake_;
};

inline std::unique_ptr<ByteStream> open_bridge_stream(const std::string& endpoint,
                                                      std::chrono::milliseconds timeout) {
  if (endpoint.rfind("cmd:", 0) == 0) return SubprocessStream::spawn(endpoint.substr(4));
  if (endpoint.rfind("tcp:", 0) == 0) {
    const std::string rest = endpoint.substr(4);
    const auto colon = rest.rfind(':');
    if (colon == std::string::npos) throw std::invalid_argument("tcp endpoint needs host:port");
    const int port = std::stoi(rest.substr(colon + 1));
    return TcpStream::connect(rest.substr(0, colon), port, Clock::now() + timeout);
  }
  throw std::invalid_argument("bridge endpoint must start with cmd: or tcp: ('" + endpoint + "')");
}

/// External predictor behind the bridge protocol. Connections that fail are
/// dropped and replaced on the next call. A bridge that advertises
/// concurrent=1 gets one connection per concurrent caller; otherwise calls
/// are serialised over a single connection.
class BridgePredictor final : public Predictor {
 public:
  explicit BridgePredictor(std::string endpoint,
                           std::chrono::milliseconds timeout = std::chrono::seconds(30))
      : endpoint_(std::move(endpoint)), timeout_(timeout) {
    auto first = connect();
    handshake_ = first->handshake();
    idle_.push_back(std::move(first));
    open_ = 1;
  }

  PredictorDescriptor descriptor() const override {
    return {PredictorKind::external_bridge, handshake_.uses_mask, handshake_.concurrent, endpoint_};
  }

 private:
  std::unique_ptr<BridgeConnection> connect() const {
    return std::make_unique<BridgeConnection>(open_bridge_stream(endpoint_, timeout_), timeout_);
  }

  std::unique_ptr<BridgeConnection> acquire() {
    std::unique_lock lock(mutex_);
    while (true) {
      if (!idle_.empty()) {
        auto c = std::move(idle_.back());
        idle_.pop_back();
        return c;
      }
      if (open_ == 0 || handshake_.concurrent) {
        ++open_;
        lock.unlock();
        try {
          return connect();
        } catch (...) {
          lock.lock();
          --open_;
          cv_.notify_one();
          throw;
        }
      }
      cv_.wait(lock);
    }
  }

  void release(std::unique_ptr<BridgeConnection> c) {
    std::lock_guard lock(mutex_);
    if (c) {
      idle_.push_back(std::move(c));
    } else {
      --open_;
    }
    cv_.notify_one();
  }

  ProbabilityMap do_predict(const GuidanceStack& stack, const ClickSet&) override {
    auto conn = acquire();
    try {
      ProbabilityMap p = conn->request(stack);
      release(std::move(conn));
      return p;
    } catch (...) {
      release(nullptr);  // the stream is in an unknown state
      throw;
    }
  }

  std::string endpoint_;
  std::chrono::milliseconds timeout_;
  BridgeHandshake handshake_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::vector<std::unique_ptr<BridgeConnection>> idle_;
  int open_ = 0;
};

// ---------------------------------------------------------------------------
// Bridge side of the protocol, for writing bridges in C++.

/// Produces the response payload (normally a 16-bit PNG) for one request.
using BridgeHandler = std::function<Bytes(const GuidanceStack&)>;

namespace detail {

inline bool read_fully(int fd, std::uint8_t* out, std::size_t n) {
  std::size_t done = 0;
  while (done < n) {
    const ssize_t r = ::read(fd, out + done, n - done);
    if (r < 0 && errno == EINTR) continue;
    if (r <= 0) return false;
    done += static_cast<std::size_t>(r);
  }
  return true;
}

inline bool write_fully(int fd, const std::uint8_t* data, std::size_t n) {
  std::size_t done = 0;
  while (done < n) {
    const ssize_t r = ::write(fd, data + done, n - done);
    if (r < 0 && errno == EINTR) continue;
    if (r <= 0) return false;
    done += static_cast<std::size_t>(r);
  }
  return true;
}

}  // namespace detail

/// Serves requests until the peer closes the stream.
inline void serve_bridge(int in_fd, int out_fd, const BridgeHandshake& info,
                         const BridgeHandler& handler) {
  detail::ignore_sigpipe();
  const std::string hello = format_handshake(info);
  if (!detail::write_fully(out_fd, reinterpret_cast<const std::uint8_t*>(hello.data()), hello.size())) {
    return;
  }
  std::vector<std::uint8_t> block(kGstkHeaderSize);
  while (true) {
    block.resize(kGstkHeaderSize);
    if (!detail::read_fully(in_fd, block.data(), kGstkHeaderSize)) return;
    const GstkHeader head = parse_gstk_header(block);
    block.resize(kGstkHeaderSize + head.payload_bytes());
    if (!detail::read_fully(in_fd, block.data() + kGstkHeaderSize, head.payload_bytes())) return;
    const Bytes payload = handler(decode_gstk(block));
    std::vector<std::uint8_t> framed;
    detail::put_u32le(framed, static_cast<std::uint32_t>(payload.size()));
    framed.insert(framed.end(), payload.begin(), payload.end());
    if (!detail::write_fully(out_fd, framed.data(), framed.size())) return;
  }
}

/// Standard response: the probability plane as a 16-bit PNG.
inline Bytes probability_response(std::span<const float> p, int width, int height) {
  return encode_gray16_png(quantize_probabilities(p, width, height));
}

}  // namespace itis

#endif  // ITIS_BRIDGE_HPP
