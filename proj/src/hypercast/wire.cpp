// Copyright 2026 The fmx Authors
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

#include "fmx/hypercast/wire.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <bit>
#include <cerrno>
#include <cstring>

namespace fmx::hypercast {

namespace {

constexpr char kHexDigits[] = "0123456789abcdef";

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

bool write_all(int fd, const std::uint8_t* data, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::send(fd, data, n, MSG_NOSIGNAL);
    if (w < 0 && errno == EINTR) continue;
    if (w <= 0) return false;
    data += w;
    n -= static_cast<std::size_t>(w);
  }
  return true;
}

}  // namespace

std::string encode_f64_hex(std::span<const double> values) {
  std::string out;
  out.reserve(values.size() * 16);
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int shift = 60; shift >= 0; shift -= 4) out.push_back(kHexDigits[(bits >> shift) & 0xf]);
  }
  return out;
}

std::vector<double> decode_f64_hex(const std::string& hex) {
  if (hex.size() % 16 != 0) throw WireError("hex vector length " + std::to_string(hex.size()) + " not a multiple of 16");
  std::vector<double> out(hex.size() / 16);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (std::size_t k = 0; k < 16; ++k) {
      const int v = hex_value(hex[i * 16 + k]);
      if (v < 0) throw WireError("invalid hex digit in vector");
      bits = (bits << 4) | static_cast<std::uint64_t>(v);
    }
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

std::vector<std::uint8_t> encode_frame(const json& message) {
  const std::string payload = message.dump();
  if (payload.size() > kMaxFrameBytes) throw WireError("frame too large");
  const auto n = static_cast<std::uint32_t>(payload.size());
  std::vector<std::uint8_t> out(4 + payload.size());
  out[0] = n & 0xff;
  out[1] = (n >> 8) & 0xff;
  out[2] = (n >> 16) & 0xff;
  out[3] = (n >> 24) & 0xff;
  std::memcpy(out.data() + 4, payload.data(), payload.size());
  return out;
}

json decode_frame_payload(std::span<const std::uint8_t> payload) {
  try {
    return json::parse(payload.begin(), payload.end());
  } catch (const json::exception& e) {
    throw WireError(std::string("malformed frame payload: ") + e.what());
  }
}

void FrameReader::feed(std::span<const std::uint8_t> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }

bool FrameReader::next(json& out) {
  if (buf_.size() < 4) return false;
  const std::uint32_t n = std::uint32_t(buf_[0]) | (std::uint32_t(buf_[1]) << 8) | (std::uint32_t(buf_[2]) << 16) |
                          (std::uint32_t(buf_[3]) << 24);
  if (n > kMaxFrameBytes) throw WireError("frame length " + std::to_string(n) + " exceeds limit");
  if (buf_.size() < 4 + std::size_t(n)) return false;
  out = decode_frame_payload(std::span(buf_.data() + 4, n));
  buf_.erase(buf_.begin(), buf_.begin() + 4 + n);
  return true;
}

json error_response(const std::string& code, const std::string& message) {
  return json{{"status", code}, {"error", message}};
}

json LoopbackTransport::call(const json& request) {
  FrameReader in;
  in.feed(encode_frame(request));
  json decoded;
  if (!in.next(decoded)) throw WireError("loopback: incomplete request frame");
  FrameReader back;
  back.feed(encode_frame(handler_(decoded)));
  json response;
  if (!back.next(response)) throw WireError("loopback: incomplete response frame");
  return response;
}

// --- TCP client ------------------------------------------------------------

TcpClient::TcpClient(const std::string& host, std::uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw WireError(std::string("socket: ") + std::strerror(errno));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host == "localhost" ? "127.0.0.1" : host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd_);
    throw WireError("invalid host " + host);
  }
  if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    const std::string err = std::strerror(errno);
    ::close(fd_);
    throw WireError("connect " + host + ":" + std::to_string(port) + ": " + err);
  }
  int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

TcpClient::~TcpClient() {
  if (fd_ >= 0) ::close(fd_);
}

json TcpClient::call(const json& request) {
  std::lock_guard lock(mu_);
  const auto frame = encode_frame(request);
  if (!write_all(fd_, frame.data(), frame.size())) throw WireError("send failed");
  json response;
  std::uint8_t buf[65536];
  while (!reader_.next(response)) {
    const ssize_t r = ::recv(fd_, buf, sizeof(buf), 0);
    if (r < 0 && errno == EINTR) continue;
    if (r <= 0) throw WireError("connection closed by server");
    reader_.feed(std::span(buf, static_cast<std::size_t>(r)));
  }
  return response;
}

// --- TCP server ------------------------------------------------------------

TcpServer::TcpServer(std::uint16_t port, Handler handler) : handler_(std::move(handler)) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw WireError(std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(listen_fd_, 64) != 0) {
    const std::string err = std::strerror(errno);
    ::close(listen_fd_);
    throw WireError("bind/listen on port " + std::to_string(port) + ": " + err);
  }
  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  acceptor_ = std::thread([this] { accept_loop(); });
}

TcpServer::~TcpServer() { stop(); }

void TcpServer::stop() {
  if (stopping_.exchange(true)) return;
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  if (acceptor_.joinable()) acceptor_.join();
  std::vector<std::thread> conns;
  {
    std::lock_guard lock(conn_mu_);
    for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
    conns.swap(connections_);
  }
  for (auto& t : conns)
    if (t.joinable()) t.join();
}

void TcpServer::accept_loop() {
  while (!stopping_) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      return;
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    std::lock_guard lock(conn_mu_);
    if (stopping_) {
      ::close(fd);
      return;
    }
    conn_fds_.push_back(fd);
    connections_.emplace_back([this, fd] { serve_connection(fd); });
  }
}

void TcpServer::serve_connection(int fd) {
  FrameReader reader;
  std::uint8_t buf[65536];
  while (!stopping_) {
    const ssize_t r = ::recv(fd, buf, sizeof(buf), 0);
    if (r < 0 && errno == EINTR) continue;
    if (r <= 0) break;
    try {
      reader.feed(std::span(buf, static_cast<std::size_t>(r)));
      json request;
      while (reader.next(request)) {
        json response;
        try {
          response = handler_(request);
        } catch (const std::exception& e) {
          response = error_response("INTERNAL", e.what());
        }
        const auto frame = encode_frame(response);
        if (!write_all(fd, frame.data(), frame.size())) break;
      }
    } catch (const WireError& e) {
      const auto frame = encode_frame(error_response("BAD_REQUEST", e.what()));
      write_all(fd, frame.data(), frame.size());
      break;
    }
  }
  ::close(fd);
  std::lock_guard lock(conn_mu_);
  std::erase(conn_fds_, fd);
}

}  // namespace fmx::hypercast
