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

#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

namespace fmx::hypercast {

using nlohmann::json;

class WireError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 16 lowercase hex digits of the IEEE-754 bit pattern per value.
std::string encode_f64_hex(std::span<const double> values);
std::vector<double> decode_f64_hex(const std::string& hex);

inline constexpr std::uint32_t kMaxFrameBytes = 64u << 20;

// Frame: u32 little-endian payload length, then the payload (one JSON object).
std::vector<std::uint8_t> encode_frame(const json& message);
json decode_frame_payload(std::span<const std::uint8_t> payload);

// Incremental frame decoder for a byte stream.
class FrameReader {
 public:
  void feed(std::span<const std::uint8_t> bytes);
  // Next complete message, if any.
  bool next(json& out);
  std::size_t buffered() const { return buf_.size(); }

 private:
  std::vector<std::uint8_t> buf_;
};

using Handler = std::function<json(const json& request)>;

class Transport {
 public:
  virtual ~Transport() = default;
  virtual json call(const json& request) = 0;
};

// In-process transport: requests and responses still go through the frame codec.
class LoopbackTransport : public Transport {
 public:
  explicit LoopbackTransport(Handler handler) : handler_(std::move(handler)) {}
  json call(const json& request) override;

 private:
  Handler handler_;
};

// Blocking TCP client; one outstanding request at a time.
class TcpClient : public Transport {
 public:
  TcpClient(const std::string& host, std::uint16_t port);
  ~TcpClient() override;
  TcpClient(const TcpClient&) = delete;
  TcpClient& operator=(const TcpClient&) = delete;
  json call(const json& request) override;

 private:
  int fd_ = -1;
  std::mutex mu_;
  FrameReader reader_;
};

// Thread-per-connection TCP frame server.
class TcpServer {
 public:
  // port 0 picks an ephemeral port; see port().
  TcpServer(std::uint16_t port, Handler handler);
  ~TcpServer();
  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  std::uint16_t port() const { return port_; }
  void stop();
  bool running() const { return !stopping_; }

 private:
  void accept_loop();
  void serve_connection(int fd);

  Handler handler_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::mutex conn_mu_;
  std::vector<std::thread> connections_;
  std::vector<int> conn_fds_;
};

json error_response(const std::string& code, const std::string& message);
inline bool is_ok(const json& response) { return response.value("status", "") == "OK"; }

}  // namespace fmx::hypercast
