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

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "fmx/hypercast/wire.hpp"

namespace fmx::hypercast {

// A tier running as a child process. The child announces its port with a
// single "LISTENING <port>" line on stdout.
class TierProcess {
 public:
  TierProcess(const std::filesystem::path& binary, const std::vector<std::string>& args);
  ~TierProcess();
  TierProcess(const TierProcess&) = delete;
  TierProcess& operator=(const TierProcess&) = delete;

  std::uint16_t port() const { return port_; }
  std::shared_ptr<Transport> transport() const { return transport_; }
  // Sends ADMIN_SHUTDOWN and waits for the child; returns its exit status.
  int shutdown();

 private:
  int wait();

  int pid_ = -1;
  int out_fd_ = -1;
  std::uint16_t port_ = 0;
  std::shared_ptr<Transport> transport_;
};

// Writes the announcement line expected by TierProcess.
void announce_port(std::uint16_t port);

}  // namespace fmx::hypercast
