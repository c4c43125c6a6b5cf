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
#include "fmx/hypercast/process.hpp"

#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <stdexcept>

extern char** environ;

namespace fmx::hypercast {

TierProcess::TierProcess(const std::filesystem::path& binary, const std::vector<std::string>& args) {
  int fds[2];
  if (pipe(fds) != 0) throw std::runtime_error(std::string("pipe: ") + std::strerror(errno));
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, fds[1], STDOUT_FILENO);
  posix_spawn_file_actions_addclose(&actions, fds[0]);
  posix_spawn_file_actions_addclose(&actions, fds[1]);

  std::vector<std::string> argv_store{binary.string()};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  argv.push_back(nullptr);

  const int rc = posix_spawn(&pid_, argv_store[0].c_str(), &actions, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  close(fds[1]);
  if (rc != 0) {
    close(fds[0]);
    throw std::runtime_error("cannot start " + binary.string() + ": " + std::strerror(rc));
  }
  out_fd_ = fds[0];

  std::string line;
  char c;
  while (read(out_fd_, &c, 1) == 1 && c != '\n') line.push_back(c);
  constexpr std::string_view kTag = "LISTENING ";
  if (!line.starts_with(kTag)) {
    wait();
    throw std::runtime_error(binary.filename().string() + " exited before announcing a port");
  }
  port_ = static_cast<std::uint16_t>(std::stoul(line.substr(kTag.size())));
  transport_ = std::make_shared<TcpClient>("127.0.0.1", port_);
}

TierProcess::~TierProcess() {
  if (pid_ > 0) {
    kill(pid_, SIGTERM);
    wait();
  }
  if (out_fd_ >= 0) close(out_fd_);
}

int TierProcess::wait() {
  int status = 0;
  while (waitpid(pid_, &status, 0) < 0 && errno == EINTR) {
  }
  pid_ = -1;
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  return 128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0);
}

int TierProcess::shutdown() {
  if (pid_ <= 0) return 0;
  const json res = transport_->call(json{{"type", "ADMIN_SHUTDOWN"}});
  transport_.reset();
  const int status = wait();
  if (!is_ok(res)) throw std::runtime_error("tier refused shutdown: " + res.dump());
  return status;
}

void announce_port(std::uint16_t port) {
  std::printf("LISTENING %u\n", static_cast<unsigned>(port));
  std::fflush(stdout);
}

}  // namespace fmx::hypercast
