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
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fmx/experiments.hpp"
#include "fmx/json_codec.hpp"

namespace fmx {

inline const std::vector<std::string> kExperimentNames{"transfer", "ablation", "generalization", "compute_budget"};

struct RunConfig {
  StreamConfig stream;  // stream.seed is the run seed
  ExperimentConfig experiments;
  std::vector<std::string> run = kExperimentNames;
  std::size_t compute_requests = 200;

  // Throws ConfigError.
  void validate() const;
};

// Schema: see configs/README.md. Unknown keys are rejected with their path.
RunConfig run_config_from_json(const json& j);
json to_json(const RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

enum class HarnessMode { kInProcess, kProcess };
HarnessMode harness_mode_from_string(const std::string& s);

struct RunOptions {
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
  HarnessMode harness = HarnessMode::kInProcess;
  // Process mode: the hypercast executable. Defaults to the one next to the
  // running binary.
  std::optional<std::filesystem::path> hypercast_binary;
  ProgressFn progress;
};

// A failure tagged with the pipeline stage it happened in.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& message)
      : std::runtime_error("[" + stage + "] " + message), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct RunArtifacts {
  std::vector<std::filesystem::path> checkpoints;
  std::vector<std::filesystem::path> logs;
  std::vector<std::filesystem::path> reports;
};

// generate -> simulate (FM training, publishing, logging) -> join -> experts ->
// reports, under opts.out/{checkpoints,logs,reports}. Throws StageError.
RunArtifacts run_pipeline(RunConfig cfg, const RunOptions& opts);

// Report file names a run with this config produces.
std::vector<std::string> report_files(const RunConfig& cfg);

}  // namespace fmx
