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
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fmx/foundation.hpp"
#include "fmx/hypercast/feature_store.hpp"
#include "fmx/hypercast/sync.hpp"
#include "fmx/hypercast/wire.hpp"
#include "fmx/stream.hpp"
#include "fmx/user_embedding.hpp"

namespace fmx {

struct FMTrainerSpec {
  std::string version;
  FMConfig model;
  AdamConfig adam;
  std::size_t batch_requests = 8;
  std::map<std::uint32_t, double> downsample;  // per-surface keep ratio
  std::uint64_t seed = 1;
};

struct UETrainerSpec {
  std::string version = "ue";
  UEConfig model;
  AdamConfig adam;
  std::size_t batch_requests = 8;
  std::uint64_t seed = 1;
  std::size_t refresh_events = 50;  // a user's logged UE is recomputed after this many new events
};

// Where the served FM versions live. The in-process implementation wraps a
// LoggingTier; a remote one talks to a log-tier process.
class LogTierClient {
 public:
  virtual ~LogTierClient() = default;
  virtual void register_version(const std::string& tag, const EncoderConfig& enc, const ParamSet& pruned) = 0;
  virtual hypercast::ApplyStatus apply_delta(const hypercast::WeightDelta& delta) = 0;
  // Logs every candidate of the request under every active version.
  virtual void log(std::uint64_t request_id, std::uint64_t user_id, std::uint32_t surface_id, std::int64_t ts,
                   const std::vector<ItemFeatures>& history, const std::vector<ItemFeatures>& candidates) = 0;
  virtual void flush() = 0;
};

std::unique_ptr<LogTierClient> in_process_log_tier(std::shared_ptr<hypercast::FeatureStore> store);
// Talks to a log tier over `transport` (FM_EMBED with a "log" object, admin types).
std::unique_ptr<LogTierClient> remote_log_tier(std::shared_ptr<hypercast::Transport> transport);

struct SimulationConfig {
  std::vector<FMTrainerSpec> fms;
  std::optional<UETrainerSpec> ue;
  std::int64_t join_latency = 1800;
  double publish_fraction = 0.3;
  std::int64_t publish_period = 600;
  double log_start = 0.4;  // fraction of stream time at which logging begins
  double train_end = 0.8;  // FM training consumes examples with ts before this fraction
  std::uint64_t downsample_seed = 7;
};

struct TrainerTrace {
  std::size_t steps = 0;
  std::size_t requests = 0;
  std::size_t examples = 0;
  std::size_t aborted_steps = 0;
  double recent_loss = 0.0;  // mean loss over the last 100 steps
};

struct SyncTrace {
  std::size_t publishes = 0;
  std::size_t blocks = 0;
  std::size_t blocks_per_publish = 0;
  // Longest time any served block lagged a newer trainer copy, seconds.
  std::int64_t max_staleness = 0;
  std::int64_t bound = 0;  // ceil(1/fraction) * period
};

struct SimulationResult {
  std::map<std::string, ParamSet> fm_params;  // final trainer weights
  std::optional<ParamSet> ue_params;
  std::map<std::string, TrainerTrace> training;
  std::map<std::string, SyncTrace> sync;
  std::size_t logged_requests = 0;
};

using ProgressFn = std::function<void(const std::string& message)>;

// Streams the events in time order: joined examples reach the FM trainers after
// join_latency, trainers publish partial deltas every period, and the log tier
// materializes embeddings for every request from log_start onwards.
SimulationResult simulate(const Stream& stream, const SimulationConfig& cfg, LogTierClient& log_tier,
                          hypercast::FeatureStore* ue_store = nullptr, const ProgressFn& progress = {});

}  // namespace fmx
