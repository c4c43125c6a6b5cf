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
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fmx/encoder.hpp"

namespace fmx {

inline constexpr std::int64_t kSecondsPerDay = 86400;

enum class Action : std::uint32_t { kNone = 0, kView = 1, kComplete = 2, kLike = 3, kShare = 4 };
inline constexpr std::size_t kActionTypes = 5;

// Task names: the four shared main tasks, then surface-specific tasks named
// "Surface_<letter>_Task_<k>".
struct TaskCatalog {
  std::vector<std::string> names;
  std::size_t main_count = 0;
  std::vector<std::vector<std::size_t>> surface_tasks;  // per surface, indices into names

  static TaskCatalog make_default(std::size_t n_surfaces);
  std::optional<std::size_t> index(const std::string& name) const;
  bool is_main(std::size_t t) const { return t < main_count; }
  std::size_t size() const { return names.size(); }
};

std::string surface_name(std::uint32_t surface_id);

struct StreamConfig {
  std::uint64_t seed = 1;
  std::size_t n_users = 400;
  std::size_t n_items = 150;
  std::size_t n_surfaces = 4;
  std::size_t days = 10;
  double requests_per_user_per_day = 6.0;
  std::size_t candidates_per_request = 8;
  std::size_t latent_dim = 4;
  std::size_t interest_window = 48;
  double attention_sharpness = 4.0;
  double recency_decay = 0.03;  // attention logit penalty per position of age
  bool drift = true;
  double user_drift = 0.05;  // per-day random-walk stddev
  double item_drift = 0.02;
  std::vector<double> surface_shares;  // empty = uniform

  void validate() const;
};

struct InteractionEvent {
  std::uint64_t request_id = 0;
  std::uint64_t user_id = 0;
  std::uint64_t item_id = 0;
  std::uint32_t surface_id = 0;
  std::int64_t ts = 0;
  std::vector<std::int8_t> labels;  // per catalog task; -1 outside the task's sample space
  std::vector<double> ctx;          // non-sequential context features

  Action action() const;
  bool engaged() const;
  bool operator==(const InteractionEvent&) const = default;
};

inline constexpr std::size_t kContextFeatures = 4;

// Ground-truth preference model with per-day latent snapshots.
class GroundTruth {
 public:
  GroundTruth(const StreamConfig& cfg, const TaskCatalog& tasks);

  // Random walk to the next day (no-op when drift is disabled).
  void advance_day();
  std::size_t day() const { return day_; }

  // Probability of each catalog task (NaN outside the surface's sample space).
  std::vector<double> probabilities(std::span<const InteractionEvent> history, std::uint64_t user,
                                    std::uint64_t item, std::uint32_t surface, std::int64_t ts) const;
  // Same link, but the history enters only through a target-independent,
  // recency-weighted summary vector.
  std::vector<double> summary_probabilities(std::span<const InteractionEvent> history, std::uint64_t user,
                                            std::uint64_t item, std::uint32_t surface, std::int64_t ts) const;

  double item_bias(std::uint64_t item) const { return item_bias_[item]; }

 private:
  struct TaskLink {
    std::vector<double> metric;  // diagonal metric over latent dims
    double base = 0.0;
    double interest_gain = 0.0;
    double user_gain = 0.0;
    double bias_gain = 0.0;
    std::vector<double> surface_offset;
    double hour_gain = 0.0;
  };
  double link(std::size_t t, double interest, std::uint64_t user, std::uint64_t item, std::uint32_t surface,
              std::int64_t ts) const;
  std::span<const InteractionEvent> window(std::span<const InteractionEvent> history) const;
  double affinity_sign(std::uint64_t user, std::uint64_t item) const;

  StreamConfig cfg_;
  const TaskCatalog* tasks_;
  std::mt19937_64 rng_;
  std::size_t day_ = 0;
  std::vector<std::vector<double>> user_latent_;
  std::vector<std::vector<double>> item_latent_;
  std::vector<double> item_bias_;
  std::vector<TaskLink> links_;
};

// Events in time order plus per-user timelines.
struct Stream {
  StreamConfig config;
  TaskCatalog tasks;
  std::vector<InteractionEvent> events;
  std::vector<std::vector<double>> true_probs;     // per event, per task (NaN outside sample space)
  std::vector<std::vector<double>> summary_probs;  // history-summary oracle, same layout
  std::vector<std::vector<InteractionEvent>> timelines;  // per user, time order
  std::vector<std::size_t> timeline_pos;  // event index -> position in its user's timeline

  // The user's events strictly before the event's timestamp.
  std::span<const InteractionEvent> history(std::size_t event_index) const;
  std::int64_t end_time() const { return static_cast<std::int64_t>(config.days) * kSecondsPerDay; }
};

Stream generate(const StreamConfig& cfg);
// Rebuilds timelines for an event sequence (e.g. read back from a log).
Stream make_stream(const StreamConfig& cfg, std::vector<InteractionEvent> events);

std::uint32_t time_bucket(std::int64_t age_seconds);
ItemFeatures history_item_features(const InteractionEvent& e, std::int64_t now);
ItemFeatures target_item_features(const InteractionEvent& e);
std::vector<ItemFeatures> history_features(std::span<const InteractionEvent> history, std::int64_t now,
                                           std::size_t max_len);

// --- event log -------------------------------------------------------------

std::string event_to_line(const InteractionEvent& e, const TaskCatalog& tasks);
InteractionEvent event_from_line(const std::string& line, const TaskCatalog& tasks);
void write_event_log(const std::filesystem::path& path, std::span<const InteractionEvent> events,
                     const TaskCatalog& tasks);
std::vector<InteractionEvent> read_event_log(const std::filesystem::path& path, const TaskCatalog& tasks);

// --- join --------------------------------------------------------------------

using EmbeddingVector = std::shared_ptr<const std::vector<double>>;

// version tag -> embedding for one (request, candidate).
using EmbeddingLookup = std::function<std::map<std::string, EmbeddingVector>(std::uint64_t request_id,
                                                                             std::uint64_t item_id)>;

struct TrainingExample {
  std::size_t event = 0;         // index into Stream::events
  std::int64_t available_at = 0;
  std::map<std::string, EmbeddingVector> embeddings;
};

struct JoinStats {
  std::size_t joined = 0;
  std::size_t missing_embeddings = 0;
};

// Releases examples at event time + latency, attaching every logged version.
class Joiner {
 public:
  Joiner(const Stream& stream, EmbeddingLookup lookup, std::int64_t latency);

  void push(std::size_t event_index);
  // All pending examples with available_at <= now, in event order.
  std::vector<TrainingExample> release(std::int64_t now);
  std::size_t pending() const { return pending_.size(); }
  const JoinStats& stats() const { return stats_; }

 private:
  const Stream* stream_;
  EmbeddingLookup lookup_;
  std::int64_t latency_;
  std::deque<std::size_t> pending_;
  JoinStats stats_;
};

std::vector<TrainingExample> join(const Stream& stream, const EmbeddingLookup& lookup, std::int64_t latency,
                                  JoinStats* stats = nullptr);

// --- downsampling ----------------------------------------------------------

double downsample_uniform(std::uint64_t seed, std::uint64_t user, std::uint64_t item, std::int64_t ts);
void validate_ratios(const std::map<std::uint32_t, double>& ratios);
// Surfaces absent from `ratios` keep everything.
std::vector<TrainingExample> downsample(const Stream& stream, std::vector<TrainingExample> examples,
                                        const std::map<std::uint32_t, double>& ratios, std::uint64_t seed);
std::vector<InteractionEvent> downsample(std::vector<InteractionEvent> events,
                                         const std::map<std::uint32_t, double>& ratios, std::uint64_t seed);

}  // namespace fmx
