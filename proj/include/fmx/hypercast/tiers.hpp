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
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fmx/expert.hpp"
#include "fmx/hypercast/feature_store.hpp"
#include "fmx/hypercast/registry.hpp"
#include "fmx/hypercast/sync.hpp"
#include "fmx/hypercast/wire.hpp"

namespace fmx::hypercast {

// Error carrying a wire status code (VERSION_INACTIVE, VERSION_MISMATCH, ...).
class TierError : public std::runtime_error {
 public:
  TierError(std::string code, const std::string& message) : std::runtime_error(message), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

json delta_to_json(const WeightDelta& d);
WeightDelta delta_from_json(const json& j);
json params_to_json(const ParamSet& p);
ParamSet params_from_json(const json& j);
std::string checksum_hex(std::uint64_t c);

// --- online FM serving ------------------------------------------------------

struct FmEmbedRequest {
  std::optional<std::string> version;
  std::vector<ItemFeatures> history;
  std::vector<ItemFeatures> candidates;
};

struct FmEmbedResult {
  std::string version;
  std::uint64_t checksum = 0;
  std::uint64_t sequence = 0;
  Tensor embeddings;  // candidates x d
};

json to_json(const FmEmbedRequest& r);
FmEmbedRequest fm_embed_request_from_json(const json& j);
FmEmbedResult fm_embed_result_from_json(const json& j);

// Shared admin surface of tiers that hold FM weights.
class FmWeightsTier {
 public:
  explicit FmWeightsTier(std::shared_ptr<VersionRegistry> registry) : registry_(std::move(registry)) {}
  virtual ~FmWeightsTier() = default;

  VersionRegistry& registry() { return *registry_; }
  const VersionRegistry& registry() const { return *registry_; }
  ApplyStatus apply_delta(const WeightDelta& delta);

  // Admin and HEALTH requests; nullopt for other types.
  std::optional<json> handle_admin(const json& request, const std::string& tier_name);

 protected:
  std::shared_ptr<VersionRegistry> registry_;
};

class FmServingTier : public FmWeightsTier {
 public:
  using FmWeightsTier::FmWeightsTier;

  // Embeddings from the pruned subgraph of one immutable snapshot.
  FmEmbedResult embed(const FmEmbedRequest& req) const;
  json handle(const json& request);
  std::uint64_t requests_served() const { return served_; }

 private:
  mutable std::atomic<std::uint64_t> served_{0};
};

// --- offline FM logging -----------------------------------------------------

struct LogRequest {
  std::uint64_t request_id = 0;
  std::uint64_t user_id = 0;
  std::uint32_t surface_id = 0;
  std::int64_t ts = 0;
  std::vector<ItemFeatures> history;
  std::vector<ItemFeatures> candidates;  // everything served
  std::vector<std::size_t> impressed;    // indices into candidates
};

struct LogResult {
  std::size_t appended = 0;
  std::size_t duplicates = 0;
  bool backpressure = false;
};

class LoggingTier : public FmWeightsTier {
 public:
  LoggingTier(std::shared_ptr<VersionRegistry> registry, std::shared_ptr<FeatureStore> store);

  // One record per impressed candidate and active version. Stops at the first
  // backpressure signal.
  LogResult log(const LogRequest& req);
  // FM_EMBED with a "log" object, plus admin types.
  json handle(const json& request);
  FeatureStore& store() { return *store_; }

 private:
  std::shared_ptr<FeatureStore> store_;
};

// --- online expert serving --------------------------------------------------

enum class TimeoutPolicy { kFail, kZeroEmbedding };

struct ExpertTierOptions {
  TimeoutPolicy on_timeout = TimeoutPolicy::kFail;
  std::chrono::milliseconds fm_timeout{2000};
};

using FmFetch = std::function<FmEmbedResult(const FmEmbedRequest&)>;
// Surface features for the candidates, M x surface_feature_dim.
using FeatureAssembler = std::function<Tensor(const std::vector<ItemFeatures>& candidates, std::int64_t ts)>;

struct ExpertPredictRequest {
  std::string fm_version;
  std::optional<Tensor> fm_embeddings;
  std::optional<std::vector<ItemFeatures>> fetch_history;  // fetch directive
  std::vector<ItemFeatures> short_history;
  std::vector<ItemFeatures> candidates;
  std::optional<Tensor> surface_features;
  std::optional<Tensor> user_embedding;
  std::int64_t ts = 0;
};

struct ExpertPredictResult {
  Tensor probabilities;  // candidates x tasks
  bool fm_fallback = false;
};

json to_json(const ExpertPredictRequest& r);
ExpertPredictRequest expert_predict_request_from_json(const json& j);

class ExpertServingTier {
 public:
  ExpertServingTier(ExpertModel model, ParamSet weights, FmFetch fetch = {}, FeatureAssembler assemble = {},
                    ExpertTierOptions opts = {});

  ExpertPredictResult predict(const ExpertPredictRequest& req);
  json handle(const json& request);

  void replace_weights(ParamSet weights);
  std::uint64_t fm_calls() const { return fm_calls_; }
  const ExpertModel& model() const { return model_; }

 private:
  ExpertModel model_;
  mutable std::mutex mu_;
  std::shared_ptr<const ParamSet> weights_;
  FmFetch fetch_;
  FeatureAssembler assemble_;
  ExpertTierOptions opts_;
  std::atomic<std::uint64_t> fm_calls_{0};
};

FmFetch local_fm_fetch(std::shared_ptr<FmServingTier> tier);
FmFetch remote_fm_fetch(std::shared_ptr<Transport> transport);

}  // namespace fmx::hypercast
