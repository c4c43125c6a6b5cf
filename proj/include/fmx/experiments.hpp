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

#include "fmx/dataset.hpp"
#include "fmx/expert.hpp"
#include "fmx/hypercast/feature_store.hpp"
#include "fmx/metrics.hpp"
#include "fmx/simulation.hpp"
#include "fmx/stream.hpp"
#include "json.hpp"

namespace fmx {

// What expert training does with a candidate whose FM embedding was never logged.
enum class MissingEmbedding { kSkip, kZero };

struct ExpertTrainingConfig {
  ExpertConfig arch;  // template; surface, tasks, fm_version and fm_dim are filled per run
  AdamConfig adam;
  std::size_t batch_requests = 4;
  std::uint64_t seed = 11;
  MissingEmbedding on_missing = MissingEmbedding::kSkip;
};

struct ExperimentConfig {
  SimulationConfig sim;
  std::string small_version = "fm_small";
  std::string large_version = "fm_large";
  ExpertTrainingConfig expert;
  // Replaces expert.arch on the listed surfaces.
  std::map<std::uint32_t, ExpertConfig> surface_arch;
  // Fractions of stream time. The warm-started experts of the transfer run
  // train on [donor_end, expert_end); everything else trains on
  // [donor_start, expert_end). Evaluation uses [expert_end, 1).
  double donor_start = 0.4;
  double donor_end = 0.6;
  double expert_end = 0.8;
  std::vector<std::uint32_t> transfer_surfaces{0, 1, 2, 3};
  std::uint32_t ablation_surface = 0;
  std::uint32_t generalization_surface = 3;
  std::vector<std::string> withheld_tasks;
  std::vector<std::uint64_t> generalization_seeds{11, 12, 13};
  // Transfer and ablation expert NEs are averaged over these seeds.
  std::vector<std::uint64_t> transfer_seeds{11, 12, 13};
  std::vector<std::uint64_t> ablation_seeds{11, 12, 13};
  // The one-stage baseline of the compute budget: an expert whose sequence
  // encoder is this config and has no FM input.
  EncoderConfig one_stage_encoder;

  void validate(const TaskCatalog& catalog) const;
};

// Everything the experiment pipelines share: the stream, the trained FMs and
// the joined examples carrying their logged embeddings.
struct ExpertRun;

struct ExperimentContext {
  ExperimentConfig cfg;
  Stream stream;
  SimulationResult sim;
  std::shared_ptr<hypercast::FeatureStore> store;     // FM embeddings
  std::shared_ptr<hypercast::FeatureStore> ue_store;  // user embeddings
  std::vector<TrainingExample> examples;
  JoinStats join_stats;
  // Called with every expert an experiment finishes training.
  std::function<void(const std::string& name, const ExpertRun& run)> on_expert;
};

struct EmbeddingStores {
  std::shared_ptr<hypercast::FeatureStore> ue;  // written during the simulation
  // Called once the simulation has finished logging; returns the FM embeddings.
  std::function<std::shared_ptr<hypercast::FeatureStore>()> fm;
};

ExperimentContext prepare_experiments(Stream stream, const ExperimentConfig& cfg, LogTierClient& log_tier,
                                      const EmbeddingStores& stores, const ProgressFn& progress = {});
// Convenience: in-process log tier and memory-only feature store.
ExperimentContext prepare_experiments(const StreamConfig& stream_cfg, const ExperimentConfig& cfg,
                                      const ProgressFn& progress = {});

// Main tasks plus the surface's own tasks, all as expert objectives.
std::vector<TaskSpec> expert_tasks(const TaskCatalog& catalog, std::uint32_t surface);

struct ExpertRun {
  ExpertModel model;
  ParamSet params;
  std::size_t steps = 0;
  std::size_t requests = 0;
  ExpertInputStats inputs;
};

ExpertRun make_expert(const ExperimentContext& ctx, ExpertConfig cfg, std::uint64_t seed);
// One streaming pass over the surface's joined examples with ts in [t0, t1).
void train_expert(const ExperimentContext& ctx, ExpertRun& run, const AdamConfig& adam, std::size_t batch_requests,
                  double t0, double t1, std::uint64_t seed, MissingEmbedding on_missing = MissingEmbedding::kSkip);
// NE per expert task on the surface's examples with ts in [t0, t1).
std::vector<NEResult> evaluate_expert(const ExperimentContext& ctx, const ExpertRun& run, double t0, double t1);
// NE per FM main task on the surface's events with ts in [t0, t1).
std::vector<NEResult> evaluate_fm(const ExperimentContext& ctx, const std::string& version, std::uint32_t surface,
                                  double t0, double t1);

struct TransferRow {
  std::uint32_t surface = 0;
  std::string task;
  double ne_fm1 = 0.0;  // large FM
  double ne_fm2 = 0.0;  // small FM
  double ne_expert1 = 0.0;  // mean over seeds
  double ne_expert2 = 0.0;
  std::vector<double> ne_expert1_per_seed;
  std::vector<double> ne_expert2_per_seed;
  double fm_diff_percent = 0.0;
  double expert_diff_percent = 0.0;
  std::optional<double> tr;
  bool significant = false;
};
struct TransferReport {
  std::vector<TransferRow> rows;
};
TransferReport run_transfer_experiment(const ExperimentContext& ctx, const ProgressFn& progress = {});

struct AblationRow {
  std::string variant;  // baseline, +UE, +TAE, +UE+TAE
  std::map<std::string, double> ne;  // mean over seeds
  std::map<std::string, std::vector<double>> ne_per_seed;
  std::map<std::string, double> diff_percent;  // vs baseline
};
struct AblationReport {
  std::uint32_t surface = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> tasks;
  std::vector<AblationRow> rows;
};
AblationReport run_ablation(const ExperimentContext& ctx, const ProgressFn& progress = {});

struct GeneralizationRow {
  std::string task;
  std::vector<double> ne_baseline;  // per seed
  std::vector<double> ne_fm;
  std::vector<double> diff_percent;
  double mean_diff_percent = 0.0;
};
struct GeneralizationReport {
  std::uint32_t surface = 0;
  std::string fm_version;
  std::vector<GeneralizationRow> rows;
};
GeneralizationReport run_generalization(const ExperimentContext& ctx, const ProgressFn& progress = {});

struct ComputeBudget {
  std::uint64_t expert_flops = 0;     // per request, averaged over evaluation requests
  std::uint64_t one_stage_flops = 0;  // same requests through the one-stage baseline
  double ratio = 0.0;
};
ComputeBudget measure_compute_budget(const ExperimentContext& ctx, std::size_t max_requests = 200);

using nlohmann::json;
std::vector<json> report_lines(const TransferReport& r);
std::vector<json> report_lines(const AblationReport& r);
std::vector<json> report_lines(const GeneralizationReport& r);
json report_line(const ComputeBudget& b);

}  // namespace fmx
