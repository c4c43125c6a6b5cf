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
#include <map>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "fmx/encoder.hpp"
#include "fmx/tensor.hpp"

namespace fmx {

class ConfigurationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class TaskKind { kMain, kAux };

struct TaskSpec {
  std::string name;
  TaskKind kind = TaskKind::kMain;
  std::set<std::uint32_t> surface_scope;  // aux tasks only
  double weight = 1.0;

  void validate() const;
};

// One serving request: a shared history and M targets, with per-target labels.
// labels[t][i] and mask[t][i] follow the order of the model's task list.
struct FMRequest {
  std::uint32_t surface_id = 0;
  std::vector<ItemFeatures> history;
  std::vector<ItemFeatures> targets;
  Tensor aux_features;  // M x aux_feature_dim
  std::vector<std::vector<double>> labels;
  std::vector<std::vector<double>> mask;
};

using LabeledBatch = std::vector<FMRequest>;

struct FMConfig {
  EncoderConfig encoder;
  std::vector<TaskSpec> tasks;
  std::vector<std::uint32_t> surfaces;
  std::size_t aux_feature_dim = 4;
  std::size_t alignment_hidden = 32;
};

struct FMOutput {
  Tensor embeddings;   // M x d
  Tensor main_logits;  // M x (#main tasks)
  std::map<std::string, Tensor> aux_logits;  // task name -> M x 1, tasks in scope for the surface
};

struct LossReport {
  double total = 0.0;
  std::vector<double> per_task;
  std::vector<bool> skipped;  // aux task with no in-scope example in the batch
  bool aborted = false;
  std::string error;
};

// Per-task BCE with sample-space masks: task loss = sum(mask * bce) / sum(mask),
// total = sum(weight * task loss). Tasks with sum(mask) == 0 are skipped.
// logits[r][t] is an M_r-vector (empty when the task has no logit for request r).
LossReport masked_multitask_loss(const std::vector<std::vector<std::vector<double>>>& logits,
                                 const LabeledBatch& batch, const std::vector<TaskSpec>& tasks);

class FoundationModel {
 public:
  explicit FoundationModel(FMConfig cfg);

  const FMConfig& config() const { return cfg_; }
  const SequenceEncoder& encoder() const { return encoder_; }

  void init_weights(ParamSet& params, std::mt19937_64& rng) const;

  struct Graph {
    Var embeddings;
    Var main_logits;
    std::map<std::size_t, Var> aux_logits;  // task index -> M x 1
  };
  Graph forward(Tape& tape, const ParamSet& w, const FMRequest& req) const;
  FMOutput fm_forward(const ParamSet& w, const FMRequest& req) const;

  LossReport fm_loss(const std::vector<FMOutput>& outputs, const LabeledBatch& batch) const;

  // Gradient of the batch loss; the report carries the loss values.
  Grads gradients(const ParamSet& w, const LabeledBatch& batch, LossReport& report) const;
  LossReport fm_train_step(const LabeledBatch& batch, ParamSet& w, AdamState& opt, const AdamConfig& adam) const;

  // Only the blocks needed to compute target-aware embeddings.
  ParamSet export_inference_subgraph(const ParamSet& w) const;
  bool is_inference_block(const std::string& name) const;

  std::vector<std::size_t> main_task_indices() const { return main_tasks_; }
  std::vector<std::size_t> aux_tasks_for_surface(std::uint32_t surface) const;
  std::optional<std::size_t> task_index(const std::string& name) const;

 private:
  void check_request(const FMRequest& req) const;
  std::string align_block(std::uint32_t surface, const std::string& name) const;

  FMConfig cfg_;
  SequenceEncoder encoder_;
  std::vector<std::size_t> main_tasks_;
  std::map<std::uint32_t, std::vector<std::size_t>> aux_by_surface_;
};

}  // namespace fmx
