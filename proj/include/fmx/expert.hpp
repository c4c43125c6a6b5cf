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
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "fmx/encoder.hpp"
#include "fmx/foundation.hpp"
#include "fmx/tensor.hpp"

namespace fmx {

class VersionMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExpertConfig {
  std::uint32_t surface_id = 0;
  std::string fm_version;  // the single FM version this expert consumes
  std::vector<TaskSpec> tasks;
  std::size_t fm_dim = 32;  // 0 removes the FM pathway
  std::size_t ue_dim = 0;   // user-embedding input for ablations; 0 disables
  std::size_t surface_feature_dim = 4;
  std::size_t fusion_hidden = 32;
  std::size_t fusion_out = 32;
  std::size_t expert_hidden = 32;
  double noise_sigma = 0.0;
  double dropout = 0.0;
  // Short-term encoder; max_history is the expert's short history length.
  EncoderConfig short_encoder = [] {
    EncoderConfig c;
    c.prefix = "short";
    c.layers = 1;
    c.max_history = 8;
    return c;
  }();

  std::size_t short_history_len() const { return short_encoder.max_history; }
  void validate() const;
};

struct ExpertRequest {
  std::string fm_version;
  Tensor fm_embeddings;   // M x fm_dim (empty without the FM pathway)
  Tensor user_embedding;  // 1 x ue_dim (ablation only)
  std::vector<ItemFeatures> short_history;
  std::vector<ItemFeatures> candidates;
  Tensor surface_features;  // M x surface_feature_dim
  std::vector<std::vector<double>> labels;  // per expert task, per candidate
  std::vector<std::vector<double>> mask;
};

using ExpertBatch = std::vector<ExpertRequest>;

enum class Mode { kInference, kTraining };

class ExpertModel {
 public:
  explicit ExpertModel(ExpertConfig cfg);

  const ExpertConfig& config() const { return cfg_; }
  const SequenceEncoder& short_encoder() const { return short_; }
  bool has_fm() const { return cfg_.fm_dim > 0; }

  void init_weights(ParamSet& params, std::mt19937_64& rng) const;
  // Blocks of the FM Embedding and FM Fusion modules (reinitialized on warm start).
  bool is_fm_module_block(const std::string& name) const;

  // Layer norm with affine, plus gaussian noise and dropout in training mode.
  Var fm_embedding_module(Tape& tape, const ParamSet& w, Var e, Mode mode, std::mt19937_64* rng,
                          const std::string& prefix = "fm_embed") const;
  Var forward(Tape& tape, const ParamSet& w, const ExpertRequest& req, Mode mode = Mode::kInference,
              std::mt19937_64* rng = nullptr) const;

  Tensor predict_logits(const ParamSet& w, const ExpertRequest& req) const;
  Tensor predict_probabilities(const ParamSet& w, const ExpertRequest& req) const;
  std::uint64_t forward_flops(const ParamSet& w, const ExpertRequest& req) const;

  Grads gradients(const ParamSet& w, const ExpertBatch& batch, LossReport& report, std::mt19937_64& rng) const;
  LossReport expert_train_step(const ExpertBatch& batch, ParamSet& w, AdamState& opt, const AdamConfig& adam,
                               std::mt19937_64& rng) const;

  // Copies every non-FM-module block from `donor` and freshly initializes the FM modules.
  void warm_start(ParamSet& w, const ParamSet& donor, std::mt19937_64& rng) const;

 private:
  void check_request(const ExpertRequest& req) const;

  ExpertConfig cfg_;
  SequenceEncoder short_;
};

}  // namespace fmx
