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

#include <random>
#include <span>
#include <vector>

#include "fmx/foundation.hpp"

namespace fmx {

// Target-independent user embedding baseline: a causal encoder over the
// history summarised at its last position, scored against an item tower.
struct UEConfig {
  EncoderConfig encoder = [] {
    EncoderConfig c;
    c.prefix = "ue";
    return c;
  }();
  std::vector<TaskSpec> tasks;  // main-style tasks only
};

class UserEmbeddingModel {
 public:
  explicit UserEmbeddingModel(UEConfig cfg);

  const UEConfig& config() const { return cfg_; }
  std::size_t dim() const { return cfg_.encoder.dim; }
  void init_weights(ParamSet& params, std::mt19937_64& rng) const;

  // 1 x dim; zeros for an empty history.
  Var user_embedding(Tape& tape, const ParamSet& w, std::span<const ItemFeatures> history) const;
  Tensor embed_user(const ParamSet& w, std::span<const ItemFeatures> history) const;

  // M x tasks logits.
  Var forward(Tape& tape, const ParamSet& w, const FMRequest& req) const;
  Grads gradients(const ParamSet& w, const LabeledBatch& batch, LossReport& report) const;
  LossReport train_step(const LabeledBatch& batch, ParamSet& w, AdamState& opt, const AdamConfig& adam) const;

 private:
  UEConfig cfg_;
  SequenceEncoder encoder_;
};

}  // namespace fmx
