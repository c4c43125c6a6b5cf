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
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fmx/tensor.hpp"

namespace fmx {

class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// One item occurrence in a sequence. History impressions carry the user action;
// targets (candidates) do not.
struct ItemFeatures {
  std::uint64_t item_id = 0;
  std::uint32_t surface_id = 0;
  std::uint32_t time_bucket = 0;
  std::optional<std::uint32_t> action;
};

struct EncoderConfig {
  std::string prefix = "enc";
  std::size_t dim = 32;
  std::size_t layers = 2;
  std::size_t max_history = 32;
  std::size_t item_buckets = 1024;
  std::size_t ctx_buckets = 128;
  std::size_t action_types = 5;
  std::size_t item_dim = 16;
  std::size_t ctx_dim = 8;
  std::size_t item_hidden = 32;
  // Test configuration: f passes concat(item, ctx) through unchanged.
  // Requires dim == item_dim + ctx_dim.
  bool identity_item_transform = false;
  double init_scale = 1.0;

  void validate() const;
};

std::size_t hash_item(std::uint64_t item_id, std::size_t buckets);
std::size_t hash_context(std::uint32_t surface_id, std::uint32_t time_bucket, std::size_t buckets);

// The history followed by the targets, embedded, with the attention mask.
struct UnifiedSequence {
  Var positions;  // (n_history + n_targets) x dim
  std::size_t n_history = 0;
  std::size_t n_targets = 0;
  std::vector<std::uint8_t> mask;  // row-major, row attends to col when nonzero

  std::size_t length() const { return n_history + n_targets; }
  bool attends(std::size_t row, std::size_t col) const { return mask[row * length() + col] != 0; }
};

// History position i sees history positions <= i; target j sees all history and itself.
std::vector<std::uint8_t> unified_attention_mask(std::size_t n_history, std::size_t n_targets);

// Simplified HSTU-style encoder. Weights live in a ParamSet under `prefix/`.
class SequenceEncoder {
 public:
  explicit SequenceEncoder(EncoderConfig cfg);

  const EncoderConfig& config() const { return cfg_; }
  void init_weights(ParamSet& params, std::mt19937_64& rng) const;
  std::vector<std::string> block_names() const;

  Var embed_history_item(Tape& tape, const ParamSet& w, const ItemFeatures& feat) const;
  Var embed_target_item(Tape& tape, const ParamSet& w, const ItemFeatures& feat) const;

  // Keeps the most recent max_history history items.
  UnifiedSequence build_unified_sequence(Tape& tape, const ParamSet& w, std::span<const ItemFeatures> history,
                                         std::span<const ItemFeatures> targets) const;

  // Hidden states at every position, (N+M) x dim.
  Var encode_all(Tape& tape, const ParamSet& w, const UnifiedSequence& seq) const;
  // Hidden states at target positions, M x dim.
  Var encode(Tape& tape, const ParamSet& w, const UnifiedSequence& seq) const;

  // Convenience: value-level target-aware embeddings without keeping the graph.
  Tensor embed(const ParamSet& w, std::span<const ItemFeatures> history, std::span<const ItemFeatures> targets) const;

  // Rows of f(item, ctx) + action for the given items.
  Var embed_items(Tape& tape, const ParamSet& w, std::span<const ItemFeatures> items) const;

  std::string block(const std::string& name) const { return cfg_.prefix + "/" + name; }
  std::string layer_block(std::size_t layer, const std::string& name) const;

 private:

  EncoderConfig cfg_;
};

}  // namespace fmx
