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

#include "fmx/encoder.hpp"

#include <cmath>

namespace fmx {

namespace {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

void EncoderConfig::validate() const {
  if (dim == 0 || layers == 0 || item_buckets == 0 || ctx_buckets == 0 || action_types == 0) {
    throw std::invalid_argument("encoder config: sizes must be positive");
  }
  if (identity_item_transform && dim != item_dim + ctx_dim) {
    throw std::invalid_argument("encoder config: identity item transform needs dim == item_dim + ctx_dim");
  }
}

std::size_t hash_item(std::uint64_t item_id, std::size_t buckets) { return mix64(item_id) % buckets; }

std::size_t hash_context(std::uint32_t surface_id, std::uint32_t time_bucket, std::size_t buckets) {
  return mix64((static_cast<std::uint64_t>(surface_id) << 32) | time_bucket) % buckets;
}

std::vector<std::uint8_t> unified_attention_mask(std::size_t n_history, std::size_t n_targets) {
  const std::size_t n = n_history + n_targets;
  std::vector<std::uint8_t> mask(n * n, 0);
  for (std::size_t i = 0; i < n_history; ++i)
    for (std::size_t j = 0; j <= i; ++j) mask[i * n + j] = 1;
  for (std::size_t t = 0; t < n_targets; ++t) {
    const std::size_t row = n_history + t;
    for (std::size_t j = 0; j < n_history; ++j) mask[row * n + j] = 1;
    mask[row * n + row] = 1;
  }
  return mask;
}

SequenceEncoder::SequenceEncoder(EncoderConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

std::string SequenceEncoder::layer_block(std::size_t layer, const std::string& name) const {
  return cfg_.prefix + "/layer" + std::to_string(layer) + "/" + name;
}

std::vector<std::string> SequenceEncoder::block_names() const {
  std::vector<std::string> names = {block("item_table"), block("ctx_table"), block("action_table")};
  if (!cfg_.identity_item_transform) {
    for (const char* n : {"f_w1", "f_b1", "f_w2", "f_b2"}) names.push_back(block(n));
  }
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    for (const char* n : {"wq", "wk", "wv", "wu", "wo"}) names.push_back(layer_block(l, n));
  }
  return names;
}

void SequenceEncoder::init_weights(ParamSet& params, std::mt19937_64& rng) const {
  const double s = cfg_.init_scale;
  const std::size_t d = cfg_.dim;
  params.add(block("item_table"), Tensor::randn(cfg_.item_buckets, cfg_.item_dim, 0.1 * s, rng));
  params.add(block("ctx_table"), Tensor::randn(cfg_.ctx_buckets, cfg_.ctx_dim, 0.1 * s, rng));
  params.add(block("action_table"), Tensor::randn(cfg_.action_types, d, 0.1 * s, rng));
  if (!cfg_.identity_item_transform) {
    const std::size_t in = cfg_.item_dim + cfg_.ctx_dim;
    params.add(block("f_w1"), Tensor::randn(in, cfg_.item_hidden, s / std::sqrt(double(in)), rng));
    params.add(block("f_b1"), Tensor(1, cfg_.item_hidden));
    params.add(block("f_w2"), Tensor::randn(cfg_.item_hidden, d, s / std::sqrt(double(cfg_.item_hidden)), rng));
    params.add(block("f_b2"), Tensor(1, d));
  }
  const double proj = s / std::sqrt(double(d));
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    for (const char* n : {"wq", "wk", "wv", "wu"}) params.add(layer_block(l, n), Tensor::randn(d, d, proj, rng));
    params.add(layer_block(l, "wo"), Tensor::randn(d, d, proj / std::sqrt(double(2 * cfg_.layers)), rng));
  }
}

Var SequenceEncoder::embed_items(Tape& tape, const ParamSet& w, std::span<const ItemFeatures> items) const {
  std::vector<int> item_idx, ctx_idx, act_idx;
  item_idx.reserve(items.size());
  ctx_idx.reserve(items.size());
  act_idx.reserve(items.size());
  for (const auto& it : items) {
    item_idx.push_back(static_cast<int>(hash_item(it.item_id, cfg_.item_buckets)));
    ctx_idx.push_back(static_cast<int>(hash_context(it.surface_id, it.time_bucket, cfg_.ctx_buckets)));
    if (it.action && *it.action >= cfg_.action_types) {
      throw ContractViolation("action " + std::to_string(*it.action) + " out of range");
    }
    act_idx.push_back(it.action ? static_cast<int>(*it.action) : -1);
  }
  Var x = concat_cols(gather_rows(tape.param(w, block("item_table")), item_idx),
                      gather_rows(tape.param(w, block("ctx_table")), ctx_idx));
  if (!cfg_.identity_item_transform) {
    Var h = silu(add(matmul(x, tape.param(w, block("f_w1"))), tape.param(w, block("f_b1"))));
    x = add(matmul(h, tape.param(w, block("f_w2"))), tape.param(w, block("f_b2")));
  }
  return add(x, gather_rows(tape.param(w, block("action_table")), act_idx));
}

Var SequenceEncoder::embed_history_item(Tape& tape, const ParamSet& w, const ItemFeatures& feat) const {
  if (!feat.action) throw ContractViolation("history item without action");
  return embed_items(tape, w, std::span(&feat, 1));
}

Var SequenceEncoder::embed_target_item(Tape& tape, const ParamSet& w, const ItemFeatures& feat) const {
  if (feat.action) throw ContractViolation("target item carries an action");
  return embed_items(tape, w, std::span(&feat, 1));
}

UnifiedSequence SequenceEncoder::build_unified_sequence(Tape& tape, const ParamSet& w,
                                                        std::span<const ItemFeatures> history,
                                                        std::span<const ItemFeatures> targets) const {
  if (targets.empty()) throw ContractViolation("unified sequence needs at least one target");
  if (history.size() > cfg_.max_history) history = history.subspan(history.size() - cfg_.max_history);
  std::vector<ItemFeatures> items;
  items.reserve(history.size() + targets.size());
  for (const auto& h : history) {
    if (!h.action) throw ContractViolation("history item without action");
    items.push_back(h);
  }
  for (const auto& t : targets) {
    if (t.action) throw ContractViolation("target item carries an action");
    items.push_back(t);
  }
  UnifiedSequence seq;
  seq.positions = embed_items(tape, w, items);
  seq.n_history = history.size();
  seq.n_targets = targets.size();
  seq.mask = unified_attention_mask(seq.n_history, seq.n_targets);
  return seq;
}

Var SequenceEncoder::encode_all(Tape& tape, const ParamSet& w, const UnifiedSequence& seq) const {
  const double inv_sqrt_d = 1.0 / std::sqrt(double(cfg_.dim));
  Var x = seq.positions;
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    Var h = layer_norm(x);
    Var q = matmul(h, tape.param(w, layer_block(l, "wq")));
    Var k = matmul(h, tape.param(w, layer_block(l, "wk")));
    Var v = matmul(h, tape.param(w, layer_block(l, "wv")));
    Var u = matmul(h, tape.param(w, layer_block(l, "wu")));
    Var attn = masked_softmax(scale(matmul_nt(q, k), inv_sqrt_d), seq.mask);
    Var gated = mul(matmul(attn, v), silu(u));
    x = add(x, matmul(gated, tape.param(w, layer_block(l, "wo"))));
  }
  return x;
}

Var SequenceEncoder::encode(Tape& tape, const ParamSet& w, const UnifiedSequence& seq) const {
  return slice_rows(encode_all(tape, w, seq), seq.n_history, seq.length());
}

Tensor SequenceEncoder::embed(const ParamSet& w, std::span<const ItemFeatures> history,
                              std::span<const ItemFeatures> targets) const {
  Tape tape;
  auto seq = build_unified_sequence(tape, w, history, targets);
  return encode(tape, w, seq).value();
}

}  // namespace fmx
