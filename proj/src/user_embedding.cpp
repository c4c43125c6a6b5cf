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

#include "fmx/user_embedding.hpp"

#include <cmath>

namespace fmx {

UserEmbeddingModel::UserEmbeddingModel(UEConfig cfg) : cfg_(std::move(cfg)), encoder_(cfg_.encoder) {
  if (cfg_.tasks.empty()) throw ConfigurationError("user embedding model needs at least one task");
  for (const auto& t : cfg_.tasks) t.validate();
}

void UserEmbeddingModel::init_weights(ParamSet& params, std::mt19937_64& rng) const {
  encoder_.init_weights(params, rng);
  const std::size_t d = dim();
  params.add(cfg_.encoder.prefix + "_head/w", Tensor::randn(2 * d, cfg_.tasks.size(), 1.0 / std::sqrt(2.0 * d), rng));
  params.add(cfg_.encoder.prefix + "_head/b", Tensor(1, cfg_.tasks.size()));
}

Var UserEmbeddingModel::user_embedding(Tape& tape, const ParamSet& w, std::span<const ItemFeatures> history) const {
  if (history.empty()) return tape.constant(Tensor(1, dim()));
  if (history.size() > cfg_.encoder.max_history) history = history.subspan(history.size() - cfg_.encoder.max_history);
  UnifiedSequence seq;
  seq.positions = encoder_.embed_items(tape, w, history);
  seq.n_history = history.size();
  seq.mask = unified_attention_mask(seq.n_history, 0);
  Var h = encoder_.encode_all(tape, w, seq);
  return slice_rows(h, seq.n_history - 1, seq.n_history);
}

Tensor UserEmbeddingModel::embed_user(const ParamSet& w, std::span<const ItemFeatures> history) const {
  Tape tape;
  return user_embedding(tape, w, history).value();
}

Var UserEmbeddingModel::forward(Tape& tape, const ParamSet& w, const FMRequest& req) const {
  Var u = user_embedding(tape, w, req.history);
  Var t = encoder_.embed_items(tape, w, req.targets);
  Var x = concat_cols(mul(t, u), t);
  const auto& p = cfg_.encoder.prefix;
  return add(matmul(x, tape.param(w, p + "_head/w")), tape.param(w, p + "_head/b"));
}

Grads UserEmbeddingModel::gradients(const ParamSet& w, const LabeledBatch& batch, LossReport& report) const {
  const std::size_t n_tasks = cfg_.tasks.size();
  std::vector<double> den(n_tasks, 0.0);
  for (const auto& req : batch)
    for (std::size_t t = 0; t < n_tasks; ++t)
      for (double m : req.mask.at(t)) den[t] += m;
  report = LossReport{};
  report.per_task.assign(n_tasks, 0.0);
  report.skipped.assign(n_tasks, false);
  for (std::size_t t = 0; t < n_tasks; ++t) report.skipped[t] = den[t] == 0.0;

  Grads total;
  for (const auto& req : batch) {
    Tape tape;
    Var logits = forward(tape, w, req);
    Var loss;
    bool any = false;
    for (std::size_t t = 0; t < n_tasks; ++t) {
      if (den[t] == 0.0) continue;
      Tensor pick(n_tasks, 1);
      pick.at(t, 0) = 1.0;
      Var z = matmul(logits, tape.constant(std::move(pick)));
      const double coef = cfg_.tasks[t].weight / den[t];
      std::vector<double> weights(req.mask[t].size());
      for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = coef * req.mask[t][i];
      Var l = weighted_bce_with_logits(z, req.labels[t], weights);
      report.per_task[t] += l.scalar() / cfg_.tasks[t].weight;
      loss = any ? add(loss, l) : l;
      any = true;
    }
    if (!any) continue;
    tape.backward(loss);
    accumulate(total, tape.gradients());
  }
  for (std::size_t t = 0; t < n_tasks; ++t) report.total += cfg_.tasks[t].weight * report.per_task[t];
  return total;
}

LossReport UserEmbeddingModel::train_step(const LabeledBatch& batch, ParamSet& w, AdamState& opt,
                                          const AdamConfig& adam) const {
  LossReport report;
  Grads grads = gradients(w, batch, report);
  if (!std::isfinite(report.total)) {
    report.aborted = true;
    report.error = "non-finite loss";
    return report;
  }
  adam_step(w, grads, adam, opt);
  return report;
}

}  // namespace fmx
