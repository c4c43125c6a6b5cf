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

#include "fmx/foundation.hpp"

#include <algorithm>
#include <cmath>

namespace fmx {

void TaskSpec::validate() const {
  if (!(weight > 0.0)) throw ConfigurationError("task " + name + ": weight must be positive");
  if (kind == TaskKind::kMain && !surface_scope.empty()) {
    throw ConfigurationError("task " + name + ": main tasks have universal scope");
  }
  if (kind == TaskKind::kAux && surface_scope.empty()) {
    throw ConfigurationError("task " + name + ": aux task needs a surface scope");
  }
}

LossReport masked_multitask_loss(const std::vector<std::vector<std::vector<double>>>& logits,
                                 const LabeledBatch& batch, const std::vector<TaskSpec>& tasks) {
  LossReport rep;
  rep.per_task.assign(tasks.size(), 0.0);
  rep.skipped.assign(tasks.size(), false);
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    double num = 0.0, den = 0.0;
    for (std::size_t r = 0; r < batch.size(); ++r) {
      const auto& z = logits[r][t];
      for (std::size_t i = 0; i < z.size(); ++i) {
        const double m = batch[r].mask[t][i];
        if (m == 0.0) continue;
        num += m * binary_cross_entropy(batch[r].labels[t][i], 1.0 / (1.0 + std::exp(-z[i])));
        den += m;
      }
    }
    if (den == 0.0) {
      rep.skipped[t] = true;
      continue;
    }
    rep.per_task[t] = num / den;
    rep.total += tasks[t].weight * rep.per_task[t];
  }
  return rep;
}

FoundationModel::FoundationModel(FMConfig cfg) : cfg_(std::move(cfg)), encoder_(cfg_.encoder) {
  std::set<std::string> seen;
  for (std::size_t t = 0; t < cfg_.tasks.size(); ++t) {
    const auto& task = cfg_.tasks[t];
    task.validate();
    if (!seen.insert(task.name).second) throw ConfigurationError("duplicate task " + task.name);
    if (task.kind == TaskKind::kMain) {
      main_tasks_.push_back(t);
      continue;
    }
    for (auto s : task.surface_scope) {
      if (std::find(cfg_.surfaces.begin(), cfg_.surfaces.end(), s) == cfg_.surfaces.end()) {
        throw ConfigurationError("task " + task.name + " scoped to unknown surface " + std::to_string(s));
      }
      aux_by_surface_[s].push_back(t);
    }
  }
  if (main_tasks_.empty()) throw ConfigurationError("foundation model needs at least one main task");
}

std::string FoundationModel::align_block(std::uint32_t surface, const std::string& name) const {
  return "align/s" + std::to_string(surface) + "/" + name;
}

std::vector<std::size_t> FoundationModel::aux_tasks_for_surface(std::uint32_t surface) const {
  auto it = aux_by_surface_.find(surface);
  return it == aux_by_surface_.end() ? std::vector<std::size_t>{} : it->second;
}

std::optional<std::size_t> FoundationModel::task_index(const std::string& name) const {
  for (std::size_t t = 0; t < cfg_.tasks.size(); ++t)
    if (cfg_.tasks[t].name == name) return t;
  return std::nullopt;
}

void FoundationModel::init_weights(ParamSet& params, std::mt19937_64& rng) const {
  encoder_.init_weights(params, rng);
  const std::size_t d = cfg_.encoder.dim;
  params.add("mt/w", Tensor::randn(d, main_tasks_.size(), 1.0 / std::sqrt(double(d)), rng));
  params.add("mt/b", Tensor(1, main_tasks_.size()));
  for (const auto& [surface, tasks] : aux_by_surface_) {
    const std::size_t in = d + cfg_.aux_feature_dim;
    const std::size_t h = cfg_.alignment_hidden;
    params.add(align_block(surface, "w1"), Tensor::randn(in, h, 1.0 / std::sqrt(double(in)), rng));
    params.add(align_block(surface, "b1"), Tensor(1, h));
    params.add(align_block(surface, "w2"), Tensor::randn(h, tasks.size(), 1.0 / std::sqrt(double(h)), rng));
    params.add(align_block(surface, "b2"), Tensor(1, tasks.size()));
  }
}

void FoundationModel::check_request(const FMRequest& req) const {
  if (std::find(cfg_.surfaces.begin(), cfg_.surfaces.end(), req.surface_id) == cfg_.surfaces.end()) {
    throw ConfigurationError("unknown surface id " + std::to_string(req.surface_id));
  }
  const std::size_t m = req.targets.size();
  if (req.aux_features.rows != m || req.aux_features.cols != cfg_.aux_feature_dim) {
    throw DimensionError("aux features must be " + std::to_string(m) + "x" + std::to_string(cfg_.aux_feature_dim));
  }
}

FoundationModel::Graph FoundationModel::forward(Tape& tape, const ParamSet& w, const FMRequest& req) const {
  check_request(req);
  Graph g;
  auto seq = encoder_.build_unified_sequence(tape, w, req.history, req.targets);
  g.embeddings = encoder_.encode(tape, w, seq);
  g.main_logits = add(matmul(g.embeddings, tape.param(w, "mt/w")), tape.param(w, "mt/b"));
  const auto aux = aux_tasks_for_surface(req.surface_id);
  if (!aux.empty()) {
    const auto s = req.surface_id;
    Var x = concat_cols(g.embeddings, tape.constant(req.aux_features));
    Var h = silu(add(matmul(x, tape.param(w, align_block(s, "w1"))), tape.param(w, align_block(s, "b1"))));
    Var out = add(matmul(h, tape.param(w, align_block(s, "w2"))), tape.param(w, align_block(s, "b2")));
    // Split columns into per-task M x 1 logits via a one-hot projection.
    for (std::size_t k = 0; k < aux.size(); ++k) {
      Tensor pick(aux.size(), 1);
      pick.at(k, 0) = 1.0;
      g.aux_logits[aux[k]] = matmul(out, tape.constant(std::move(pick)));
    }
  }
  return g;
}

FMOutput FoundationModel::fm_forward(const ParamSet& w, const FMRequest& req) const {
  Tape tape;
  auto g = forward(tape, w, req);
  FMOutput out;
  out.embeddings = g.embeddings.value();
  out.main_logits = g.main_logits.value();
  for (const auto& [t, v] : g.aux_logits) out.aux_logits[cfg_.tasks[t].name] = v.value();
  return out;
}

LossReport FoundationModel::fm_loss(const std::vector<FMOutput>& outputs, const LabeledBatch& batch) const {
  if (outputs.size() != batch.size()) throw DimensionError("fm_loss: outputs and batch differ in size");
  std::vector<std::vector<std::vector<double>>> logits(batch.size(),
                                                       std::vector<std::vector<double>>(cfg_.tasks.size()));
  for (std::size_t r = 0; r < batch.size(); ++r) {
    for (std::size_t k = 0; k < main_tasks_.size(); ++k) {
      auto& z = logits[r][main_tasks_[k]];
      for (std::size_t i = 0; i < outputs[r].main_logits.rows; ++i) z.push_back(outputs[r].main_logits.at(i, k));
    }
    for (const auto& [name, v] : outputs[r].aux_logits) logits[r][*task_index(name)] = v.values;
  }
  return masked_multitask_loss(logits, batch, cfg_.tasks);
}

Grads FoundationModel::gradients(const ParamSet& w, const LabeledBatch& batch, LossReport& report) const {
  const std::size_t n_tasks = cfg_.tasks.size();
  // Normalizers span the whole batch, so each request contributes sum(mask*bce)/den.
  std::vector<double> den(n_tasks, 0.0);
  for (const auto& req : batch) {
    check_request(req);
    const auto aux = aux_tasks_for_surface(req.surface_id);
    for (std::size_t t = 0; t < n_tasks; ++t) {
      const bool has_logit = cfg_.tasks[t].kind == TaskKind::kMain || std::find(aux.begin(), aux.end(), t) != aux.end();
      if (!has_logit) continue;
      for (double m : req.mask[t]) den[t] += m;
    }
  }
  report = LossReport{};
  report.per_task.assign(n_tasks, 0.0);
  report.skipped.assign(n_tasks, false);
  for (std::size_t t = 0; t < n_tasks; ++t) report.skipped[t] = den[t] == 0.0;

  Grads total;
  for (const auto& req : batch) {
    Tape tape;
    auto g = forward(tape, w, req);
    std::vector<Var> terms;
    auto add_term = [&](std::size_t t, Var z) {
      if (den[t] == 0.0) return;
      const double coef = cfg_.tasks[t].weight / den[t];
      std::vector<double> weights(req.mask[t].size());
      for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = coef * req.mask[t][i];
      Var l = weighted_bce_with_logits(z, req.labels[t], weights);
      report.per_task[t] += l.scalar() / cfg_.tasks[t].weight;
      terms.push_back(l);
    };
    for (std::size_t k = 0; k < main_tasks_.size(); ++k) {
      Tensor pick(main_tasks_.size(), 1);
      pick.at(k, 0) = 1.0;
      add_term(main_tasks_[k], matmul(g.main_logits, tape.constant(std::move(pick))));
    }
    for (const auto& [t, z] : g.aux_logits) add_term(t, z);
    if (terms.empty()) continue;
    Var loss = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) loss = add(loss, terms[i]);
    tape.backward(loss);
    accumulate(total, tape.gradients());
  }
  for (std::size_t t = 0; t < n_tasks; ++t) report.total += cfg_.tasks[t].weight * report.per_task[t];
  return total;
}

LossReport FoundationModel::fm_train_step(const LabeledBatch& batch, ParamSet& w, AdamState& opt,
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

bool FoundationModel::is_inference_block(const std::string& name) const {
  return name.rfind(cfg_.encoder.prefix + "/", 0) == 0;
}

ParamSet FoundationModel::export_inference_subgraph(const ParamSet& w) const {
  ParamSet out;
  for (const auto& [name, p] : w)
    if (is_inference_block(name)) out.add(name, p.value, p.counter);
  return out;
}

}  // namespace fmx
