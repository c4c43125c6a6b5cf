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

#include "fmx/expert.hpp"

#include <cmath>
#include <sstream>

namespace fmx {

void ExpertConfig::validate() const {
  if (tasks.empty()) throw ConfigurationError("expert needs at least one task");
  for (const auto& t : tasks) t.validate();
  if (fm_dim > 0 && fm_version.empty()) throw ConfigurationError("expert with FM pathway needs an fm_version");
  if (noise_sigma < 0.0 || dropout < 0.0 || dropout >= 1.0) {
    throw ConfigurationError("expert noise/dropout out of range");
  }
  short_encoder.validate();
}

ExpertModel::ExpertModel(ExpertConfig cfg) : cfg_(std::move(cfg)), short_(cfg_.short_encoder) { cfg_.validate(); }

bool ExpertModel::is_fm_module_block(const std::string& name) const {
  return name.rfind("fm_embed/", 0) == 0 || name.rfind("fm_fusion/", 0) == 0;
}

void ExpertModel::init_weights(ParamSet& params, std::mt19937_64& rng) const {
  short_.init_weights(params, rng);
  auto dense = [&](const std::string& prefix, std::size_t in, std::size_t out) {
    params.add(prefix + "/w", Tensor::randn(in, out, 1.0 / std::sqrt(double(in)), rng));
    params.add(prefix + "/b", Tensor(1, out));
  };
  if (cfg_.fm_dim > 0) {
    params.add("fm_embed/gain", Tensor(1, cfg_.fm_dim, 1.0));
    params.add("fm_embed/bias", Tensor(1, cfg_.fm_dim));
  }
  if (cfg_.ue_dim > 0) {
    params.add("ue_embed/gain", Tensor(1, cfg_.ue_dim, 1.0));
    params.add("ue_embed/bias", Tensor(1, cfg_.ue_dim));
  }
  const std::size_t fusion_in = cfg_.fm_dim + cfg_.ue_dim + cfg_.short_encoder.dim;
  dense("fm_fusion/l1", fusion_in, cfg_.fusion_hidden);
  dense("fm_fusion/l2", cfg_.fusion_hidden, cfg_.fusion_out);
  dense("expert_fusion/l1", cfg_.fusion_out + cfg_.surface_feature_dim, cfg_.expert_hidden);
  dense("heads", cfg_.expert_hidden, cfg_.tasks.size());
}

void ExpertModel::check_request(const ExpertRequest& req) const {
  const std::size_t m = req.candidates.size();
  if (m == 0) throw ContractViolation("expert request without candidates");
  if (cfg_.fm_dim > 0) {
    if (req.fm_version != cfg_.fm_version) {
      throw VersionMismatch("expert pinned to FM version '" + cfg_.fm_version + "' got '" + req.fm_version + "'");
    }
    if (req.fm_embeddings.rows != m || req.fm_embeddings.cols != cfg_.fm_dim) {
      throw DimensionError("fm embeddings must be " + std::to_string(m) + "x" + std::to_string(cfg_.fm_dim));
    }
    if (!req.fm_embeddings.all_finite()) throw ContractViolation("non-finite FM embedding");
  }
  if (cfg_.ue_dim > 0 && (req.user_embedding.rows != 1 || req.user_embedding.cols != cfg_.ue_dim)) {
    throw DimensionError("user embedding must be 1x" + std::to_string(cfg_.ue_dim));
  }
  if (req.surface_features.rows != m || req.surface_features.cols != cfg_.surface_feature_dim) {
    throw DimensionError("surface features must be " + std::to_string(m) + "x" +
                         std::to_string(cfg_.surface_feature_dim));
  }
}

Var ExpertModel::fm_embedding_module(Tape& tape, const ParamSet& w, Var e, Mode mode, std::mt19937_64* rng,
                                     const std::string& prefix) const {
  if (!e.value().all_finite()) throw ContractViolation("non-finite FM embedding");
  Var x = add(mul(layer_norm(e), tape.param(w, prefix + "/gain")), tape.param(w, prefix + "/bias"));
  if (mode != Mode::kTraining || (cfg_.noise_sigma == 0.0 && cfg_.dropout == 0.0)) return x;
  if (rng == nullptr) throw ContractViolation("training mode needs an rng");
  const Tensor& xv = x.value();
  if (cfg_.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg_.noise_sigma);
    Tensor n(xv.rows, xv.cols);
    for (auto& v : n.values) v = noise(*rng);
    x = add(x, tape.constant(std::move(n)));
  }
  if (cfg_.dropout > 0.0) {
    std::bernoulli_distribution keep(1.0 - cfg_.dropout);
    Tensor m(xv.rows, xv.cols);
    for (auto& v : m.values) v = keep(*rng) ? 1.0 / (1.0 - cfg_.dropout) : 0.0;
    x = mul_const(x, m);
  }
  return x;
}

Var ExpertModel::forward(Tape& tape, const ParamSet& w, const ExpertRequest& req, Mode mode,
                         std::mt19937_64* rng) const {
  check_request(req);
  const std::size_t m = req.candidates.size();
  auto seq = short_.build_unified_sequence(tape, w, req.short_history, req.candidates);
  Var fusion_in = short_.encode(tape, w, seq);
  if (cfg_.ue_dim > 0) {
    Tensor tiled(m, cfg_.ue_dim);
    for (std::size_t i = 0; i < m; ++i)
      std::copy(req.user_embedding.values.begin(), req.user_embedding.values.end(), tiled.row_span(i).begin());
    Var ue = fm_embedding_module(tape, w, tape.constant(std::move(tiled)), mode, rng, "ue_embed");
    fusion_in = concat_cols(ue, fusion_in);
  }
  if (cfg_.fm_dim > 0) {
    Var fm = fm_embedding_module(tape, w, tape.constant(req.fm_embeddings), mode, rng);
    fusion_in = concat_cols(fm, fusion_in);
  }
  auto dense = [&](Var x, const std::string& prefix) {
    return add(matmul(x, tape.param(w, prefix + "/w")), tape.param(w, prefix + "/b"));
  };
  Var fused = dense(silu(dense(fusion_in, "fm_fusion/l1")), "fm_fusion/l2");
  Var h = silu(dense(concat_cols(fused, tape.constant(req.surface_features)), "expert_fusion/l1"));
  return dense(h, "heads");
}

Tensor ExpertModel::predict_logits(const ParamSet& w, const ExpertRequest& req) const {
  Tape tape;
  return forward(tape, w, req).value();
}

Tensor ExpertModel::predict_probabilities(const ParamSet& w, const ExpertRequest& req) const {
  Tensor p = predict_logits(w, req);
  for (auto& v : p.values) v = clip_probability(1.0 / (1.0 + std::exp(-v)));
  return p;
}

std::uint64_t ExpertModel::forward_flops(const ParamSet& w, const ExpertRequest& req) const {
  Tape tape;
  forward(tape, w, req);
  return tape.flops();
}

Grads ExpertModel::gradients(const ParamSet& w, const ExpertBatch& batch, LossReport& report,
                             std::mt19937_64& rng) const {
  const std::size_t n_tasks = cfg_.tasks.size();
  std::vector<double> den(n_tasks, 0.0);
  for (const auto& req : batch)
    for (std::size_t t = 0; t < n_tasks; ++t)
      for (double m : req.mask[t]) den[t] += m;
  report = LossReport{};
  report.per_task.assign(n_tasks, 0.0);
  report.skipped.assign(n_tasks, false);
  for (std::size_t t = 0; t < n_tasks; ++t) report.skipped[t] = den[t] == 0.0;

  Grads total;
  for (const auto& req : batch) {
    Tape tape;
    Var logits = forward(tape, w, req, Mode::kTraining, &rng);
    Var loss;
    bool any = false;
    for (std::size_t t = 0; t < n_tasks; ++t) {
      if (den[t] == 0.0) continue;
      const double coef = cfg_.tasks[t].weight / den[t];
      std::vector<double> weights(req.mask[t].size());
      for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = coef * req.mask[t][i];
      Tensor pick(n_tasks, 1);
      pick.at(t, 0) = 1.0;
      Var l = weighted_bce_with_logits(matmul(logits, tape.constant(std::move(pick))), req.labels[t], weights);
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

LossReport ExpertModel::expert_train_step(const ExpertBatch& batch, ParamSet& w, AdamState& opt,
                                          const AdamConfig& adam, std::mt19937_64& rng) const {
  LossReport report;
  Grads grads = gradients(w, batch, report, rng);
  if (!std::isfinite(report.total)) {
    report.aborted = true;
    report.error = "non-finite loss";
    return report;
  }
  adam_step(w, grads, adam, opt);
  return report;
}

void ExpertModel::warm_start(ParamSet& w, const ParamSet& donor, std::mt19937_64& rng) const {
  std::vector<std::string> problems;
  for (const auto& [name, p] : w) {
    if (is_fm_module_block(name)) continue;
    if (!donor.contains(name)) {
      problems.push_back(name + " (missing in donor)");
    } else if (!donor.value(name).same_shape(p.value)) {
      problems.push_back(name + " (shape mismatch)");
    }
  }
  if (!problems.empty()) {
    std::ostringstream os;
    os << "warm start failed for blocks:";
    for (const auto& p : problems) os << " " << p;
    throw ConfigurationError(os.str());
  }
  ParamSet fresh;
  init_weights(fresh, rng);
  for (auto& [name, p] : w) {
    if (is_fm_module_block(name)) {
      p = fresh.at(name);
    } else {
      p.value = donor.value(name);
    }
  }
}

}  // namespace fmx
