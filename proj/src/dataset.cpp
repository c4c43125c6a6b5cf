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

#include "fmx/dataset.hpp"

namespace fmx {

std::vector<RequestRange> request_ranges(const Stream& stream) {
  std::vector<RequestRange> out;
  const auto& ev = stream.events;
  for (std::size_t i = 0; i < ev.size();) {
    std::size_t j = i + 1;
    while (j < ev.size() && ev[j].request_id == ev[i].request_id) ++j;
    out.push_back({i, j});
    i = j;
  }
  return out;
}

std::vector<RequestRange> request_ranges(const Stream& stream, std::span<const TrainingExample> examples) {
  std::vector<RequestRange> out;
  const auto& ev = stream.events;
  for (std::size_t i = 0; i < examples.size();) {
    std::size_t j = i + 1;
    while (j < examples.size() && ev[examples[j].event].request_id == ev[examples[i].event].request_id) ++j;
    out.push_back({i, j});
    i = j;
  }
  return out;
}

std::vector<std::size_t> catalog_indices(const TaskCatalog& catalog, const std::vector<TaskSpec>& tasks) {
  std::vector<std::size_t> out;
  for (const auto& t : tasks) {
    const auto idx = catalog.index(t.name);
    if (!idx) throw ConfigurationError("task " + t.name + " is not in the stream's task catalog");
    out.push_back(*idx);
  }
  return out;
}

void fill_labels(const Stream& stream, std::span<const std::size_t> events, const std::vector<std::size_t>& task_map,
                 std::vector<std::vector<double>>& labels, std::vector<std::vector<double>>& mask) {
  labels.assign(task_map.size(), std::vector<double>(events.size(), 0.0));
  mask.assign(task_map.size(), std::vector<double>(events.size(), 0.0));
  for (std::size_t t = 0; t < task_map.size(); ++t) {
    for (std::size_t i = 0; i < events.size(); ++i) {
      const std::int8_t y = stream.events[events[i]].labels[task_map[t]];
      if (y < 0) continue;
      labels[t][i] = y;
      mask[t][i] = 1.0;
    }
  }
}

FMRequest make_fm_request(const Stream& stream, std::span<const std::size_t> events, const FMConfig& cfg,
                          const std::vector<std::size_t>& task_map) {
  if (events.empty()) throw ContractViolation("request with no events");
  const auto& first = stream.events[events.front()];
  FMRequest req;
  req.surface_id = first.surface_id;
  req.history = history_features(stream.history(events.front()), first.ts, cfg.encoder.max_history);
  req.aux_features = Tensor(events.size(), cfg.aux_feature_dim);
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = stream.events[events[i]];
    req.targets.push_back(target_item_features(e));
    for (std::size_t f = 0; f < cfg.aux_feature_dim && f < e.ctx.size(); ++f) req.aux_features.at(i, f) = e.ctx[f];
  }
  fill_labels(stream, events, task_map, req.labels, req.mask);
  return req;
}

ExpertRequest make_expert_request(const Stream& stream, std::span<const TrainingExample> examples,
                                  const ExpertConfig& cfg, const std::vector<std::size_t>& task_map,
                                  const std::string& ue_version, ExpertInputStats* stats) {
  if (examples.empty()) throw ContractViolation("request with no examples");
  std::vector<std::size_t> events;
  for (const auto& ex : examples) events.push_back(ex.event);
  const auto& first = stream.events[events.front()];
  const std::size_t m = events.size();

  ExpertRequest req;
  req.fm_version = cfg.fm_version;
  req.short_history = history_features(stream.history(events.front()), first.ts, cfg.short_history_len());
  req.surface_features = Tensor(m, cfg.surface_feature_dim);
  if (cfg.fm_dim > 0) req.fm_embeddings = Tensor(m, cfg.fm_dim);
  if (cfg.ue_dim > 0) req.user_embedding = Tensor(1, cfg.ue_dim);
  bool have_ue = false;
  for (std::size_t i = 0; i < m; ++i) {
    const auto& e = stream.events[events[i]];
    req.candidates.push_back(target_item_features(e));
    for (std::size_t f = 0; f < cfg.surface_feature_dim && f < e.ctx.size(); ++f) req.surface_features.at(i, f) = e.ctx[f];
    if (cfg.fm_dim > 0) {
      const auto it = examples[i].embeddings.find(cfg.fm_version);
      if (it != examples[i].embeddings.end() && it->second) {
        if (it->second->size() != cfg.fm_dim)
          throw VersionMismatch("embedding for version " + cfg.fm_version + " has dimension " +
                                std::to_string(it->second->size()) + ", expert expects " + std::to_string(cfg.fm_dim));
        std::copy(it->second->begin(), it->second->end(), req.fm_embeddings.row_span(i).begin());
      } else if (stats) {
        ++stats->missing_fm;
      }
    }
    if (cfg.ue_dim > 0 && !have_ue) {
      const auto it = examples[i].embeddings.find(ue_version);
      if (it != examples[i].embeddings.end() && it->second && it->second->size() == cfg.ue_dim) {
        std::copy(it->second->begin(), it->second->end(), req.user_embedding.values.begin());
        have_ue = true;
      }
    }
  }
  if (cfg.ue_dim > 0 && !have_ue && stats) ++stats->missing_ue;
  fill_labels(stream, events, task_map, req.labels, req.mask);
  return req;
}

}  // namespace fmx
