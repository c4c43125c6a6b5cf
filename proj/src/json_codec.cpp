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

#include "fmx/json_codec.hpp"

#include "fmx/hypercast/wire.hpp"

namespace fmx {

StrictObject::StrictObject(const json& j, std::string context) : j_(&j), context_(std::move(context)) {
  if (!j.is_object()) throw ConfigError(context_ + " must be an object");
}

const json& StrictObject::raw(const std::string& key) {
  if (!j_->contains(key)) throw ConfigError("missing config key '" + key + "' in " + context_);
  seen_.insert(key);
  return j_->at(key);
}

void StrictObject::finish() const {
  for (const auto& [key, value] : j_->items())
    if (!seen_.contains(key)) throw ConfigError("unknown config key '" + key + "' in " + context_);
}

json to_json(const EncoderConfig& c) {
  return json{{"prefix", c.prefix},
              {"dim", c.dim},
              {"layers", c.layers},
              {"max_history", c.max_history},
              {"item_buckets", c.item_buckets},
              {"ctx_buckets", c.ctx_buckets},
              {"action_types", c.action_types},
              {"item_dim", c.item_dim},
              {"ctx_dim", c.ctx_dim},
              {"item_hidden", c.item_hidden},
              {"identity_item_transform", c.identity_item_transform},
              {"init_scale", c.init_scale}};
}

EncoderConfig encoder_config_from_json(const json& j, const std::string& context) {
  EncoderConfig c;
  StrictObject o(j, context);
  o.get("prefix", c.prefix);
  o.get("dim", c.dim);
  o.get("layers", c.layers);
  o.get("max_history", c.max_history);
  o.get("item_buckets", c.item_buckets);
  o.get("ctx_buckets", c.ctx_buckets);
  o.get("action_types", c.action_types);
  o.get("item_dim", c.item_dim);
  o.get("ctx_dim", c.ctx_dim);
  o.get("item_hidden", c.item_hidden);
  o.get("identity_item_transform", c.identity_item_transform);
  o.get("init_scale", c.init_scale);
  o.finish();
  try {
    c.validate();
  } catch (const std::exception& e) {
    throw ConfigError(context + ": " + e.what());
  }
  return c;
}

json to_json(const TaskSpec& t) {
  json j{{"name", t.name}, {"kind", t.kind == TaskKind::kMain ? "main" : "aux"}, {"weight", t.weight}};
  if (t.kind == TaskKind::kAux) j["surfaces"] = std::vector<std::uint32_t>(t.surface_scope.begin(), t.surface_scope.end());
  return j;
}

TaskSpec task_spec_from_json(const json& j, const std::string& context) {
  TaskSpec t;
  StrictObject o(j, context);
  o.require("name", t.name);
  std::string kind = "main";
  o.get("kind", kind);
  if (kind == "main") {
    t.kind = TaskKind::kMain;
  } else if (kind == "aux") {
    t.kind = TaskKind::kAux;
  } else {
    throw ConfigError(context + ".kind must be \"main\" or \"aux\"");
  }
  std::vector<std::uint32_t> surfaces;
  o.get("surfaces", surfaces);
  t.surface_scope = {surfaces.begin(), surfaces.end()};
  o.get("weight", t.weight);
  o.finish();
  try {
    t.validate();
  } catch (const std::exception& e) {
    throw ConfigError(context + ": " + e.what());
  }
  return t;
}

json to_json(const FMConfig& c) {
  json tasks = json::array();
  for (const auto& t : c.tasks) tasks.push_back(to_json(t));
  return json{{"encoder", to_json(c.encoder)},
              {"tasks", tasks},
              {"surfaces", c.surfaces},
              {"aux_feature_dim", c.aux_feature_dim},
              {"alignment_hidden", c.alignment_hidden}};
}

FMConfig fm_config_from_json(const json& j, const std::string& context) {
  FMConfig c;
  StrictObject o(j, context);
  if (o.has("encoder")) c.encoder = encoder_config_from_json(o.raw("encoder"), context + ".encoder");
  if (o.has("tasks")) {
    const auto& arr = o.raw("tasks");
    if (!arr.is_array()) throw ConfigError(context + ".tasks must be an array");
    for (std::size_t i = 0; i < arr.size(); ++i)
      c.tasks.push_back(task_spec_from_json(arr[i], context + ".tasks[" + std::to_string(i) + "]"));
  }
  o.get("surfaces", c.surfaces);
  o.get("aux_feature_dim", c.aux_feature_dim);
  o.get("alignment_hidden", c.alignment_hidden);
  o.finish();
  return c;
}

json to_json(const ExpertConfig& c) {
  json tasks = json::array();
  for (const auto& t : c.tasks) tasks.push_back(to_json(t));
  return json{{"surface_id", c.surface_id},
              {"fm_version", c.fm_version},
              {"tasks", tasks},
              {"fm_dim", c.fm_dim},
              {"ue_dim", c.ue_dim},
              {"surface_feature_dim", c.surface_feature_dim},
              {"fusion_hidden", c.fusion_hidden},
              {"fusion_out", c.fusion_out},
              {"expert_hidden", c.expert_hidden},
              {"noise_sigma", c.noise_sigma},
              {"dropout", c.dropout},
              {"short_encoder", to_json(c.short_encoder)}};
}

ExpertConfig expert_config_from_json(const json& j, const std::string& context) {
  ExpertConfig c;
  StrictObject o(j, context);
  o.get("surface_id", c.surface_id);
  o.get("fm_version", c.fm_version);
  if (o.has("tasks")) {
    const auto& arr = o.raw("tasks");
    if (!arr.is_array()) throw ConfigError(context + ".tasks must be an array");
    for (std::size_t i = 0; i < arr.size(); ++i)
      c.tasks.push_back(task_spec_from_json(arr[i], context + ".tasks[" + std::to_string(i) + "]"));
  }
  o.get("fm_dim", c.fm_dim);
  o.get("ue_dim", c.ue_dim);
  o.get("surface_feature_dim", c.surface_feature_dim);
  o.get("fusion_hidden", c.fusion_hidden);
  o.get("fusion_out", c.fusion_out);
  o.get("expert_hidden", c.expert_hidden);
  o.get("noise_sigma", c.noise_sigma);
  o.get("dropout", c.dropout);
  if (o.has("short_encoder"))
    c.short_encoder = encoder_config_from_json(o.raw("short_encoder"), context + ".short_encoder");
  o.finish();
  return c;
}

json to_json(const StreamConfig& c) {
  return json{{"seed", c.seed},
              {"n_users", c.n_users},
              {"n_items", c.n_items},
              {"n_surfaces", c.n_surfaces},
              {"days", c.days},
              {"requests_per_user_per_day", c.requests_per_user_per_day},
              {"candidates_per_request", c.candidates_per_request},
              {"latent_dim", c.latent_dim},
              {"interest_window", c.interest_window},
              {"attention_sharpness", c.attention_sharpness},
              {"recency_decay", c.recency_decay},
              {"drift", c.drift},
              {"user_drift", c.user_drift},
              {"item_drift", c.item_drift},
              {"surface_shares", c.surface_shares}};
}

StreamConfig stream_config_from_json(const json& j, const std::string& context) {
  StreamConfig c;
  StrictObject o(j, context);
  o.get("seed", c.seed);
  o.get("n_users", c.n_users);
  o.get("n_items", c.n_items);
  o.get("n_surfaces", c.n_surfaces);
  o.get("days", c.days);
  o.get("requests_per_user_per_day", c.requests_per_user_per_day);
  o.get("candidates_per_request", c.candidates_per_request);
  o.get("latent_dim", c.latent_dim);
  o.get("interest_window", c.interest_window);
  o.get("attention_sharpness", c.attention_sharpness);
  o.get("recency_decay", c.recency_decay);
  o.get("drift", c.drift);
  o.get("user_drift", c.user_drift);
  o.get("item_drift", c.item_drift);
  o.get("surface_shares", c.surface_shares);
  o.finish();
  try {
    c.validate();
  } catch (const std::exception& e) {
    throw ConfigError(context + ": " + e.what());
  }
  return c;
}

json to_json(const AdamConfig& c) {
  return json{{"lr", c.lr}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps}};
}

AdamConfig adam_config_from_json(const json& j, const std::string& context) {
  AdamConfig c;
  StrictObject o(j, context);
  o.get("lr", c.lr);
  o.get("beta1", c.beta1);
  o.get("beta2", c.beta2);
  o.get("eps", c.eps);
  o.finish();
  return c;
}

json to_json(const ItemFeatures& f) {
  json j{{"item_id", f.item_id}, {"surface_id", f.surface_id}, {"time_bucket", f.time_bucket}};
  if (f.action) j["action"] = *f.action;
  return j;
}

ItemFeatures item_features_from_json(const json& j) {
  ItemFeatures f;
  StrictObject o(j, "item");
  o.require("item_id", f.item_id);
  o.get("surface_id", f.surface_id);
  o.get("time_bucket", f.time_bucket);
  if (o.has("action")) {
    std::uint32_t a = 0;
    o.get("action", a);
    f.action = a;
  }
  o.finish();
  return f;
}

json to_json(const Tensor& t) {
  return json{{"rows", t.rows}, {"cols", t.cols}, {"values", hypercast::encode_f64_hex(t.values)}};
}

Tensor tensor_from_json(const json& j) {
  StrictObject o(j, "tensor");
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::string hex;
  o.require("rows", rows);
  o.require("cols", cols);
  o.require("values", hex);
  o.finish();
  auto values = hypercast::decode_f64_hex(hex);
  if (values.size() != rows * cols) throw ConfigError("tensor payload has wrong length");
  return Tensor(rows, cols, std::move(values));
}

}  // namespace fmx
