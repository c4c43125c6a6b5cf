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

#include "fmx/hypercast/tiers.hpp"

#include <cstdio>
#include <future>
#include <thread>

#include "fmx/checkpoint.hpp"
#include "fmx/json_codec.hpp"

namespace fmx::hypercast {

namespace {

std::vector<ItemFeatures> items_from_json(const json& arr) {
  if (!arr.is_array()) throw TierError("BAD_REQUEST", "item list must be an array");
  std::vector<ItemFeatures> out;
  out.reserve(arr.size());
  for (const auto& j : arr) out.push_back(item_features_from_json(j));
  return out;
}

json items_to_json(const std::vector<ItemFeatures>& items) {
  json arr = json::array();
  for (const auto& f : items) arr.push_back(to_json(f));
  return arr;
}

json run_handler(const std::function<json()>& body) {
  try {
    return body();
  } catch (const TierError& e) {
    return error_response(e.code(), e.what());
  } catch (const VersionInactive& e) {
    return error_response("VERSION_INACTIVE", e.what());
  } catch (const VersionMismatch& e) {
    return error_response("VERSION_MISMATCH", e.what());
  } catch (const UnknownBlock& e) {
    return error_response("UNKNOWN_BLOCK", e.what());
  } catch (const json::exception& e) {
    return error_response("BAD_REQUEST", e.what());
  } catch (const ConfigError& e) {
    return error_response("BAD_REQUEST", e.what());
  } catch (const WireError& e) {
    return error_response("BAD_REQUEST", e.what());
  } catch (const ContractViolation& e) {
    return error_response("BAD_REQUEST", e.what());
  } catch (const DimensionError& e) {
    return error_response("BAD_REQUEST", e.what());
  }
}

std::string request_type(const json& request) {
  if (!request.is_object() || !request.contains("type") || !request["type"].is_string())
    throw TierError("BAD_REQUEST", "request needs a string \"type\"");
  return request["type"].get<std::string>();
}

}  // namespace

std::string checksum_hex(std::uint64_t c) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(c));
  return buf;
}

json delta_to_json(const WeightDelta& d) {
  json blocks = json::array();
  for (const auto& b : d.blocks) blocks.push_back({{"name", b.name}, {"counter", b.counter}, {"value", to_json(b.value)}});
  return json{{"version", d.version}, {"sequence", d.sequence}, {"blocks", blocks}};
}

WeightDelta delta_from_json(const json& j) {
  WeightDelta d;
  d.version = j.at("version").get<std::string>();
  d.sequence = j.at("sequence").get<std::uint64_t>();
  for (const auto& b : j.at("blocks"))
    d.blocks.push_back({b.at("name").get<std::string>(), b.at("counter").get<std::uint64_t>(), tensor_from_json(b.at("value"))});
  return d;
}

json params_to_json(const ParamSet& p) {
  json blocks = json::array();
  for (const auto& [name, param] : p) blocks.push_back({{"name", name}, {"counter", param.counter}, {"value", to_json(param.value)}});
  return blocks;
}

ParamSet params_from_json(const json& j) {
  ParamSet p;
  for (const auto& b : j) p.add(b.at("name").get<std::string>(), tensor_from_json(b.at("value")), b.at("counter").get<std::uint64_t>());
  return p;
}

json to_json(const FmEmbedRequest& r) {
  json j{{"type", "FM_EMBED"}, {"history", items_to_json(r.history)}, {"candidates", items_to_json(r.candidates)}};
  if (r.version) j["version"] = *r.version;
  return j;
}

FmEmbedRequest fm_embed_request_from_json(const json& j) {
  FmEmbedRequest r;
  if (j.contains("version") && !j["version"].is_null()) r.version = j["version"].get<std::string>();
  r.history = items_from_json(j.at("history"));
  r.candidates = items_from_json(j.at("candidates"));
  return r;
}

FmEmbedResult fm_embed_result_from_json(const json& j) {
  if (!is_ok(j)) throw TierError(j.value("status", "INTERNAL"), j.value("error", "FM request failed"));
  FmEmbedResult r;
  r.version = j.at("version").get<std::string>();
  r.checksum = std::stoull(j.at("checksum").get<std::string>(), nullptr, 16);
  r.sequence = j.at("sequence").get<std::uint64_t>();
  r.embeddings = tensor_from_json(j.at("embeddings"));
  return r;
}

// --- admin ------------------------------------------------------------------

ApplyStatus FmWeightsTier::apply_delta(const WeightDelta& delta) {
  return registry_->resolve(delta.version)->weights->apply_partial(delta);
}

std::optional<json> FmWeightsTier::handle_admin(const json& request, const std::string& tier_name) {
  const std::string type = request_type(request);
  if (type == "HEALTH") {
    json versions = json::object();
    for (const auto& tag : registry_->active_versions()) {
      const auto snap = registry_->resolve(tag)->weights->snapshot();
      versions[tag] = {{"sequence", snap->sequence}, {"checksum", checksum_hex(snap->checksum)}};
    }
    const auto primary = registry_->primary();
    return json{{"status", "OK"}, {"tier", tier_name}, {"versions", versions}, {"primary", primary ? *primary : ""}};
  }
  if (type == "ADMIN_APPLY_DELTA") {
    const auto status = apply_delta(delta_from_json(request.at("delta")));
    return json{{"status", "OK"}, {"result", apply_status_name(status)}};
  }
  if (type == "ADMIN_REGISTER_VERSION") {
    const std::string tag = request.at("version").get<std::string>();
    const EncoderConfig enc = encoder_config_from_json(request.at("encoder"));
    ParamSet params;
    if (request.contains("checkpoint")) {
      const ParamSet full = load_checkpoint(request["checkpoint"].get<std::string>()).params;
      for (const auto& [name, p] : full)
        if (name.starts_with(enc.prefix + "/")) params.add(name, p.value, p.counter);
    } else {
      params = params_from_json(request.at("params"));
    }
    try {
      registry_->register_version(tag, enc, std::move(params), request.value("primary", false));
    } catch (const std::invalid_argument& e) {
      throw TierError("BAD_REQUEST", e.what());
    }
    return json{{"status", "OK"}, {"version", tag}};
  }
  return std::nullopt;
}

// --- FM serving -------------------------------------------------------------

FmEmbedResult FmServingTier::embed(const FmEmbedRequest& req) const {
  if (req.candidates.empty()) throw TierError("BAD_REQUEST", "FM_EMBED needs at least one candidate");
  const auto entry = registry_->resolve(req.version);
  const auto snap = entry->weights->snapshot();
  FmEmbedResult out;
  out.version = entry->tag;
  out.checksum = snap->checksum;
  out.sequence = snap->sequence;
  out.embeddings = entry->encoder.embed(snap->params, req.history, req.candidates);
  ++served_;
  return out;
}

json FmServingTier::handle(const json& request) {
  return run_handler([&]() -> json {
    if (auto admin = handle_admin(request, "fm")) return *admin;
    const std::string type = request_type(request);
    if (type != "FM_EMBED") throw TierError("BAD_REQUEST", "fm tier does not serve " + type);
    const auto res = embed(fm_embed_request_from_json(request));
    return json{{"status", "OK"},
                {"version", res.version},
                {"checksum", checksum_hex(res.checksum)},
                {"sequence", res.sequence},
                {"embeddings", to_json(res.embeddings)}};
  });
}

// --- logging ----------------------------------------------------------------

LoggingTier::LoggingTier(std::shared_ptr<VersionRegistry> registry, std::shared_ptr<FeatureStore> store)
    : FmWeightsTier(std::move(registry)), store_(std::move(store)) {}

LogResult LoggingTier::log(const LogRequest& req) {
  LogResult res;
  if (req.impressed.empty()) return res;
  std::vector<ItemFeatures> targets;
  for (std::size_t i : req.impressed) {
    if (i >= req.candidates.size()) throw TierError("BAD_REQUEST", "impressed index out of range");
    targets.push_back(req.candidates[i]);
  }
  for (const auto& tag : registry_->active_versions()) {
    std::shared_ptr<const VersionEntry> entry;
    try {
      entry = registry_->resolve(tag);
    } catch (const VersionInactive&) {
      continue;  // deactivated concurrently
    }
    const auto snap = entry->weights->snapshot();
    const Tensor emb = entry->encoder.embed(snap->params, req.history, targets);
    for (std::size_t r = 0; r < targets.size(); ++r) {
      const auto row = emb.row_span(r);
      const auto status = store_->append(EmbeddingRecord{req.request_id, req.user_id, targets[r].item_id, req.surface_id,
                                                         tag, std::vector<double>(row.begin(), row.end()), req.ts});
      if (status == AppendStatus::kAppended) ++res.appended;
      if (status == AppendStatus::kDuplicate) ++res.duplicates;
      if (status == AppendStatus::kBackpressure) {
        res.backpressure = true;
        return res;
      }
    }
  }
  return res;
}

json LoggingTier::handle(const json& request) {
  return run_handler([&]() -> json {
    if (auto admin = handle_admin(request, "log")) {
      if (request_type(request) == "HEALTH") (*admin)["records"] = store_->size();
      return *admin;
    }
    const std::string type = request_type(request);
    if (type == "ADMIN_FLUSH") {
      store_->flush();
      return json{{"status", "OK"}, {"records", store_->size()}};
    }
    if (type != "FM_EMBED" || !request.contains("log"))
      throw TierError("BAD_REQUEST", "log tier accepts FM_EMBED with a \"log\" object");
    const json& l = request["log"];
    LogRequest req;
    req.request_id = l.at("request_id").get<std::uint64_t>();
    req.user_id = l.at("user_id").get<std::uint64_t>();
    req.surface_id = l.value("surface_id", 0u);
    req.ts = l.at("ts").get<std::int64_t>();
    req.impressed = l.at("impressed").get<std::vector<std::size_t>>();
    req.history = items_from_json(request.at("history"));
    req.candidates = items_from_json(request.at("candidates"));
    const auto res = log(req);
    return json{{"status", res.backpressure ? "BACKPRESSURE" : "OK"},
                {"appended", res.appended},
                {"duplicates", res.duplicates}};
  });
}

// --- expert serving ---------------------------------------------------------

json to_json(const ExpertPredictRequest& r) {
  json j{{"type", "EXPERT_PREDICT"},
         {"fm_version", r.fm_version},
         {"short_history", items_to_json(r.short_history)},
         {"candidates", items_to_json(r.candidates)},
         {"ts", r.ts}};
  if (r.fm_embeddings) j["fm_embeddings"] = to_json(*r.fm_embeddings);
  if (r.fetch_history) j["fetch"] = {{"history", items_to_json(*r.fetch_history)}};
  if (r.surface_features) j["surface_features"] = to_json(*r.surface_features);
  if (r.user_embedding) j["user_embedding"] = to_json(*r.user_embedding);
  return j;
}

ExpertPredictRequest expert_predict_request_from_json(const json& j) {
  ExpertPredictRequest r;
  r.fm_version = j.value("fm_version", "");
  if (j.contains("fm_embeddings")) r.fm_embeddings = tensor_from_json(j["fm_embeddings"]);
  if (j.contains("fetch")) r.fetch_history = items_from_json(j["fetch"].at("history"));
  r.short_history = items_from_json(j.at("short_history"));
  r.candidates = items_from_json(j.at("candidates"));
  if (j.contains("surface_features")) r.surface_features = tensor_from_json(j["surface_features"]);
  if (j.contains("user_embedding")) r.user_embedding = tensor_from_json(j["user_embedding"]);
  r.ts = j.value("ts", std::int64_t{0});
  return r;
}

ExpertServingTier::ExpertServingTier(ExpertModel model, ParamSet weights, FmFetch fetch, FeatureAssembler assemble,
                                     ExpertTierOptions opts)
    : model_(std::move(model)),
      weights_(std::make_shared<const ParamSet>(std::move(weights))),
      fetch_(std::move(fetch)),
      assemble_(std::move(assemble)),
      opts_(opts) {}

void ExpertServingTier::replace_weights(ParamSet weights) {
  auto next = std::make_shared<const ParamSet>(std::move(weights));
  std::lock_guard lock(mu_);
  weights_ = std::move(next);
}

ExpertPredictResult ExpertServingTier::predict(const ExpertPredictRequest& req) {
  const auto& cfg = model_.config();
  if (req.candidates.empty()) throw TierError("BAD_REQUEST", "EXPERT_PREDICT needs at least one candidate");
  if (model_.has_fm() && req.fm_version != cfg.fm_version)
    throw TierError("VERSION_MISMATCH", "expert consumes FM version " + cfg.fm_version + ", request carries " + req.fm_version);

  ExpertRequest er;
  er.fm_version = req.fm_version;
  er.short_history = req.short_history;
  er.candidates = req.candidates;
  if (req.user_embedding) er.user_embedding = *req.user_embedding;
  ExpertPredictResult out;

  std::future<FmEmbedResult> fm_future;
  bool fetching = false;
  if (model_.has_fm() && !req.fm_embeddings) {
    if (!req.fetch_history) throw TierError("BAD_REQUEST", "request needs fm_embeddings or a fetch directive");
    if (!fetch_) throw TierError("BAD_REQUEST", "no FM tier configured for fetch directives");
    ++fm_calls_;
    // Detached so a timed-out call never blocks the response.
    auto promise = std::make_shared<std::promise<FmEmbedResult>>();
    fm_future = promise->get_future();
    std::thread([promise, fetch = fetch_, fr = FmEmbedRequest{cfg.fm_version, *req.fetch_history, req.candidates}] {
      try {
        promise->set_value(fetch(fr));
      } catch (...) {
        promise->set_exception(std::current_exception());
      }
    }).detach();
    fetching = true;
  }

  // Surface-feature assembly runs on this thread while the FM call is in flight.
  if (req.surface_features) {
    er.surface_features = *req.surface_features;
  } else if (cfg.surface_feature_dim == 0) {
    er.surface_features = Tensor(req.candidates.size(), 0);
  } else {
    if (!assemble_) throw TierError("BAD_REQUEST", "request needs surface_features");
    er.surface_features = assemble_(req.candidates, req.ts);
  }

  if (model_.has_fm()) {
    if (req.fm_embeddings) {
      er.fm_embeddings = *req.fm_embeddings;
    } else if (fetching) {
      if (fm_future.wait_for(opts_.fm_timeout) != std::future_status::ready) {
        if (opts_.on_timeout == TimeoutPolicy::kFail) throw TierError("FM_TIMEOUT", "FM tier did not answer in time");
        er.fm_embeddings = Tensor(req.candidates.size(), cfg.fm_dim);
        out.fm_fallback = true;
      } else {
        const FmEmbedResult res = fm_future.get();
        if (res.version != cfg.fm_version)
          throw TierError("VERSION_MISMATCH", "FM tier answered with version " + res.version);
        er.fm_embeddings = res.embeddings;
      }
    }
  }

  std::shared_ptr<const ParamSet> w;
  {
    std::lock_guard lock(mu_);
    w = weights_;
  }
  out.probabilities = model_.predict_probabilities(*w, er);
  return out;
}

json ExpertServingTier::handle(const json& request) {
  return run_handler([&]() -> json {
    const std::string type = request_type(request);
    if (type == "HEALTH")
      return json{{"status", "OK"}, {"tier", "expert"}, {"fm_version", model_.config().fm_version}, {"fm_calls", fm_calls()}};
    if (type != "EXPERT_PREDICT") throw TierError("BAD_REQUEST", "expert tier does not serve " + type);
    const auto res = predict(expert_predict_request_from_json(request));
    json tasks = json::array();
    for (const auto& t : model_.config().tasks) tasks.push_back(t.name);
    return json{{"status", "OK"},
                {"fm_version", model_.config().fm_version},
                {"fm_fallback", res.fm_fallback},
                {"tasks", tasks},
                {"probabilities", to_json(res.probabilities)}};
  });
}

FmFetch local_fm_fetch(std::shared_ptr<FmServingTier> tier) {
  return [tier](const FmEmbedRequest& req) { return tier->embed(req); };
}

FmFetch remote_fm_fetch(std::shared_ptr<Transport> transport) {
  return [transport](const FmEmbedRequest& req) { return fm_embed_result_from_json(transport->call(to_json(req))); };
}

}  // namespace fmx::hypercast
