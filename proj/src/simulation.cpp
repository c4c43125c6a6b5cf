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

#include "fmx/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>

#include "fmx/dataset.hpp"
#include "fmx/hypercast/registry.hpp"
#include "fmx/hypercast/tiers.hpp"
#include "fmx/json_codec.hpp"

namespace fmx {

namespace {

class InProcessLogTier : public LogTierClient {
 public:
  explicit InProcessLogTier(std::shared_ptr<hypercast::FeatureStore> store)
      : tier_(std::make_shared<hypercast::VersionRegistry>(), std::move(store)) {}

  void register_version(const std::string& tag, const EncoderConfig& enc, const ParamSet& pruned) override {
    tier_.registry().register_version(tag, enc, pruned);
  }
  hypercast::ApplyStatus apply_delta(const hypercast::WeightDelta& delta) override { return tier_.apply_delta(delta); }
  void log(std::uint64_t request_id, std::uint64_t user_id, std::uint32_t surface_id, std::int64_t ts,
           const std::vector<ItemFeatures>& history, const std::vector<ItemFeatures>& candidates) override {
    hypercast::LogRequest req{request_id, user_id, surface_id, ts, history, candidates, {}};
    for (std::size_t i = 0; i < candidates.size(); ++i) req.impressed.push_back(i);
    const auto res = tier_.log(req);
    if (res.backpressure) throw std::runtime_error("log tier signalled backpressure");
  }
  void flush() override { tier_.store().flush(); }

 private:
  hypercast::LoggingTier tier_;
};

struct FMTrainer {
  FMTrainerSpec spec;
  FoundationModel model;
  ParamSet params;
  AdamState opt;
  std::vector<std::size_t> task_map;
  LabeledBatch buffer;
  hypercast::PartialPublisher publisher;
  std::map<std::string, std::int64_t> diverged_since;
  TrainerTrace trace;
  SyncTrace sync;
  std::deque<double> losses;
  bool frozen = false;

  FMTrainer(const FMTrainerSpec& s, const Stream& stream, double fraction)
      : spec(s), model(s.model), task_map(catalog_indices(stream.tasks, s.model.tasks)), publisher(s.version, fraction) {
    std::mt19937_64 rng(spec.seed);
    model.init_weights(params, rng);
  }
};

void record_loss(TrainerTrace& trace, std::deque<double>& losses, const LossReport& rep) {
  ++trace.steps;
  if (rep.aborted) {
    ++trace.aborted_steps;
    return;
  }
  losses.push_back(rep.total);
  if (losses.size() > 100) losses.pop_front();
  double sum = 0.0;
  for (double l : losses) sum += l;
  trace.recent_loss = sum / static_cast<double>(losses.size());
}

}  // namespace

std::unique_ptr<LogTierClient> in_process_log_tier(std::shared_ptr<hypercast::FeatureStore> store) {
  return std::make_unique<InProcessLogTier>(std::move(store));
}

namespace {

class RemoteLogTier : public LogTierClient {
 public:
  explicit RemoteLogTier(std::shared_ptr<hypercast::Transport> transport) : transport_(std::move(transport)) {}

  void register_version(const std::string& tag, const EncoderConfig& enc, const ParamSet& pruned) override {
    call(json{{"type", "ADMIN_REGISTER_VERSION"},
              {"version", tag},
              {"encoder", to_json(enc)},
              {"params", hypercast::params_to_json(pruned)}});
  }
  hypercast::ApplyStatus apply_delta(const hypercast::WeightDelta& delta) override {
    const json res = call(json{{"type", "ADMIN_APPLY_DELTA"}, {"delta", hypercast::delta_to_json(delta)}});
    return res.value("result", "") == "STALE" ? hypercast::ApplyStatus::kStale : hypercast::ApplyStatus::kApplied;
  }
  void log(std::uint64_t request_id, std::uint64_t user_id, std::uint32_t surface_id, std::int64_t ts,
           const std::vector<ItemFeatures>& history, const std::vector<ItemFeatures>& candidates) override {
    json req = hypercast::to_json(hypercast::FmEmbedRequest{std::nullopt, history, candidates});
    std::vector<std::size_t> impressed(candidates.size());
    for (std::size_t i = 0; i < impressed.size(); ++i) impressed[i] = i;
    req["log"] = {{"request_id", request_id}, {"user_id", user_id}, {"surface_id", surface_id},
                  {"ts", ts},                 {"impressed", impressed}};
    call(req);
  }
  void flush() override { call(json{{"type", "ADMIN_FLUSH"}}); }

 private:
  json call(const json& request) {
    json res = transport_->call(request);
    if (!hypercast::is_ok(res))
      throw std::runtime_error("log tier: " + res.value("status", std::string("?")) + " " +
                               res.value("error", std::string()));
    return res;
  }

  std::shared_ptr<hypercast::Transport> transport_;
};

}  // namespace

std::unique_ptr<LogTierClient> remote_log_tier(std::shared_ptr<hypercast::Transport> transport) {
  return std::make_unique<RemoteLogTier>(std::move(transport));
}

SimulationResult simulate(const Stream& stream, const SimulationConfig& cfg, LogTierClient& log_tier,
                          hypercast::FeatureStore* ue_store, const ProgressFn& progress) {
  if (cfg.fms.empty()) throw ConfigurationError("simulation needs at least one FM trainer");
  if (cfg.publish_period <= 0) throw ConfigurationError("publish period must be positive");
  if (!(cfg.log_start >= 0.0 && cfg.log_start <= cfg.train_end && cfg.train_end <= 1.0))
    throw ConfigurationError("need 0 <= log_start <= train_end <= 1");
  const auto& ev = stream.events;
  const auto ranges = request_ranges(stream);
  const auto end_time = static_cast<double>(stream.end_time());
  const auto t_log = static_cast<std::int64_t>(cfg.log_start * end_time);
  const auto t_freeze = static_cast<std::int64_t>(cfg.train_end * end_time);
  const auto cycle = static_cast<std::int64_t>(hypercast::PartialPublisher::cycle_length(cfg.publish_fraction));

  std::vector<std::unique_ptr<FMTrainer>> trainers;
  std::size_t log_history = 0;
  for (const auto& spec : cfg.fms) {
    for (const auto& t : trainers)
      if (t->spec.version == spec.version) throw ConfigurationError("duplicate FM version " + spec.version);
    validate_ratios(spec.downsample);
    auto tr = std::make_unique<FMTrainer>(spec, stream, cfg.publish_fraction);
    const ParamSet pruned = tr->model.export_inference_subgraph(tr->params);
    log_tier.register_version(spec.version, spec.model.encoder, pruned);
    log_tier.apply_delta(tr->publisher.publish(pruned, 1.0));
    tr->sync.blocks = pruned.block_count();
    tr->sync.blocks_per_publish = hypercast::PartialPublisher::slots(cfg.publish_fraction, pruned.block_count());
    tr->sync.bound = cycle * cfg.publish_period;
    log_history = std::max(log_history, spec.model.encoder.max_history);
    trainers.push_back(std::move(tr));
  }

  struct UETrainer {
    UETrainerSpec spec;
    UserEmbeddingModel model;
    ParamSet params;
    AdamState opt;
    std::vector<std::size_t> task_map;
    LabeledBatch buffer;
    TrainerTrace trace;
    std::deque<double> losses;
    std::map<std::uint64_t, std::pair<std::size_t, EmbeddingVector>> cache;  // user -> (history size, vector)
  };
  std::unique_ptr<UETrainer> ue;
  if (cfg.ue) {
    ue = std::make_unique<UETrainer>(UETrainer{*cfg.ue, UserEmbeddingModel(cfg.ue->model), {}, {},
                                               catalog_indices(stream.tasks, cfg.ue->model.tasks), {}, {}, {}, {}});
    std::mt19937_64 rng(ue->spec.seed);
    ue->model.init_weights(ue->params, rng);
    if (!ue_store) throw ConfigurationError("user embedding logging needs a feature store");
  }

  const auto publish_all = [&](std::int64_t at, double fraction) {
    for (auto& tr : trainers) {
      if (tr->frozen && fraction < 1.0) continue;
      const auto delta = tr->publisher.publish(tr->model.export_inference_subgraph(tr->params), fraction);
      log_tier.apply_delta(delta);
      ++tr->sync.publishes;
      for (const auto& b : delta.blocks) {
        const auto it = tr->diverged_since.find(b.name);
        if (it == tr->diverged_since.end()) continue;
        tr->sync.max_staleness = std::max(tr->sync.max_staleness, at - it->second);
        tr->diverged_since.erase(it);
      }
      for (const auto& [name, since] : tr->diverged_since) tr->sync.max_staleness = std::max(tr->sync.max_staleness, at - since);
    }
  };

  const auto train_fm = [&](FMTrainer& tr, std::int64_t now) {
    std::map<std::string, std::uint64_t> before;
    for (const auto& [name, p] : tr.params)
      if (tr.model.is_inference_block(name)) before[name] = p.counter;
    const auto rep = tr.model.fm_train_step(tr.buffer, tr.params, tr.opt, tr.spec.adam);
    record_loss(tr.trace, tr.losses, rep);
    tr.buffer.clear();
    for (const auto& [name, c] : before)
      if (tr.params.at(name).counter != c) tr.diverged_since.try_emplace(name, now);
  };

  const auto release = [&](const RequestRange& r, std::int64_t now) {
    const auto& head = ev[r.begin];
    std::vector<std::size_t> all(r.end - r.begin);
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = r.begin + i;
    for (auto& tr : trainers) {
      if (tr->frozen) continue;
      std::vector<std::size_t> kept;
      const auto it = tr->spec.downsample.find(head.surface_id);
      for (std::size_t e : all) {
        if (it == tr->spec.downsample.end() ||
            downsample_uniform(cfg.downsample_seed, ev[e].user_id, ev[e].item_id, ev[e].ts) < it->second)
          kept.push_back(e);
      }
      if (kept.empty()) continue;
      tr->buffer.push_back(make_fm_request(stream, kept, tr->spec.model, tr->task_map));
      ++tr->trace.requests;
      tr->trace.examples += kept.size();
      if (tr->buffer.size() >= tr->spec.batch_requests) train_fm(*tr, now);
    }
    if (ue && now < t_freeze) {
      FMConfig shape;
      shape.encoder = ue->spec.model.encoder;
      shape.aux_feature_dim = 0;
      ue->buffer.push_back(make_fm_request(stream, all, shape, ue->task_map));
      ++ue->trace.requests;
      ue->trace.examples += all.size();
      if (ue->buffer.size() >= ue->spec.batch_requests) {
        record_loss(ue->trace, ue->losses, ue->model.train_step(ue->buffer, ue->params, ue->opt, ue->spec.adam));
        ue->buffer.clear();
      }
    }
  };

  SimulationResult result;
  std::deque<std::size_t> pending;
  std::int64_t next_publish = cfg.publish_period;
  bool froze = false;
  std::size_t next_report = 0;
  for (std::size_t ri = 0; ri < ranges.size(); ++ri) {
    const auto& r = ranges[ri];
    const auto& head = ev[r.begin];
    const std::int64_t now = head.ts;
    if (progress && ri >= next_report) {
      std::ostringstream os;
      os << "simulate: " << (100 * ri / ranges.size()) << "% (t=" << now << "s)";
      for (const auto& tr : trainers) os << " " << tr->spec.version << " loss=" << tr->trace.recent_loss;
      progress(os.str());
      next_report += std::max<std::size_t>(1, ranges.size() / 10);
    }
    if (!froze) {
      // Releases and publishes interleave in time order; a release at a publish
      // instant trains before that publish.
      const std::int64_t horizon = std::min(now, t_freeze);
      for (;;) {
        const std::int64_t release_at = pending.empty() ? std::numeric_limits<std::int64_t>::max()
                                                        : ev[ranges[pending.front()].begin].ts + cfg.join_latency;
        if (release_at <= horizon && release_at <= next_publish) {
          release(ranges[pending.front()], release_at);
          pending.pop_front();
        } else if (next_publish <= horizon) {
          publish_all(next_publish, cfg.publish_fraction);
          next_publish += cfg.publish_period;
        } else {
          break;
        }
      }
      if (now >= t_freeze) {
        // Training stops here; ship the final weights in full.
        publish_all(t_freeze, 1.0);
        for (auto& tr : trainers) tr->frozen = true;
        froze = true;
      }
    }
    if (now >= t_log) {
      const auto hist = stream.history(r.begin);
      std::vector<ItemFeatures> candidates;
      for (std::size_t e = r.begin; e < r.end; ++e) candidates.push_back(target_item_features(ev[e]));
      log_tier.log(head.request_id, head.user_id, head.surface_id, now, history_features(hist, now, log_history),
                   candidates);
      ++result.logged_requests;
      if (ue) {
        auto& slot = ue->cache[head.user_id];
        if (!slot.second || hist.size() >= slot.first + ue->spec.refresh_events) {
          const Tensor u = ue->model.embed_user(ue->params, history_features(hist, now, ue->spec.model.encoder.max_history));
          slot = {hist.size(), std::make_shared<const std::vector<double>>(u.values)};
        }
        for (std::size_t e = r.begin; e < r.end; ++e)
          ue_store->append({head.request_id, head.user_id, ev[e].item_id, head.surface_id, ue->spec.version, *slot.second, now});
      }
    }
    if (!froze) pending.push_back(ri);
  }
  if (!froze) {
    publish_all(t_freeze, 1.0);
    for (auto& tr : trainers) tr->frozen = true;
  }
  log_tier.flush();
  if (ue_store) ue_store->flush();

  for (auto& tr : trainers) {
    result.fm_params.emplace(tr->spec.version, std::move(tr->params));
    result.training[tr->spec.version] = tr->trace;
    result.sync[tr->spec.version] = tr->sync;
  }
  if (ue) {
    result.ue_params = std::move(ue->params);
    result.training[ue->spec.version] = ue->trace;
  }
  return result;
}

}  // namespace fmx
