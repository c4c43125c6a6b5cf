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
#include "fmx/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "fmx/checkpoint.hpp"
#include "fmx/hypercast/process.hpp"

namespace fmx {

namespace fs = std::filesystem;

namespace {

const std::set<std::string> kFilledExpertKeys{"surface_id", "fm_version", "tasks", "fm_dim", "ue_dim"};

// Parses `patch` over `base`; fields filled per run are rejected.
ExpertConfig expert_arch_from_json(const ExpertConfig& base, const json& patch, const std::string& context) {
  expert_config_from_json(patch, context);  // key check
  for (const auto& key : kFilledExpertKeys)
    if (patch.contains(key)) throw ConfigError("config key '" + key + "' in " + context + " is set per experiment");
  json merged = to_json(base);
  merged.merge_patch(patch);
  return expert_config_from_json(merged, context);
}

json expert_arch_to_json(const ExpertConfig& c) {
  json j = to_json(c);
  for (const auto& key : kFilledExpertKeys) j.erase(key);
  return j;
}

std::uint32_t surface_key(const std::string& key, const std::string& context) {
  try {
    std::size_t pos = 0;
    const auto v = std::stoul(key, &pos);
    if (pos == key.size()) return static_cast<std::uint32_t>(v);
  } catch (const std::exception&) {
  }
  throw ConfigError("surface key '" + key + "' in " + context + " is not a surface index");
}

FMTrainerSpec fm_trainer_from_json(const json& j, const std::string& context) {
  FMTrainerSpec s;
  StrictObject o(j, context);
  o.require("version", s.version);
  s.model = fm_config_from_json(o.raw("model"), context + ".model");
  if (o.has("adam")) s.adam = adam_config_from_json(o.raw("adam"), context + ".adam");
  o.get("batch_requests", s.batch_requests);
  if (o.has("downsample")) {
    const auto& ds = o.raw("downsample");
    if (!ds.is_object()) throw ConfigError(context + ".downsample must be an object");
    for (const auto& [key, ratio] : ds.items()) {
      if (!ratio.is_number()) throw ConfigError(context + ".downsample." + key + " must be a number");
      s.downsample[surface_key(key, context + ".downsample")] = ratio.get<double>();
    }
  }
  o.get("seed", s.seed);
  o.finish();
  return s;
}

json to_json(const FMTrainerSpec& s) {
  json ds = json::object();
  for (const auto& [surface, ratio] : s.downsample) ds[std::to_string(surface)] = ratio;
  return json{{"version", s.version},   {"model", to_json(s.model)}, {"adam", to_json(s.adam)},
              {"batch_requests", s.batch_requests}, {"downsample", ds}, {"seed", s.seed}};
}

UETrainerSpec ue_trainer_from_json(const json& j, const std::string& context) {
  UETrainerSpec s;
  StrictObject o(j, context);
  o.get("version", s.version);
  if (o.has("encoder")) {
    json merged = to_json(s.model.encoder);
    encoder_config_from_json(o.raw("encoder"), context + ".encoder");
    merged.merge_patch(o.raw("encoder"));
    s.model.encoder = encoder_config_from_json(merged, context + ".encoder");
  }
  if (o.has("adam")) s.adam = adam_config_from_json(o.raw("adam"), context + ".adam");
  o.get("batch_requests", s.batch_requests);
  o.get("seed", s.seed);
  o.get("refresh_events", s.refresh_events);
  o.finish();
  return s;
}

json to_json(const UETrainerSpec& s) {
  return json{{"version", s.version},       {"encoder", to_json(s.model.encoder)},
              {"adam", to_json(s.adam)},    {"batch_requests", s.batch_requests},
              {"seed", s.seed},             {"refresh_events", s.refresh_events}};
}

MissingEmbedding missing_from_string(const std::string& s, const std::string& context) {
  if (s == "skip") return MissingEmbedding::kSkip;
  if (s == "zero") return MissingEmbedding::kZero;
  throw ConfigError(context + ".on_missing must be \"skip\" or \"zero\"");
}

void parse_expert(const json& j, ExperimentConfig& ec, const std::string& context) {
  StrictObject o(j, context);
  if (o.has("arch")) ec.expert.arch = expert_arch_from_json(ec.expert.arch, o.raw("arch"), context + ".arch");
  if (o.has("surfaces")) {
    const auto& surfaces = o.raw("surfaces");
    if (!surfaces.is_object()) throw ConfigError(context + ".surfaces must be an object");
    for (const auto& [key, patch] : surfaces.items())
      ec.surface_arch[surface_key(key, context + ".surfaces")] =
          expert_arch_from_json(ec.expert.arch, patch, context + ".surfaces." + key);
  }
  if (o.has("adam")) ec.expert.adam = adam_config_from_json(o.raw("adam"), context + ".adam");
  o.get("batch_requests", ec.expert.batch_requests);
  o.get("seed", ec.expert.seed);
  if (o.has("on_missing")) {
    std::string m;
    o.get("on_missing", m);
    ec.expert.on_missing = missing_from_string(m, context);
  }
  o.finish();
}

void parse_experiments(const json& j, RunConfig& c, bool& one_stage_set, const std::string& context) {
  auto& ec = c.experiments;
  StrictObject o(j, context);
  o.get("run", c.run);
  if (o.has("windows")) {
    StrictObject w(o.raw("windows"), context + ".windows");
    w.get("donor_start", ec.donor_start);
    w.get("donor_end", ec.donor_end);
    w.get("expert_end", ec.expert_end);
    w.finish();
  }
  o.get("transfer_surfaces", ec.transfer_surfaces);
  o.get("ablation_surface", ec.ablation_surface);
  o.get("generalization_surface", ec.generalization_surface);
  o.get("withheld_tasks", ec.withheld_tasks);
  o.get("generalization_seeds", ec.generalization_seeds);
  o.get("transfer_seeds", ec.transfer_seeds);
  o.get("ablation_seeds", ec.ablation_seeds);
  if (o.has("one_stage_encoder")) {
    EncoderConfig base;
    base.prefix = "short";
    json merged = to_json(base);
    encoder_config_from_json(o.raw("one_stage_encoder"), context + ".one_stage_encoder");
    merged.merge_patch(o.raw("one_stage_encoder"));
    ec.one_stage_encoder = encoder_config_from_json(merged, context + ".one_stage_encoder");
    one_stage_set = true;
  }
  o.get("compute_requests", c.compute_requests);
  o.finish();
}

}  // namespace

void RunConfig::validate() const {
  for (const auto& name : run)
    if (std::find(kExperimentNames.begin(), kExperimentNames.end(), name) == kExperimentNames.end())
      throw ConfigError("unknown experiment '" + name + "' in experiments.run");
  if (stream.n_surfaces == 0 || stream.n_users == 0 || stream.n_items == 0 || stream.days <= 0)
    throw ConfigError("stream needs at least one surface, user, item and day");
  if (compute_requests == 0) throw ConfigError("experiments.compute_requests must be positive");
  if (!(experiments.sim.publish_fraction > 0.0 && experiments.sim.publish_fraction <= 1.0))
    throw ConfigError("sync.fraction must be in (0, 1]");
  if (experiments.sim.publish_period <= 0) throw ConfigError("sync.period must be positive");
  if (experiments.sim.join_latency < 0) throw ConfigError("join_latency must be non-negative");
  try {
    for (const auto& fm : experiments.sim.fms) {
      FoundationModel{fm.model};  // validates
      for (const auto& [surface, ratio] : fm.downsample) {
        if (surface >= stream.n_surfaces) throw ConfigError("downsample surface out of range in FM " + fm.version);
        if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("downsample ratio must be in (0, 1] in FM " + fm.version);
      }
    }
    const TaskCatalog catalog = TaskCatalog::make_default(stream.n_surfaces);
    auto check_arch = [&](ExpertConfig arch, std::uint32_t surface) {
      arch.surface_id = surface;
      arch.tasks = expert_tasks(catalog, surface);
      arch.fm_version = experiments.large_version;
      arch.validate();
    };
    check_arch(experiments.expert.arch, 0);
    for (const auto& [surface, arch] : experiments.surface_arch)
      if (surface < catalog.surface_tasks.size()) check_arch(arch, surface);
    experiments.validate(catalog);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  StrictObject o(j, "config");
  if (o.has("stream")) {
    if (o.raw("stream").contains("seed")) throw ConfigError("config key 'seed' belongs at the top level, not in stream");
    c.stream = stream_config_from_json(o.raw("stream"), "stream");
  }
  o.get("seed", c.stream.seed);
  auto& sim = c.experiments.sim;
  if (o.has("sync")) {
    StrictObject s(o.raw("sync"), "sync");
    s.get("fraction", sim.publish_fraction);
    s.get("period", sim.publish_period);
    s.finish();
  }
  o.get("join_latency", sim.join_latency);
  o.get("log_start", sim.log_start);
  o.get("train_end", sim.train_end);
  o.get("downsample_seed", sim.downsample_seed);

  const TaskCatalog catalog = TaskCatalog::make_default(c.stream.n_surfaces);
  {
    StrictObject fms(o.raw("fms"), "fms");
    const auto small = fm_trainer_from_json(fms.raw("small"), "fms.small");
    const auto large = fm_trainer_from_json(fms.raw("large"), "fms.large");
    fms.finish();
    if (small.version == large.version) throw ConfigError("fms.small and fms.large need distinct versions");
    sim.fms = {small, large};
    c.experiments.small_version = small.version;
    c.experiments.large_version = large.version;
  }
  if (o.has("user_embedding")) {
    UETrainerSpec ue = ue_trainer_from_json(o.raw("user_embedding"), "user_embedding");
    for (std::size_t t = 0; t < catalog.main_count; ++t) {
      TaskSpec spec;
      spec.name = catalog.names[t];
      ue.model.tasks.push_back(spec);
    }
    sim.ue = ue;
  }
  if (o.has("expert")) parse_expert(o.raw("expert"), c.experiments, "expert");
  bool one_stage_set = false;
  if (o.has("experiments")) parse_experiments(o.raw("experiments"), c, one_stage_set, "experiments");
  if (!one_stage_set) {
    c.experiments.one_stage_encoder = sim.fms.front().model.encoder;
    c.experiments.one_stage_encoder.prefix = "short";
  }
  o.finish();
  c.validate();
  return c;
}

json to_json(const RunConfig& c) {
  const auto& ec = c.experiments;
  const auto& sim = ec.sim;
  json stream = to_json(c.stream);
  stream.erase("seed");
  json fms = json::object();
  for (const auto& fm : sim.fms) fms[fm.version == ec.small_version ? "small" : "large"] = to_json(fm);
  json surfaces = json::object();
  for (const auto& [s, arch] : ec.surface_arch) surfaces[std::to_string(s)] = expert_arch_to_json(arch);
  json j{{"seed", c.stream.seed},
         {"stream", stream},
         {"sync", {{"fraction", sim.publish_fraction}, {"period", sim.publish_period}}},
         {"join_latency", sim.join_latency},
         {"log_start", sim.log_start},
         {"train_end", sim.train_end},
         {"downsample_seed", sim.downsample_seed},
         {"fms", fms},
         {"expert",
          {{"arch", expert_arch_to_json(ec.expert.arch)},
           {"surfaces", surfaces},
           {"adam", to_json(ec.expert.adam)},
           {"batch_requests", ec.expert.batch_requests},
           {"seed", ec.expert.seed},
           {"on_missing", ec.expert.on_missing == MissingEmbedding::kSkip ? "skip" : "zero"}}},
         {"experiments",
          {{"run", c.run},
           {"windows", {{"donor_start", ec.donor_start}, {"donor_end", ec.donor_end}, {"expert_end", ec.expert_end}}},
           {"transfer_surfaces", ec.transfer_surfaces},
           {"ablation_surface", ec.ablation_surface},
           {"generalization_surface", ec.generalization_surface},
           {"withheld_tasks", ec.withheld_tasks},
           {"generalization_seeds", ec.generalization_seeds},
           {"transfer_seeds", ec.transfer_seeds},
           {"ablation_seeds", ec.ablation_seeds},
           {"one_stage_encoder", to_json(ec.one_stage_encoder)},
           {"compute_requests", c.compute_requests}}}};
  if (sim.ue) j["user_embedding"] = to_json(*sim.ue);
  return j;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

HarnessMode harness_mode_from_string(const std::string& s) {
  if (s == "inprocess" || s == "in-process") return HarnessMode::kInProcess;
  if (s == "process") return HarnessMode::kProcess;
  throw ConfigError("harness mode must be \"inprocess\" or \"process\"");
}

std::vector<std::string> report_files(const RunConfig& cfg) {
  std::vector<std::string> out;
  for (const auto& name : cfg.run) out.push_back(name + ".jsonl");
  out.push_back("sync.jsonl");
  out.push_back("training.jsonl");
  return out;
}

namespace {

void write_lines(const fs::path& path, const std::vector<json>& lines) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  for (const auto& l : lines) out << l.dump() << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

fs::path default_hypercast_binary() {
  std::error_code ec;
  const fs::path self = fs::read_symlink("/proc/self/exe", ec);
  if (!ec) {
    const fs::path sibling = self.parent_path() / "hypercast";
    if (fs::exists(sibling)) return sibling;
  }
  return "hypercast";
}

template <typename F>
auto stage(const std::string& name, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

// Owns whichever log tier the run uses.
struct LogTierHandle {
  std::unique_ptr<hypercast::TierProcess> process;
  std::shared_ptr<hypercast::FeatureStore> local;
  std::unique_ptr<LogTierClient> client;
  fs::path feature_log;

  std::shared_ptr<hypercast::FeatureStore> finish() {
    client->flush();
    if (!process) return local;
    client.reset();
    const int status = process->shutdown();
    if (status != 0) throw std::runtime_error("log tier exited with status " + std::to_string(status));
    return std::shared_ptr<hypercast::FeatureStore>(hypercast::FeatureStore::open(feature_log));
  }
};

LogTierHandle start_log_tier(const RunOptions& opts, const fs::path& logs) {
  LogTierHandle h;
  h.feature_log = logs / "features.jsonl";
  fs::remove(h.feature_log);
  if (opts.harness == HarnessMode::kInProcess) {
    h.local = std::make_shared<hypercast::FeatureStore>(hypercast::FeatureStoreOptions{h.feature_log});
    h.client = in_process_log_tier(h.local);
    return h;
  }
  const fs::path tier_cfg = logs / "log_tier.json";
  {
    std::ofstream out(tier_cfg, std::ios::trunc);
    out << json{{"port", 0}, {"feature_log", fs::absolute(h.feature_log).string()}}.dump(2) << '\n';
  }
  h.process = std::make_unique<hypercast::TierProcess>(opts.hypercast_binary.value_or(default_hypercast_binary()),
                                                       std::vector<std::string>{"log-tier", "--config", tier_cfg.string()});
  const json health = h.process->transport()->call(json{{"type", "HEALTH"}});
  if (!hypercast::is_ok(health) || health.value("tier", "") != "log")
    throw std::runtime_error("log tier failed its health check: " + health.dump());
  h.client = remote_log_tier(h.process->transport());
  return h;
}

}  // namespace

RunArtifacts run_pipeline(RunConfig cfg, const RunOptions& opts) {
  if (opts.seed) cfg.stream.seed = *opts.seed;
  stage("config", [&] { cfg.validate(); });
  const auto say = [&](const std::string& m) {
    if (opts.progress) opts.progress(m);
  };

  RunArtifacts art;
  const fs::path ckpt_dir = opts.out / "checkpoints";
  const fs::path logs = opts.out / "logs";
  const fs::path reports = opts.out / "reports";
  stage("setup", [&] {
    for (const auto& d : {ckpt_dir, ckpt_dir / "experts", logs, reports}) fs::create_directories(d);
    std::ofstream(logs / "run_config.json", std::ios::trunc) << to_json(cfg).dump(2) << '\n';
  });
  art.logs.push_back(logs / "run_config.json");

  Stream stream = stage("generate", [&] {
    say("generate: " + std::to_string(cfg.stream.n_users) + " users, " + std::to_string(cfg.stream.days) + " days");
    Stream s = generate(cfg.stream);
    write_event_log(logs / "events.jsonl", s.events, s.tasks);
    say("generate: " + std::to_string(s.events.size()) + " events");
    return s;
  });
  art.logs.push_back(logs / "events.jsonl");

  LogTierHandle tier = stage("serve", [&] { return start_log_tier(opts, logs); });
  ExperimentContext ctx = stage("simulate", [&] {
    const fs::path ue_log = logs / "user_embeddings.jsonl";
    fs::remove(ue_log);
    auto ue_store = std::make_shared<hypercast::FeatureStore>(hypercast::FeatureStoreOptions{ue_log});
    EmbeddingStores stores{ue_store, [&] { return stage("serve", [&] { return tier.finish(); }); }};
    return prepare_experiments(std::move(stream), cfg.experiments, *tier.client, stores, say);
  });
  art.logs.push_back(tier.feature_log);
  art.logs.push_back(logs / "user_embeddings.jsonl");

  stage("checkpoint", [&] {
    for (const auto& fm : cfg.experiments.sim.fms) {
      const auto& params = ctx.sim.fm_params.at(fm.version);
      const fs::path full = ckpt_dir / (fm.version + ".ckpt");
      const fs::path pruned = ckpt_dir / (fm.version + ".pruned.ckpt");
      save_checkpoint(full, {params, ""});
      save_checkpoint(pruned, {FoundationModel(fm.model).export_inference_subgraph(params), ""});
      art.checkpoints.push_back(full);
      art.checkpoints.push_back(pruned);
    }
    if (ctx.sim.ue_params) {
      save_checkpoint(ckpt_dir / "ue.ckpt", {*ctx.sim.ue_params, ""});
      art.checkpoints.push_back(ckpt_dir / "ue.ckpt");
    }
  });

  ctx.on_expert = [&](const std::string& name, const ExpertRun& run) {
    const fs::path path = ckpt_dir / "experts" / (name + ".ckpt");
    save_checkpoint(path, {run.params, run.model.config().fm_version});
    art.checkpoints.push_back(path);
  };

  for (const auto& name : cfg.run) {
    std::vector<json> lines = stage(name, [&]() -> std::vector<json> {
      say(name + ": start");
      if (name == "transfer") return report_lines(run_transfer_experiment(ctx, say));
      if (name == "ablation") return report_lines(run_ablation(ctx, say));
      if (name == "generalization") return report_lines(run_generalization(ctx, say));
      return {report_line(measure_compute_budget(ctx, cfg.compute_requests))};
    });
    stage("report", [&] { write_lines(reports / (name + ".jsonl"), lines); });
    art.reports.push_back(reports / (name + ".jsonl"));
    say(name + ": done");
  }

  stage("report", [&] {
    std::vector<json> sync;
    for (const auto& [version, s] : ctx.sim.sync)
      sync.push_back(json{{"version", version},
                          {"publishes", s.publishes},
                          {"blocks", s.blocks},
                          {"blocks_per_publish", s.blocks_per_publish},
                          {"max_staleness", s.max_staleness},
                          {"bound", s.bound},
                          {"within_bound", s.max_staleness <= s.bound}});
    write_lines(reports / "sync.jsonl", sync);
    std::vector<json> training;
    for (const auto& [version, t] : ctx.sim.training)
      training.push_back(json{{"version", version},
                              {"steps", t.steps},
                              {"requests", t.requests},
                              {"examples", t.examples},
                              {"aborted_steps", t.aborted_steps},
                              {"recent_loss", t.recent_loss}});
    json join{{"stage", "join"},
              {"joined", ctx.join_stats.joined},
              {"missing_embeddings", ctx.join_stats.missing_embeddings},
              {"logged_requests", ctx.sim.logged_requests}};
    json versions = json::object();
    for (const auto& [v, n] : ctx.store->count_by_version()) versions[v] = n;
    for (const auto& [v, n] : ctx.ue_store->count_by_version()) versions[v] = n;
    join["records_by_version"] = versions;
    training.push_back(join);
    write_lines(reports / "training.jsonl", training);
  });
  art.reports.push_back(reports / "sync.jsonl");
  art.reports.push_back(reports / "training.jsonl");
  return art;
}

}  // namespace fmx
