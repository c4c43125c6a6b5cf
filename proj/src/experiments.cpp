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

#include "fmx/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "fmx/dataset.hpp"

namespace fmx {

namespace {

std::int64_t at_fraction(const Stream& s, double f) {
  return static_cast<std::int64_t>(f * static_cast<double>(s.end_time()));
}

const FMTrainerSpec& fm_spec(const ExperimentConfig& cfg, const std::string& version) {
  for (const auto& s : cfg.sim.fms)
    if (s.version == version) return s;
  throw ConfigurationError("no FM trainer with version " + version);
}

// Joined-example ranges of one surface with request time in [t0, t1).
std::vector<RequestRange> surface_ranges(const ExperimentContext& ctx, std::uint32_t surface, double t0, double t1) {
  const auto lo = at_fraction(ctx.stream, t0);
  const auto hi = at_fraction(ctx.stream, t1);
  std::vector<RequestRange> out;
  for (const auto& r : request_ranges(ctx.stream, ctx.examples)) {
    const auto& e = ctx.stream.events[ctx.examples[r.begin].event];
    if (e.surface_id == surface && e.ts >= lo && e.ts < hi) out.push_back(r);
  }
  return out;
}

std::vector<NEResult> ne_per_task(const std::vector<std::string>& names, const std::vector<std::vector<double>>& labels,
                                  const std::vector<std::vector<double>>& probs) {
  std::vector<NEResult> out;
  for (std::size_t t = 0; t < names.size(); ++t) out.push_back(normalized_entropy(labels[t], probs[t], names[t]));
  return out;
}

double ne_of(const std::vector<NEResult>& results, const std::string& task) {
  for (const auto& r : results)
    if (r.task == task) return r.ne;
  throw ConfigurationError("no NE for task " + task);
}

ExpertConfig expert_variant(const ExperimentContext& ctx, std::uint32_t surface, const std::string& fm_version,
                            std::size_t ue_dim) {
  const auto custom = ctx.cfg.surface_arch.find(surface);
  ExpertConfig e = custom != ctx.cfg.surface_arch.end() ? custom->second : ctx.cfg.expert.arch;
  e.surface_id = surface;
  e.tasks = expert_tasks(ctx.stream.tasks, surface);
  e.fm_version = fm_version;
  e.fm_dim = fm_version.empty() ? 0 : fm_spec(ctx.cfg, fm_version).model.encoder.dim;
  e.ue_dim = ue_dim;
  return e;
}

TaskSpec main_task(const std::string& name) {
  TaskSpec t;
  t.name = name;
  return t;
}

}  // namespace

void ExperimentConfig::validate(const TaskCatalog& catalog) const {
  if (!(0.0 <= donor_start && donor_start < donor_end && donor_end < expert_end && expert_end < 1.0))
    throw ConfigurationError("experiment windows must satisfy 0 <= donor_start < donor_end < expert_end < 1");
  if (donor_start < sim.log_start) throw ConfigurationError("expert windows start before embedding logging");
  fm_spec(*this, small_version);
  fm_spec(*this, large_version);
  for (const auto& name : withheld_tasks) {
    if (!catalog.index(name)) throw ConfigurationError("withheld task " + name + " is not in the catalog");
    for (const auto& fm : sim.fms)
      for (const auto& t : fm.model.tasks)
        if (t.name == name) throw ConfigurationError("withheld task " + name + " appears in FM " + fm.version);
  }
  for (auto s : transfer_surfaces)
    if (s >= catalog.surface_tasks.size()) throw ConfigurationError("transfer surface out of range");
  if (ablation_surface >= catalog.surface_tasks.size() || generalization_surface >= catalog.surface_tasks.size())
    throw ConfigurationError("experiment surface out of range");
  for (const auto& [s, arch] : surface_arch)
    if (s >= catalog.surface_tasks.size()) throw ConfigurationError("expert surface out of range");
  if (transfer_seeds.empty() || ablation_seeds.empty() || generalization_seeds.empty()) throw ConfigurationError("experiment seed lists must not be empty");
}

std::vector<TaskSpec> expert_tasks(const TaskCatalog& catalog, std::uint32_t surface) {
  std::vector<TaskSpec> out;
  for (std::size_t t = 0; t < catalog.main_count; ++t) out.push_back(main_task(catalog.names[t]));
  for (std::size_t t : catalog.surface_tasks.at(surface)) out.push_back(main_task(catalog.names[t]));
  return out;
}

ExperimentContext prepare_experiments(Stream stream, const ExperimentConfig& cfg, LogTierClient& log_tier,
                                      const EmbeddingStores& stores, const ProgressFn& progress) {
  cfg.validate(stream.tasks);
  ExperimentContext ctx;
  ctx.cfg = cfg;
  ctx.stream = std::move(stream);
  ctx.ue_store = stores.ue ? stores.ue : std::make_shared<hypercast::FeatureStore>();
  ctx.sim = simulate(ctx.stream, cfg.sim, log_tier, ctx.ue_store.get(), progress);
  ctx.store = stores.fm();
  const auto fm = ctx.store;
  const auto ue = ctx.ue_store;
  const EmbeddingLookup lookup = [fm, ue](std::uint64_t request_id, std::uint64_t item_id) {
    auto out = fm->lookup(request_id, item_id);
    out.merge(ue->lookup(request_id, item_id));
    return out;
  };
  ctx.examples = join(ctx.stream, lookup, cfg.sim.join_latency, &ctx.join_stats);
  if (progress)
    progress("join: " + std::to_string(ctx.join_stats.joined) + " examples, " +
             std::to_string(ctx.join_stats.missing_embeddings) + " without embeddings");
  return ctx;
}

ExperimentContext prepare_experiments(const StreamConfig& stream_cfg, const ExperimentConfig& cfg,
                                      const ProgressFn& progress) {
  auto store = std::make_shared<hypercast::FeatureStore>();
  auto tier = in_process_log_tier(store);
  if (progress) progress("generate: " + std::to_string(stream_cfg.n_users) + " users, " +
                         std::to_string(stream_cfg.days) + " days");
  return prepare_experiments(generate(stream_cfg), cfg, *tier, {nullptr, [store] { return store; }}, progress);
}

ExpertRun make_expert(const ExperimentContext& ctx, ExpertConfig cfg, std::uint64_t seed) {
  (void)ctx;
  ExpertRun run{ExpertModel(std::move(cfg)), {}, 0, 0, {}};
  std::mt19937_64 rng(seed);
  run.model.init_weights(run.params, rng);
  return run;
}

void train_expert(const ExperimentContext& ctx, ExpertRun& run, const AdamConfig& adam, std::size_t batch_requests,
                  double t0, double t1, std::uint64_t seed, MissingEmbedding on_missing) {
  const auto& cfg = run.model.config();
  const auto task_map = catalog_indices(ctx.stream.tasks, cfg.tasks);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  AdamState opt;
  ExpertBatch batch;
  const auto step = [&] {
    run.model.expert_train_step(batch, run.params, opt, adam, rng);
    ++run.steps;
    batch.clear();
  };
  std::vector<TrainingExample> kept;
  for (const auto& r : surface_ranges(ctx, cfg.surface_id, t0, t1)) {
    auto span = std::span(ctx.examples).subspan(r.begin, r.end - r.begin);
    if (run.model.has_fm() && on_missing == MissingEmbedding::kSkip) {
      kept.clear();
      for (const auto& ex : span) {
        if (ex.embeddings.contains(cfg.fm_version)) {
          kept.push_back(ex);
        } else {
          ++run.inputs.skipped;
        }
      }
      if (kept.empty()) continue;
      span = kept;
    }
    batch.push_back(make_expert_request(ctx.stream, span, cfg, task_map, "ue", &run.inputs));
    ++run.requests;
    if (batch.size() >= std::max<std::size_t>(1, batch_requests)) step();
  }
  if (!batch.empty()) step();
}

std::vector<NEResult> evaluate_expert(const ExperimentContext& ctx, const ExpertRun& run, double t0, double t1) {
  const auto& cfg = run.model.config();
  const auto task_map = catalog_indices(ctx.stream.tasks, cfg.tasks);
  std::vector<std::vector<double>> labels(cfg.tasks.size()), probs(cfg.tasks.size());
  ExpertInputStats stats;
  for (const auto& r : surface_ranges(ctx, cfg.surface_id, t0, t1)) {
    const auto req = make_expert_request(ctx.stream, std::span(ctx.examples).subspan(r.begin, r.end - r.begin), cfg,
                                         task_map, "ue", &stats);
    const Tensor p = run.model.predict_probabilities(run.params, req);
    for (std::size_t t = 0; t < cfg.tasks.size(); ++t)
      for (std::size_t i = 0; i < req.candidates.size(); ++i)
        if (req.mask[t][i] > 0.0) {
          labels[t].push_back(req.labels[t][i]);
          probs[t].push_back(p.at(i, t));
        }
  }
  std::vector<std::string> names;
  for (const auto& t : cfg.tasks) names.push_back(t.name);
  return ne_per_task(names, labels, probs);
}

std::vector<NEResult> evaluate_fm(const ExperimentContext& ctx, const std::string& version, std::uint32_t surface,
                                  double t0, double t1) {
  const auto& spec = fm_spec(ctx.cfg, version);
  const FoundationModel model(spec.model);
  const ParamSet& w = ctx.sim.fm_params.at(version);
  const auto task_map = catalog_indices(ctx.stream.tasks, spec.model.tasks);
  const auto main = model.main_task_indices();
  std::vector<std::vector<double>> labels(main.size()), probs(main.size());
  const auto lo = at_fraction(ctx.stream, t0);
  const auto hi = at_fraction(ctx.stream, t1);
  for (const auto& r : request_ranges(ctx.stream)) {
    const auto& e = ctx.stream.events[r.begin];
    if (e.surface_id != surface || e.ts < lo || e.ts >= hi) continue;
    std::vector<std::size_t> events;
    for (std::size_t i = r.begin; i < r.end; ++i) events.push_back(i);
    const auto req = make_fm_request(ctx.stream, events, spec.model, task_map);
    Tape tape;
    const Tensor z = model.forward(tape, w, req).main_logits.value();
    for (std::size_t k = 0; k < main.size(); ++k)
      for (std::size_t i = 0; i < events.size(); ++i)
        if (req.mask[main[k]][i] > 0.0) {
          labels[k].push_back(req.labels[main[k]][i]);
          probs[k].push_back(clip_probability(1.0 / (1.0 + std::exp(-z.at(i, k)))));
        }
  }
  std::vector<std::string> names;
  for (auto t : main) names.push_back(spec.model.tasks[t].name);
  return ne_per_task(names, labels, probs);
}

TransferReport run_transfer_experiment(const ExperimentContext& ctx, const ProgressFn& progress) {
  const auto& cfg = ctx.cfg;
  const auto& et = cfg.expert;
  TransferReport report;
  for (auto surface : cfg.transfer_surfaces) {
    // Per seed: a donor on the small FM, then two warm-started experts that
    // differ only in the FM source.
    std::map<std::string, std::map<std::string, std::vector<double>>> per_seed;  // version -> task -> NE
    for (auto seed : cfg.transfer_seeds) {
      const std::string tag = surface_name(surface);
      const std::string suffix = "_" + std::to_string(seed);
      auto donor = make_expert(ctx, expert_variant(ctx, surface, cfg.small_version, 0), seed);
      train_expert(ctx, donor, et.adam, et.batch_requests, cfg.donor_start, cfg.donor_end, seed, et.on_missing);
      if (ctx.on_expert) ctx.on_expert("transfer_" + tag + "_donor" + suffix, donor);
      for (const auto& version : {cfg.small_version, cfg.large_version}) {
        auto run = make_expert(ctx, expert_variant(ctx, surface, version, 0), seed + 1);
        std::mt19937_64 rng(seed + 2);
        run.model.warm_start(run.params, donor.params, rng);
        train_expert(ctx, run, et.adam, et.batch_requests, cfg.donor_end, cfg.expert_end, seed + 3, et.on_missing);
        if (ctx.on_expert) ctx.on_expert("transfer_" + tag + "_" + version + suffix, run);
        for (const auto& r : evaluate_expert(ctx, run, cfg.expert_end, 1.0)) per_seed[version][r.task].push_back(r.ne);
      }
    }
    auto mean_ne = [&](const std::string& version, const std::string& task) {
      const auto& v = per_seed.at(version).at(task);
      return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    const auto fm_large = evaluate_fm(ctx, cfg.large_version, surface, cfg.expert_end, 1.0);
    const auto fm_small = evaluate_fm(ctx, cfg.small_version, surface, cfg.expert_end, 1.0);
    for (const auto& r : fm_large) {
      TransferRow row;
      row.surface = surface;
      row.task = r.task;
      row.ne_fm1 = r.ne;
      row.ne_fm2 = ne_of(fm_small, r.task);
      row.ne_expert1 = mean_ne(cfg.large_version, r.task);
      row.ne_expert2 = mean_ne(cfg.small_version, r.task);
      row.ne_expert1_per_seed = per_seed.at(cfg.large_version).at(r.task);
      row.ne_expert2_per_seed = per_seed.at(cfg.small_version).at(r.task);
      row.fm_diff_percent = ne_diff_percent(row.ne_fm1, row.ne_fm2);
      row.expert_diff_percent = ne_diff_percent(row.ne_expert1, row.ne_expert2);
      try {
        row.tr = transfer_ratio(row.ne_fm1, row.ne_fm2, row.ne_expert1, row.ne_expert2);
      } catch (const MetricUndefined&) {
      }
      row.significant = row.expert_diff_percent <= -kSignificantNEDiffPercent;
      report.rows.push_back(row);
    }
    if (progress) progress("transfer: surface " + surface_name(surface) + " done");
  }
  return report;
}

AblationReport run_ablation(const ExperimentContext& ctx, const ProgressFn& progress) {
  const auto& cfg = ctx.cfg;
  const auto& et = cfg.expert;
  AblationReport report;
  report.surface = cfg.ablation_surface;
  const std::size_t ue_dim = cfg.sim.ue ? cfg.sim.ue->model.encoder.dim : 0;
  struct Variant {
    std::string name;
    bool ue;
    bool tae;
  };
  std::vector<Variant> variants{{"baseline", false, false}, {"+UE", true, false}, {"+TAE", false, true}, {"+UE+TAE", true, true}};
  report.seeds = cfg.ablation_seeds;
  std::map<std::string, double> base;
  for (const auto& v : variants) {
    if (v.ue && ue_dim == 0) throw ConfigurationError("ablation needs a user embedding trainer");
    AblationRow row{v.name, {}, {}, {}};
    for (auto seed : cfg.ablation_seeds) {
      auto run = make_expert(ctx, expert_variant(ctx, report.surface, v.tae ? cfg.large_version : "", v.ue ? ue_dim : 0), seed);
      train_expert(ctx, run, et.adam, et.batch_requests, cfg.donor_start, cfg.expert_end, seed + 3, et.on_missing);
      if (ctx.on_expert) ctx.on_expert("ablation_" + v.name + "_" + std::to_string(seed), run);
      for (const auto& r : evaluate_expert(ctx, run, cfg.expert_end, 1.0)) row.ne_per_seed[r.task].push_back(r.ne);
    }
    for (const auto& [task, v] : row.ne_per_seed) row.ne[task] = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (report.tasks.empty())
      for (const auto& [task, ne] : row.ne) report.tasks.push_back(task);
    if (v.name == "baseline") base = row.ne;
    for (const auto& [task, ne] : row.ne) row.diff_percent[task] = ne_diff_percent(ne, base.at(task));
    report.rows.push_back(std::move(row));
    if (progress) progress("ablation: " + v.name + " done");
  }
  return report;
}

GeneralizationReport run_generalization(const ExperimentContext& ctx, const ProgressFn& progress) {
  const auto& cfg = ctx.cfg;
  const auto& et = cfg.expert;
  GeneralizationReport report;
  report.surface = cfg.generalization_surface;
  report.fm_version = cfg.large_version;
  std::vector<std::string> tasks = cfg.withheld_tasks;
  for (const auto& t : tasks) report.rows.push_back({t, {}, {}, {}, 0.0});
  for (auto seed : cfg.generalization_seeds) {
    for (const bool with_fm : {false, true}) {
      auto run = make_expert(ctx, expert_variant(ctx, report.surface, with_fm ? cfg.large_version : "", 0), seed);
      train_expert(ctx, run, et.adam, et.batch_requests, cfg.donor_start, cfg.expert_end, seed + 3, et.on_missing);
      if (ctx.on_expert)
        ctx.on_expert("generalization_" + std::to_string(seed) + (with_fm ? "_fm" : "_baseline"), run);
      const auto ne = evaluate_expert(ctx, run, cfg.expert_end, 1.0);
      for (auto& row : report.rows) (with_fm ? row.ne_fm : row.ne_baseline).push_back(ne_of(ne, row.task));
    }
    if (progress) progress("generalization: seed " + std::to_string(seed) + " done");
  }
  for (auto& row : report.rows) {
    double sum = 0.0;
    for (std::size_t i = 0; i < row.ne_fm.size(); ++i) {
      row.diff_percent.push_back(ne_diff_percent(row.ne_fm[i], row.ne_baseline[i]));
      sum += row.diff_percent.back();
    }
    row.mean_diff_percent = row.diff_percent.empty() ? 0.0 : sum / static_cast<double>(row.diff_percent.size());
  }
  return report;
}

ComputeBudget measure_compute_budget(const ExperimentContext& ctx, std::size_t max_requests) {
  const auto& cfg = ctx.cfg;
  const auto surface = cfg.ablation_surface;
  const auto expert = make_expert(ctx, expert_variant(ctx, surface, cfg.large_version, 0), cfg.expert.seed);
  ExpertConfig one_stage_cfg = expert_variant(ctx, surface, "", 0);
  one_stage_cfg.short_encoder = cfg.one_stage_encoder;
  one_stage_cfg.short_encoder.prefix = "short";
  const auto one_stage = make_expert(ctx, one_stage_cfg, cfg.expert.seed);
  const auto map_e = catalog_indices(ctx.stream.tasks, expert.model.config().tasks);
  ComputeBudget b;
  std::size_t n = 0;
  for (const auto& r : surface_ranges(ctx, surface, cfg.expert_end, 1.0)) {
    if (n >= max_requests) break;
    const auto ex = std::span(ctx.examples).subspan(r.begin, r.end - r.begin);
    b.expert_flops += expert.model.forward_flops(expert.params, make_expert_request(ctx.stream, ex, expert.model.config(), map_e));
    b.one_stage_flops +=
        one_stage.model.forward_flops(one_stage.params, make_expert_request(ctx.stream, ex, one_stage.model.config(), map_e));
    ++n;
  }
  if (n == 0) throw ConfigurationError("no evaluation requests for the compute budget");
  b.expert_flops /= n;
  b.one_stage_flops /= n;
  b.ratio = static_cast<double>(b.expert_flops) / static_cast<double>(b.one_stage_flops);
  return b;
}

std::vector<json> report_lines(const TransferReport& r) {
  std::vector<json> out;
  for (const auto& row : r.rows) {
    json j{{"experiment", "transfer"},
           {"surface", surface_name(row.surface)},
           {"task", row.task},
           {"ne_fm_large", row.ne_fm1},
           {"ne_fm_small", row.ne_fm2},
           {"ne_expert_large", row.ne_expert1},
           {"ne_expert_small", row.ne_expert2},
           {"fm_diff_percent", row.fm_diff_percent},
           {"expert_diff_percent", row.expert_diff_percent},
           {"significant", row.significant},
           {"ne_expert_large_per_seed", row.ne_expert1_per_seed},
           {"ne_expert_small_per_seed", row.ne_expert2_per_seed}};
    j["tr"] = row.tr ? json(*row.tr) : json(nullptr);
    out.push_back(j);
  }
  return out;
}

std::vector<json> report_lines(const AblationReport& r) {
  std::vector<json> out;
  for (const auto& row : r.rows) {
    json j{{"experiment", "ablation"}, {"surface", surface_name(r.surface)}, {"variant", row.variant}};
    j["ne"] = row.ne;
    j["ne_per_seed"] = row.ne_per_seed;
    j["seeds"] = r.seeds;
    j["diff_percent"] = row.diff_percent;
    out.push_back(j);
  }
  return out;
}

std::vector<json> report_lines(const GeneralizationReport& r) {
  std::vector<json> out;
  for (const auto& row : r.rows) {
    out.push_back(json{{"experiment", "generalization"},
                       {"surface", surface_name(r.surface)},
                       {"fm_version", r.fm_version},
                       {"task", row.task},
                       {"ne_baseline", row.ne_baseline},
                       {"ne_fm", row.ne_fm},
                       {"diff_percent", row.diff_percent},
                       {"mean_diff_percent", row.mean_diff_percent},
                       {"significant", row.mean_diff_percent <= -kSignificantNEDiffPercent}});
  }
  return out;
}

json report_line(const ComputeBudget& b) {
  return json{{"experiment", "compute_budget"},
              {"expert_flops", b.expert_flops},
              {"one_stage_flops", b.one_stage_flops},
              {"ratio", b.ratio}};
}

}  // namespace fmx
