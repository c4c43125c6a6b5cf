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
// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "fmx/checkpoint.hpp"
#include "fmx/encoder.hpp"
#include "fmx/experiments.hpp"
#include "fmx/expert.hpp"
#include "fmx/foundation.hpp"
#include "fmx/hypercast/registry.hpp"
#include "fmx/hypercast/sync.hpp"
#include "fmx/hypercast/tiers.hpp"
#include "fmx/metrics.hpp"
#include "fmx/pipeline.hpp"
#include "fmx/user_embedding.hpp"
#include "gradcheck.hpp"

namespace fs = std::filesystem;
using namespace fmx;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

std::vector<json> read_jsonl(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::vector<json> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

bool same_bytes(const fs::path& a, const fs::path& b) { return read_file_bytes(a) == read_file_bytes(b); }

// --- 1. gradients ------------------------------------------------------------

EncoderConfig grad_encoder(const std::string& prefix, std::size_t layers) {
  EncoderConfig c;
  c.prefix = prefix;
  c.dim = 8;
  c.layers = layers;
  c.max_history = 5;
  c.item_buckets = 64;
  c.ctx_buckets = 16;
  c.item_dim = 6;
  c.ctx_dim = 4;
  c.item_hidden = 10;
  return c;
}

std::vector<ItemFeatures> grad_items(std::size_t n, std::uint64_t base, bool with_action, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::uint64_t> item(0, 400);
  std::vector<ItemFeatures> out;
  for (std::size_t i = 0; i < n; ++i) {
    ItemFeatures f{base + item(rng), static_cast<std::uint32_t>(i % 3), static_cast<std::uint32_t>(1 + i % 5), std::nullopt};
    if (with_action) f.action = static_cast<std::uint32_t>(i % 5);
    out.push_back(f);
  }
  return out;
}

void fill_labels(std::vector<std::vector<double>>& labels, std::vector<std::vector<double>>& mask, std::size_t tasks,
                 std::size_t m, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.4), keep(0.7);
  labels.assign(tasks, std::vector<double>(m));
  mask.assign(tasks, std::vector<double>(m, 1.0));
  for (std::size_t t = 0; t < tasks; ++t)
    for (std::size_t i = 0; i < m; ++i) {
      labels[t][i] = coin(rng) ? 1.0 : 0.0;
      if (t > 0) mask[t][i] = keep(rng) ? 1.0 : 0.0;
    }
}

// Five-point differences: the two-layer encoders have enough curvature that a
// plain central difference at 1e-5 leaves truncation error near the tolerance.
constexpr double kStep = 1e-4, kFloor = 1e-6;

Outcome check_gradient_suite() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_where;
  std::size_t checked = 0;
  auto record = [&](const std::string& where, const testing::GradCheck& g) {
    checked += g.checked;
    if (g.max_rel_error > worst) {
      worst = g.max_rel_error;
      worst_where = where + " " + g.worst;
    }
  };

  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    std::mt19937_64 rng(100 + seed);
    // Sequence encoder alone, probed through a random projection.
    {
      SequenceEncoder enc(grad_encoder("enc", 1 + seed % 2));
      ParamSet w;
      enc.init_weights(w, rng);
      const auto h = grad_items(4, 0, true, rng);
      const auto t = grad_items(3, 0, false, rng);
      const Tensor r = Tensor::randn(3, 8, 1.0, rng);
      auto loss = [&](const ParamSet& p, Grads* g) {
        Tape tape;
        auto seq = enc.build_unified_sequence(tape, p, h, t);
        Var l = sum_all(mul(enc.encode(tape, p, seq), tape.constant(r)));
        if (g) {
          tape.backward(l);
          *g = tape.gradients();
        }
        return l.scalar();
      };
      Grads g;
      loss(w, &g);
      record("encoder", testing::check_gradients(w, g, [&](const ParamSet& p) { return loss(p, nullptr); }, 8, kStep,
                                                 kFloor, seed, true));
    }
    // Foundation model: encoder, main heads, aux heads and alignment, with mask holes.
    {
      FMConfig c;
      c.encoder = grad_encoder("enc", 1);
      c.surfaces = {0, 1};
      c.aux_feature_dim = 3;
      c.alignment_hidden = 5;
      c.tasks = {TaskSpec{"like"}, TaskSpec{"share", TaskKind::kMain, {}, 0.5},
                 TaskSpec{"A_aux", TaskKind::kAux, {0}, 1.0}, TaskSpec{"B_aux", TaskKind::kAux, {1}, 2.0}};
      const FoundationModel fm(c);
      ParamSet w;
      fm.init_weights(w, rng);
      LabeledBatch batch;
      for (std::uint32_t s : {0u, 1u, 0u}) {
        FMRequest r;
        r.surface_id = s;
        r.history = grad_items(4, 0, true, rng);
        r.targets = grad_items(2 + s, 0, false, rng);
        r.aux_features = Tensor::randn(r.targets.size(), c.aux_feature_dim, 1.0, rng);
        fill_labels(r.labels, r.mask, c.tasks.size(), r.targets.size(), rng);
        batch.push_back(r);
      }
      LossReport rep;
      const Grads g = fm.gradients(w, batch, rep);
      auto loss = [&](const ParamSet& p) {
        std::vector<FMOutput> outs;
        for (const auto& r : batch) outs.push_back(fm.fm_forward(p, r));
        return fm.fm_loss(outs, batch).total;
      };
      record("fm", testing::check_gradients(w, g, loss, 6, kStep, kFloor, seed, true));
    }
    // Expert: FM fusion, optional user embedding, training-mode noise.
    for (std::size_t ue_dim : {0u, 4u}) {
      for (double noise : {0.0, 0.3}) {
        ExpertConfig c;
        c.surface_id = 0;
        c.fm_version = "v1";
        c.tasks = {TaskSpec{"like"}, TaskSpec{"share"}, TaskSpec{"A_1"}};
        c.fm_dim = 6;
        c.ue_dim = ue_dim;
        c.surface_feature_dim = 3;
        c.fusion_hidden = 7;
        c.fusion_out = 5;
        c.expert_hidden = 6;
        c.noise_sigma = noise;
        c.dropout = noise > 0 ? 0.2 : 0.0;
        c.short_encoder = grad_encoder("short", 1);
        c.short_encoder.max_history = 4;
        const ExpertModel model(c);
        ParamSet w;
        model.init_weights(w, rng);
        ExpertBatch batch;
        for (std::size_t m : {3u, 2u}) {
          ExpertRequest r;
          r.fm_version = c.fm_version;
          r.short_history = grad_items(3, 0, true, rng);
          r.candidates = grad_items(m, 0, false, rng);
          r.fm_embeddings = Tensor::randn(m, c.fm_dim, 1.0, rng);
          if (ue_dim > 0) r.user_embedding = Tensor::randn(1, ue_dim, 1.0, rng);
          r.surface_features = Tensor::randn(m, c.surface_feature_dim, 1.0, rng);
          fill_labels(r.labels, r.mask, c.tasks.size(), m, rng);
          batch.push_back(r);
        }
        auto loss_and_grad = [&](const ParamSet& p, Grads* g) {
          std::mt19937_64 nrng(77 + seed);
          LossReport rep;
          Grads gg = model.gradients(p, batch, rep, nrng);
          if (g) *g = std::move(gg);
          return rep.total;
        };
        Grads g;
        loss_and_grad(w, &g);
        record("expert(ue=" + std::to_string(ue_dim) + ",noise=" + fmt(noise) + ")",
               testing::check_gradients(w, g, [&](const ParamSet& p) { return loss_and_grad(p, nullptr); }, 5, kStep,
                                        kFloor, seed, true));
      }
    }
    // User-embedding baseline tower.
    {
      UEConfig c;
      c.encoder = grad_encoder("ue", 1);
      c.tasks = {TaskSpec{"like"}, TaskSpec{"share"}};
      const UserEmbeddingModel ue(c);
      ParamSet w;
      ue.init_weights(w, rng);
      LabeledBatch batch;
      for (std::size_t m : {2u, 3u}) {
        FMRequest r;
        r.surface_id = 0;
        r.history = grad_items(4, 0, true, rng);
        r.targets = grad_items(m, 0, false, rng);
        fill_labels(r.labels, r.mask, c.tasks.size(), m, rng);
        batch.push_back(r);
      }
      LossReport rep;
      const Grads g = ue.gradients(w, batch, rep);
      auto loss = [&](const ParamSet& p) {
        LossReport r;
        ue.gradients(p, batch, r);
        return r.total;
      };
      record("user_embedding", testing::check_gradients(w, g, loss, 6, kStep, kFloor, seed, true));
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-5 && secs < 60.0, "max rel err " + fmt(worst, 3) + " over " + std::to_string(checked) +
                                           " coords in " + fmt(secs, 3) + "s" +
                                           (worst >= 1e-5 ? " worst " + worst_where : "")};
}

// --- 2. NE oracle -----------------------------------------------------------

long double brute_force_ne(const std::vector<double>& y, const std::vector<double>& p) {
  long double ce = 0.0L, pos = 0.0L;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const long double q = p[i] < 1e-7 ? 1e-7 : p[i] > 1.0 - 1e-7 ? 1.0 - 1e-7 : p[i];
    ce -= y[i] == 1.0 ? std::log(q) : std::log1p(-q);
    pos += y[i];
  }
  const long double n = static_cast<long double>(y.size());
  const long double b = pos / n;
  return (ce / n) / (-(b * std::log(b) + (1.0L - b) * std::log1p(-b)));
}

Outcome check_ne_oracle() {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> len(2, 500);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int c = 0; c < 1000; ++c) {
    const int n = len(rng);
    const double rate = u(rng);
    std::vector<double> y(n), p(n);
    for (int i = 0; i < n; ++i) {
      y[i] = u(rng) < rate ? 1.0 : 0.0;
      const double r = u(rng);
      p[i] = r < 0.02 ? 0.0 : r > 0.98 ? 1.0 : u(rng);
    }
    y[0] = 1.0;
    y[1] = 0.0;
    worst = std::max(worst, std::abs(normalized_entropy(y, p).ne - static_cast<double>(brute_force_ne(y, p))));
  }
  double base_worst = 0.0;
  for (double rate : {0.01, 0.23, 0.5, 0.9}) {
    std::bernoulli_distribution b(rate);
    std::vector<double> y(4000);
    double pos = 0.0;
    for (auto& v : y) pos += v = b(rng) ? 1.0 : 0.0;
    const std::vector<double> p(y.size(), pos / static_cast<double>(y.size()));
    base_worst = std::max(base_worst, std::abs(normalized_entropy(y, p).ne - 1.0));
  }
  return {worst < 1e-12 && base_worst < 1e-12,
          "max |NE - oracle| " + fmt(worst, 3) + " over 1000 cases, base-rate |NE - 1| " + fmt(base_worst, 3)};
}

// --- 3. masking -------------------------------------------------------------

double bce_mean(const std::vector<double>& y, const std::vector<double>& z) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-z[i]));
    s += -(y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p));
  }
  return s / static_cast<double>(y.size());
}

Outcome check_masking() {
  std::mt19937_64 rng(13);
  const std::vector<TaskSpec> tasks{TaskSpec{"main"}, TaskSpec{"aux", TaskKind::kAux, {0}, 1.0}};
  std::normal_distribution<double> logit(0.0, 2.0);
  std::bernoulli_distribution coin(0.5);
  double worst = 0.0;
  std::size_t skipped_ok = 0, all_one_ok = 0, failures = 0;
  for (int trial = 0; trial < 600; ++trial) {
    const std::size_t n_req = 1 + trial % 5;
    const int pattern = trial % 3;  // random, all-zero, all-one
    LabeledBatch batch(n_req);
    std::vector<std::vector<std::vector<double>>> logits(n_req, std::vector<std::vector<double>>(2));
    std::vector<double> kept_y, kept_z, main_y, main_z;
    for (std::size_t r = 0; r < n_req; ++r) {
      const std::size_t m = 1 + (trial + r) % 7;
      batch[r].labels.assign(2, std::vector<double>(m));
      batch[r].mask.assign(2, std::vector<double>(m, 1.0));
      for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t i = 0; i < m; ++i) {
          const double z = logit(rng), y = coin(rng) ? 1.0 : 0.0;
          logits[r][t].push_back(z);
          batch[r].labels[t][i] = y;
          if (t == 0) {
            main_y.push_back(y);
            main_z.push_back(z);
            continue;
          }
          const double d = pattern == 0 ? (coin(rng) ? 1.0 : 0.0) : pattern == 1 ? 0.0 : 1.0;
          batch[r].mask[t][i] = d;
          if (d > 0) {
            kept_y.push_back(y);
            kept_z.push_back(z);
          }
        }
    }
    const auto rep = masked_multitask_loss(logits, batch, tasks);
    worst = std::max(worst, std::abs(rep.per_task[0] - bce_mean(main_y, main_z)));
    if (kept_y.empty()) {
      if (rep.skipped[1] && rep.per_task[1] == 0.0 && std::abs(rep.total - rep.per_task[0]) < 1e-12)
        ++skipped_ok;
      else
        ++failures;
    } else {
      const double err = std::abs(rep.per_task[1] - bce_mean(kept_y, kept_z));
      worst = std::max(worst, err);
      if (rep.skipped[1]) ++failures;
      if (pattern == 2 && kept_y.size() == main_y.size()) ++all_one_ok;
    }
  }
  return {worst < 1e-12 && failures == 0 && skipped_ok >= 200 && all_one_ok >= 200,
          "max err " + fmt(worst, 3) + ", all-zero skips " + std::to_string(skipped_ok) + ", all-one batches " +
              std::to_string(all_one_ok) + ", failures " + std::to_string(failures)};
}

// --- 4. candidate independence and leakage ----------------------------------

Outcome check_independence_and_leakage() {
  SequenceEncoder enc(grad_encoder("enc", 2));
  ParamSet w;
  std::mt19937_64 rng(3);
  enc.init_weights(w, rng);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 5; ++trial) {
    const auto h = grad_items(5, 0, true, rng);
    const auto many = grad_items(100, 1000, false, rng);
    const Tensor all = enc.embed(w, h, many);
    for (std::size_t k : {0u, 17u, 99u}) {
      const Tensor one = enc.embed(w, h, std::span(many).subspan(k, 1));
      for (std::size_t c = 0; c < one.cols; ++c) mismatches += one.at(0, c) != all.at(k, c);
    }
    // History position i must not see positions after it.
    Tape t1;
    const Tensor a = enc.encode_all(t1, w, enc.build_unified_sequence(t1, w, h, std::span(many).first(2))).value();
    for (std::size_t i = 0; i + 1 < h.size(); ++i) {
      auto zeroed = h;
      for (std::size_t j = i + 1; j < zeroed.size(); ++j) zeroed[j] = ItemFeatures{0, 0, 0, 0};
      Tape t2;
      const Tensor b =
          enc.encode_all(t2, w, enc.build_unified_sequence(t2, w, zeroed, std::span(many).first(2))).value();
      for (std::size_t r = 0; r <= i; ++r)
        for (std::size_t c = 0; c < a.cols; ++c) mismatches += a.at(r, c) != b.at(r, c);
    }
  }
  const auto stream = generate(StreamConfig{});
  const auto examples =
      join(stream, [](std::uint64_t, std::uint64_t) { return std::map<std::string, EmbeddingVector>{}; }, 1800);
  std::size_t leaks = 0;
  for (const auto& ex : examples) {
    const auto& e = stream.events[ex.event];
    for (const auto& h : stream.history(ex.event)) leaks += h.ts >= e.ts;
    leaks += ex.available_at < e.ts;
  }
  return {mismatches == 0 && leaks == 0 && examples.size() >= 100000,
          std::to_string(mismatches) + " embedding mismatches, " + std::to_string(leaks) + " leaks over " +
              std::to_string(examples.size()) + " joined examples"};
}

// --- 5. sync ----------------------------------------------------------------

ParamSet ten_blocks(double fill) {
  ParamSet p;
  p.add("head", Tensor(1, 2, fill));
  for (int i = 0; i < 9; ++i) p.add("layer" + std::to_string(i), Tensor(1, 2, fill));
  return p;
}

Outcome check_sync(const fs::path& transfer_reports) {
  std::mt19937_64 rng(4);
  ParamSet trainer;
  for (const auto& [name, b] : ten_blocks(0.0)) trainer.add(name, Tensor::randn(1, 2, 1.0, rng), 3);
  hypercast::ServerWeights server(ten_blocks(0.0));
  hypercast::PartialPublisher pub("v", 0.3);
  std::size_t publishes_to_equal = 0;
  for (std::size_t q = 1; q <= 10 && publishes_to_equal == 0; ++q) {
    server.apply_partial(pub.publish(trainer));
    if (server.snapshot()->params == trainer) publishes_to_equal = q;
  }

  bool staleness_ok = true;
  std::string staleness;
  for (const auto& line : read_jsonl(transfer_reports / "sync.jsonl")) {
    const auto s = line.at("max_staleness").get<std::int64_t>(), b = line.at("bound").get<std::int64_t>();
    staleness_ok &= s <= b && line.at("publishes").get<std::size_t>() > 0;
    staleness += " " + line.at("version").get<std::string>() + " " + std::to_string(s) + "s<=" + std::to_string(b) + "s";
  }

  // Concurrent reads through the FM tier while a writer keeps publishing.
  EncoderConfig enc = grad_encoder("enc", 1);
  std::vector<ParamSet> variants;
  for (std::uint64_t s = 0; s < 4; ++s) {
    ParamSet p;
    std::mt19937_64 r(10 + s);
    SequenceEncoder(enc).init_weights(p, r);
    variants.push_back(p);
  }
  auto reg = std::make_shared<hypercast::VersionRegistry>();
  reg->register_version("A", enc, variants[0]);
  hypercast::FmServingTier tier(reg);
  const auto hist = grad_items(5, 0, true, rng);
  const auto cands = grad_items(3, 0, false, rng);
  std::vector<Tensor> expected;
  for (const auto& v : variants) expected.push_back(SequenceEncoder(enc).embed(v, hist, cands));
  std::atomic<bool> done{false};
  std::thread writer([&] {
    for (std::uint64_t seq = 1; !done; ++seq) {
      hypercast::WeightDelta d{"A", seq, {}};
      for (const auto& [name, b] : variants[seq % 4]) d.blocks.push_back({name, b.counter, b.value});
      reg->resolve("A")->weights->apply_partial(d);
    }
  });
  std::size_t torn = 0, sequences = 0;
  std::uint64_t last = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto res = tier.embed({std::string("A"), hist, cands});
    if (!(res.embeddings == expected[res.sequence % 4])) ++torn;
    if (res.checksum != checksum(variants[res.sequence % 4])) ++torn;
    sequences += res.sequence != last;
    last = res.sequence;
  }
  done = true;
  writer.join();

  return {publishes_to_equal == 4 && staleness_ok && torn == 0,
          "equal after " + std::to_string(publishes_to_equal) + " publishes; staleness" + staleness + "; " +
              std::to_string(torn) + " torn of 10000 reads across " + std::to_string(sequences) + " snapshots"};
}

// --- 6. pruning -------------------------------------------------------------

Outcome check_pruning(const RunConfig& cfg, const fs::path& checkpoints) {
  std::size_t mismatches = 0, bad_blocks = 0, compared = 0, pruned_blocks = 0, full_blocks = 0;
  std::mt19937_64 rng(6);
  for (const auto& spec : cfg.experiments.sim.fms) {
    const FoundationModel fm(spec.model);
    const auto full = load_checkpoint(checkpoints / (spec.version + ".ckpt")).params;
    const auto pruned = load_checkpoint(checkpoints / (spec.version + ".pruned.ckpt")).params;
    full_blocks += full.block_count();
    pruned_blocks += pruned.block_count();
    for (const auto& [name, b] : pruned)
      bad_blocks += name.find("mt/") != std::string::npos || name.find("align/") != std::string::npos;
    if (!(fm.export_inference_subgraph(full) == pruned)) ++mismatches;
    std::uniform_int_distribution<std::uint64_t> item(0, cfg.stream.n_items - 1);
    for (std::uint32_t s = 0; s < 4; ++s) {
      FMRequest r;
      r.surface_id = s;
      for (std::size_t i = 0; i < 12; ++i)
        r.history.push_back({item(rng), s, static_cast<std::uint32_t>(1 + i), static_cast<std::uint32_t>(i % 5)});
      for (std::size_t i = 0; i < 8; ++i) r.targets.push_back({item(rng), s, 0, std::nullopt});
      r.aux_features = Tensor::randn(r.targets.size(), spec.model.aux_feature_dim, 1.0, rng);
      mismatches += !(fm.encoder().embed(pruned, r.history, r.targets) == fm.fm_forward(full, r).embeddings);
      ++compared;
    }
  }
  return {mismatches == 0 && bad_blocks == 0 && compared > 0 && pruned_blocks < full_blocks,
          std::to_string(compared) + " requests, " + std::to_string(mismatches) + " mismatches, " +
              std::to_string(pruned_blocks) + "/" + std::to_string(full_blocks) + " blocks kept, " +
              std::to_string(bad_blocks) + " head/alignment blocks in pruned set"};
}

// --- 7. version isolation ---------------------------------------------------

struct SimRun {
  Stream stream;
  std::shared_ptr<hypercast::FeatureStore> store;
  SimulationResult result;
};

SimRun run_versions(const std::vector<std::string>& versions) {
  StreamConfig sc;
  sc.seed = 21;
  sc.n_users = 60;
  sc.n_items = 80;
  sc.days = 3;
  SimRun r{generate(sc), std::make_shared<hypercast::FeatureStore>(), {}};
  SimulationConfig cfg;
  for (const auto& v : versions) {
    FMTrainerSpec s;
    s.version = v;
    s.seed = std::hash<std::string>{}(v) % 1000;
    s.model.encoder = grad_encoder("enc", 1);
    s.model.encoder.max_history = 8;
    s.model.alignment_hidden = 8;
    s.model.surfaces = {0, 1, 2, 3};
    for (std::size_t t = 0; t < r.stream.tasks.main_count; ++t) s.model.tasks.push_back(TaskSpec{r.stream.tasks.names[t]});
    s.batch_requests = 4;
    cfg.fms.push_back(s);
  }
  auto tier = in_process_log_tier(r.store);
  r.result = simulate(r.stream, cfg, *tier);
  return r;
}

std::vector<std::uint8_t> pinned_expert_checkpoint(const SimRun& r, std::size_t& steps) {
  ExperimentContext ctx;
  ctx.stream = r.stream;
  ctx.examples = join(ctx.stream, r.store->lookup_fn(), 1800);
  ExpertConfig e;
  e.surface_id = 1;
  e.tasks = expert_tasks(ctx.stream.tasks, 1);
  e.fm_version = "A";
  e.fm_dim = 8;
  e.short_encoder = grad_encoder("short", 1);
  e.fusion_hidden = 8;
  e.fusion_out = 8;
  e.expert_hidden = 8;
  auto run = make_expert(ctx, e, 9);
  train_expert(ctx, run, AdamConfig{}, 2, 0.4, 1.0, 9);
  steps = run.steps;
  return encode_checkpoint(Checkpoint{run.params, "A"});
}

Outcome check_version_isolation() {
  const auto both = run_versions({"A", "B"});
  const auto only_a = run_versions({"A"});
  const auto examples = join(both.stream, both.store->lookup_fn(), 1800);
  const auto t_log = static_cast<std::int64_t>(0.4 * both.stream.end_time());
  std::size_t logged = 0, missing = 0;
  for (const auto& ex : examples) {
    if (both.stream.events[ex.event].ts < t_log) continue;
    ++logged;
    missing += !(ex.embeddings.size() == 2 && ex.embeddings.contains("A") && ex.embeddings.contains("B"));
  }
  std::size_t steps_both = 0, steps_a = 0;
  const auto ck_both = pinned_expert_checkpoint(both, steps_both);
  const auto ck_a = pinned_expert_checkpoint(only_a, steps_a);
  const bool identical = ck_both == ck_a;
  return {logged > 1000 && missing == 0 && identical && steps_both > 10,
          std::to_string(logged) + " joined examples, " + std::to_string(missing) +
              " without both versions; pinned expert checkpoints " + (identical ? "byte-identical" : "differ") +
              " (" + std::to_string(ck_a.size()) + " bytes, " + std::to_string(steps_a) + " steps)"};
}

// --- 8-11. experiments ------------------------------------------------------

constexpr double kThresholdPercent = 0.1;

bool is_main_task(const std::string& t) {
  static const std::set<std::string> main{"like", "share", "video_complete", "video_view_duration"};
  return main.contains(t);
}

Outcome check_transfer(const fs::path& reports, double run_seconds) {
  std::size_t rows = 0, wrong_direction = 0, tr_checked = 0, tr_bad = 0;
  std::string failures;
  for (const auto& r : read_jsonl(reports / "transfer.jsonl")) {
    const auto task = r.at("task").get<std::string>();
    const auto where = r.at("surface").get<std::string>() + "/" + task;
    if (is_main_task(task)) {
      ++rows;
      if (!(r.at("ne_expert_large").get<double>() < r.at("ne_expert_small").get<double>())) {
        ++wrong_direction;
        failures += " " + where + ":direction";
      }
    }
    if (r.at("fm_diff_percent").get<double>() < -kThresholdPercent) {
      ++tr_checked;
      const bool ok = !r.at("tr").is_null() && r.at("tr").get<double>() > 0.0 && r.at("tr").get<double>() < 1.5;
      if (!ok) {
        ++tr_bad;
        failures += " " + where + ":tr=" + (r.at("tr").is_null() ? "null" : fmt(r.at("tr").get<double>(), 3));
      }
    }
  }
  const bool ok = rows > 0 && wrong_direction == 0 && tr_bad == 0 && run_seconds < 1800.0;
  return {ok, std::to_string(rows - wrong_direction) + "/" + std::to_string(rows) +
                  " main-task rows favour the large FM; TR in (0, 1.5) on " + std::to_string(tr_checked - tr_bad) +
                  "/" + std::to_string(tr_checked) + " rows with FM gain; run " + fmt(run_seconds, 4) + "s" + failures};
}

Outcome check_ablation(const fs::path& reports) {
  std::map<std::string, std::map<std::string, double>> ne;
  for (const auto& r : read_jsonl(reports / "ablation.jsonl"))
    ne[r.at("variant").get<std::string>()] = r.at("ne").get<std::map<std::string, double>>();
  for (const char* v : {"baseline", "+UE", "+TAE", "+UE+TAE"})
    if (!ne.contains(v)) return {false, std::string("missing variant ") + v};
  std::size_t tasks = 0, tae_wins = 0, ue_small = 0;
  std::string detail;
  for (const auto& [task, base] : ne.at("baseline")) {
    if (!is_main_task(task)) continue;
    ++tasks;
    const double ue = ne.at("+UE").at(task), tae = ne.at("+TAE").at(task), both = ne.at("+UE+TAE").at(task);
    tae_wins += tae < ue;
    // Extra gain from adding the user embedding on top of TAE, percent NE.
    const double gain = -ne_diff_percent(both, tae);
    ue_small += gain < kThresholdPercent;
    detail += " " + task + "(UE " + fmt(ne_diff_percent(ue, base), 3) + "% TAE " + fmt(ne_diff_percent(tae, base), 3) +
              "% UE-on-TAE change " + (gain > 0 ? "-" : "+") + fmt(std::abs(gain), 3) + "%)";
  }
  return {tasks == 4 && tae_wins == tasks && ue_small == tasks,
          "+TAE beats +UE on " + std::to_string(tae_wins) + "/" + std::to_string(tasks) + " main tasks, UE-on-TAE gain < 0.1% on " +
              std::to_string(ue_small) + "/" + std::to_string(tasks) + ";" + detail};
}

Outcome check_generalization(const fs::path& reports, const RunConfig& cfg) {
  std::size_t rows = 0, improved = 0;
  std::string detail;
  std::set<std::string> seen;
  for (const auto& r : read_jsonl(reports / "generalization.jsonl")) {
    ++rows;
    const auto task = r.at("task").get<std::string>();
    seen.insert(task);
    const double mean = r.at("mean_diff_percent").get<double>();
    improved += mean < -kThresholdPercent && r.at("diff_percent").size() == 3;
    detail += " " + task + " " + fmt(mean, 3) + "%";
  }
  const std::set<std::string> withheld(cfg.experiments.withheld_tasks.begin(), cfg.experiments.withheld_tasks.end());
  return {rows == 4 && improved == 4 && seen == withheld,
          std::to_string(improved) + "/" + std::to_string(rows) + " withheld tasks with mean diff < -0.1%:" + detail};
}

Outcome check_compute(const fs::path& reports) {
  const auto lines = read_jsonl(reports / "compute_budget.jsonl");
  if (lines.size() != 1) return {false, "expected one compute_budget line"};
  const double ratio = lines[0].at("ratio").get<double>();
  return {ratio >= 0.2 && ratio <= 0.4, "expert " + std::to_string(lines[0].at("expert_flops").get<std::uint64_t>()) +
                                            " FLOPs vs one-stage " +
                                            std::to_string(lines[0].at("one_stage_flops").get<std::uint64_t>()) +
                                            ", ratio " + fmt(ratio, 4)};
}

// --- 12. smoke --------------------------------------------------------------

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

Outcome check_smoke(const fs::path& fmx_binary, const fs::path& config, const fs::path& workdir) {
  const auto cfg = load_run_config(config);
  double worst_seconds = 0.0;
  std::vector<fs::path> outs;
  for (const char* name : {"smoke_a", "smoke_b"}) {
    const fs::path out = workdir / name;
    fs::remove_all(out);
    const std::string cmd = shell_quote(fmx_binary.string()) + " run --quiet --seed 17 --config " +
                            shell_quote(config.string()) + " --out " + shell_quote(out.string()) + " > " +
                            shell_quote((workdir / (std::string(name) + ".log")).string()) + " 2>&1";
    const auto t0 = Clock::now();
    const int rc = std::system(cmd.c_str());
    worst_seconds = std::max(worst_seconds, seconds_since(t0));
    if (rc != 0) return {false, std::string(name) + " exited with status " + std::to_string(rc)};
    outs.push_back(out);
  }
  std::size_t present = 0, identical = 0;
  const auto files = report_files(cfg);
  for (const auto& f : files) {
    const fs::path a = outs[0] / "reports" / f, b = outs[1] / "reports" / f;
    if (!fs::exists(a) || !fs::exists(b) || fs::file_size(a) == 0) continue;
    ++present;
    identical += same_bytes(a, b);
  }
  const bool logs_same = same_bytes(outs[0] / "logs" / "features.jsonl", outs[1] / "logs" / "features.jsonl");
  return {worst_seconds < 300.0 && present == files.size() && identical == files.size() && logs_same,
          std::to_string(present) + "/" + std::to_string(files.size()) + " report files present, " +
              std::to_string(identical) + " byte-identical across runs, feature log " +
              (logs_same ? "identical" : "differs") + ", slowest run " + fmt(worst_seconds, 3) + "s"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fmx acceptance checks"};
  fs::path config, smoke_config, fmx_binary, workdir = "acceptance_work";
  std::vector<int> only;
  bool reuse = false;
  app.add_option("--config", config, "experiment config")->required()->check(CLI::ExistingFile);
  app.add_option("--smoke-config", smoke_config, "smoke config")->required()->check(CLI::ExistingFile);
  app.add_option("--fmx", fmx_binary, "fmx executable")->required()->check(CLI::ExistingFile);
  app.add_option("--workdir", workdir, "scratch directory");
  app.add_option("--only", only, "criteria to run (1-12)")->delimiter(',');
  app.add_flag("--reuse", reuse, "reuse an existing experiment run in the workdir");
  CLI11_PARSE(app, argc, argv);

  fs::create_directories(workdir);
  auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };

  RunConfig cfg = load_run_config(config);
  const fs::path run_dir = workdir / "experiments";
  double run_seconds = 0.0;
  bool need_run = false;
  for (int id : {5, 6, 8, 9, 10, 11}) need_run |= wanted(id);
  std::string run_error;
  if (need_run) {
    const fs::path timing = run_dir / "run_seconds.txt";
    if (reuse && fs::exists(timing)) {
      std::ifstream(timing) >> run_seconds;
    } else {
      fs::remove_all(run_dir);
      RunOptions opts;
      opts.out = run_dir;
      opts.progress = [t0 = Clock::now()](const std::string& m) {
        std::cerr << "[" << static_cast<long>(seconds_since(t0)) << "s] " << m << "\n";
      };
      const auto t0 = Clock::now();
      try {
        run_pipeline(cfg, opts);
        run_seconds = seconds_since(t0);
        std::ofstream(timing) << run_seconds << "\n";
      } catch (const std::exception& e) {
        run_error = e.what();
      }
    }
  }

  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> check;
  };
  const fs::path reports = run_dir / "reports";
  const std::vector<Criterion> criteria{
      {1, "gradient suite", check_gradient_suite},
      {2, "NE oracle", check_ne_oracle},
      {3, "masked aux loss", check_masking},
      {4, "candidate independence and leakage", check_independence_and_leakage},
      {5, "sync correctness", [&] { return check_sync(reports); }},
      {6, "inference pruning", [&] { return check_pruning(cfg, run_dir / "checkpoints"); }},
      {7, "version isolation", check_version_isolation},
      {8, "transfer", [&] { return check_transfer(reports, run_seconds); }},
      {9, "ablation", [&] { return check_ablation(reports); }},
      {10, "generalization", [&] { return check_generalization(reports, cfg); }},
      {11, "compute budget", [&] { return check_compute(reports); }},
      {12, "end-to-end smoke", [&] { return check_smoke(fmx_binary, smoke_config, workdir); }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!wanted(c.id)) continue;
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what() + (run_error.empty() ? "" : " (run failed: " + run_error + ")")};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
