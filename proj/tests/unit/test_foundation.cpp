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

#include <cmath>

#include "doctest.h"
#include "fmx/foundation.hpp"
#include "gradcheck.hpp"

using namespace fmx;

namespace {

FMConfig small_fm() {
  FMConfig c;
  c.encoder.dim = 8;
  c.encoder.layers = 1;
  c.encoder.max_history = 5;
  c.encoder.item_buckets = 64;
  c.encoder.ctx_buckets = 16;
  c.encoder.item_dim = 6;
  c.encoder.ctx_dim = 4;
  c.encoder.item_hidden = 8;
  c.surfaces = {0, 1};
  c.aux_feature_dim = 3;
  c.alignment_hidden = 5;
  TaskSpec like{"like"};
  TaskSpec share{"share"};
  share.weight = 0.5;
  TaskSpec a0{"A_aux", TaskKind::kAux, {0}, 1.0};
  TaskSpec a1{"A_aux2", TaskKind::kAux, {0}, 2.0};
  TaskSpec b0{"B_aux", TaskKind::kAux, {1}, 1.0};
  c.tasks = {like, share, a0, a1, b0};
  return c;
}

FMRequest random_request(const FMConfig& cfg, std::uint32_t surface, std::size_t m, std::mt19937_64& rng) {
  FMRequest r;
  r.surface_id = surface;
  std::uniform_int_distribution<std::uint64_t> item(0, 500);
  std::bernoulli_distribution coin(0.4);
  for (std::size_t i = 0; i < 4; ++i) r.history.push_back({item(rng), surface, 1 + static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i % 5)});
  for (std::size_t i = 0; i < m; ++i) r.targets.push_back({item(rng), surface, 0, std::nullopt});
  r.aux_features = Tensor::randn(m, cfg.aux_feature_dim, 1.0, rng);
  r.labels.assign(cfg.tasks.size(), std::vector<double>(m));
  r.mask.assign(cfg.tasks.size(), std::vector<double>(m, 1.0));
  for (std::size_t t = 0; t < cfg.tasks.size(); ++t) {
    const bool in_scope = cfg.tasks[t].kind == TaskKind::kMain || cfg.tasks[t].surface_scope.contains(surface);
    for (std::size_t i = 0; i < m; ++i) {
      r.labels[t][i] = coin(rng) ? 1.0 : 0.0;
      if (!in_scope) r.mask[t][i] = 0.0;
    }
  }
  return r;
}

// Mean BCE written out directly, no clipping.
double bce_mean(const std::vector<double>& y, const std::vector<double>& z) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-z[i]));
    s += -(y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p));
  }
  return s / static_cast<double>(y.size());
}

}  // namespace

TEST_SUITE("foundation") {
  TEST_CASE("masked aux loss equals the loss of the physically filtered sub-batch") {
    std::mt19937_64 rng(11);
    std::vector<TaskSpec> tasks{TaskSpec{"main"}, TaskSpec{"aux", TaskKind::kAux, {0}, 1.0}};
    std::normal_distribution<double> logit(0.0, 2.0);
    std::bernoulli_distribution coin(0.5);
    for (int trial = 0; trial < 300; ++trial) {
      const std::size_t n_req = 1 + trial % 4;
      LabeledBatch batch(n_req);
      std::vector<std::vector<std::vector<double>>> logits(n_req, std::vector<std::vector<double>>(2));
      std::vector<double> kept_y, kept_z, all_y, all_z;
      const int pattern = trial % 3;  // 0 random, 1 all-zero, 2 all-one
      for (std::size_t r = 0; r < n_req; ++r) {
        const std::size_t m = 1 + (trial + r) % 6;
        batch[r].labels.assign(2, std::vector<double>(m));
        batch[r].mask.assign(2, std::vector<double>(m, 1.0));
        for (std::size_t t = 0; t < 2; ++t) {
          for (std::size_t i = 0; i < m; ++i) {
            const double z = logit(rng);
            const double y = coin(rng) ? 1.0 : 0.0;
            logits[r][t].push_back(z);
            batch[r].labels[t][i] = y;
            if (t == 1) {
              const double d = pattern == 0 ? (coin(rng) ? 1.0 : 0.0) : pattern == 1 ? 0.0 : 1.0;
              batch[r].mask[t][i] = d;
              if (d > 0) {
                kept_y.push_back(y);
                kept_z.push_back(z);
              }
            } else {
              all_y.push_back(y);
              all_z.push_back(z);
            }
          }
        }
      }
      const auto rep = masked_multitask_loss(logits, batch, tasks);
      CHECK(std::abs(rep.per_task[0] - bce_mean(all_y, all_z)) < 1e-12);
      if (kept_y.empty()) {
        CHECK(rep.skipped[1]);
        CHECK(rep.per_task[1] == 0.0);
        CHECK(std::abs(rep.total - rep.per_task[0]) < 1e-12);
      } else {
        CHECK_FALSE(rep.skipped[1]);
        CHECK(std::abs(rep.per_task[1] - bce_mean(kept_y, kept_z)) < 1e-12);
      }
    }
  }

  TEST_CASE("configuration errors") {
    auto c = small_fm();
    c.tasks.push_back(c.tasks[0]);
    CHECK_THROWS_AS(FoundationModel{c}, ConfigurationError);
    c = small_fm();
    c.tasks[2].surface_scope = {7};
    CHECK_THROWS_AS(FoundationModel{c}, ConfigurationError);
    c = small_fm();
    c.tasks[2].surface_scope.clear();
    CHECK_THROWS_AS(FoundationModel{c}, ConfigurationError);
    c = small_fm();
    c.tasks.erase(c.tasks.begin(), c.tasks.begin() + 2);
    CHECK_THROWS_AS(FoundationModel{c}, ConfigurationError);
  }

  TEST_CASE("aux heads exist only for in-scope surfaces") {
    const FoundationModel fm(small_fm());
    ParamSet w;
    std::mt19937_64 rng(1);
    fm.init_weights(w, rng);
    const auto r0 = random_request(fm.config(), 0, 3, rng);
    const auto r1 = random_request(fm.config(), 1, 3, rng);
    const auto o0 = fm.fm_forward(w, r0);
    const auto o1 = fm.fm_forward(w, r1);
    CHECK(o0.aux_logits.size() == 2);
    CHECK(o0.aux_logits.contains("A_aux"));
    CHECK(o1.aux_logits.size() == 1);
    CHECK(o1.aux_logits.contains("B_aux"));
    CHECK(o0.main_logits.rows == 3);
    CHECK(o0.main_logits.cols == 2);
  }

  TEST_CASE("FM gradients (encoder, heads, alignment) match central differences") {
    const FoundationModel fm(small_fm());
    ParamSet w;
    std::mt19937_64 rng(2);
    fm.init_weights(w, rng);
    for (int seed = 0; seed < 3; ++seed) {
      std::mt19937_64 brng(100 + seed);
      LabeledBatch batch{random_request(fm.config(), 0, 3, brng), random_request(fm.config(), 1, 2, brng),
                         random_request(fm.config(), 0, 4, brng)};
      // Random sample-space holes in the aux tasks.
      batch[0].mask[2][1] = 0.0;
      batch[2].mask[3] = {0, 1, 0, 1};
      LossReport rep;
      const Grads g = fm.gradients(w, batch, rep);
      auto loss = [&](const ParamSet& p) {
        std::vector<FMOutput> outs;
        for (const auto& r : batch) outs.push_back(fm.fm_forward(p, r));
        return fm.fm_loss(outs, batch).total;
      };
      CHECK(std::abs(rep.total - loss(w)) < 1e-12);
      const auto res = testing::check_gradients(w, g, loss, 5, 1e-5, 1e-6, seed);
      INFO(res.worst);
      CHECK(res.max_rel_error < 1e-5);
    }
  }

  TEST_CASE("pruned subgraph reproduces embeddings bit-exactly and drops heads") {
    const FoundationModel fm(small_fm());
    ParamSet w;
    std::mt19937_64 rng(3);
    fm.init_weights(w, rng);
    const ParamSet pruned = fm.export_inference_subgraph(w);
    for (const auto& [name, p] : pruned) {
      CHECK(name.rfind("enc/", 0) == 0);
      CHECK(name.find("mt/") == std::string::npos);
      CHECK(name.find("align/") == std::string::npos);
    }
    CHECK(pruned.block_count() < w.block_count());
    for (const auto& [name, p] : w)
      if (name.rfind("enc/", 0) == 0) CHECK(pruned.contains(name));
    for (int i = 0; i < 5; ++i) {
      const auto r = random_request(fm.config(), i % 2, 1 + i, rng);
      CHECK(fm.encoder().embed(pruned, r.history, r.targets) == fm.fm_forward(w, r).embeddings);
    }
  }

  TEST_CASE("training reduces the loss on a fixed batch") {
    const FoundationModel fm(small_fm());
    ParamSet w;
    std::mt19937_64 rng(4);
    fm.init_weights(w, rng);
    LabeledBatch batch{random_request(fm.config(), 0, 4, rng), random_request(fm.config(), 1, 4, rng)};
    AdamState opt;
    AdamConfig adam;
    adam.lr = 0.01;
    const double first = fm.fm_train_step(batch, w, opt, adam).total;
    double last = first;
    for (int i = 0; i < 60; ++i) last = fm.fm_train_step(batch, w, opt, adam).total;
    CHECK(last < 0.7 * first);
    for (const auto& [name, p] : w) CHECK(p.counter > 0);
  }

  TEST_CASE("non-finite loss aborts the step without touching weights") {
    const FoundationModel fm(small_fm());
    ParamSet w;
    std::mt19937_64 rng(5);
    fm.init_weights(w, rng);
    auto batch = LabeledBatch{random_request(fm.config(), 0, 2, rng)};
    batch[0].labels[0][0] = std::nan("");
    const ParamSet before = w;
    AdamState opt;
    const auto rep = fm.fm_train_step(batch, w, opt, AdamConfig{});
    CHECK(rep.aborted);
    CHECK(w == before);
  }

  TEST_CASE("a skipped aux task leaves its alignment block counters unchanged") {
    const FoundationModel fm(small_fm());
    ParamSet w;
    std::mt19937_64 rng(6);
    fm.init_weights(w, rng);
    auto batch = LabeledBatch{random_request(fm.config(), 0, 3, rng)};
    AdamState opt;
    fm.fm_train_step(batch, w, opt, AdamConfig{});
    CHECK(w.at("align/s1/w1").counter == 0);
    CHECK(w.at("align/s0/w1").counter == 1);
    CHECK(w.at("mt/w").counter == 1);
  }
}
