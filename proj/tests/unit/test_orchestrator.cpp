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
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "fmx/checkpoint.hpp"
#include "fmx/hypercast/feature_store.hpp"
#include "fmx/inspect.hpp"
#include "fmx/pipeline.hpp"

using namespace fmx;
namespace fs = std::filesystem;

namespace {

json smoke_json() {
  std::ifstream in(fs::path(FMX_SOURCE_DIR) / "configs" / "smoke.cfg");
  REQUIRE(in);
  return json::parse(in);
}

// The smoke config shrunk to a few seconds.
json tiny_json() {
  json j = smoke_json();
  j["stream"]["n_users"] = 24;
  j["stream"]["days"] = 3;
  j["experiments"]["generalization_seeds"] = {11};
  j["experiments"]["ablation_seeds"] = {11};
  j["experiments"]["transfer_seeds"] = {11};
  j["experiments"]["compute_requests"] = 20;
  return j;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fmx_orchestrator_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string config_error(const json& j) {
  try {
    run_config_from_json(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_SUITE("orchestrator") {
  TEST_CASE("shipped configs parse") {
    for (const char* name : {"smoke.cfg", "transfer.cfg"}) {
      const auto cfg = load_run_config(fs::path(FMX_SOURCE_DIR) / "configs" / name);
      CHECK(cfg.experiments.sim.fms.size() == 2);
      for (const auto& t : cfg.experiments.withheld_tasks)
        for (const auto& fm : cfg.experiments.sim.fms)
          for (const auto& spec : fm.model.tasks) CHECK(spec.name != t);
    }
  }

  TEST_CASE("unknown keys are rejected by name") {
    json j = smoke_json();
    j["colour"] = 1;
    CHECK(config_error(j).find("'colour'") != std::string::npos);

    j = smoke_json();
    j["expert"]["arch"]["short_encoder"]["dimm"] = 8;
    CHECK(config_error(j).find("'dimm'") != std::string::npos);

    j = smoke_json();
    j["fms"]["large"]["model"]["encoder"]["layer"] = 2;
    CHECK(config_error(j).find("'layer'") != std::string::npos);

    j = smoke_json();
    j["sync"]["fractoin"] = 0.3;
    CHECK(config_error(j).find("'fractoin'") != std::string::npos);

    j = smoke_json();
    j["stream"]["seed"] = 4;
    CHECK(config_error(j).find("'seed'") != std::string::npos);

    j = smoke_json();
    j["expert"]["arch"]["fm_version"] = "fm_small";
    CHECK(config_error(j).find("'fm_version'") != std::string::npos);
  }

  TEST_CASE("invalid values are rejected") {
    json j = smoke_json();
    j["experiments"]["run"] = {"transfer", "bogus"};
    CHECK(config_error(j).find("bogus") != std::string::npos);

    j = smoke_json();
    j["sync"]["fraction"] = 0.0;
    CHECK_FALSE(config_error(j).empty());

    j = smoke_json();
    j["fms"]["large"]["downsample"] = {{"7", 0.5}};
    CHECK_FALSE(config_error(j).empty());

    j = smoke_json();
    j["experiments"]["withheld_tasks"] = {"Surface_D_Task_0"};  // an FM aux task
    CHECK(config_error(j).find("Surface_D_Task_0") != std::string::npos);

    j = smoke_json();
    j["fms"]["large"]["version"] = "fm_small";
    CHECK_FALSE(config_error(j).empty());
  }

  TEST_CASE("config round trip") {
    const auto cfg = run_config_from_json(smoke_json());
    const json once = to_json(cfg);
    CHECK(to_json(run_config_from_json(once)) == once);
    CHECK(once["seed"] == smoke_json()["seed"]);
  }

  TEST_CASE("per-surface expert architecture patches the template") {
    json j = smoke_json();
    j["expert"]["surfaces"] = {{"2", {{"expert_hidden", 24}}}};
    const auto cfg = run_config_from_json(j);
    REQUIRE(cfg.experiments.surface_arch.contains(2));
    const auto& arch = cfg.experiments.surface_arch.at(2);
    CHECK(arch.expert_hidden == 24);
    CHECK(arch.fusion_hidden == cfg.experiments.expert.arch.fusion_hidden);
    CHECK(to_json(arch.short_encoder) == to_json(cfg.experiments.expert.arch.short_encoder));
  }

  TEST_CASE("run writes the fixed layout and is deterministic") {
    const auto cfg = run_config_from_json(tiny_json());
    const fs::path a = scratch("a"), b = scratch("b");
    const auto art = run_pipeline(cfg, {a, std::nullopt, HarnessMode::kInProcess, std::nullopt, {}});
    run_pipeline(cfg, {b, std::nullopt, HarnessMode::kInProcess, std::nullopt, {}});

    for (const auto& name : report_files(cfg)) {
      const fs::path ra = a / "reports" / name;
      REQUIRE(fs::exists(ra));
      CHECK(fs::file_size(ra) > 0);
      CHECK(slurp(ra) == slurp(b / "reports" / name));
    }
    CHECK(art.reports.size() == report_files(cfg).size());
    for (const char* f : {"events.jsonl", "features.jsonl", "user_embeddings.jsonl", "run_config.json"})
      CHECK(fs::exists(a / "logs" / f));
    for (const auto& fm : cfg.experiments.sim.fms) {
      CHECK(fs::exists(a / "checkpoints" / (fm.version + ".ckpt")));
      CHECK(fs::exists(a / "checkpoints" / (fm.version + ".pruned.ckpt")));
    }
    CHECK(fs::exists(a / "checkpoints" / "experts" / "transfer_A_fm_large_11.ckpt"));
    CHECK(load_checkpoint(a / "checkpoints" / "experts" / "transfer_A_fm_large_11.ckpt").fm_version == "fm_large");

    // The seed changes the reports.
    const fs::path c = scratch("c");
    run_pipeline(cfg, {c, std::uint64_t{99}, HarnessMode::kInProcess, std::nullopt, {}});
    CHECK(slurp(a / "reports" / "transfer.jsonl") != slurp(c / "reports" / "transfer.jsonl"));

    SUBCASE("inspect") {
      const std::string full = inspect_artifact(a / "checkpoints" / "fm_large.ckpt");
      const std::string pruned = inspect_artifact(a / "checkpoints" / "fm_large.pruned.ckpt");
      CHECK(full.find("inference subgraph") != std::string::npos);
      CHECK(full.find("mt/w") != std::string::npos);
      CHECK(full.find("align/") != std::string::npos);
      CHECK(pruned.find("mt/w") == std::string::npos);
      CHECK(pruned.find("training only: 0 blocks") != std::string::npos);

      const auto counts = hypercast::FeatureStore::open(a / "logs" / "features.jsonl")->count_by_version();
      const std::string log = inspect_artifact(a / "logs" / "features.jsonl");
      for (const auto& [version, n] : counts)
        CHECK(log.find(version + ": " + std::to_string(n)) != std::string::npos);
      CHECK(inspect_artifact(a / "logs" / "events.jsonl").find("event log") != std::string::npos);

      const auto bytes = read_file_bytes(a / "checkpoints" / "fm_large.ckpt");
      const fs::path cut = a / "cut.ckpt";
      for (std::size_t len : {std::size_t{2}, std::size_t{13}, bytes.size() / 2, bytes.size() - 1}) {
        write_file_bytes(cut, std::span(bytes).first(len));
        CHECK_THROWS_AS(inspect_artifact(cut), FormatError);
      }
      const std::string text = slurp(a / "logs" / "features.jsonl");
      const fs::path cut_log = a / "cut.jsonl";
      std::ofstream(cut_log, std::ios::binary) << text.substr(0, text.size() / 3);
      CHECK_THROWS_AS(inspect_artifact(cut_log), FormatError);
      std::ofstream(cut_log, std::ios::binary) << "not a known format";
      CHECK_THROWS_AS(inspect_artifact(cut_log), FormatError);
    }
  }

  TEST_CASE("stage failures are tagged") {
    const auto cfg = run_config_from_json(tiny_json());
    RunOptions opts{scratch("stage"), std::nullopt, HarnessMode::kProcess, fs::path("/nonexistent/hypercast"), {}};
    try {
      run_pipeline(cfg, opts);
      FAIL("expected a stage error");
    } catch (const StageError& e) {
      CHECK(e.stage() == "serve");
      CHECK(std::string(e.what()).starts_with("[serve]"));
    }

    RunOptions bad_out{"/proc/fmx_cannot_write_here", std::nullopt, HarnessMode::kInProcess, std::nullopt, {}};
    try {
      run_pipeline(cfg, bad_out);
      FAIL("expected a stage error");
    } catch (const StageError& e) {
      CHECK(e.stage() == "setup");
    }
  }
}
