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
#include <chrono>
#include <iostream>

#include "CLI11.hpp"
#include "fmx/checkpoint.hpp"
#include "fmx/inspect.hpp"
#include "fmx/pipeline.hpp"

namespace {

int run(const std::string& config, const fmx::RunOptions& base, const std::vector<std::string>* only) {
  fmx::RunConfig cfg;
  try {
    cfg = fmx::load_run_config(config);
    if (only) {
      cfg.run = *only;
      cfg.validate();
    }
  } catch (const std::exception& e) {
    std::cerr << "fmx: [config] " << e.what() << "\n";
    return 2;
  }
  try {
    const auto art = fmx::run_pipeline(cfg, base);
    for (const auto& p : art.reports) std::cout << p.string() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "fmx: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Foundation-expert recommender pipeline"};
  app.require_subcommand(1);

  std::string config, out = "fmx_out", harness = "inprocess", hypercast;
  std::uint64_t seed = 0;
  bool quiet = false;

  auto add_run_flags = [&](CLI::App* sub) {
    sub->add_option("--config", config, "run config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory");
    sub->add_option("--seed", seed, "overrides the config seed");
    sub->add_option("--harness-mode", harness, "inprocess or process")
        ->check(CLI::IsMember({"inprocess", "process"}));
    sub->add_option("--hypercast", hypercast, "hypercast executable for process mode");
    sub->add_flag("--quiet", quiet, "no progress on stderr");
  };

  auto* run_cmd = app.add_subcommand("run", "generate, train, log, join, run experiments, write reports");
  add_run_flags(run_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "run one experiment");
  std::string experiment;
  eval_cmd->add_option("experiment", experiment, "transfer, ablation, generalization or compute_budget")
      ->required()
      ->check(CLI::IsMember(fmx::kExperimentNames));
  add_run_flags(eval_cmd);

  auto* inspect_cmd = app.add_subcommand("inspect", "describe a checkpoint, log or report");
  std::string artifact;
  inspect_cmd->add_option("path", artifact)->required();

  CLI11_PARSE(app, argc, argv);

  if (*inspect_cmd) {
    try {
      std::cout << fmx::inspect_artifact(artifact);
    } catch (const std::exception& e) {
      std::cerr << "fmx: " << e.what() << "\n";
      return 1;
    }
    return 0;
  }

  fmx::RunOptions opts;
  opts.out = out;
  if ((*run_cmd ? run_cmd : eval_cmd)->count("--seed") > 0) opts.seed = seed;
  opts.harness = fmx::harness_mode_from_string(harness);
  if (!hypercast.empty()) opts.hypercast_binary = hypercast;
  const auto t0 = std::chrono::steady_clock::now();
  if (!quiet)
    opts.progress = [t0](const std::string& m) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cerr << "[" << static_cast<long>(s) << "s] " << m << "\n";
    };
  if (*eval_cmd) {
    const std::vector<std::string> only{experiment};
    return run(config, opts, &only);
  }
  return run(config, opts, nullptr);
}
