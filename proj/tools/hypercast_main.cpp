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
#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "fmx/checkpoint.hpp"
#include "fmx/hypercast/process.hpp"
#include "fmx/hypercast/tiers.hpp"
#include "fmx/json_codec.hpp"

namespace hc = fmx::hypercast;
using nlohmann::json;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  return json::parse(in, nullptr, true, /*ignore_comments=*/true);
}

std::pair<std::string, std::uint16_t> split_target(const std::string& target) {
  const auto colon = target.rfind(':');
  if (colon == std::string::npos) throw std::runtime_error("target must be host:port, got " + target);
  return {target.substr(0, colon), static_cast<std::uint16_t>(std::stoul(target.substr(colon + 1)))};
}

// Registers each {"version", "encoder", "checkpoint", "primary"} entry.
void register_versions(hc::FmWeightsTier& tier, const json& versions) {
  for (const auto& v : versions) {
    json req = v;
    req["type"] = "ADMIN_REGISTER_VERSION";
    const json res = *tier.handle_admin(req, "");
    if (!hc::is_ok(res)) throw std::runtime_error("cannot register " + v.value("version", "?") + ": " + res.dump());
  }
}

// Serves `handler` until ADMIN_SHUTDOWN or a signal; `on_shutdown` runs before the reply.
int serve(std::uint16_t port, hc::Handler handler, std::function<void()> on_shutdown = {}) {
  hc::Handler wrapped = [&](const json& req) -> json {
    if (req.is_object() && req.value("type", "") == "ADMIN_SHUTDOWN") {
      if (on_shutdown) on_shutdown();
      g_stop = true;
      return json{{"status", "OK"}};
    }
    return handler(req);
  };
  hc::TcpServer server(port, wrapped);
  hc::announce_port(server.port());
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(20));
  server.stop();
  if (on_shutdown) on_shutdown();
  return 0;
}

int serve_fm(const json& cfg) {
  fmx::StrictObject o(cfg, "serve-fm");
  std::uint16_t port = 0;
  o.get("port", port);
  auto tier = std::make_shared<hc::FmServingTier>(std::make_shared<hc::VersionRegistry>());
  if (o.has("versions")) register_versions(*tier, o.raw("versions"));
  o.finish();
  return serve(port, [tier](const json& r) { return tier->handle(r); });
}

int log_tier(const json& cfg) {
  fmx::StrictObject o(cfg, "log-tier");
  std::uint16_t port = 0;
  std::string feature_log;
  hc::FeatureStoreOptions store_opts;
  o.get("port", port);
  o.require("feature_log", feature_log);
  o.get("flush_batch", store_opts.flush_batch);
  o.get("capacity_bytes", store_opts.capacity_bytes);
  store_opts.path = feature_log;
  auto store = std::make_shared<hc::FeatureStore>(store_opts);
  auto tier = std::make_shared<hc::LoggingTier>(std::make_shared<hc::VersionRegistry>(), store);
  if (o.has("versions")) register_versions(*tier, o.raw("versions"));
  o.finish();
  return serve(port, [tier](const json& r) { return tier->handle(r); }, [store] { store->flush(); });
}

int serve_expert(const json& cfg) {
  fmx::StrictObject o(cfg, "serve-expert");
  std::uint16_t port = 0;
  std::string checkpoint, fm, on_timeout = "fail";
  std::int64_t timeout_ms = 2000;
  o.get("port", port);
  o.require("checkpoint", checkpoint);
  const fmx::ExpertConfig expert = fmx::expert_config_from_json(o.raw("expert"), "serve-expert.expert");
  o.get("fm", fm);
  o.get("timeout_ms", timeout_ms);
  o.get("on_timeout", on_timeout);
  o.finish();
  if (on_timeout != "fail" && on_timeout != "zero") throw fmx::ConfigError("on_timeout must be \"fail\" or \"zero\"");

  const auto ckpt = fmx::load_checkpoint(checkpoint);
  if (!expert.fm_version.empty() && ckpt.fm_version != expert.fm_version)
    throw std::runtime_error("checkpoint was trained on " + ckpt.fm_version + ", config says " + expert.fm_version);
  hc::FmFetch fetch;
  if (!fm.empty()) {
    const auto [host, fm_port] = split_target(fm);
    fetch = hc::remote_fm_fetch(std::make_shared<hc::TcpClient>(host, fm_port));
  }
  hc::ExpertTierOptions opts;
  opts.fm_timeout = std::chrono::milliseconds(timeout_ms);
  opts.on_timeout = on_timeout == "zero" ? hc::TimeoutPolicy::kZeroEmbedding : hc::TimeoutPolicy::kFail;
  auto tier = std::make_shared<hc::ExpertServingTier>(fmx::ExpertModel(expert), ckpt.params, fetch,
                                                      hc::FeatureAssembler{}, opts);
  return serve(port, [tier](const json& r) { return tier->handle(r); });
}

int publish(const std::string& checkpoint, const std::string& version, const std::string& prefix,
            const std::string& target, double fraction, double period, std::size_t count) {
  fmx::ParamSet params;
  for (const auto& [name, p] : fmx::load_checkpoint(checkpoint).params)
    if (prefix.empty() || name.starts_with(prefix + "/")) params.add(name, p.value, p.counter);
  if (params.block_count() == 0) throw std::runtime_error("no blocks under prefix " + prefix);
  const auto [host, port] = split_target(target);
  hc::TcpClient client(host, port);
  hc::PartialPublisher publisher(version, fraction);
  if (count == 0) count = hc::PartialPublisher::cycle_length(fraction);
  for (std::size_t i = 0; i < count && !g_stop; ++i) {
    if (i > 0) std::this_thread::sleep_for(std::chrono::duration<double>(period));
    const auto delta = publisher.publish(params);
    const json res = client.call(json{{"type", "ADMIN_APPLY_DELTA"}, {"delta", hc::delta_to_json(delta)}});
    std::cout << json{{"sequence", delta.sequence}, {"blocks", delta.blocks.size()}, {"response", res}}.dump()
              << std::endl;
    if (!hc::is_ok(res)) return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::signal(SIGPIPE, SIG_IGN);

  CLI::App app{"HyperCast serving, logging and weight sync tiers"};
  app.require_subcommand(1);
  std::string config;
  auto tier_cmd = [&](const std::string& name, const std::string& help) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config, "tier config (JSON)")->required()->check(CLI::ExistingFile);
    return sub;
  };
  auto* fm_cmd = tier_cmd("serve-fm", "online FM embedding tier");
  auto* expert_cmd = tier_cmd("serve-expert", "online expert tier");
  auto* log_cmd = tier_cmd("log-tier", "offline embedding logging tier");

  auto* pub_cmd = app.add_subcommand("publish", "stream partial weight deltas of a checkpoint to a tier");
  std::string checkpoint, version, prefix = "enc", target;
  double fraction = 0.3, period = 60.0;
  std::size_t count = 0;
  pub_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  pub_cmd->add_option("--version", version)->required();
  pub_cmd->add_option("--prefix", prefix, "block prefix to publish; empty for all");
  pub_cmd->add_option("--target", target, "host:port")->required();
  pub_cmd->add_option("--fraction", fraction)->check(CLI::Range(1e-9, 1.0));
  pub_cmd->add_option("--period", period, "seconds between publishes")->check(CLI::NonNegativeNumber);
  pub_cmd->add_option("--count", count, "publishes; 0 = one full staleness cycle");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*pub_cmd) return publish(checkpoint, version, prefix, target, fraction, period, count);
    const json cfg = read_json(config);
    if (*fm_cmd) return serve_fm(cfg);
    if (*expert_cmd) return serve_expert(cfg);
    if (*log_cmd) return log_tier(cfg);
  } catch (const std::exception& e) {
    std::cerr << "hypercast: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
