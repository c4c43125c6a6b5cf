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

#include "fmx/hypercast/registry.hpp"

#include <mutex>

namespace fmx::hypercast {

void VersionRegistry::register_version(const std::string& tag, const EncoderConfig& encoder, ParamSet pruned,
                                       bool primary) {
  if (tag.empty()) throw std::invalid_argument("version tag must be non-empty");
  SequenceEncoder enc(encoder);
  for (const auto& name : enc.block_names())
    if (!pruned.contains(name)) throw std::invalid_argument("version " + tag + " is missing block " + name);
  auto entry = std::make_shared<VersionEntry>(
      VersionEntry{tag, std::move(enc), std::make_shared<ServerWeights>(std::move(pruned))});
  std::unique_lock lock(mu_);
  if (versions_.contains(tag)) throw std::invalid_argument("version " + tag + " already registered");
  versions_.emplace(tag, std::move(entry));
  if (primary || !primary_) primary_ = tag;
}

void VersionRegistry::deactivate(const std::string& tag) {
  std::unique_lock lock(mu_);
  if (versions_.erase(tag) == 0) throw VersionInactive("version " + tag + " is not active");
  if (primary_ == tag) primary_ = versions_.empty() ? std::nullopt : std::optional(versions_.begin()->first);
}

void VersionRegistry::set_primary(const std::string& tag) {
  std::unique_lock lock(mu_);
  if (!versions_.contains(tag)) throw VersionInactive("version " + tag + " is not active");
  primary_ = tag;
}

std::shared_ptr<const VersionEntry> VersionRegistry::resolve(const std::optional<std::string>& tag) const {
  std::shared_lock lock(mu_);
  const auto& want = (tag && !tag->empty()) ? tag : primary_;
  if (!want) throw VersionInactive("no active version");
  const auto it = versions_.find(*want);
  if (it == versions_.end()) throw VersionInactive("version " + *want + " is not active");
  return it->second;
}

bool VersionRegistry::active(const std::string& tag) const {
  std::shared_lock lock(mu_);
  return versions_.contains(tag);
}

std::vector<std::string> VersionRegistry::active_versions() const {
  std::shared_lock lock(mu_);
  std::vector<std::string> out;
  for (const auto& [tag, e] : versions_) out.push_back(tag);
  return out;
}

std::optional<std::string> VersionRegistry::primary() const {
  std::shared_lock lock(mu_);
  return primary_;
}

}  // namespace fmx::hypercast
