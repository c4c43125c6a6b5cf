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

#pragma once

#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "fmx/encoder.hpp"
#include "fmx/hypercast/sync.hpp"

namespace fmx::hypercast {

class VersionInactive : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct VersionEntry {
  std::string tag;
  SequenceEncoder encoder;
  std::shared_ptr<ServerWeights> weights;
};

// Active FM versions and their served (pruned) weights.
class VersionRegistry {
 public:
  // The first registered version becomes primary unless another is set.
  void register_version(const std::string& tag, const EncoderConfig& encoder, ParamSet pruned, bool primary = false);
  void deactivate(const std::string& tag);
  void set_primary(const std::string& tag);

  // Empty tag resolves to the primary version.
  std::shared_ptr<const VersionEntry> resolve(const std::optional<std::string>& tag = std::nullopt) const;
  bool active(const std::string& tag) const;
  std::vector<std::string> active_versions() const;
  std::optional<std::string> primary() const;

 private:
  mutable std::shared_mutex mu_;
  std::map<std::string, std::shared_ptr<const VersionEntry>> versions_;
  std::optional<std::string> primary_;
};

}  // namespace fmx::hypercast
