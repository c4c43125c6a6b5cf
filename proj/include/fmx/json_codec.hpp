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

#include <set>
#include <stdexcept>
#include <string>

#include "fmx/encoder.hpp"
#include "fmx/expert.hpp"
#include "fmx/foundation.hpp"
#include "fmx/stream.hpp"
#include "json.hpp"

namespace fmx {

using nlohmann::json;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Reads fields from one JSON object and rejects keys nobody asked for.
class StrictObject {
 public:
  StrictObject(const json& j, std::string context);

  bool has(const std::string& key) const { return j_->contains(key); }
  const json& raw(const std::string& key);

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!j_->contains(key)) return;
    seen_.insert(key);
    try {
      out = j_->at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(context_ + "." + key + ": " + e.what());
    }
  }
  template <typename T>
  void require(const std::string& key, T& out) {
    if (!j_->contains(key)) throw ConfigError("missing config key '" + key + "' in " + context_);
    get(key, out);
  }
  const std::string& context() const { return context_; }
  // Throws ConfigError naming the first unrecognized key.
  void finish() const;

 private:
  const json* j_;
  std::string context_;
  std::set<std::string> seen_;
};

json to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const json& j, const std::string& context = "encoder");

json to_json(const TaskSpec& t);
TaskSpec task_spec_from_json(const json& j, const std::string& context = "task");

json to_json(const FMConfig& c);
FMConfig fm_config_from_json(const json& j, const std::string& context = "fm");

json to_json(const ExpertConfig& c);
ExpertConfig expert_config_from_json(const json& j, const std::string& context = "expert");

json to_json(const StreamConfig& c);
StreamConfig stream_config_from_json(const json& j, const std::string& context = "stream");

json to_json(const AdamConfig& c);
AdamConfig adam_config_from_json(const json& j, const std::string& context = "adam");

json to_json(const ItemFeatures& f);
ItemFeatures item_features_from_json(const json& j);

// {"rows", "cols", "values": hex-encoded f64}
json to_json(const Tensor& t);
Tensor tensor_from_json(const json& j);

}  // namespace fmx
