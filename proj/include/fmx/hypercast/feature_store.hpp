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

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "fmx/stream.hpp"

namespace fmx::hypercast {

struct EmbeddingRecord {
  std::uint64_t request_id = 0;
  std::uint64_t user_id = 0;
  std::uint64_t item_id = 0;
  std::uint32_t surface_id = 0;
  std::string version;
  std::vector<double> vec;
  std::int64_t ts = 0;  // serve time

  bool operator==(const EmbeddingRecord&) const = default;
};

std::string record_to_line(const EmbeddingRecord& r);
EmbeddingRecord record_from_line(const std::string& line);
std::vector<EmbeddingRecord> read_feature_log(const std::filesystem::path& path);

enum class AppendStatus { kAppended, kDuplicate, kBackpressure };

struct FeatureStoreOptions {
  std::optional<std::filesystem::path> path;  // memory-only when unset
  std::size_t flush_batch = 256;              // records buffered before a write
  std::uint64_t capacity_bytes = 0;           // 0 = unbounded
};

// Append-only embedding log keyed by (request, candidate, version).
class FeatureStore {
 public:
  explicit FeatureStore(FeatureStoreOptions opts = {});
  ~FeatureStore();
  FeatureStore(const FeatureStore&) = delete;
  FeatureStore& operator=(const FeatureStore&) = delete;

  AppendStatus append(EmbeddingRecord record);
  void flush();

  std::map<std::string, EmbeddingVector> lookup(std::uint64_t request_id, std::uint64_t item_id) const;
  EmbeddingLookup lookup_fn() const;

  std::size_t size() const;
  std::map<std::string, std::size_t> count_by_version() const;
  std::uint64_t bytes_written() const;

  // Rebuilds the index from a log file (read-only view).
  static std::unique_ptr<FeatureStore> open(const std::filesystem::path& path);

 private:
  using Key = std::pair<std::uint64_t, std::uint64_t>;
  void flush_locked();

  FeatureStoreOptions opts_;
  mutable std::mutex mu_;
  std::map<Key, std::map<std::string, EmbeddingVector>> index_;
  std::map<std::string, std::size_t> counts_;
  std::size_t size_ = 0;
  std::vector<std::string> pending_;
  std::uint64_t bytes_ = 0;  // written plus pending
  std::ofstream out_;
};

std::string append_status_name(AppendStatus s);

}  // namespace fmx::hypercast
