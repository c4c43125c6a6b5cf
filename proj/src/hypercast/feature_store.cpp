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

#include "fmx/hypercast/feature_store.hpp"

#include "fmx/checkpoint.hpp"
#include "fmx/hypercast/wire.hpp"

namespace fmx::hypercast {

std::string record_to_line(const EmbeddingRecord& r) {
  json j{{"request_id", r.request_id}, {"user_id", r.user_id}, {"item_id", r.item_id}, {"surface_id", r.surface_id},
         {"ts", r.ts},                 {"version", r.version},  {"vec", encode_f64_hex(r.vec)}};
  return j.dump();
}

EmbeddingRecord record_from_line(const std::string& line) {
  try {
    const json j = json::parse(line);
    EmbeddingRecord r;
    r.request_id = j.at("request_id").get<std::uint64_t>();
    r.user_id = j.at("user_id").get<std::uint64_t>();
    r.item_id = j.at("item_id").get<std::uint64_t>();
    r.surface_id = j.at("surface_id").get<std::uint32_t>();
    r.ts = j.at("ts").get<std::int64_t>();
    r.version = j.at("version").get<std::string>();
    r.vec = decode_f64_hex(j.at("vec").get<std::string>());
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad embedding record: ") + e.what());
  } catch (const WireError& e) {
    throw FormatError(std::string("bad embedding record: ") + e.what());
  }
}

std::vector<EmbeddingRecord> read_feature_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<EmbeddingRecord> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(record_from_line(line));
  return out;
}

FeatureStore::FeatureStore(FeatureStoreOptions opts) : opts_(std::move(opts)) {
  if (opts_.flush_batch == 0) opts_.flush_batch = 1;
  if (opts_.path) {
    out_.open(*opts_.path, std::ios::binary | std::ios::app);
    if (!out_) throw std::runtime_error("cannot open feature log " + opts_.path->string());
  }
}

FeatureStore::~FeatureStore() {
  try {
    flush();
  } catch (...) {
  }
}

AppendStatus FeatureStore::append(EmbeddingRecord record) {
  std::lock_guard lock(mu_);
  auto& slot = index_[{record.request_id, record.item_id}];
  if (slot.contains(record.version)) return AppendStatus::kDuplicate;
  std::string line;
  if (opts_.path || opts_.capacity_bytes > 0) line = record_to_line(record) + "\n";
  if (opts_.capacity_bytes > 0 && bytes_ + line.size() > opts_.capacity_bytes) {
    if (slot.empty()) index_.erase({record.request_id, record.item_id});
    return AppendStatus::kBackpressure;
  }
  bytes_ += line.size();
  ++counts_[record.version];
  ++size_;
  slot.emplace(record.version, std::make_shared<const std::vector<double>>(std::move(record.vec)));
  if (opts_.path) {
    pending_.push_back(std::move(line));
    if (pending_.size() >= opts_.flush_batch) flush_locked();
  }
  return AppendStatus::kAppended;
}

void FeatureStore::flush() {
  std::lock_guard lock(mu_);
  flush_locked();
}

void FeatureStore::flush_locked() {
  if (!opts_.path || pending_.empty()) return;
  for (const auto& line : pending_) out_ << line;
  out_.flush();
  pending_.clear();
  if (!out_) throw std::runtime_error("write to feature log failed");
}

std::map<std::string, EmbeddingVector> FeatureStore::lookup(std::uint64_t request_id, std::uint64_t item_id) const {
  std::lock_guard lock(mu_);
  const auto it = index_.find({request_id, item_id});
  return it == index_.end() ? std::map<std::string, EmbeddingVector>{} : it->second;
}

EmbeddingLookup FeatureStore::lookup_fn() const {
  return [this](std::uint64_t request_id, std::uint64_t item_id) { return lookup(request_id, item_id); };
}

std::size_t FeatureStore::size() const {
  std::lock_guard lock(mu_);
  return size_;
}

std::map<std::string, std::size_t> FeatureStore::count_by_version() const {
  std::lock_guard lock(mu_);
  return counts_;
}

std::uint64_t FeatureStore::bytes_written() const {
  std::lock_guard lock(mu_);
  return bytes_;
}

std::unique_ptr<FeatureStore> FeatureStore::open(const std::filesystem::path& path) {
  auto store = std::make_unique<FeatureStore>();
  for (auto& r : read_feature_log(path)) store->append(std::move(r));
  return store;
}

std::string append_status_name(AppendStatus s) {
  switch (s) {
    case AppendStatus::kAppended: return "APPENDED";
    case AppendStatus::kDuplicate: return "DUPLICATE";
    case AppendStatus::kBackpressure: return "BACKPRESSURE";
  }
  return "?";
}

}  // namespace fmx::hypercast
