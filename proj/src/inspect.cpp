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
#include "fmx/inspect.hpp"

#include <cstring>
#include <map>
#include <set>
#include <sstream>

#include "fmx/checkpoint.hpp"
#include "json.hpp"

namespace fmx {

namespace {

using nlohmann::json;

// "<prefix>/layer<k>/..." marks a sequence encoder; its prefix is the served subgraph.
std::set<std::string> encoder_prefixes(const ParamSet& params) {
  std::set<std::string> out;
  for (const auto& [name, p] : params) {
    const auto slash = name.find('/');
    if (slash != std::string::npos && name.compare(slash + 1, 5, "layer") == 0) out.insert(name.substr(0, slash));
  }
  return out;
}

std::string inspect_checkpoint(const std::vector<std::uint8_t>& bytes) {
  const Checkpoint ckpt = decode_checkpoint(bytes);
  std::ostringstream out;
  out << "checkpoint: " << ckpt.params.block_count() << " blocks, " << ckpt.params.parameter_count()
      << " parameters\n";
  if (!ckpt.fm_version.empty()) out << "fm_version: " << ckpt.fm_version << "\n";
  const auto prefixes = encoder_prefixes(ckpt.params);
  const auto pruned = [&](const std::string& name) {
    const auto slash = name.find('/');
    return slash != std::string::npos && prefixes.contains(name.substr(0, slash));
  };
  for (const bool in_pruned : {true, false}) {
    std::size_t blocks = 0, values = 0;
    for (const auto& [name, p] : ckpt.params)
      if (pruned(name) == in_pruned) ++blocks, values += p.value.size();
    out << (in_pruned ? "inference subgraph" : "training only") << ": " << blocks << " blocks, " << values
        << " parameters\n";
    for (const auto& [name, p] : ckpt.params)
      if (pruned(name) == in_pruned)
        out << "  " << name << " [" << p.value.rows << "x" << p.value.cols << "] counter=" << p.counter << "\n";
  }
  return out.str();
}

std::vector<json> read_jsonl(const std::string& text) {
  if (!text.empty() && text.back() != '\n') throw FormatError("truncated record log: last line is incomplete");
  std::vector<json> out;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw FormatError("line " + std::to_string(n) + ": " + e.what());
    }
    if (!out.back().is_object()) throw FormatError("line " + std::to_string(n) + " is not a record");
  }
  return out;
}

std::string inspect_records(const std::vector<json>& records) {
  std::ostringstream out;
  const json& first = records.front();
  if (first.contains("vec") && first.contains("version")) {
    std::map<std::string, std::size_t> by_version;
    std::set<std::uint64_t> requests;
    for (const auto& r : records) {
      if (!r.contains("vec") || !r.contains("version")) throw FormatError("mixed record types in embedding log");
      ++by_version[r["version"].get<std::string>()];
      requests.insert(r.value("request_id", std::uint64_t{0}));
    }
    out << "embedding log: " << records.size() << " records, " << requests.size() << " requests\n";
    for (const auto& [v, n] : by_version) out << "  " << v << ": " << n << "\n";
    return out.str();
  }
  if (first.contains("labels") && first.contains("request_id")) {
    std::map<std::uint32_t, std::size_t> by_surface;
    std::map<std::string, std::pair<std::size_t, std::size_t>> labels;  // positives, in sample space
    std::set<std::uint64_t> requests, users;
    for (const auto& r : records) {
      if (!r.contains("labels")) throw FormatError("mixed record types in event log");
      ++by_surface[r.value("surface_id", 0u)];
      requests.insert(r.value("request_id", std::uint64_t{0}));
      users.insert(r.value("user_id", std::uint64_t{0}));
      for (const auto& [name, v] : r["labels"].items()) {
        auto& [pos, total] = labels[name];
        pos += v.get<int>() == 1;
        ++total;
      }
    }
    out << "event log: " << records.size() << " events, " << requests.size() << " requests, " << users.size()
        << " users\n";
    for (const auto& [s, n] : by_surface) out << "  surface " << static_cast<char>('A' + s) << ": " << n << " events\n";
    for (const auto& [name, c] : labels)
      out << "  " << name << ": " << c.first << "/" << c.second << " positive\n";
    return out.str();
  }
  out << "record log: " << records.size() << " records\n";
  std::map<std::string, std::size_t> kinds;
  for (const auto& r : records)
    ++kinds[r.contains("experiment") ? r["experiment"].get<std::string>()
                                     : r.contains("version") ? "version " + r["version"].get<std::string>() : "other"];
  for (const auto& [k, n] : kinds) out << "  " << k << ": " << n << "\n";
  return out.str();
}

}  // namespace

std::string inspect_artifact(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw FormatError("not a file: " + path.string());
  const auto bytes = read_file_bytes(path);
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kCheckpointMagic, 4) == 0) return inspect_checkpoint(bytes);
  if (bytes.empty() || bytes.front() != '{') throw FormatError("unrecognized file format: " + path.string());
  const auto records = read_jsonl(std::string(bytes.begin(), bytes.end()));
  if (records.empty()) throw FormatError("empty record log: " + path.string());
  return inspect_records(records);
}

}  // namespace fmx
