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

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fmx/expert.hpp"
#include "fmx/foundation.hpp"
#include "fmx/stream.hpp"

namespace fmx {

// [begin, end) ranges of consecutive items sharing one request id.
struct RequestRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};
std::vector<RequestRange> request_ranges(const Stream& stream);
std::vector<RequestRange> request_ranges(const Stream& stream, std::span<const TrainingExample> examples);

// Catalog index of every task in `tasks`; throws ConfigurationError on unknown names.
std::vector<std::size_t> catalog_indices(const TaskCatalog& catalog, const std::vector<TaskSpec>& tasks);

// Labels and sample-space masks for one request, per task then per candidate.
void fill_labels(const Stream& stream, std::span<const std::size_t> events, const std::vector<std::size_t>& task_map,
                 std::vector<std::vector<double>>& labels, std::vector<std::vector<double>>& mask);

FMRequest make_fm_request(const Stream& stream, std::span<const std::size_t> events, const FMConfig& cfg,
                          const std::vector<std::size_t>& task_map);

struct ExpertInputStats {
  std::size_t missing_fm = 0;  // candidates with no logged embedding (zero-filled)
  std::size_t missing_ue = 0;
  std::size_t skipped = 0;  // candidates dropped from training for lack of an FM embedding
};

// Builds an expert request from joined examples of one request. The FM
// embeddings come from the version the expert is pinned to.
ExpertRequest make_expert_request(const Stream& stream, std::span<const TrainingExample> examples,
                                  const ExpertConfig& cfg, const std::vector<std::size_t>& task_map,
                                  const std::string& ue_version = "ue", ExpertInputStats* stats = nullptr);

}  // namespace fmx
