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
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "fmx/tensor.hpp"

namespace fmx::hypercast {

class UnknownBlock : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DeltaBlock {
  std::string name;
  std::uint64_t counter = 0;
  Tensor value;
};

struct WeightDelta {
  std::string version;
  std::uint64_t sequence = 0;
  std::vector<DeltaBlock> blocks;

  std::vector<std::string> block_names() const;
};

// Chooses which blocks of a trainer ParamSet go into each partial publish.
//
// With k = ceil(fraction * n) slots, blocks are ranked by counter advance since
// their last publish, ties broken round-robin from a rotating cursor. A block
// that has been dirty for ceil(1/fraction) - 1 publishes is forced in, which
// bounds served staleness to ceil(1/fraction) publish periods.
class PartialPublisher {
 public:
  PartialPublisher(std::string version, double fraction);

  const std::string& version() const { return version_; }
  double fraction() const { return fraction_; }
  std::uint64_t last_sequence() const { return sequence_; }

  WeightDelta publish(const ParamSet& trainer) { return publish(trainer, fraction_); }
  WeightDelta publish(const ParamSet& trainer, double fraction);

  static std::size_t slots(double fraction, std::size_t n_blocks);
  // Publishes needed before a dirty block is guaranteed to ship.
  static std::size_t cycle_length(double fraction);

 private:
  struct BlockState {
    bool published = false;
    std::uint64_t counter = 0;        // trainer counter at last publish
    std::uint64_t dirty_since = 0;    // publish index when first seen dirty
    bool dirty = false;
  };

  std::string version_;
  double fraction_;
  std::uint64_t sequence_ = 0;
  std::size_t cursor_ = 0;
  std::map<std::string, BlockState> state_;
};

struct Snapshot {
  ParamSet params;
  std::uint64_t sequence = 0;
  std::uint64_t checksum = 0;
  // Publish sequence at which each block was last replaced.
  std::map<std::string, std::uint64_t> block_sequence;
};

enum class ApplyStatus { kApplied, kStale };

// Served copy of one model version. Readers take an immutable snapshot handle;
// apply_partial builds a new snapshot and swaps it in.
class ServerWeights {
 public:
  explicit ServerWeights(ParamSet initial, std::uint64_t sequence = 0);

  std::shared_ptr<const Snapshot> snapshot() const;
  ApplyStatus apply_partial(const WeightDelta& delta);
  std::uint64_t last_sequence() const { return snapshot()->sequence; }

 private:
  mutable std::mutex read_mu_;
  std::mutex write_mu_;
  std::shared_ptr<const Snapshot> current_;
};

std::string apply_status_name(ApplyStatus s);

}  // namespace fmx::hypercast
