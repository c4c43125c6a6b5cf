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
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fmx/tensor.hpp"

namespace fmx {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[4] = {'F', 'M', 'C', 'K'};
// Version 1: FM checkpoint. Version 2 adds a length-prefixed FM version tag after
// the version field (expert checkpoints).
inline constexpr std::uint32_t kCheckpointVersionPlain = 1;
inline constexpr std::uint32_t kCheckpointVersionTagged = 2;

struct Checkpoint {
  ParamSet params;
  std::string fm_version;  // empty for FM checkpoints
};

// Layout (little-endian): magic "FMCK", u32 version, [u32 tag_len, tag bytes],
// u32 block count, then per block: u32 name_len, name bytes, u32 rows, u32 cols,
// u64 counter, rows*cols f64 values row-major.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// FNV-1a over names, shapes and raw value bytes.
std::uint64_t checksum(const ParamSet& params);
std::uint64_t checksum(const Tensor& t, std::uint64_t seed = 14695981039346656037ull);

}  // namespace fmx
