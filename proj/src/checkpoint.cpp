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

#include "fmx/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace fmx {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint codec assumes a little-endian host");

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out_.insert(out_.end(), p, p + sizeof(T));
  }
  void put_bytes(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string(const char* what) {
    const auto n = get<std::uint32_t>(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void get_doubles(std::vector<double>& out, const char* what) {
    need(out.size() * sizeof(double), what);
    std::memcpy(out.data(), in_.data() + pos_, out.size() * sizeof(double));
    pos_ += out.size() * sizeof(double);
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) {
      throw FormatError(std::string("checkpoint truncated while reading ") + what + " at offset " +
                        std::to_string(pos_));
    }
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  for (char c : kCheckpointMagic) w.put<char>(c);
  const bool tagged = !ckpt.fm_version.empty();
  w.put<std::uint32_t>(tagged ? kCheckpointVersionTagged : kCheckpointVersionPlain);
  if (tagged) w.put_bytes(ckpt.fm_version);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.params.block_count()));
  for (const auto& [name, p] : ckpt.params) {
    w.put_bytes(name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.value.rows));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.value.cols));
    w.put<std::uint64_t>(p.counter);
    for (double v : p.value.values) w.put<double>(v);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  char magic[4];
  for (char& c : magic) c = r.get<char>("magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("not a checkpoint: bad magic");
  Checkpoint out;
  const auto version = r.get<std::uint32_t>("version");
  if (version == kCheckpointVersionTagged) {
    out.fm_version = r.get_string("fm version tag");
  } else if (version != kCheckpointVersionPlain) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>("block count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.get_string("block name");
    const auto rows = r.get<std::uint32_t>("rows");
    const auto cols = r.get<std::uint32_t>("cols");
    const auto counter = r.get<std::uint64_t>("counter");
    Tensor t(rows, cols);
    r.get_doubles(t.values, "values");
    out.params.add(name, std::move(t), counter);
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint blocks");
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

namespace {

constexpr std::uint64_t kFnvPrime = 1099511628211ull;

std::uint64_t fnv(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

}  // namespace

std::uint64_t checksum(const Tensor& t, std::uint64_t seed) {
  std::uint64_t h = seed;
  const std::uint64_t shape[2] = {t.rows, t.cols};
  h = fnv(h, shape, sizeof(shape));
  return fnv(h, t.values.data(), t.values.size() * sizeof(double));
}

std::uint64_t checksum(const ParamSet& params) {
  std::uint64_t h = 14695981039346656037ull;
  for (const auto& [name, p] : params) {
    h = fnv(h, name.data(), name.size());
    h = checksum(p.value, h);
  }
  return h;
}

}  // namespace fmx
