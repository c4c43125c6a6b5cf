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
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fmx {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Dense row-major 2-D array of doubles.
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}
  Tensor(std::size_t r, std::size_t c, std::vector<double> v);

  static Tensor identity(std::size_t n);
  static Tensor row(std::span<const double> v);
  static Tensor randn(std::size_t r, std::size_t c, double stddev, std::mt19937_64& rng);

  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::size_t size() const { return values.size(); }
  std::span<const double> row_span(std::size_t r) const { return {values.data() + r * cols, cols}; }
  std::span<double> row_span(std::size_t r) { return {values.data() + r * cols, cols}; }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
  bool all_finite() const;

  bool operator==(const Tensor& o) const = default;
};

struct Param {
  Tensor value;
  std::uint64_t counter = 0;  // optimizer steps that touched this block
};

// Named parameter blocks. Iteration order is the lexical order of names.
class ParamSet {
 public:
  void add(const std::string& name, Tensor value, std::uint64_t counter = 0);
  bool contains(const std::string& name) const { return blocks_.contains(name); }
  const Param& at(const std::string& name) const;
  Param& at(const std::string& name);
  const Tensor& value(const std::string& name) const { return at(name).value; }
  Tensor& value(const std::string& name) { return at(name).value; }
  void erase(const std::string& name) { blocks_.erase(name); }

  std::size_t block_count() const { return blocks_.size(); }
  std::size_t parameter_count() const;
  std::vector<std::string> names() const;

  auto begin() const { return blocks_.begin(); }
  auto end() const { return blocks_.end(); }
  auto begin() { return blocks_.begin(); }
  auto end() { return blocks_.end(); }

  bool operator==(const ParamSet& o) const;

 private:
  std::map<std::string, Param> blocks_;
};

using Grads = std::map<std::string, Tensor>;

// Sums `from` into `into`, creating entries as needed.
void accumulate(Grads& into, const Grads& from);

class Tape;

// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows; }
  std::size_t cols() const { return value().cols; }
  double scalar() const { return value().values.at(0); }
};

// Reverse-mode autodiff tape. One tape per computation graph; not thread-safe.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Leaf whose gradient is reported under `name` by gradients().
  Var parameter(const std::string& name, const Tensor& value);
  // Binds every block of `params` lazily; repeated lookups return the same node.
  Var param(const ParamSet& params, const std::string& name);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const Tensor& grad(Var v) const { return nodes_[v.id].grad; }

  // Seeds d(out)/d(out) = 1 for a 1x1 output and propagates.
  void backward(Var out);
  Grads gradients() const;

  // Multiply-accumulate count of all recorded forward ops.
  std::uint64_t flops() const { return flops_; }
  std::size_t size() const { return nodes_.size(); }

  // Internal: used by op implementations.
  using BackwardFn = std::function<void(Tape&, Var self)>;
  Var push(Tensor value, BackwardFn backward, std::uint64_t flops);
  Tensor& grad_mut(Var v);

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::map<std::string, std::uint32_t> named_;
  std::uint64_t flops_ = 0;
};

// --- ops -------------------------------------------------------------------

Var matmul(Var a, Var b);
// a * b^T
Var matmul_nt(Var a, Var b);

// Elementwise with exact-shape or row-vector broadcast of b.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var silu(Var a);
Var sigmoid(Var a);
// Per-row normalization to zero mean, unit variance (no affine).
Var layer_norm(Var a, double eps = 1e-5);

enum class Elementwise { kAdd, kMul, kSilu, kSigmoid, kLayerNorm };
Var elementwise(Elementwise op, Var a);
Var elementwise(Elementwise op, Var a, Var b);

Var concat_cols(Var a, Var b);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
// Rows of `table` selected by index; index -1 yields a zero row.
Var gather_rows(Var table, std::span<const int> indices);
// Row-wise softmax over entries where mask is nonzero; masked entries are 0.
Var masked_softmax(Var a, std::span<const std::uint8_t> mask);
Var mean_rows(Var a);
Var sum_all(Var a);
// Elementwise multiplication by a constant mask (dropout, gating).
Var mul_const(Var a, const Tensor& c);

inline constexpr double kProbClip = 1e-7;

// sum_i weight_i * BCE(clip(sigmoid(logit_i)), label_i) over a column vector.
Var weighted_bce_with_logits(Var logits, std::span<const double> labels, std::span<const double> weights);

double clip_probability(double p);
double binary_cross_entropy(double label, double prob);

// --- optimizer -------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  struct Moments {
    Tensor m;
    Tensor v;
    std::uint64_t steps = 0;
  };
  std::map<std::string, Moments> blocks;
};

// Applies one Adam update to every block with a nonzero gradient. Blocks without
// a gradient, or with an all-zero one, are untouched and keep their counter.
void adam_step(ParamSet& params, const Grads& grads, const AdamConfig& cfg, AdamState& state);

}  // namespace fmx
