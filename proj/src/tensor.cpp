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

#include "fmx/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace fmx {

namespace {

std::string shape_str(const Tensor& t) {
  std::ostringstream os;
  os << t.rows << "x" << t.cols;
  return os.str();
}

[[noreturn]] void dim_error(const char* op, const Tensor& a, const Tensor& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

// Row-vector broadcast of b over a is allowed; returns true when broadcasting.
bool check_broadcast(const char* op, const Tensor& a, const Tensor& b) {
  if (a.same_shape(b)) return false;
  if (b.rows == 1 && b.cols == a.cols) return true;
  dim_error(op, a, b);
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor::Tensor(std::size_t r, std::size_t c, std::vector<double> v) : rows(r), cols(c), values(std::move(v)) {
  if (values.size() != r * c) {
    throw DimensionError("tensor: " + std::to_string(values.size()) + " values for shape " + std::to_string(r) +
                         "x" + std::to_string(c));
  }
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

Tensor Tensor::row(std::span<const double> v) { return Tensor(1, v.size(), std::vector<double>(v.begin(), v.end())); }

Tensor Tensor::randn(std::size_t r, std::size_t c, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(r, c);
  for (auto& x : t.values) x = dist(rng);
  return t;
}

bool Tensor::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double x) { return std::isfinite(x); });
}

// --- ParamSet --------------------------------------------------------------

void ParamSet::add(const std::string& name, Tensor value, std::uint64_t counter) {
  auto [it, inserted] = blocks_.try_emplace(name, Param{std::move(value), counter});
  if (!inserted) throw std::invalid_argument("duplicate parameter block: " + name);
}

const Param& ParamSet::at(const std::string& name) const {
  auto it = blocks_.find(name);
  if (it == blocks_.end()) throw std::out_of_range("unknown parameter block: " + name);
  return it->second;
}

Param& ParamSet::at(const std::string& name) {
  auto it = blocks_.find(name);
  if (it == blocks_.end()) throw std::out_of_range("unknown parameter block: " + name);
  return it->second;
}

std::size_t ParamSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : blocks_) n += p.value.size();
  return n;
}

std::vector<std::string> ParamSet::names() const {
  std::vector<std::string> out;
  out.reserve(blocks_.size());
  for (const auto& [name, _] : blocks_) out.push_back(name);
  return out;
}

bool ParamSet::operator==(const ParamSet& o) const {
  if (blocks_.size() != o.blocks_.size()) return false;
  auto it = o.blocks_.begin();
  for (const auto& [name, p] : blocks_) {
    if (name != it->first || p.counter != it->second.counter || !(p.value == it->second.value)) return false;
    ++it;
  }
  return true;
}

void accumulate(Grads& into, const Grads& from) {
  for (const auto& [name, g] : from) {
    auto it = into.find(name);
    if (it == into.end()) {
      into.emplace(name, g);
      continue;
    }
    if (!it->second.same_shape(g)) dim_error("accumulate", it->second, g);
    for (std::size_t i = 0; i < g.size(); ++i) it->second.values[i] += g.values[i];
  }
}

// --- Tape ------------------------------------------------------------------

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::push(Tensor value, BackwardFn backward, std::uint64_t flops) {
  flops_ += flops;
  nodes_.push_back(Node{std::move(value), Tensor{}, std::move(backward)});
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor value) { return push(std::move(value), nullptr, 0); }

Var Tape::parameter(const std::string& name, const Tensor& value) {
  Var v = push(value, nullptr, 0);
  auto [it, inserted] = named_.try_emplace(name, v.id);
  if (!inserted) throw std::invalid_argument("parameter bound twice on tape: " + name);
  return v;
}

Var Tape::param(const ParamSet& params, const std::string& name) {
  auto it = named_.find(name);
  if (it != named_.end()) return Var{this, it->second};
  return parameter(name, params.value(name));
}

Tensor& Tape::grad_mut(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.values.empty() && n.value.size() > 0) n.grad = Tensor(n.value.rows, n.value.cols);
  return n.grad;
}

void Tape::backward(Var out) {
  if (value(out).size() != 1) throw DimensionError("backward: output must be 1x1, got " + shape_str(value(out)));
  grad_mut(out).values[0] += 1.0;
  for (std::size_t i = out.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && !n.grad.values.empty()) n.backward(*this, Var{this, static_cast<std::uint32_t>(i)});
  }
}

Grads Tape::gradients() const {
  Grads out;
  for (const auto& [name, id] : named_) {
    const Node& n = nodes_[id];
    if (!n.grad.values.empty()) out.emplace(name, n.grad);
  }
  return out;
}

// --- ops -------------------------------------------------------------------

namespace {

// c += a * b  (a: n x k, b: k x m)
void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c + i * m;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

// c += a * b^T  (a: n x k, b: m x k)
void gemm_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * m + j] += s;
    }
  }
}

// c += a^T * b  (a: k x n, b: k x m)
void gemm_tn(const double* a, const double* b, double* c, std::size_t k, std::size_t n, std::size_t m) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * n;
    const double* bp = b + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const double av = ap[i];
      if (av == 0.0) continue;
      double* ci = c + i * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols != bv.rows) dim_error("matmul", av, bv);
  const std::size_t n = av.rows, k = av.cols, m = bv.cols;
  Tensor out(n, m);
  gemm_nn(av.values.data(), bv.values.data(), out.values.data(), n, k, m);
  return a.tape->push(
      std::move(out),
      [a, b, n, k, m](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        gemm_nt(g.values.data(), t.value(b).values.data(), t.grad_mut(a).values.data(), n, m, k);
        gemm_tn(t.value(a).values.data(), g.values.data(), t.grad_mut(b).values.data(), n, k, m);
      },
      n * k * m);
}

Var matmul_nt(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols != bv.cols) dim_error("matmul_nt", av, bv);
  const std::size_t n = av.rows, k = av.cols, m = bv.rows;
  Tensor out(n, m);
  gemm_nt(av.values.data(), bv.values.data(), out.values.data(), n, k, m);
  return a.tape->push(
      std::move(out),
      [a, b, n, k, m](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        gemm_nn(g.values.data(), t.value(b).values.data(), t.grad_mut(a).values.data(), n, m, k);
        gemm_tn(g.values.data(), t.value(a).values.data(), t.grad_mut(b).values.data(), n, m, k);
      },
      n * k * m);
}

namespace {

// Adds g (rows x cols) into the gradient of b, summing over rows when b is a broadcast row.
void reduce_into(Tensor& gb, const Tensor& g, bool broadcast, double sign) {
  if (!broadcast) {
    for (std::size_t i = 0; i < g.size(); ++i) gb.values[i] += sign * g.values[i];
    return;
  }
  for (std::size_t r = 0; r < g.rows; ++r)
    for (std::size_t c = 0; c < g.cols; ++c) gb.values[c] += sign * g.at(r, c);
}

Var add_sub(Var a, Var b, double sign, const char* op) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool bc = check_broadcast(op, av, bv);
  Tensor out = av;
  for (std::size_t r = 0; r < av.rows; ++r)
    for (std::size_t c = 0; c < av.cols; ++c) out.at(r, c) += sign * bv.values[bc ? c : r * av.cols + c];
  return a.tape->push(
      std::move(out),
      [a, b, bc, sign](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        reduce_into(t.grad_mut(a), g, false, 1.0);
        reduce_into(t.grad_mut(b), g, bc, sign);
      },
      av.size());
}

}  // namespace

Var add(Var a, Var b) { return add_sub(a, b, 1.0, "add"); }
Var sub(Var a, Var b) { return add_sub(a, b, -1.0, "sub"); }

Var mul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool bc = check_broadcast("mul", av, bv);
  const std::size_t cols = av.cols;
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] *= bv.values[bc ? i % cols : i];
  return a.tape->push(
      std::move(out),
      [a, b, bc, cols](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        const Tensor& av2 = t.value(a);
        const Tensor& bv2 = t.value(b);
        Tensor& ga = t.grad_mut(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga.values[i] += g.values[i] * bv2.values[bc ? i % cols : i];
        Tensor& gb = t.grad_mut(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb.values[bc ? i % cols : i] += g.values[i] * av2.values[i];
      },
      av.size());
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (auto& x : out.values) x *= s;
  const std::size_t n = out.size();
  return a.tape->push(
      std::move(out),
      [a, s](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad_mut(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga.values[i] += s * g.values[i];
      },
      n);
}

Var mul_const(Var a, const Tensor& c) {
  const Tensor& av = a.value();
  if (!av.same_shape(c)) dim_error("mul_const", av, c);
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] *= c.values[i];
  return a.tape->push(
      std::move(out),
      [a, c](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad_mut(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga.values[i] += g.values[i] * c.values[i];
      },
      av.size());
}

Var silu(Var a) {
  Tensor out = a.value();
  for (auto& x : out.values) x = x * sigmoid_scalar(x);
  const std::size_t n = out.size();
  return a.tape->push(
      std::move(out),
      [a](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        const Tensor& x = t.value(a);
        Tensor& ga = t.grad_mut(a);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double s = sigmoid_scalar(x.values[i]);
          ga.values[i] += g.values[i] * s * (1.0 + x.values[i] * (1.0 - s));
        }
      },
      4 * n);
}

Var sigmoid(Var a) {
  Tensor out = a.value();
  for (auto& x : out.values) x = sigmoid_scalar(x);
  const std::size_t n = out.size();
  return a.tape->push(
      std::move(out),
      [a](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        Tensor& ga = t.grad_mut(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga.values[i] += g.values[i] * y.values[i] * (1.0 - y.values[i]);
      },
      4 * n);
}

Var layer_norm(Var a, double eps) {
  const Tensor& x = a.value();
  const std::size_t rows = x.rows, cols = x.cols;
  Tensor out(rows, cols);
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    auto in = x.row_span(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    auto o = out.row_span(r);
    for (std::size_t c = 0; c < cols; ++c) o[c] = (in[c] - mean) * inv_std[r];
  }
  return a.tape->push(
      std::move(out),
      [a, inv_std = std::move(inv_std), rows, cols](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        Tensor& ga = t.grad_mut(a);
        const double n = static_cast<double>(cols);
        for (std::size_t r = 0; r < rows; ++r) {
          double gm = 0.0, gy = 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            gm += g.at(r, c);
            gy += g.at(r, c) * y.at(r, c);
          }
          gm /= n;
          gy /= n;
          for (std::size_t c = 0; c < cols; ++c) ga.at(r, c) += inv_std[r] * (g.at(r, c) - gm - y.at(r, c) * gy);
        }
      },
      5 * rows * cols);
}

Var elementwise(Elementwise op, Var a) {
  switch (op) {
    case Elementwise::kSilu: return silu(a);
    case Elementwise::kSigmoid: return sigmoid(a);
    case Elementwise::kLayerNorm: return layer_norm(a);
    default: throw std::invalid_argument("elementwise: binary op called with one operand");
  }
}

Var elementwise(Elementwise op, Var a, Var b) {
  switch (op) {
    case Elementwise::kAdd: return add(a, b);
    case Elementwise::kMul: return mul(a, b);
    default: throw std::invalid_argument("elementwise: unary op called with two operands");
  }
}

Var concat_cols(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows != bv.rows) dim_error("concat_cols", av, bv);
  const std::size_t rows = av.rows, ca = av.cols, cb = bv.cols;
  Tensor out(rows, ca + cb);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.values.data() + r * ca, ca, out.values.data() + r * (ca + cb));
    std::copy_n(bv.values.data() + r * cb, cb, out.values.data() + r * (ca + cb) + ca);
  }
  return a.tape->push(
      std::move(out),
      [a, b, rows, ca, cb](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad_mut(a);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < ca; ++c) ga.values[r * ca + c] += g.values[r * (ca + cb) + c];
        Tensor& gb = t.grad_mut(b);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cb; ++c) gb.values[r * cb + c] += g.values[r * (ca + cb) + ca + c];
      },
      0);
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  if (begin > end || end > av.rows) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                         shape_str(av));
  }
  const std::size_t cols = av.cols;
  Tensor out(end - begin, cols,
             std::vector<double>(av.values.begin() + begin * cols, av.values.begin() + end * cols));
  return a.tape->push(
      std::move(out),
      [a, begin, cols](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad_mut(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga.values[begin * cols + i] += g.values[i];
      },
      0);
}

Var gather_rows(Var table, std::span<const int> indices) {
  const Tensor& tv = table.value();
  const std::size_t cols = tv.cols;
  Tensor out(indices.size(), cols);
  std::vector<int> idx(indices.begin(), indices.end());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0) continue;
    if (static_cast<std::size_t>(idx[r]) >= tv.rows) {
      throw DimensionError("gather_rows: index " + std::to_string(idx[r]) + " out of range for " + shape_str(tv));
    }
    std::copy_n(tv.values.data() + idx[r] * cols, cols, out.values.data() + r * cols);
  }
  return table.tape->push(
      std::move(out),
      [table, idx = std::move(idx), cols](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        Tensor& gt = t.grad_mut(table);
        for (std::size_t r = 0; r < idx.size(); ++r) {
          if (idx[r] < 0) continue;
          for (std::size_t c = 0; c < cols; ++c) gt.values[idx[r] * cols + c] += g.values[r * cols + c];
        }
      },
      0);
}

Var masked_softmax(Var a, std::span<const std::uint8_t> mask) {
  const Tensor& x = a.value();
  if (mask.size() != x.size()) {
    throw DimensionError("masked_softmax: mask of " + std::to_string(mask.size()) + " for " + shape_str(x));
  }
  const std::size_t rows = x.rows, cols = x.cols;
  Tensor out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c)
      if (mask[r * cols + c]) mx = std::max(mx, x.at(r, c));
    if (!std::isfinite(mx)) continue;
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (!mask[r * cols + c]) continue;
      out.at(r, c) = std::exp(x.at(r, c) - mx);
      z += out.at(r, c);
    }
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) /= z;
  }
  return a.tape->push(
      std::move(out),
      [a, rows, cols](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        Tensor& ga = t.grad_mut(a);
        for (std::size_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < cols; ++c) dot += g.at(r, c) * y.at(r, c);
          for (std::size_t c = 0; c < cols; ++c) ga.at(r, c) += y.at(r, c) * (g.at(r, c) - dot);
        }
      },
      4 * rows * cols);
}

Var mean_rows(Var a) {
  const Tensor& x = a.value();
  const std::size_t rows = x.rows, cols = x.cols;
  if (rows == 0) throw DimensionError("mean_rows: empty input");
  Tensor out(1, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.values[c] += x.at(r, c);
  for (auto& v : out.values) v /= static_cast<double>(rows);
  return a.tape->push(
      std::move(out),
      [a, rows, cols](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad_mut(a);
        const double inv = 1.0 / static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) ga.at(r, c) += g.values[c] * inv;
      },
      rows * cols);
}

Var sum_all(Var a) {
  const Tensor& x = a.value();
  double s = 0.0;
  for (double v : x.values) s += v;
  return a.tape->push(
      Tensor(1, 1, s),
      [a](Tape& t, Var self) {
        const double g = t.grad(self).values[0];
        for (auto& v : t.grad_mut(a).values) v += g;
      },
      x.size());
}

double clip_probability(double p) { return std::clamp(p, kProbClip, 1.0 - kProbClip); }

double binary_cross_entropy(double label, double prob) {
  const double p = clip_probability(prob);
  return -(label * std::log(p) + (1.0 - label) * std::log(1.0 - p));
}

Var weighted_bce_with_logits(Var logits, std::span<const double> labels, std::span<const double> weights) {
  const Tensor& z = logits.value();
  if (labels.size() != z.size() || weights.size() != z.size()) {
    throw DimensionError("weighted_bce_with_logits: " + std::to_string(labels.size()) + " labels, " +
                         std::to_string(weights.size()) + " weights for " + shape_str(z));
  }
  double loss = 0.0;
  std::vector<double> dz(z.size(), 0.0);
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (weights[i] == 0.0) continue;
    const double raw = sigmoid_scalar(z.values[i]);
    loss += weights[i] * binary_cross_entropy(labels[i], raw);
    if (raw > kProbClip && raw < 1.0 - kProbClip) dz[i] = weights[i] * (raw - labels[i]);
  }
  return logits.tape->push(
      Tensor(1, 1, loss),
      [logits, dz = std::move(dz)](Tape& t, Var self) {
        const double g = t.grad(self).values[0];
        Tensor& gz = t.grad_mut(logits);
        for (std::size_t i = 0; i < dz.size(); ++i) gz.values[i] += g * dz[i];
      },
      6 * z.size());
}

// --- optimizer -------------------------------------------------------------

void adam_step(ParamSet& params, const Grads& grads, const AdamConfig& cfg, AdamState& state) {
  for (const auto& [name, g] : grads) {
    Param& p = params.at(name);
    if (!p.value.same_shape(g)) dim_error("adam_step", p.value, g);
    if (std::all_of(g.values.begin(), g.values.end(), [](double x) { return x == 0.0; })) continue;
    auto& mom = state.blocks[name];
    if (mom.m.size() != g.size()) {
      mom.m = Tensor(g.rows, g.cols);
      mom.v = Tensor(g.rows, g.cols);
      mom.steps = 0;
    }
    ++mom.steps;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(mom.steps));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(mom.steps));
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double gi = g.values[i];
      mom.m.values[i] = cfg.beta1 * mom.m.values[i] + (1.0 - cfg.beta1) * gi;
      mom.v.values[i] = cfg.beta2 * mom.v.values[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = mom.m.values[i] / bc1;
      const double vhat = mom.v.values[i] / bc2;
      p.value.values[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    ++p.counter;
  }
}

}  // namespace fmx
