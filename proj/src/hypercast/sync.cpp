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

#include "fmx/hypercast/sync.hpp"

#include <algorithm>
#include <cmath>

#include "fmx/checkpoint.hpp"

namespace fmx::hypercast {

std::vector<std::string> WeightDelta::block_names() const {
  std::vector<std::string> out;
  for (const auto& b : blocks) out.push_back(b.name);
  return out;
}

PartialPublisher::PartialPublisher(std::string version, double fraction)
    : version_(std::move(version)), fraction_(fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("publish fraction must be in (0, 1]");
}

std::size_t PartialPublisher::slots(double fraction, std::size_t n_blocks) {
  // Guard against 0.3 * 10 landing at 3.0000000000000004.
  const double raw = fraction * static_cast<double>(n_blocks);
  const auto k = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::clamp<std::size_t>(k, 1, n_blocks);
}

std::size_t PartialPublisher::cycle_length(double fraction) {
  return static_cast<std::size_t>(std::ceil(1.0 / fraction - 1e-9));
}

WeightDelta PartialPublisher::publish(const ParamSet& trainer, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("publish fraction must be in (0, 1]");
  const std::size_t n = trainer.block_count();
  WeightDelta delta{version_, ++sequence_, {}};
  if (n == 0) return delta;
  const std::uint64_t q = sequence_;
  const std::size_t k = slots(fraction, n);
  const std::uint64_t horizon = cycle_length(fraction) - 1;

  struct Candidate {
    const std::string* name;
    const Param* param;
    std::size_t index;      // lexical position
    std::uint64_t advance;  // 0 when clean
    std::uint64_t deadline;
    bool dirty;
  };
  std::vector<Candidate> cands;
  cands.reserve(n);
  std::size_t idx = 0;
  for (const auto& [name, param] : trainer) {
    auto& st = state_[name];
    const bool dirty = !st.published || param.counter != st.counter;
    if (dirty && !st.dirty) {
      st.dirty = true;
      st.dirty_since = q;
    }
    if (!dirty) st.dirty = false;
    const std::uint64_t advance =
        !st.published ? param.counter + 1 : (param.counter > st.counter ? param.counter - st.counter : 1);
    cands.push_back({&name, &param, idx++, dirty ? advance : 0, st.dirty_since + horizon, dirty});
  }
  const auto rr = [&](const Candidate& c) { return (c.index + n - cursor_ % n) % n; };

  // Mandatory count: the most deadlines that cannot be met by later publishes.
  std::vector<std::uint64_t> deadlines;
  for (const auto& c : cands)
    if (c.dirty) deadlines.push_back(c.deadline);
  std::sort(deadlines.begin(), deadlines.end());
  std::size_t mandatory = 0;
  for (std::size_t i = 0; i < deadlines.size(); ++i) {
    const std::uint64_t j = deadlines[i] > q ? deadlines[i] - q : 0;
    const std::uint64_t later = k * j;
    if (i + 1 > later) mandatory = std::max<std::size_t>(mandatory, i + 1 - later);
  }
  mandatory = std::min(mandatory, k);

  std::vector<std::size_t> order(cands.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<std::uint8_t> chosen(cands.size(), 0);
  std::size_t picked = 0;
  if (mandatory > 0) {
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const auto& x = cands[a];
      const auto& y = cands[b];
      if (x.dirty != y.dirty) return x.dirty;
      if (x.deadline != y.deadline) return x.deadline < y.deadline;
      return rr(x) < rr(y);
    });
    for (std::size_t i = 0; i < mandatory; ++i) chosen[order[i]] = 1;
    picked = mandatory;
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = cands[a];
    const auto& y = cands[b];
    if (x.advance != y.advance) return x.advance > y.advance;
    return rr(x) < rr(y);
  });
  std::size_t last_rr = n;  // rr position of the last clean block chosen
  for (std::size_t i = 0; i < order.size() && picked < k; ++i) {
    if (chosen[order[i]]) continue;
    chosen[order[i]] = 1;
    ++picked;
    if (cands[order[i]].advance == 0) last_rr = rr(cands[order[i]]);
  }
  if (last_rr != n) cursor_ = (cursor_ + last_rr + 1) % n;

  for (std::size_t i = 0; i < cands.size(); ++i) {
    if (!chosen[i]) continue;
    const auto& c = cands[i];
    delta.blocks.push_back({*c.name, c.param->counter, c.param->value});
    auto& st = state_[*c.name];
    st.published = true;
    st.counter = c.param->counter;
    st.dirty = false;
  }
  return delta;
}

ServerWeights::ServerWeights(ParamSet initial, std::uint64_t sequence) {
  auto snap = std::make_shared<Snapshot>();
  snap->params = std::move(initial);
  snap->sequence = sequence;
  snap->checksum = checksum(snap->params);
  for (const auto& [name, p] : snap->params) snap->block_sequence[name] = sequence;
  current_ = std::move(snap);
}

std::shared_ptr<const Snapshot> ServerWeights::snapshot() const {
  std::lock_guard lock(read_mu_);
  return current_;
}

ApplyStatus ServerWeights::apply_partial(const WeightDelta& delta) {
  std::lock_guard writer(write_mu_);
  const auto base = snapshot();
  if (delta.sequence <= base->sequence) return ApplyStatus::kStale;
  for (const auto& b : delta.blocks) {
    if (!base->params.contains(b.name)) throw UnknownBlock("delta names unknown block " + b.name);
    if (!base->params.value(b.name).same_shape(b.value)) throw DimensionError("delta block " + b.name + " has wrong shape");
  }
  auto next = std::make_shared<Snapshot>(*base);
  for (const auto& b : delta.blocks) {
    auto& p = next->params.at(b.name);
    p.value = b.value;
    p.counter = b.counter;
    next->block_sequence[b.name] = delta.sequence;
  }
  next->sequence = delta.sequence;
  next->checksum = checksum(next->params);
  std::lock_guard lock(read_mu_);
  current_ = std::move(next);
  return ApplyStatus::kApplied;
}

std::string apply_status_name(ApplyStatus s) { return s == ApplyStatus::kApplied ? "APPLIED" : "STALE"; }

}  // namespace fmx::hypercast
