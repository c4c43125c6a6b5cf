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

#include "fmx/metrics.hpp"

#include <cmath>

#include "fmx/tensor.hpp"

namespace fmx {

NEResult normalized_entropy(std::span<const double> labels, std::span<const double> probs, std::string task) {
  if (labels.size() != probs.size()) throw std::invalid_argument("normalized_entropy: labels and probs differ in size");
  if (labels.empty()) throw MetricUndefined("NE_UNDEFINED: no examples");
  double positives = 0.0, ce = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double y = labels[i];
    if (y != 0.0 && y != 1.0) throw std::invalid_argument("normalized_entropy: labels must be binary");
    if (!(probs[i] >= 0.0 && probs[i] <= 1.0)) throw std::invalid_argument("normalized_entropy: probs must be in [0,1]");
    positives += y;
    ce += binary_cross_entropy(y, probs[i]);
  }
  const double n = static_cast<double>(labels.size());
  const double p = positives / n;
  if (p == 0.0 || p == 1.0) throw MetricUndefined("NE_UNDEFINED: labels are all " + std::string(p == 0.0 ? "negative" : "positive"));
  const double base = -(p * std::log(p) + (1.0 - p) * std::log(1.0 - p));
  return NEResult{std::move(task), (ce / n) / base, labels.size(), p};
}

double transfer_ratio(double ne_fm1, double ne_fm2, double ne_expert1, double ne_expert2, double tolerance) {
  const double den = ne_fm1 - ne_fm2;
  if (!(std::abs(den) > tolerance)) throw MetricUndefined("TR_UNDEFINED: FM NE difference within tolerance");
  return (ne_expert1 - ne_expert2) / den;
}

double ne_diff_percent(double candidate, double reference) { return 100.0 * (candidate - reference) / reference; }

}  // namespace fmx
