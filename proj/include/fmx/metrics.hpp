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

#include <span>
#include <stdexcept>
#include <string>

namespace fmx {

class MetricUndefined : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct NEResult {
  std::string task;
  double ne = 0.0;
  std::size_t n = 0;
  double positive_rate = 0.0;
};

// Mean binary cross-entropy of the predictions divided by the entropy of the
// label base rate. Probabilities are clipped to [1e-7, 1-1e-7].
// Throws MetricUndefined (NE_UNDEFINED) when all labels agree or inputs are empty.
NEResult normalized_entropy(std::span<const double> labels, std::span<const double> probs, std::string task = {});

inline constexpr double kTransferDenominatorTolerance = 1e-4;

// (NE(expert_fm1) - NE(expert_fm2)) / (NE(fm1) - NE(fm2)).
// Throws MetricUndefined (TR_UNDEFINED) when |NE(fm1) - NE(fm2)| <= tolerance.
double transfer_ratio(double ne_fm1, double ne_fm2, double ne_expert1, double ne_expert2,
                      double tolerance = kTransferDenominatorTolerance);

// Relative NE difference in percent; negative means `candidate` improves on `reference`.
double ne_diff_percent(double candidate, double reference);

// Improvements of at least this many percent NE are flagged significant.
inline constexpr double kSignificantNEDiffPercent = 0.05;

}  // namespace fmx
