// Copyright 2026 The Dyadkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DYADKIT_ROBUST_STATS_HPP_
#define DYADKIT_ROBUST_STATS_HPP_

#include <span>
#include <vector>

namespace dyad {

/// Linear-interpolation quantile (Hyndman-Fan type 7, the numpy default) of
/// an already sorted sample. `p` in [0, 1]; the sample must be non-empty.
double quantile_sorted(std::span<const double> sorted, double p);

/// Sorts a copy and delegates to quantile_sorted.
double quantile(std::vector<double> values, double p);

struct BinaryCounts {
  long true_pos = 0;
  long false_pos = 0;
  long false_neg = 0;
  long true_neg = 0;
};

/// F1 of the positive class; 0 when there are no true positives.
double f1_score(const BinaryCounts& c);
double precision(const BinaryCounts& c);
double recall(const BinaryCounts& c);

}  // namespace dyad

#endif  // DYADKIT_ROBUST_STATS_HPP_
