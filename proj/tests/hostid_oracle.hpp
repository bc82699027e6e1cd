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

#ifndef DYADKIT_TESTS_HOSTID_ORACLE_HPP_
#define DYADKIT_TESTS_HOSTID_ORACLE_HPP_

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "dyadkit/robust_stats.hpp"
#include "support.hpp"

namespace dyad::testing {

/// Samples from a diagonal Gaussian with the given means and standard
/// deviations.
inline std::vector<std::vector<double>> diagonal_gaussian(std::mt19937_64& rng, std::size_t n,
                                                          std::span<const double> mean, std::span<const double> sd) {
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<std::vector<double>> out(n, std::vector<double>(mean.size()));
  for (auto& v : out) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = mean[i] + sd[i] * z(rng);
  }
  return out;
}

/// Unit vector at exactly cosine `c` to unit vector `a`.
inline std::vector<double> at_cosine(std::mt19937_64& rng, const std::vector<double>& a, double c) {
  auto r = random_unit(rng, a.size());
  double proj = 0;
  for (std::size_t i = 0; i < a.size(); ++i) proj += r[i] * a[i];
  double norm = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    r[i] -= proj * a[i];
    norm += r[i] * r[i];
  }
  norm = std::sqrt(norm);
  const double s = std::sqrt(1.0 - c * c);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = c * a[i] + s * r[i] / norm;
  return out;
}

/// Unit vectors scattered around unit `center` by isotropic noise.
inline std::vector<std::vector<double>> unit_cluster(std::mt19937_64& rng, const std::vector<double>& center,
                                                     std::size_t n, double sd) {
  std::normal_distribution<double> z(0.0, sd);
  std::vector<std::vector<double>> out;
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<double> v = center;
    double s = 0;
    for (auto& x : v) {
      x += z(rng);
      s += x * x;
    }
    for (auto& x : v) x /= std::sqrt(s);
    out.push_back(std::move(v));
  }
  return out;
}

inline BinaryCounts threshold_counts(std::span<const double> pos, std::span<const double> neg, double tau) {
  BinaryCounts c;
  for (double s : pos) (s >= tau ? c.true_pos : c.false_neg)++;
  for (double s : neg) (s >= tau ? c.false_pos : c.true_neg)++;
  return c;
}

/// Best F1 of "score >= t" over every threshold that can change a decision.
inline double exhaustive_best_f1(std::span<const double> pos, std::span<const double> neg) {
  double best = 0;
  for (auto scores : {pos, neg}) {
    for (double t : scores) best = std::max(best, f1_score(threshold_counts(pos, neg, t)));
  }
  return best;
}

/// Overlap band of two score samples, located by scanning thresholds on a
/// 1e-3 grid over [-1, 1]: from the highest grid threshold that still keeps
/// every positive to the lowest grid threshold that rejects every negative.
inline std::pair<double, double> overlap_band_by_scan(std::span<const double> pos, std::span<const double> neg) {
  double lo = -1.0;
  double hi = 1.0;
  bool have_hi = false;
  for (int k = -1000; k <= 1000; ++k) {
    const double t = k * 1e-3;
    const auto c = threshold_counts(pos, neg, t);
    if (c.false_neg == 0) lo = t;
    if (c.false_pos == 0 && !have_hi) {
      hi = t;
      have_hi = true;
    }
  }
  return {lo, hi};
}

}  // namespace dyad::testing

#endif  // DYADKIT_TESTS_HOSTID_ORACLE_HPP_
