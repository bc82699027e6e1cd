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

#ifndef DYADKIT_TESTS_MODMATH_ORACLE_HPP_
#define DYADKIT_TESTS_MODMATH_ORACLE_HPP_

#include <cmath>
#include <random>
#include <vector>

#include "dyadkit/modmath.hpp"

namespace dyad::testing {

using Grid = std::vector<std::vector<double>>;

/// Element-by-element evaluation of the normalize, scale-shift and gate steps
/// on nested vectors, without any library code.
inline Grid scalar_modulation(const Grid& x, const std::vector<double>& mu, const std::vector<double>& sigma,
                              const std::vector<double>& gamma, double eps = 1e-5) {
  Grid out = x;
  for (std::size_t r = 0; r < x.size(); ++r) {
    const auto& row = x[r];
    double mean = 0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(row.size());
    double var = 0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(row.size());
    for (std::size_t c = 0; c < row.size(); ++c) {
      const double xhat = (row[c] - mean) / std::sqrt(var + eps);
      const double xtilde = xhat * (1.0 + sigma[c]) + mu[c];
      out[r][c] = row[c] + gamma[c] * xtilde;
    }
  }
  return out;
}

inline modmath::Activation to_activation(const Grid& g) {
  modmath::Activation a(static_cast<Eigen::Index>(g.size()), static_cast<Eigen::Index>(g[0].size()));
  for (std::size_t r = 0; r < g.size(); ++r) {
    for (std::size_t c = 0; c < g[r].size(); ++c) {
      a(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = g[r][c];
    }
  }
  return a;
}

inline modmath::FeatureVector to_features(const std::vector<double>& v) {
  modmath::FeatureVector f(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) f[static_cast<Eigen::Index>(i)] = v[i];
  return f;
}

inline Grid random_grid(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  std::normal_distribution<double> z(0.0, scale);
  Grid g(rows, std::vector<double>(cols));
  for (auto& row : g) {
    for (auto& v : row) v = z(rng);
  }
  return g;
}

inline std::vector<double> random_features(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
  return random_grid(rng, 1, n, scale)[0];
}

inline double max_abs_deviation(const modmath::Activation& a, const Grid& g) {
  double worst = 0;
  for (std::size_t r = 0; r < g.size(); ++r) {
    for (std::size_t c = 0; c < g[r].size(); ++c) {
      worst = std::max(worst, std::abs(a(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) - g[r][c]));
    }
  }
  return worst;
}

}  // namespace dyad::testing

#endif  // DYADKIT_TESTS_MODMATH_ORACLE_HPP_
