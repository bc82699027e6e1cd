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

#ifndef DYADKIT_TESTS_CROP_ORACLE_HPP_
#define DYADKIT_TESTS_CROP_ORACLE_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "dyadkit/cropper.hpp"

namespace dyad::testing {

struct CropCase {
  std::vector<BBox> boxes;
  FrameSize frame;
  CropWindow want;
};

/// Frozen output of tests/oracles/crop_oracle.py (exact rational
/// arithmetic). The first row is the hand-derived fixture.
inline const std::vector<CropCase>& crop_golden_cases() {
  static const std::vector<CropCase> cases = {
    {{{100, 100, 100, 100}}, {1000, 1000}, {85, 111, 130}},
    {{{400, 300, 200, 200}}, {1920, 1080}, {370, 322, 260}},
    {{{10, 20, 30, 40}, {25, 35, 30, 30}}, {640, 480}, {3, 25, 59}},
    {{{900, 950, 80, 50}}, {1000, 1000}, {888, 896, 104}},
    {{{0, 0, 60, 60}}, {640, 480}, {0, 7, 78}},
    {{{590, 10, 50, 50}}, {640, 480}, {575, 16, 65}},
    {{{100, 50, 500, 400}}, {640, 480}, {110, 0, 480}},
    {{{0, 0, 640, 480}}, {640, 480}, {80, 0, 480}},
    {{{300, 200, 1, 1}}, {640, 480}, {300, 200, 2}},
    {{{12.5, 40.25, 33.75, 41.5}, {20, 44, 30, 40}}, {320, 240}, {3, 45, 57}},
    {{{700, 380, 120, 160}}, {1280, 720}, {656, 398, 208}},
    {{{1800, 500, 100, 90}, {1790, 510, 110, 95}}, {1920, 1080}, {1774, 508, 143}},
    {{{486.5, -19, 113.5, 102}, {495.5, -13, 128.5, 192}}, {1280, 720}, {426, 2, 258}},
    {{{151.5, 15, 134, 134}, {161.5, 15, 135, 121}}, {400, 400}, {130, 22, 189}},
    {{{172, 3, 101, 90}, {183, -11, 113, 113}, {170, -10, 120, 180}}, {1280, 720}, {115, 9, 236}},
    {{{263, -16, 62.5, 62}}, {640, 480}, {253, 0, 82}},
    {{{161, 411, 76.5, 114}, {166, 383, 73.5, 66}}, {400, 400}, {108, 215, 185}},
    {{{174, 423, 138.5, 207}, {178, 401, 145.5, 218}, {156, 431, 140.5, 140}, {159, 408, 149.5, 179}},
      {640, 480}, {91, 182, 298}},
    {{{103.5, 114, 137, 137}, {94.5, 131, 130, 195}, {100.5, 116, 133, 199}, {104.5, 107, 147, 132}},
      {400, 400}, {31, 115, 285}},
    {{{153.5, 316, 91, 81}, {156.5, 316, 92, 82}, {160.5, 309, 106, 106}, {179.5, 300, 100, 90}},
      {640, 480}, {135, 305, 164}},
    {{{570, 251, 39, 58}, {552, 232, 40, 60}, {576, 235, 50, 60}}, {1280, 720}, {539, 240, 101}},
  };
  return cases;
}

/// Type-7 quantile by direct position arithmetic on a sorted copy.
inline double linear_quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto below = static_cast<std::size_t>(pos);
  if (below + 1 >= v.size()) return v.back();
  const double frac = pos - static_cast<double>(below);
  return v[below] * (1.0 - frac) + v[below + 1] * frac;
}

/// Indices of boxes whose four series values all sit within the Tukey
/// fences.
inline std::vector<std::size_t> iqr_oracle(std::span<const BBox> boxes, double k) {
  std::vector<std::size_t> out;
  if (boxes.size() < 4) {
    for (std::size_t i = 0; i < boxes.size(); ++i) out.push_back(i);
    return out;
  }
  std::vector<std::vector<double>> series(4);
  for (const auto& b : boxes) {
    series[0].push_back(b.x + b.w / 2);
    series[1].push_back(b.y + b.h / 2);
    series[2].push_back(b.w);
    series[3].push_back(b.h);
  }
  std::vector<double> lo(4);
  std::vector<double> hi(4);
  for (int s = 0; s < 4; ++s) {
    const double q1 = linear_quantile(series[s], 0.25);
    const double q3 = linear_quantile(series[s], 0.75);
    lo[s] = q1 - k * (q3 - q1);
    hi[s] = q3 + k * (q3 - q1);
  }
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    bool in = true;
    for (int s = 0; s < 4; ++s) in = in && series[s][i] >= lo[s] && series[s][i] <= hi[s];
    if (in) out.push_back(i);
  }
  return out;
}

/// Random face-box series with occasional gross outliers.
inline std::vector<BBox> random_box_series(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> count(4, 60);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  const int n = count(rng);
  const double cx = 200 + 1500 * u(rng);
  const double cy = 150 + 800 * u(rng);
  const double size = 40 + 200 * u(rng);
  const double jitter = 0.5 + 20 * u(rng);
  std::vector<BBox> out;
  for (int i = 0; i < n; ++i) {
    double w = std::round(size + jitter * z(rng));
    double h = std::round(size * 1.2 + jitter * z(rng));
    double x = std::round(cx + jitter * z(rng));
    double y = std::round(cy + jitter * z(rng));
    if (u(rng) < 0.08) {
      x += (u(rng) - 0.5) * 1500;
      w *= 1 + 3 * u(rng);
    }
    out.push_back({x - w / 2, y - h / 2, std::max(1.0, w), std::max(1.0, h)});
  }
  return out;
}

}  // namespace dyad::testing

#endif  // DYADKIT_TESTS_CROP_ORACLE_HPP_
