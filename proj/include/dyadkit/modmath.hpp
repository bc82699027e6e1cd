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

#ifndef DYADKIT_MODMATH_HPP_
#define DYADKIT_MODMATH_HPP_

#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace dyad::modmath {

/// Token-count x feature-dim block activation.
using Activation = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using FeatureVector = Eigen::RowVectorXd;

/// Per-feature shift, scale and gate, broadcast over tokens.
struct ModulationTriple {
  FeatureVector shift;
  FeatureVector scale;
  FeatureVector gate;

  static ModulationTriple zeros(Eigen::Index dim);
};

constexpr double kDefaultEps = 1e-5;

/// Per row: (x - mean) / sqrt(var + eps), population variance, no affine.
Activation layer_normalize(const Activation& x, double eps = kDefaultEps);

/// x + gate * (layer_normalize(x) * (1 + scale) + shift), element-wise with
/// the vectors broadcast across rows. Throws a shape error on dimension
/// mismatch.
Activation apply_video_modulation(const Activation& x, const ModulationTriple& m, double eps = kDefaultEps);

/// Guidance extrapolation uncond + lambda * (cond - uncond), evaluated with
/// std::lerp so lambda = 0 and lambda = 1 reproduce the endpoints exactly.
Activation cfg_combine(const Activation& uncond, const Activation& cond, double lambda);

/// Guidance scales of the ablation table rows.
std::vector<double> default_sweep_lambdas();

struct SweepRow {
  double lambda = 0;
  double relative_offset = 0;  // |out - uncond| / |cond - uncond|
  double mean = 0;
  double stddev = 0;
  double max_abs_change = 0;  // max |out - x|
};

/// Guided outputs over fixture tensors: uncond is the block with a zero gate
/// (identical to x), cond applies a seeded random modulation.
std::vector<SweepRow> cfg_sweep(Eigen::Index tokens, Eigen::Index features, std::uint64_t seed,
                                const std::vector<double>& lambdas);

}  // namespace dyad::modmath

#endif  // DYADKIT_MODMATH_HPP_
