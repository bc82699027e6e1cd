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

#include "dyadkit/modmath.hpp"

#include <cmath>
#include <random>
#include <string>

#include "dyadkit/error.hpp"

namespace dyad::modmath {

namespace {

void require_finite(const Activation& x, const char* what) {
  if (!x.allFinite()) fail(ErrorKind::kValidation, std::string(what) + " has non-finite entries");
}

void require_features(const FeatureVector& v, Eigen::Index dim, const char* what) {
  if (v.size() != dim) {
    fail(ErrorKind::kShape, std::string(what) + " has " + std::to_string(v.size()) + " features, activation has " +
                                std::to_string(dim));
  }
  if (!v.allFinite()) fail(ErrorKind::kValidation, std::string(what) + " has non-finite entries");
}

}  // namespace

ModulationTriple ModulationTriple::zeros(Eigen::Index dim) {
  return {FeatureVector::Zero(dim), FeatureVector::Zero(dim), FeatureVector::Zero(dim)};
}

Activation layer_normalize(const Activation& x, double eps) {
  if (x.cols() < 2) fail(ErrorKind::kShape, "layer_normalize needs at least 2 features");
  if (!(eps > 0)) fail(ErrorKind::kValidation, "eps must be positive");
  Activation out(x.rows(), x.cols());
  const double n = static_cast<double>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / n;
    const double var = (x.row(r).array() - mean).square().sum() / n;
    const double inv = 1.0 / std::sqrt(var + eps);
    out.row(r) = (x.row(r).array() - mean) * inv;
  }
  return out;
}

Activation apply_video_modulation(const Activation& x, const ModulationTriple& m, double eps) {
  require_finite(x, "activation");
  require_features(m.shift, x.cols(), "shift");
  require_features(m.scale, x.cols(), "scale");
  require_features(m.gate, x.cols(), "gate");
  const Activation xhat = layer_normalize(x, eps);
  Activation out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (m.gate[c] == 0.0) {
        out(r, c) = x(r, c);
        continue;
      }
      const double modulated = xhat(r, c) * (1.0 + m.scale[c]) + m.shift[c];
      out(r, c) = x(r, c) + m.gate[c] * modulated;
    }
  }
  return out;
}

Activation cfg_combine(const Activation& uncond, const Activation& cond, double lambda) {
  if (uncond.rows() != cond.rows() || uncond.cols() != cond.cols()) {
    fail(ErrorKind::kShape, "cfg_combine operands differ in shape");
  }
  if (!std::isfinite(lambda)) fail(ErrorKind::kValidation, "guidance scale must be finite");
  Activation out(uncond.rows(), uncond.cols());
  for (Eigen::Index i = 0; i < uncond.size(); ++i) {
    out.data()[i] = std::lerp(uncond.data()[i], cond.data()[i], lambda);
  }
  return out;
}

std::vector<double> default_sweep_lambdas() {
  return {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0};
}

std::vector<SweepRow> cfg_sweep(Eigen::Index tokens, Eigen::Index features, std::uint64_t seed,
                                const std::vector<double>& lambdas) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](Eigen::Index rows, Eigen::Index cols, double scale) {
    Activation a(rows, cols);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = scale * normal(rng);
    return a;
  };
  const Activation x = draw(tokens, features, 1.0);
  ModulationTriple m;
  m.shift = draw(1, features, 0.1);
  m.scale = draw(1, features, 0.1);
  m.gate = draw(1, features, 0.1);

  const Activation uncond = apply_video_modulation(x, ModulationTriple::zeros(features));
  const Activation cond = apply_video_modulation(x, m);
  const double span = (cond - uncond).norm();

  std::vector<SweepRow> rows;
  for (double lambda : lambdas) {
    const Activation out = cfg_combine(uncond, cond, lambda);
    SweepRow row;
    row.lambda = lambda;
    row.relative_offset = span > 0 ? (out - uncond).norm() / span : 0.0;
    row.mean = out.mean();
    row.stddev = std::sqrt((out.array() - row.mean).square().mean());
    row.max_abs_change = (out - x).cwiseAbs().maxCoeff();
    rows.push_back(row);
  }
  return rows;
}

}  // namespace dyad::modmath
