/*
 * Copyright 2026 The seqpool Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

/// \file
/// Particle Gibbs with backward sampling. Particles are proposed from the
/// prior (q_1 = p(x), q_i = p(x | x_{i-1})), so the incremental weight is the
/// observation density alone. Particle 0 at every time is the conditioned path.

#include "seqpool/common.hpp"
#include "seqpool/ehmm.hpp"
#include "seqpool/model.hpp"

#include <vector>

namespace seqpool {

struct ParticleSystem {
  std::vector<RowMatrix> particles;  // per time: L x P
  Matrix log_w;                      // n x L unnormalized log weights
  Matrix weights;                    // n x L normalized weights
  Eigen::MatrixXi ancestors;         // (n-1) x L; row i-1 holds A_{i-1}

  int length() const { return static_cast<int>(particles.size()); }
  int size() const { return static_cast<int>(log_w.cols()); }
};

namespace detail {

inline void normalize_row(const Matrix& log_w, Matrix& weights, int i, const char* where) {
  const int L = static_cast<int>(log_w.cols());
  std::vector<double> lw(L), w(L);
  for (int l = 0; l < L; ++l) lw[l] = log_w(i, l);
  try {
    normalize_log_weights(lw, w, where);
  } catch (const NumericalError& e) {
    throw NumericalError(std::string(e.what()) + " at time index " + std::to_string(i + 1));
  }
  for (int l = 0; l < L; ++l) weights(i, l) = w[l];
}

/// Multinomial draws: L-1 independent categorical indices from weights.
inline void draw_ancestors(const Eigen::Ref<const Eigen::RowVectorXd>& w, Eigen::RowVectorXi& out,
                           Rng& rng) {
  const int L = static_cast<int>(w.size());
  out.resize(L);
  std::vector<double> cum(L);
  double acc = 0.0;
  for (int l = 0; l < L; ++l) cum[l] = (acc += w[l]);
  out[0] = 0;
  for (int l = 1; l < L; ++l) {
    double u = uniform01(rng) * acc;
    auto it = std::upper_bound(cum.begin(), cum.end(), u);
    int k = std::min(static_cast<int>(it - cum.begin()), L - 1);
    while (k > 0 && w[k] == 0.0) --k;  // u rounded up to the total
    out[l] = k;
  }
}

}  // namespace detail

/// Conditional SMC with the prior as importance density.
inline ParticleSystem csmc(const LatentSequence& x, const ModelSpec& spec,
                           const ObservationSequence& y, int L, Rng& rng) {
  if (L < 1) throw ConfigError("csmc: L must be >= 1");
  const int n = static_cast<int>(x.rows());
  const int P = spec.dim();
  ParticleSystem ps;
  ps.particles.assign(n, RowMatrix(L, P));
  ps.log_w.resize(n, L);
  ps.weights.resize(n, L);
  ps.ancestors.resize(std::max(n - 1, 0), L);

  const Matrix& init_chol = spec.initial().chol();
  const Matrix& trans_chol = spec.transition().chol();

  ps.particles[0].row(0) = x.row(0);
  for (int l = 1; l < L; ++l) {
    ps.particles[0].row(l) = (init_chol * standard_normal(P, rng)).transpose();
  }
  for (int l = 0; l < L; ++l) {
    ps.log_w(0, l) = log_obs_density(spec, ps.particles[0].row(l).transpose(), y.row(0).transpose());
  }
  detail::normalize_row(ps.log_w, ps.weights, 0, "csmc");

  for (int i = 1; i < n; ++i) {
    Eigen::RowVectorXi anc;
    detail::draw_ancestors(ps.weights.row(i - 1), anc, rng);
    ps.ancestors.row(i - 1) = anc;
    ps.particles[i].row(0) = x.row(i);
    for (int l = 1; l < L; ++l) {
      int a = ps.ancestors(i - 1, l);
      ps.particles[i].row(l) =
          (spec.apply_phi(ps.particles[i - 1].row(a).transpose()) + trans_chol * standard_normal(P, rng))
              .transpose();
    }
    for (int l = 0; l < L; ++l) {
      ps.log_w(i, l) =
          log_obs_density(spec, ps.particles[i].row(l).transpose(), y.row(i).transpose());
    }
    detail::normalize_row(ps.log_w, ps.weights, i, "csmc");
  }
  return ps;
}

/// Particle indices chosen by backward sampling: l_n ~ W_n, then
/// l_i ~ w_i^{[l]} p(x_{i+1}' | x_i^{[l]}).
inline std::vector<int> backward_sample_indices(const ParticleSystem& ps, const ModelSpec& spec,
                                                Rng& rng) {
  const int n = ps.length();
  const int L = ps.size();
  std::vector<int> idx(n, 0);
  if (L == 1) return idx;
  std::vector<double> w(L);
  for (int l = 0; l < L; ++l) w[l] = ps.log_w(n - 1, l);
  idx[n - 1] = sample_log_weights(w, rng, "backward_sample");
  for (int i = n - 2; i >= 0; --i) {
    Vector next = ps.particles[i + 1].row(idx[i + 1]).transpose();
    for (int l = 0; l < L; ++l) {
      w[l] = ps.log_w(i, l) + log_trans_density(spec, ps.particles[i].row(l).transpose(), next);
    }
    idx[i] = sample_log_weights(w, rng, "backward_sample");
  }
  return idx;
}

inline LatentSequence backward_sample(const ParticleSystem& ps, const ModelSpec& spec, Rng& rng) {
  auto idx = backward_sample_indices(ps, spec, rng);
  LatentSequence out(ps.length(), spec.dim());
  for (int i = 0; i < ps.length(); ++i) out.row(i) = ps.particles[i].row(idx[i]);
  return out;
}

/// Reconstructs the path of particle `l` at the final time through the
/// ancestor indices (used to check conditioned-path survival).
inline LatentSequence ancestral_path(const ParticleSystem& ps, int l) {
  const int n = ps.length();
  LatentSequence out(n, ps.particles[0].cols());
  for (int i = n - 1; i >= 0; --i) {
    out.row(i) = ps.particles[i].row(l);
    if (i > 0) l = ps.ancestors(i - 1, l);
  }
  return out;
}

inline LatentSequence pgbs_update(const LatentSequence& x, const ModelSpec& spec,
                                  const ObservationSequence& y, int L, Direction direction,
                                  Rng& rng) {
  if (L < 1) throw ConfigError("pgbs: L must be >= 1");
  if (L == 1) return x;
  switch (direction) {
    case Direction::Forward: return backward_sample(csmc(x, spec, y, L, rng), spec, rng);
    case Direction::Reversed: {
      if (!spec.reversible()) {
        throw ConfigError("reversed-sequence updates need a stationary, time-reversible latent process");
      }
      LatentSequence xr = reverse_rows(x);
      ObservationSequence yr = reverse_rows(y);
      return reverse_rows(backward_sample(csmc(xr, spec, yr, L, rng), spec, rng));
    }
    case Direction::Backward: throw ConfigError("pgbs supports forward and reversed directions");
  }
  return x;
}

}  // namespace seqpool
