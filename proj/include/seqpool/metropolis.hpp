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
/// Single-state Metropolis baseline. Each x_i is updated with an
/// autoregressive proposal around its Gaussian full conditional given the
/// neighbours, accepted on the observation density ratio.

#include "seqpool/common.hpp"
#include "seqpool/ehmm.hpp"
#include "seqpool/model.hpp"

#include <utility>
#include <vector>

namespace seqpool {

/// Gaussian full conditionals of x_i given its neighbours:
///   x_1 | x_2           ~ N(A_first x_2, cov_first)
///   x_i | x_{i-1}, x_{i+1} ~ N(A_prev x_{i-1} + A_next x_{i+1}, cov_mid)
///   x_n | x_{n-1}       ~ N(Phi x_{n-1}, Sigma)
/// Obtained from the precision form, which needs no inverse of Phi. When Phi
/// commutes with Sigma, A_prev = A_next = [Phi^2 + I]^{-1} Phi.
struct ConditionalMoments {
  Matrix A_first;
  Matrix cov_first;
  Matrix chol_first;
  Matrix A_prev;
  Matrix A_next;
  Matrix cov_mid;
  Matrix chol_mid;
  Matrix A_last;
  Matrix cov_last;
  Matrix chol_last;
};

inline ConditionalMoments conditional_moments(const ModelSpec& spec) {
  const Matrix phi = spec.phi().asDiagonal();
  const Matrix sigma_inv = spec.sigma().llt().solve(Matrix::Identity(spec.dim(), spec.dim()));
  const Matrix init_inv = spec.sigma_init().llt().solve(Matrix::Identity(spec.dim(), spec.dim()));
  const Matrix next_prec = phi * sigma_inv * phi;  // precision contributed by p(x_{i+1} | x_i)

  auto chol_of = [](const Matrix& cov, const char* what) {
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success) {
      throw NumericalError(std::string("conditional covariance ") + what + " is not positive definite");
    }
    return Matrix(llt.matrixL());
  };

  ConditionalMoments cm;
  Matrix prec_first = init_inv + next_prec;
  cm.cov_first = prec_first.llt().solve(Matrix::Identity(spec.dim(), spec.dim()));
  cm.A_first = cm.cov_first * phi * sigma_inv;
  cm.chol_first = chol_of(cm.cov_first, "Sigma_1");

  Matrix prec_mid = sigma_inv + next_prec;
  cm.cov_mid = prec_mid.llt().solve(Matrix::Identity(spec.dim(), spec.dim()));
  cm.A_prev = cm.cov_mid * sigma_inv * phi;
  cm.A_next = cm.cov_mid * phi * sigma_inv;
  cm.chol_mid = chol_of(cm.cov_mid, "Sigma_i");

  cm.A_last = phi;
  cm.cov_last = spec.sigma();
  cm.chol_last = spec.transition().chol();
  return cm;
}

struct MetropolisStats {
  std::vector<std::uint64_t> attempts;  // per time index
  std::vector<std::uint64_t> accepts;

  void resize(int n) {
    attempts.resize(n, 0);
    accepts.resize(n, 0);
  }
  double rate(int i) const {
    return attempts[i] ? static_cast<double>(accepts[i]) / attempts[i] : 0.0;
  }
  double mean_rate() const {
    std::uint64_t a = 0, c = 0;
    for (std::size_t i = 0; i < attempts.size(); ++i) {
      a += attempts[i];
      c += accepts[i];
    }
    return a ? static_cast<double>(c) / a : 0.0;
  }
};

/// One pass i = 1..n, updating all P coordinates of x_i at once.
inline LatentSequence metropolis_sweep(const LatentSequence& x, const ModelSpec& spec,
                                       const ObservationSequence& y, const ConditionalMoments& cm,
                                       double eps, Rng& rng, MetropolisStats* stats = nullptr) {
  const int n = static_cast<int>(x.rows());
  if (stats) stats->resize(n);
  LatentSequence out = x;
  for (int i = 0; i < n; ++i) {
    Vector mean;
    const Matrix* chol;
    if (n == 1) {
      mean = Vector::Zero(spec.dim());
      chol = &spec.initial().chol();
    } else if (i == 0) {
      mean = cm.A_first * out.row(1).transpose();
      chol = &cm.chol_first;
    } else if (i == n - 1) {
      mean = cm.A_last * out.row(i - 1).transpose();
      chol = &cm.chol_last;
    } else {
      mean = cm.A_prev * out.row(i - 1).transpose() + cm.A_next * out.row(i + 1).transpose();
      chol = &cm.chol_mid;
    }
    Vector yi = y.row(i).transpose();
    auto loglik = [&](const VecRef& v) { return log_obs_density(spec, v, yi); };
    ArStep r = ar_pool_step(mean, *chol, loglik, out.row(i).transpose(), eps, rng);
    if (stats) {
      ++stats->attempts[i];
      stats->accepts[i] += r.accepted ? 1 : 0;
    }
    out.row(i) = r.x.transpose();
  }
  return out;
}

/// Repeated sweeps alternating between two proposal scales, one per sweep.
class MetropolisSampler {
 public:
  MetropolisSampler(const ModelSpec& spec, double eps_small, double eps_large)
      : spec_(&spec), cm_(conditional_moments(spec)), eps_{eps_small, eps_large} {
    for (double e : eps_) {
      if (!(e >= -1.0 && e <= 1.0)) throw ConfigError("metropolis eps must lie in [-1, 1]");
    }
  }

  LatentSequence sweep(const LatentSequence& x, const ObservationSequence& y, Rng& rng) {
    double eps = eps_[parity_];
    parity_ ^= 1;
    return metropolis_sweep(x, *spec_, y, cm_, eps, rng, &stats_);
  }

  const ConditionalMoments& moments() const { return cm_; }
  const MetropolisStats& stats() const { return stats_; }

 private:
  const ModelSpec* spec_;
  ConditionalMoments cm_;
  double eps_[2];
  int parity_ = 0;
  MetropolisStats stats_;
};

}  // namespace seqpool
