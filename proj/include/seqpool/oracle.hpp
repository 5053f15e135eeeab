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
/// Exact posterior references: Kalman filter / RTS smoother / FFBS draws for
/// the Gaussian observation model, and a grid-discretized HMM for P = 1.

#include "seqpool/common.hpp"
#include "seqpool/model.hpp"

#include <vector>

namespace seqpool {

struct SmootherResult {
  RowMatrix means;                  // n x P
  std::vector<Matrix> covariances;  // n of P x P
  double loglik = 0.0;              // log p(y)

  // filtering quantities, kept for FFBS
  std::vector<Vector> filt_means;
  std::vector<Matrix> filt_covs;
};

namespace detail {

inline Matrix symmetrize_checked(const Matrix& m, const char* what) {
  Matrix s = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(s, Eigen::EigenvaluesOnly);
  double floor = -1e-10 * std::max(1.0, s.cwiseAbs().maxCoeff());
  if (es.eigenvalues().minCoeff() < floor) {
    throw NumericalError(std::string(what) + ": covariance lost positive semi-definiteness");
  }
  return s;
}

}  // namespace detail

/// Kalman filter plus Rauch-Tung-Striebel smoother for the GaussianObs model.
inline SmootherResult kalman_smoother(const ModelSpec& spec, const ObservationSequence& y) {
  const auto* gobs = std::get_if<GaussianObs>(&spec.obs());
  if (!gobs) throw ConfigError("kalman_smoother needs the Gaussian observation model");
  const int n = static_cast<int>(y.rows());
  const int P = spec.dim();
  const Matrix phi = spec.phi().asDiagonal();
  const Matrix R = gobs->tau.array().square().matrix().asDiagonal();
  const Matrix I = Matrix::Identity(P, P);

  SmootherResult out;
  out.filt_means.resize(n);
  out.filt_covs.resize(n);
  std::vector<Vector> pred_means(n);
  std::vector<Matrix> pred_covs(n);

  Vector m = Vector::Zero(P);
  Matrix C = spec.sigma_init();
  for (int i = 0; i < n; ++i) {
    if (i > 0) {
      m = phi * out.filt_means[i - 1];
      C = detail::symmetrize_checked(phi * out.filt_covs[i - 1] * phi + spec.sigma(), "kalman predict");
    }
    pred_means[i] = m;
    pred_covs[i] = C;
    Matrix S = C + R;
    Eigen::LLT<Matrix> llt(S);
    if (llt.info() != Eigen::Success) throw NumericalError("kalman: innovation covariance not PD");
    Vector resid = y.row(i).transpose() - m;
    Matrix K = llt.solve(C).transpose();  // C S^{-1}, both symmetric
    Matrix Ls = llt.matrixL();
    Vector z = Ls.triangularView<Eigen::Lower>().solve(resid);
    out.loglik += -0.5 * (P * kLog2Pi + 2.0 * Ls.diagonal().array().log().sum() + z.squaredNorm());
    out.filt_means[i] = m + K * resid;
    // Joseph form keeps the update symmetric
    Matrix IK = I - K;
    out.filt_covs[i] = detail::symmetrize_checked(IK * C * IK.transpose() + K * R * K.transpose(),
                                                  "kalman update");
  }

  out.means.resize(n, P);
  out.covariances.resize(n);
  out.means.row(n - 1) = out.filt_means[n - 1].transpose();
  out.covariances[n - 1] = out.filt_covs[n - 1];
  for (int i = n - 2; i >= 0; --i) {
    const Matrix& Cf = out.filt_covs[i];
    Matrix J = pred_covs[i + 1].llt().solve(phi * Cf).transpose();  // Cf Phi Cpred^{-1}
    Vector ms = out.filt_means[i] + J * (out.means.row(i + 1).transpose() - pred_means[i + 1]);
    Matrix Cs = Cf + J * (out.covariances[i + 1] - pred_covs[i + 1]) * J.transpose();
    out.means.row(i) = ms.transpose();
    out.covariances[i] = detail::symmetrize_checked(Cs, "rts smoother");
  }
  return out;
}

/// One exact posterior draw by forward filtering, backward sampling.
inline LatentSequence ffbs_draw(const ModelSpec& spec, const SmootherResult& kf, Rng& rng) {
  const int n = static_cast<int>(kf.filt_means.size());
  const int P = spec.dim();
  const Matrix phi = spec.phi().asDiagonal();
  LatentSequence x(n, P);
  auto draw = [&](const Vector& mean, const Matrix& cov) {
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success) throw NumericalError("ffbs: conditional covariance not PD");
    return Vector(mean + llt.matrixL() * standard_normal(P, rng));
  };
  x.row(n - 1) = draw(kf.filt_means[n - 1], kf.filt_covs[n - 1]).transpose();
  for (int i = n - 2; i >= 0; --i) {
    const Matrix& Cf = kf.filt_covs[i];
    Matrix pred = phi * Cf * phi + spec.sigma();
    Matrix J = pred.llt().solve(phi * Cf).transpose();
    Vector mean = kf.filt_means[i] + J * (x.row(i + 1).transpose() - phi * kf.filt_means[i]);
    Matrix cov = detail::symmetrize_checked(Cf - J * phi * Cf, "ffbs");
    x.row(i) = draw(mean, cov).transpose();
  }
  return x;
}

// ---------------------------------------------------------------------------
// Grid HMM (P = 1)
// ---------------------------------------------------------------------------

struct GridPosterior {
  Vector grid;            // M points
  RowMatrix pmf;          // n x M marginal probabilities
  Vector means;           // n
  Vector variances;       // n
  double boundary_mass = 0.0;  // largest posterior mass on the two end points
  bool narrow = false;         // boundary_mass > 1e-6
};

/// Exact forward-backward on a uniform grid over [-half_width, half_width];
/// by default half_width = 6 stationary standard deviations.
inline GridPosterior grid_hmm_posterior(const ModelSpec& spec, const ObservationSequence& y,
                                        int M = 2000, double half_width = 0.0) {
  if (spec.dim() != 1) throw ConfigError("grid_hmm_posterior needs P = 1");
  if (M < 3) throw ConfigError("grid needs at least 3 points");
  const int n = static_cast<int>(y.rows());
  if (half_width <= 0.0) half_width = 6.0 * std::sqrt(spec.sigma_init()(0, 0));

  GridPosterior out;
  out.grid = Vector::LinSpaced(M, -half_width, half_width);
  const Vector& g = out.grid;

  // row-normalized transition matrix and initial distribution
  Matrix T(M, M);
  const double phi = spec.phi()[0];
  const double s2 = spec.sigma()(0, 0);
  for (int a = 0; a < M; ++a) {
    double mu = phi * g[a];
    for (int b = 0; b < M; ++b) T(a, b) = -0.5 * (g[b] - mu) * (g[b] - mu) / s2;
    double mx = T.row(a).maxCoeff();
    T.row(a) = (T.row(a).array() - mx).exp();
    T.row(a) /= T.row(a).sum();
  }
  Vector init(M);
  const double v0 = spec.sigma_init()(0, 0);
  for (int b = 0; b < M; ++b) init[b] = -0.5 * g[b] * g[b] / v0;
  init = (init.array() - init.maxCoeff()).exp();
  init /= init.sum();

  Matrix lik(n, M);
  Vector xb(1);
  for (int i = 0; i < n; ++i) {
    Vector yi = y.row(i).transpose();
    Vector row(M);
    for (int b = 0; b < M; ++b) {
      xb[0] = g[b];
      row[b] = log_obs_density(spec, xb, yi);
    }
    double mx = row.maxCoeff();
    if (!std::isfinite(mx)) throw NumericalError("grid posterior: zero likelihood at time " + std::to_string(i + 1));
    lik.row(i) = (row.array() - mx).exp().transpose();
  }

  Matrix fwd(n, M);
  Vector f = init.cwiseProduct(lik.row(0).transpose());
  fwd.row(0) = (f / f.sum()).transpose();
  for (int i = 1; i < n; ++i) {
    f = (T.transpose() * fwd.row(i - 1).transpose()).cwiseProduct(lik.row(i).transpose());
    fwd.row(i) = (f / f.sum()).transpose();
  }
  Matrix bwd(n, M);
  bwd.row(n - 1).setOnes();
  for (int i = n - 2; i >= 0; --i) {
    Vector b = T * lik.row(i + 1).transpose().cwiseProduct(bwd.row(i + 1).transpose());
    bwd.row(i) = (b / b.maxCoeff()).transpose();
  }

  out.pmf.resize(n, M);
  out.means.resize(n);
  out.variances.resize(n);
  for (int i = 0; i < n; ++i) {
    Vector p = fwd.row(i).transpose().cwiseProduct(bwd.row(i).transpose());
    p /= p.sum();
    out.pmf.row(i) = p.transpose();
    double mean = p.dot(g);
    out.means[i] = mean;
    out.variances[i] = p.dot((g.array() - mean).square().matrix());
    out.boundary_mass = std::max({out.boundary_mass, p[0], p[M - 1]});
  }
  out.narrow = out.boundary_mass > 1e-6;
  return out;
}

/// Marginals of the discretized prior chain on the same grid (for checks).
inline RowMatrix grid_prior_marginals(const ModelSpec& spec, int n, int M = 2000,
                                      double half_width = 0.0) {
  ObservationSequence flat = ObservationSequence::Zero(n, 1);
  ModelSpec prior(1, n, spec.phi(), spec.rho(), GaussianObs{Vector::Constant(1, 1e300)});
  return grid_hmm_posterior(prior, flat, M, half_width).pmf;
}

}  // namespace seqpool
