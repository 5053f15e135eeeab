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

#include "seqpool/common.hpp"

#include <string>
#include <utility>
#include <variant>

namespace seqpool {

// ---------------------------------------------------------------------------
// Observation models
// ---------------------------------------------------------------------------

/// y_j ~ Poisson(exp(c_j + sigma_j x_j))
struct LogLinkPoisson {
  Vector c;
  Vector sigma;
};

/// y_j ~ Poisson(sigma_j |x_j|)
struct AbsPoisson {
  Vector sigma;
};

/// y_j ~ N(x_j, tau_j^2). Gives an exactly solvable posterior.
struct GaussianObs {
  Vector tau;
};

using ObservationModel = std::variant<LogLinkPoisson, AbsPoisson, GaussianObs>;

inline std::string variant_name(const ObservationModel& obs) {
  struct {
    std::string operator()(const LogLinkPoisson&) const { return "loglink_poisson"; }
    std::string operator()(const AbsPoisson&) const { return "abs_poisson"; }
    std::string operator()(const GaussianObs&) const { return "gaussian"; }
  } name;
  return std::visit(name, obs);
}

// ---------------------------------------------------------------------------
// Gaussian with a cached lower Cholesky factor
// ---------------------------------------------------------------------------

class GaussianFactor {
 public:
  GaussianFactor() = default;

  explicit GaussianFactor(const Matrix& cov, const char* what = "covariance") {
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success) {
      throw ParameterError(std::string(what) + " is not positive definite");
    }
    chol_ = llt.matrixL();
    double logdet = 2.0 * chol_.diagonal().array().log().sum();
    log_norm_ = -0.5 * (static_cast<double>(cov.rows()) * kLog2Pi + logdet);
  }

  /// Builds directly from a lower-triangular factor.
  static GaussianFactor from_lower(Matrix lower) {
    GaussianFactor g;
    g.chol_ = std::move(lower);
    double logdet = 2.0 * g.chol_.diagonal().array().abs().log().sum();
    g.log_norm_ = -0.5 * (static_cast<double>(g.chol_.rows()) * kLog2Pi + logdet);
    return g;
  }

  const Matrix& chol() const { return chol_; }
  Matrix covariance() const { return chol_ * chol_.transpose(); }

  /// log N(d; 0, C) for a residual d.
  double log_density_residual(const VecRef& d) const {
    Vector z = chol_.triangularView<Eigen::Lower>().solve(d);
    return log_norm_ - 0.5 * z.squaredNorm();
  }

 private:
  Matrix chol_;
  double log_norm_ = 0.0;
};

// ---------------------------------------------------------------------------
// Model specification
// ---------------------------------------------------------------------------

/// Equicorrelated innovation covariance: unit diagonal, rho off the diagonal.
inline Matrix innovation_covariance(Eigen::Index P, double rho) {
  Matrix s = Matrix::Constant(P, P, rho);
  s.diagonal().setOnes();
  return s;
}

/// Initial-state covariance of the VAR(1) latent process:
/// [j,j] = 1/(1-phi_j^2), [j,k] = rho / (sqrt(1-phi_j^2) sqrt(1-phi_k^2)).
/// This solves the stationarity equation S = Phi S Phi + Sigma whenever all
/// phi_j are equal (or rho = 0).
inline Matrix stationary_covariance(const Vector& phi, double rho) {
  const Eigen::Index P = phi.size();
  Vector s(P);
  for (Eigen::Index j = 0; j < P; ++j) {
    if (!(std::abs(phi[j]) < 1.0)) throw ParameterError("|phi_j| must be < 1");
    s[j] = std::sqrt(1.0 - phi[j] * phi[j]);
  }
  Matrix out(P, P);
  for (Eigen::Index j = 0; j < P; ++j) {
    for (Eigen::Index k = 0; k < P; ++k) {
      out(j, k) = (j == k) ? 1.0 / (s[j] * s[j]) : rho / (s[j] * s[k]);
    }
  }
  Eigen::LLT<Matrix> llt(out);
  if (llt.info() != Eigen::Success) {
    throw ParameterError("stationary covariance is not positive definite (rho out of range)");
  }
  return out;
}

class ModelSpec {
 public:
  ModelSpec(int P, int n, Vector phi, double rho, ObservationModel obs)
      : P_(P), n_(n), phi_(std::move(phi)), rho_(rho), obs_(std::move(obs)) {
    if (P_ < 1) throw ParameterError("P must be positive");
    if (n_ < 1) throw ParameterError("n must be positive");
    if (phi_.size() != P_) throw ParameterError("phi must have P entries");
    if (P_ > 1 && !(rho_ > -1.0 / (P_ - 1) && rho_ < 1.0)) {
      throw ParameterError("rho must lie in (-1/(P-1), 1)");
    }
    check_obs();
    sigma_ = innovation_covariance(P_, rho_);
    sigma_init_ = stationary_covariance(phi_, rho_);
    trans_ = GaussianFactor(sigma_, "Sigma");
    init_ = GaussianFactor(sigma_init_, "Sigma_init");
    invertible_phi_ = (phi_.array() != 0.0).all();
    if (invertible_phi_) {
      Matrix lower = phi_.cwiseInverse().asDiagonal() * trans_.chol();
      back_ = GaussianFactor::from_lower(lower);
    }
  }

  int dim() const { return P_; }
  int length() const { return n_; }
  const Vector& phi() const { return phi_; }
  double rho() const { return rho_; }
  const ObservationModel& obs() const { return obs_; }

  const Matrix& sigma() const { return sigma_; }
  const Matrix& sigma_init() const { return sigma_init_; }
  const GaussianFactor& transition() const { return trans_; }
  const GaussianFactor& initial() const { return init_; }

  /// Phi x
  Vector apply_phi(const VecRef& x) const { return phi_.cwiseProduct(x); }

  bool phi_invertible() const { return invertible_phi_; }

  /// Gaussian in x proportional to p(a | x) for fixed a: mean Phi^{-1} a,
  /// covariance Phi^{-1} Sigma Phi^{-1}. Only valid when phi_invertible().
  const GaussianFactor& backward_transition() const {
    if (!invertible_phi_) throw ConfigError("backward transition requires all phi_j != 0");
    return back_;
  }

  /// True when Sigma_init is the stationary covariance and the process is
  /// time reversible (Phi Sigma_init symmetric), which is what running the
  /// forward machinery on the reversed sequence relies on.
  bool reversible(double tol = 1e-12) const {
    Matrix phi_m = phi_.asDiagonal();
    Matrix lyap = phi_m * sigma_init_ * phi_m + sigma_ - sigma_init_;
    Matrix cross = phi_m * sigma_init_;
    double scale = sigma_init_.cwiseAbs().maxCoeff();
    return lyap.cwiseAbs().maxCoeff() <= tol * scale &&
           (cross - cross.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
  }

  /// Observation density depends on x only through |x|.
  bool sign_symmetric_obs() const { return std::holds_alternative<AbsPoisson>(obs_); }

  bool poisson_obs() const { return !std::holds_alternative<GaussianObs>(obs_); }

 private:
  void check_obs() const {
    auto sized = [&](const Vector& v, const char* name) {
      if (v.size() != P_) throw ParameterError(std::string(name) + " must have P entries");
      if (!v.allFinite()) throw ParameterError(std::string(name) + " must be finite");
    };
    if (auto* o = std::get_if<LogLinkPoisson>(&obs_)) {
      sized(o->c, "c");
      sized(o->sigma, "sigma");
    } else if (auto* o = std::get_if<AbsPoisson>(&obs_)) {
      sized(o->sigma, "sigma");
      if ((o->sigma.array() < 0.0).any()) throw ParameterError("sigma must be >= 0");
    } else if (auto* o = std::get_if<GaussianObs>(&obs_)) {
      sized(o->tau, "tau");
      if ((o->tau.array() <= 0.0).any()) throw ParameterError("tau must be > 0");
    }
  }

  int P_;
  int n_;
  Vector phi_;
  double rho_;
  ObservationModel obs_;
  Matrix sigma_;
  Matrix sigma_init_;
  GaussianFactor trans_;
  GaussianFactor init_;
  GaussianFactor back_;
  bool invertible_phi_ = false;
};

// ---------------------------------------------------------------------------
// Densities (log space)
// ---------------------------------------------------------------------------

/// log N(x; 0, Sigma_init)
inline double log_initial_density(const ModelSpec& spec, const VecRef& x) {
  ++eval_counters().trans;
  return spec.initial().log_density_residual(x);
}

/// log N(x; Phi x_prev, Sigma)
inline double log_trans_density(const ModelSpec& spec, const VecRef& x_prev, const VecRef& x) {
  ++eval_counters().trans;
  Vector d = x - spec.phi().cwiseProduct(x_prev);
  return spec.transition().log_density_residual(d);
}

namespace detail {

/// Poisson log pmf with the convention pmf(0; 0) = 1.
inline double poisson_log_pmf(double y, double rate) {
  if (rate == 0.0) return y == 0.0 ? 0.0 : kNegInf;
  return y * std::log(rate) - rate - std::lgamma(y + 1.0);
}

}  // namespace detail

inline double log_obs_density(const ModelSpec& spec, const VecRef& x, const VecRef& y) {
  ++eval_counters().obs;
  const auto& obs = spec.obs();
  double total = 0.0;
  if (auto* o = std::get_if<LogLinkPoisson>(&obs)) {
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      double eta = o->c[j] + o->sigma[j] * x[j];
      total += y[j] * eta - std::exp(eta) - std::lgamma(y[j] + 1.0);
    }
  } else if (auto* o = std::get_if<AbsPoisson>(&obs)) {
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      total += detail::poisson_log_pmf(y[j], o->sigma[j] * std::abs(x[j]));
    }
  } else {
    const auto& tau = std::get<GaussianObs>(obs).tau;
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      double z = (y[j] - x[j]) / tau[j];
      total += -0.5 * (kLog2Pi + z * z) - std::log(tau[j]);
    }
  }
  return total;
}

/// log p(x, y) for a whole sequence.
inline double log_joint_density(const ModelSpec& spec, const LatentSequence& x,
                                const ObservationSequence& y) {
  double lp = log_initial_density(spec, x.row(0).transpose());
  for (Eigen::Index i = 1; i < x.rows(); ++i) {
    lp += log_trans_density(spec, x.row(i - 1).transpose(), x.row(i).transpose());
  }
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    lp += log_obs_density(spec, x.row(i).transpose(), y.row(i).transpose());
  }
  return lp;
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

inline Vector draw_observation(const ModelSpec& spec, const VecRef& x, Rng& rng) {
  const auto P = x.size();
  Vector y(P);
  const auto& obs = spec.obs();
  for (Eigen::Index j = 0; j < P; ++j) {
    if (auto* o = std::get_if<LogLinkPoisson>(&obs)) {
      y[j] = static_cast<double>(
          std::poisson_distribution<long long>(std::exp(o->c[j] + o->sigma[j] * x[j]))(rng));
    } else if (auto* o = std::get_if<AbsPoisson>(&obs)) {
      double rate = o->sigma[j] * std::abs(x[j]);
      y[j] = rate > 0.0 ? static_cast<double>(std::poisson_distribution<long long>(rate)(rng)) : 0.0;
    } else {
      y[j] = x[j] + std::get<GaussianObs>(obs).tau[j] * std::normal_distribution<double>()(rng);
    }
  }
  return y;
}

/// Draws x_1 ~ N(0, Sigma_init), x_i | x_{i-1} ~ N(Phi x_{i-1}, Sigma) and y | x.
inline std::pair<LatentSequence, ObservationSequence> simulate(const ModelSpec& spec, Rng& rng) {
  const int n = spec.length();
  const int P = spec.dim();
  LatentSequence x(n, P);
  ObservationSequence y(n, P);
  x.row(0) = (spec.initial().chol() * standard_normal(P, rng)).transpose();
  for (int i = 1; i < n; ++i) {
    x.row(i) = (spec.apply_phi(x.row(i - 1).transpose()) +
                spec.transition().chol() * standard_normal(P, rng))
                   .transpose();
  }
  for (int i = 0; i < n; ++i) {
    y.row(i) = draw_observation(spec, x.row(i).transpose(), rng).transpose();
  }
  return {std::move(x), std::move(y)};
}

inline std::pair<LatentSequence, ObservationSequence> simulate(const ModelSpec& spec,
                                                               std::uint64_t seed) {
  Rng rng = make_stream(seed, 0);
  return simulate(spec, rng);
}

}  // namespace seqpool
