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

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace seqpool {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// n x P array, row i holds the latent state at time i.
using LatentSequence = RowMatrix;
/// n x P array of observations; integer-valued for the Poisson variants.
using ObservationSequence = RowMatrix;

using VecRef = Eigen::Ref<const Vector>;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// Invalid model parameters (non-stationary phi, indefinite covariance, ...).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid sampler or experiment configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Unrecoverable numerical failure (all weights zero, non-PSD covariance).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A broken internal invariant; indicates a construction bug.
class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// ---------------------------------------------------------------------------
// Random streams
//
// One stream per chain. The stream for (master_seed, chain) is a 64-bit
// Mersenne twister seeded through std::seed_seq with the words
// {lo(master), hi(master), lo(chain), hi(chain), 0x5eed9001}.
// ---------------------------------------------------------------------------

using Rng = std::mt19937_64;

inline Rng make_stream(std::uint64_t master_seed, std::uint64_t chain = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(master_seed & 0xffffffffu),
                    static_cast<std::uint32_t>(master_seed >> 32),
                    static_cast<std::uint32_t>(chain & 0xffffffffu),
                    static_cast<std::uint32_t>(chain >> 32),
                    0x5eed9001u};
  return Rng(seq);
}

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline Vector standard_normal(Eigen::Index dim, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Vector z(dim);
  for (Eigen::Index k = 0; k < dim; ++k) z[k] = nd(rng);
  return z;
}

inline int uniform_index(int size, Rng& rng) {
  return std::uniform_int_distribution<int>(0, size - 1)(rng);
}

/// Metropolis accept test in log space. Never draws when log_ratio >= 0.
inline bool accept_log(double log_ratio, Rng& rng) {
  if (log_ratio >= 0.0) return true;
  if (std::isnan(log_ratio)) return false;
  return std::log(uniform01(rng)) < log_ratio;
}

// ---------------------------------------------------------------------------
// Density-evaluation counters (per thread)
// ---------------------------------------------------------------------------

struct EvalCounters {
  std::uint64_t trans = 0;  // initial + transition densities
  std::uint64_t obs = 0;    // observation densities

  std::uint64_t total() const { return trans + obs; }
  void reset() { trans = obs = 0; }
};

inline EvalCounters& eval_counters() {
  thread_local EvalCounters counters;
  return counters;
}

// ---------------------------------------------------------------------------
// Log-space helpers
// ---------------------------------------------------------------------------

inline double log_sum_exp(std::span<const double> v) {
  double m = kNegInf;
  for (double a : v) m = std::max(m, a);
  if (m == kNegInf) return kNegInf;
  if (m == std::numeric_limits<double>::infinity()) return m;
  double s = 0.0;
  for (double a : v) s += std::exp(a - m);
  return m + std::log(s);
}

/// Normalizes log weights in place to probabilities. Throws NumericalError
/// when every weight is -inf (or NaN).
inline void normalize_log_weights(std::span<const double> logw, std::span<double> out,
                                  const char* where) {
  double m = kNegInf;
  for (double a : logw) {
    if (!std::isnan(a)) m = std::max(m, a);
  }
  if (m == kNegInf || !std::isfinite(m)) {
    std::string msg = std::string(where) + ": degenerate weights (";
    for (std::size_t k = 0; k < std::min<std::size_t>(logw.size(), 8); ++k) {
      msg += (k ? ", " : "") + std::to_string(logw[k]);
    }
    if (logw.size() > 8) msg += ", ...";
    throw NumericalError(msg + ")");
  }
  double s = 0.0;
  for (std::size_t k = 0; k < logw.size(); ++k) {
    out[k] = std::isnan(logw[k]) ? 0.0 : std::exp(logw[k] - m);
    s += out[k];
  }
  for (double& w : out) w /= s;
}

/// Draws an index with probability proportional to exp(logw[k]).
inline int sample_log_weights(std::span<const double> logw, Rng& rng, const char* where) {
  thread_local std::vector<double> probs;
  probs.resize(logw.size());
  normalize_log_weights(logw, probs, where);
  double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    acc += probs[k];
    if (u < acc) return static_cast<int>(k);
  }
  // u landed in the rounding gap at the top; return the last positive entry
  for (std::size_t k = probs.size(); k-- > 0;) {
    if (probs[k] > 0.0) return static_cast<int>(k);
  }
  return static_cast<int>(probs.size()) - 1;
}

/// Returns a copy with rows in reverse time order.
inline RowMatrix reverse_rows(const RowMatrix& m) { return m.colwise().reverse(); }

}  // namespace seqpool
