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
/// Autocorrelation-time estimation for MCMC output.
///
/// gamma_k = (1/n) sum_{l=1}^{n-k} (x_l - xbar)(x_{l+k} - xbar), with xbar the
/// mean pooled over all runs; per-run autocovariances are averaged, then
/// tau = 1 + 2 sum_{k=1}^{K} gamma_k / gamma_0.

#include "seqpool/common.hpp"

#include <json.hpp>
#include <unsupported/Eigen/FFT>

#include <complex>
#include <numeric>
#include <string>
#include <vector>

namespace seqpool {

/// Biased (1/n) autocovariances at lags 0..max_lag about a supplied mean,
/// computed by FFT with zero padding to a power of two >= 2n.
inline std::vector<double> autocovariance_fft(std::span<const double> series, double mean,
                                              std::size_t max_lag) {
  const std::size_t n = series.size();
  if (n == 0) throw std::invalid_argument("autocovariance_fft: empty series");
  if (max_lag >= n) throw std::invalid_argument("autocovariance_fft: max_lag must be < length");
  std::size_t m = 1;
  while (m < 2 * n) m <<= 1;
  std::vector<double> padded(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) padded[i] = series[i] - mean;

  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> freq;
  fft.fwd(freq, padded);
  for (auto& c : freq) c = std::complex<double>(std::norm(c), 0.0);
  std::vector<double> acov;
  fft.inv(acov, freq);

  std::vector<double> out(max_lag + 1);
  for (std::size_t k = 0; k <= max_lag; ++k) out[k] = acov[k] / static_cast<double>(n);
  return out;
}

enum class CutoffRule {
  FirstBelow,  // smallest K with rho_K < threshold, capped at length/3
  Geyer,       // initial positive sequence
};

struct ActOptions {
  double burn_in_frac = 0.10;
  CutoffRule cutoff = CutoffRule::FirstBelow;
  double threshold = 0.01;
  std::size_t thin = 1;
};

struct ActEstimate {
  double tau = 0.0;
  std::size_t cutoff_lag = 0;
  double gamma0 = 0.0;
  double mean = 0.0;
  std::size_t samples_per_run = 0;
};

/// Keeps every `thin`-th element, starting with the first.
inline std::vector<double> thin_series(std::span<const double> s, std::size_t thin) {
  if (thin <= 1) return {s.begin(), s.end()};
  std::vector<double> out;
  out.reserve(s.size() / thin + 1);
  for (std::size_t i = 0; i < s.size(); i += thin) out.push_back(s[i]);
  return out;
}

/// Pooled autocorrelation time over one or more runs of the same variable.
inline ActEstimate act(const std::vector<std::vector<double>>& runs, const ActOptions& opt = {}) {
  if (runs.empty()) throw std::invalid_argument("act: no runs");
  std::vector<std::vector<double>> kept;
  kept.reserve(runs.size());
  std::size_t min_len = std::numeric_limits<std::size_t>::max();
  for (const auto& r : runs) {
    std::vector<double> t = thin_series(r, opt.thin);
    std::size_t drop = static_cast<std::size_t>(opt.burn_in_frac * static_cast<double>(t.size()));
    kept.emplace_back(t.begin() + static_cast<std::ptrdiff_t>(drop), t.end());
    min_len = std::min(min_len, kept.back().size());
  }
  if (min_len < 2) throw std::invalid_argument("act: runs too short after burn-in");

  double total = 0.0;
  std::size_t count = 0;
  for (const auto& r : kept) {
    total += std::accumulate(r.begin(), r.end(), 0.0);
    count += r.size();
  }
  const double mean = total / static_cast<double>(count);

  const std::size_t max_lag = std::max<std::size_t>(1, min_len / 3);
  std::vector<double> gamma(max_lag + 1, 0.0);
  for (const auto& r : kept) {
    auto g = autocovariance_fft(r, mean, max_lag);
    for (std::size_t k = 0; k <= max_lag; ++k) gamma[k] += g[k] / static_cast<double>(kept.size());
  }
  if (!(gamma[0] > 0.0)) throw NumericalError("act: zero variance, autocorrelation time undefined");

  ActEstimate est;
  est.gamma0 = gamma[0];
  est.mean = mean;
  est.samples_per_run = min_len;
  double sum = 0.0;
  if (opt.cutoff == CutoffRule::FirstBelow) {
    std::size_t K = max_lag;
    for (std::size_t k = 1; k <= max_lag; ++k) {
      double rho = gamma[k] / gamma[0];
      sum += rho;
      if (rho < opt.threshold) {
        K = k;
        break;
      }
    }
    est.cutoff_lag = K;
    est.tau = 1.0 + 2.0 * sum;
  } else {
    // Geyer: sum adjacent pairs while they stay positive
    double pairs = 0.0;
    std::size_t k = 0;
    for (; k + 1 <= max_lag; k += 2) {
      double pair = (gamma[k] + gamma[k + 1]) / gamma[0];
      if (pair <= 0.0) break;
      pairs += pair;
    }
    est.cutoff_lag = k;
    est.tau = std::max(-1.0 + 2.0 * pairs, 0.0);
  }
  return est;
}

/// Per-variable autocorrelation times plus the run bookkeeping needed to
/// compare samplers. Serialized as JSON:
///
///     { "variables": ["x[1][1]", ...], "act": [...], "act_time_adjusted": [...],
///       "cutoff_lag": [...], "mean": [...], "act_matrix": [[...P...] x n] (null
///       where not selected), "secs_per_sample": s, "thinning": t,
///       "burn_in_frac": f, "cutoff_rule": "first_below" | "geyer",
///       "threshold": 0.01, "runs": [...], "acceptance": [...], "counters": {...} }
struct DiagnosticsReport {
  std::vector<std::string> variables;
  std::vector<int> dims;   // 0-based
  std::vector<int> times;  // 0-based
  std::vector<double> act;
  std::vector<double> act_time_adjusted;
  std::vector<std::size_t> cutoff_lag;
  std::vector<double> mean;
  int n = 0;
  int P = 0;
  double secs_per_sample = 0.0;
  std::size_t thinning = 1;
  ActOptions options;
  std::vector<std::string> runs;
  nlohmann::json acceptance = nlohmann::json::array();
  nlohmann::json counters = nlohmann::json::object();

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["variables"] = variables;
    j["act"] = act;
    j["act_time_adjusted"] = act_time_adjusted;
    j["cutoff_lag"] = cutoff_lag;
    j["mean"] = mean;
    nlohmann::json grid = nlohmann::json::array();
    for (int i = 0; i < n; ++i) grid.push_back(std::vector<nlohmann::json>(P, nullptr));
    for (std::size_t k = 0; k < act.size(); ++k) grid[times[k]][dims[k]] = act[k];
    j["act_matrix"] = grid;
    j["n"] = n;
    j["P"] = P;
    j["secs_per_sample"] = secs_per_sample;
    j["thinning"] = thinning;
    j["burn_in_frac"] = options.burn_in_frac;
    j["cutoff_rule"] = options.cutoff == CutoffRule::FirstBelow ? "first_below" : "geyer";
    j["threshold"] = options.threshold;
    j["runs"] = runs;
    j["acceptance"] = acceptance;
    j["counters"] = counters;
    return j;
  }
};

}  // namespace seqpool
