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

#include "seqpool/diagnostics.hpp"
#include "seqpool/model.hpp"

#include <cmath>
#include <vector>

namespace seqpool::testing {

inline ModelSpec gaussian_spec(int P, int n, double phi, double rho = 0.0, double tau = 1.0) {
  return ModelSpec(P, n, Vector::Constant(P, phi), rho, GaussianObs{Vector::Constant(P, tau)});
}

inline ModelSpec loglink_spec(int P, int n, double phi = 0.9, double rho = 0.7, double c = -0.4,
                              double sigma = 0.6) {
  return ModelSpec(P, n, Vector::Constant(P, phi), rho,
                   LogLinkPoisson{Vector::Constant(P, c), Vector::Constant(P, sigma)});
}

inline ModelSpec abs_spec(int P, int n, double phi = 0.9, double rho = 0.7, double sigma = 0.8) {
  return ModelSpec(P, n, Vector::Constant(P, phi), rho, AbsPoisson{Vector::Constant(P, sigma)});
}

/// Observation model with no information: Gaussian with an enormous tau.
inline ModelSpec flat_spec(int P, int n, double phi, double rho = 0.0) {
  return gaussian_spec(P, n, phi, rho, 1e150);
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double a : v) s += a;
  return s / static_cast<double>(v.size());
}

inline double var_of(const std::vector<double>& v) {
  double m = mean_of(v), s = 0.0;
  for (double a : v) s += (a - m) * (a - m);
  return s / static_cast<double>(v.size() - 1);
}

/// Mean, variance and autocorrelation-aware standard error of chain output.
struct ChainSummary {
  double mean = 0.0;
  double var = 0.0;
  double se = 0.0;
  double tau = 1.0;
};

inline ChainSummary summarize(const std::vector<std::vector<double>>& runs) {
  ActOptions opt;
  opt.burn_in_frac = 0.0;
  ActEstimate est = act(runs, opt);
  std::size_t count = 0;
  double s2 = 0.0;
  for (const auto& r : runs) {
    for (double v : r) s2 += (v - est.mean) * (v - est.mean);
    count += r.size();
  }
  ChainSummary out;
  out.mean = est.mean;
  out.var = s2 / static_cast<double>(count - 1);
  out.tau = std::max(est.tau, 1.0);
  out.se = std::sqrt(out.var * out.tau / static_cast<double>(count));
  return out;
}

}  // namespace seqpool::testing
