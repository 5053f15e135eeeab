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

#include "seqpool/oracle.hpp"
#include "seqpool/pgbs.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace seqpool;
using namespace seqpool::testing;

TEST(Csmc, FlatObservationsGiveEqualWeights) {
  ModelSpec spec = flat_spec(2, 15, 0.8, 0.3);
  auto [x, y] = simulate(spec, 1);
  Rng rng = make_stream(1);
  ParticleSystem ps = csmc(x, spec, y, 7, rng);
  EXPECT_LT((ps.weights.array() - 1.0 / 7.0).abs().maxCoeff(), 1e-12);
}

TEST(Csmc, SingleParticleIsConditionedPath) {
  ModelSpec spec = loglink_spec(3, 20);
  auto [x, y] = simulate(spec, 2);
  Rng rng = make_stream(2);
  ParticleSystem ps = csmc(x, spec, y, 1, rng);
  EXPECT_TRUE((ancestral_path(ps, 0).array() == x.array()).all());
  EXPECT_LT((ps.weights.array() - 1.0).abs().maxCoeff(), 1e-15);
  EXPECT_TRUE((backward_sample(ps, spec, rng).array() == x.array()).all());
  EXPECT_TRUE((pgbs_update(x, spec, y, 1, Direction::Forward, rng).array() == x.array()).all());
}

TEST(Csmc, ConditionedPathSurvivesAndWeightsNormalize) {
  Rng rng = make_stream(3);
  for (int inst = 0; inst < 20; ++inst) {
    int P = 1 + uniform_index(4, rng), n = 2 + uniform_index(40, rng), L = 2 + uniform_index(30, rng);
    ModelSpec spec = inst % 2 ? loglink_spec(P, n) : abs_spec(P, n);
    auto [x, y] = simulate(spec, 10 + inst);
    ParticleSystem ps = csmc(x, spec, y, L, rng);
    EXPECT_TRUE((ancestral_path(ps, 0).array() == x.array()).all());
    for (int i = 0; i < n; ++i) EXPECT_NEAR(ps.weights.row(i).sum(), 1.0, 1e-12);
    for (int i = 0; i + 1 < n; ++i) EXPECT_EQ(ps.ancestors(i, 0), 0);
  }
}

TEST(Csmc, WeightIsObservationDensity) {
  // With the transition as importance density, p(y|x)p(x|x_prev)/q(x|x_prev) = p(y|x).
  Rng rng = make_stream(4);
  for (int inst = 0; inst < 1000; ++inst) {
    int P = 1 + uniform_index(5, rng);
    ModelSpec spec = loglink_spec(P, 3, 0.3 + 0.6 * uniform01(rng), P > 1 ? 0.4 : 0.0);
    Vector prev = standard_normal(P, rng), x = standard_normal(P, rng), y(P);
    for (int j = 0; j < P; ++j) y[j] = uniform_index(6, rng);
    double full = log_obs_density(spec, x, y) + log_trans_density(spec, prev, x) -
                  log_trans_density(spec, prev, x);
    EXPECT_NEAR(full, log_obs_density(spec, x, y), 1e-12 * std::max(1.0, std::abs(full)));
  }
  ModelSpec spec = loglink_spec(2, 6);
  auto [x, y] = simulate(spec, 5);
  ParticleSystem ps = csmc(x, spec, y, 9, rng);
  for (int i = 0; i < 6; ++i)
    for (int l = 0; l < 9; ++l)
      EXPECT_EQ(ps.log_w(i, l), log_obs_density(spec, ps.particles[i].row(l).transpose(), y.row(i).transpose()));
}

TEST(BackwardSample, SymmetricCaseIsUniform) {
  ModelSpec spec = gaussian_spec(1, 2, 0.0);
  ParticleSystem ps;
  ps.particles = {RowMatrix(2, 1), RowMatrix(2, 1)};
  ps.particles[0] << -0.3, 0.8;
  ps.particles[1] << 1.1, -0.6;
  ps.log_w = Matrix::Zero(2, 2);
  ps.weights = Matrix::Constant(2, 2, 0.5);
  ps.ancestors = Eigen::MatrixXi::Zero(1, 2);
  Rng rng = make_stream(6);
  const int N = 100000;
  int c0 = 0, c1 = 0;
  for (int k = 0; k < N; ++k) {
    auto idx = backward_sample_indices(ps, spec, rng);
    c0 += idx[0];
    c1 += idx[1];
  }
  double se = std::sqrt(0.25 / N);
  EXPECT_NEAR(c0 / double(N), 0.5, 3 * se);
  EXPECT_NEAR(c1 / double(N), 0.5, 3 * se);
}

TEST(BackwardSample, MatchesEnumeration) {
  // l_n ~ W_n, then l_i ~ w_i(l) p(x_{i+1}^{l_{i+1}} | x_i^l), each step normalized.
  ModelSpec spec = loglink_spec(1, 3);
  auto [x, y] = simulate(spec, 7);
  Rng rng = make_stream(8);
  ParticleSystem ps = csmc(x, spec, y, 3, rng);
  auto step = [&](int i, int l, int next) {
    double num = 0.0, den = 0.0;
    for (int k = 0; k < 3; ++k) {
      double v = std::exp(ps.log_w(i, k) + log_trans_density(spec, ps.particles[i].row(k).transpose(),
                                                              ps.particles[i + 1].row(next).transpose()));
      den += v;
      if (k == l) num = v;
    }
    return num / den;
  };
  std::map<std::vector<int>, double> exact;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      for (int c = 0; c < 3; ++c) exact[{a, b, c}] = ps.weights(2, c) * step(1, b, c) * step(0, a, b);
  const int N = 200000;
  std::map<std::vector<int>, int> seen;
  for (int k = 0; k < N; ++k) ++seen[backward_sample_indices(ps, spec, rng)];
  double total = 0.0;
  for (auto& [s, p] : exact) {
    total += p;
    EXPECT_NEAR(seen[s] / double(N), p, 4 * std::sqrt(p * (1 - p) / N) + 1e-4);
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Pgbs, DegenerateWeightsReportTime) {
  ModelSpec spec = abs_spec(1, 4);
  LatentSequence x = LatentSequence::Zero(4, 1);
  ObservationSequence y = ObservationSequence::Zero(4, 1);
  y(2, 0) = 3.0;  // x = 0 cannot produce a positive count
  Rng rng = make_stream(9);
  try {
    // particles other than the conditioned one are nonzero, so force degeneracy with L = 1
    ParticleSystem ps = csmc(x, spec, y, 1, rng);
    FAIL() << "expected a numerical error";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("time index 3"), std::string::npos) << e.what();
  }
}

TEST(Pgbs, DirectionRules) {
  ModelSpec spec = loglink_spec(2, 10);
  auto [x, y] = simulate(spec, 10);
  Rng rng = make_stream(10);
  EXPECT_THROW(pgbs_update(x, spec, y, 5, Direction::Backward, rng), ConfigError);
  EXPECT_NO_THROW(pgbs_update(x, spec, y, 5, Direction::Reversed, rng));
}

TEST(Pgbs, CostIsLinearInParticles) {
  ModelSpec spec = loglink_spec(5, 60);
  auto [x, y] = simulate(spec, 11);
  std::uint64_t c[2];
  for (int k = 0; k < 2; ++k) {
    Rng rng = make_stream(12);
    eval_counters().reset();
    pgbs_update(x, spec, y, 32 << k, Direction::Forward, rng);
    c[k] = eval_counters().total();
  }
  EXPECT_LE(static_cast<double>(c[1]), 2.2 * static_cast<double>(c[0]));
}

TEST(Pgbs, MatchesKalman) {
  ModelSpec spec = gaussian_spec(1, 10, 0.9);
  auto [x0, y] = simulate(spec, 77);
  SmootherResult kf = kalman_smoother(spec, y);
  Rng rng = make_stream(13);
  std::vector<std::vector<double>> chains(10);
  LatentSequence x = LatentSequence::Zero(10, 1);
  const int iters = 100000;
  for (int t = 0; t < iters; ++t) {
    x = pgbs_update(x, spec, y, 100, t % 2 ? Direction::Reversed : Direction::Forward, rng);
    if (t >= iters / 10)
      for (int i = 0; i < 10; ++i) chains[i].push_back(x(i, 0));
  }
  for (int i = 0; i < 10; ++i) {
    ChainSummary s = summarize({chains[i]});
    EXPECT_LT(std::abs(s.mean - kf.means(i, 0)), 3.0 * s.se) << "time " << i;
    EXPECT_NEAR(s.var, kf.covariances[i](0, 0), 0.1 * kf.covariances[i](0, 0)) << "time " << i;
  }
}
