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
/// Embedded HMM updates with sequential pool-state selection.
///
/// Pools are built one time step at a time. In the forward scheme the pool at
/// time i is sampled from lambda_i(x, l) ~ p(y_i|x) p(x | x_{i-1}^{[l]}), whose
/// x-marginal makes every forward probability alpha_i constant, so a new
/// sequence is drawn with a backward pass that needs no alpha at all. The
/// backward scheme mirrors this with gamma_i and a forward pass. Each pool is
/// produced by a Markov chain started at the current state and run in both
/// directions from a uniformly chosen slot; one chain step is an
/// autoregressive update followed by a shift update (plus flip updates on
/// a fixed schedule when mirroring is enabled). Total cost per update is
/// linear in the pool size L.
///
/// All pool indices and link indices are 0-based.

#include "seqpool/common.hpp"
#include "seqpool/model.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace seqpool {

enum class Direction { Forward, Reversed, Backward };

inline std::string to_string(Direction d) {
  switch (d) {
    case Direction::Forward: return "forward";
    case Direction::Reversed: return "reversed";
    case Direction::Backward: return "backward";
  }
  return "?";
}

inline Direction parse_direction(const std::string& s) {
  if (s == "forward") return Direction::Forward;
  if (s == "reversed") return Direction::Reversed;
  if (s == "backward") return Direction::Backward;
  throw ConfigError("unknown direction '" + s + "'");
}

/// Markov kernel used to fill the pools.
enum class PoolKernel {
  Local,         // autoregressive + shift (+ flip)
  Independence,  // independence Metropolis from the transition density
};

struct EhmmConfig {
  int L = 10;
  /// eps for each autoregressive pool step is drawn from Uniform(eps_lo, eps_hi)
  double eps_lo = 0.1;
  double eps_hi = 0.4;
  /// 0: propose l' uniformly on {0..L-1}; K >= 1: l' = l + k (mod L), k uniform on +-{1..K}
  int shift_window = 0;
  bool flip = false;
  bool alternate_directions = false;
  PoolKernel kernel = PoolKernel::Local;

  void validate() const {
    if (L < 1) throw ConfigError("L must be >= 1");
    if (!(eps_lo >= -1.0 && eps_hi <= 1.0 && eps_lo <= eps_hi)) {
      throw ConfigError("eps range must satisfy -1 <= eps_lo <= eps_hi <= 1");
    }
    if (shift_window < 0) throw ConfigError("shift window K must be >= 1 (or 0 for uniform)");
    if (flip && L % 2 != 0) throw ConfigError("flip updates need an even number of pool states");
    if (flip && kernel == PoolKernel::Independence) {
      throw ConfigError("flip updates are only available with the local pool kernel");
    }
  }
};

struct PoolState {
  Vector x;
  int link = -1;  // index into the adjacent pool; -1 at the boundary time
};

using Pool = std::vector<PoolState>;

struct PoolSet {
  std::vector<Pool> pools;          // one pool per time
  std::vector<int> current_index;   // slot of the input x_i in pools[i]
  Direction direction = Direction::Forward;
  bool flip_enabled = false;

  int length() const { return static_cast<int>(pools.size()); }
  int pool_size() const { return pools.empty() ? 0 : static_cast<int>(pools.front().size()); }
};

struct StepCounts {
  std::uint64_t attempts = 0;
  std::uint64_t accepts = 0;

  void record(bool accepted) {
    ++attempts;
    accepts += accepted ? 1 : 0;
  }
  double rate() const { return attempts ? static_cast<double>(accepts) / attempts : 0.0; }
  StepCounts& operator+=(const StepCounts& o) {
    attempts += o.attempts;
    accepts += o.accepts;
    return *this;
  }
};

struct EhmmStats {
  StepCounts ar;
  StepCounts shift;
  StepCounts flip;
  StepCounts independence;

  EhmmStats& operator+=(const EhmmStats& o) {
    ar += o.ar;
    shift += o.shift;
    flip += o.flip;
    independence += o.independence;
    return *this;
  }
};

// ---------------------------------------------------------------------------
// Autoregressive update
// ---------------------------------------------------------------------------

struct ArStep {
  Vector x;
  double loglik = 0.0;
  bool accepted = false;
};

/// Autoregressive Metropolis step for a target N(mean, chol chol^T) exp(loglik):
/// propose mean + sqrt(1-eps^2)(x-mean) + eps chol z and accept on the
/// likelihood ratio alone. `x_loglik` is loglik(x), passed in to avoid
/// re-evaluating it.
template <class LogLik>
ArStep ar_pool_step(const VecRef& mean, const Matrix& chol, LogLik&& loglik, const VecRef& x,
                    double x_loglik, double eps, Rng& rng) {
  if (eps == 0.0) return {x, x_loglik, true};
  Vector z = standard_normal(x.size(), rng);
  Vector prop = mean + std::sqrt(1.0 - eps * eps) * (x - mean) +
                eps * Vector(chol.triangularView<Eigen::Lower>() * z);
  double prop_loglik = loglik(prop);
  if (accept_log(prop_loglik - x_loglik, rng)) return {std::move(prop), prop_loglik, true};
  return {x, x_loglik, false};
}

template <class LogLik>
ArStep ar_pool_step(const VecRef& mean, const Matrix& chol, LogLik&& loglik, const VecRef& x,
                    double eps, Rng& rng) {
  double x_loglik = loglik(x);
  return ar_pool_step(mean, chol, loglik, x, x_loglik, eps, rng);
}

// ---------------------------------------------------------------------------
// Pool targets
// ---------------------------------------------------------------------------

/// The density a pool chain at one time step leaves invariant.
///
///  * boundary: N(0, Sigma_init) exp(loglik(x)), no link. loglik is
///    log p(y_1|x) for the forward scheme and 0 for the time-n pool of the
///    backward scheme (which is then drawn exactly, eps = 1).
///  * forward:  lambda_i(x, l) ~ p(y_i|x) p(x | a_l)
///  * backward: gamma_i(x, l) ~ exp(w_l) p(a_l | x), with w_l = log p(y_{i+1}|a_l)
///    and, when i+1 is the last time, an extra -log p_n(a_l) that accounts
///    for the time-n pool being drawn from p_n.
///
/// Here a_l is state l of the adjacent pool. For fixed l both linked targets
/// are Gaussian in x times a likelihood factor, which is what the
/// autoregressive update needs.
class PoolTarget {
 public:
  enum class Kind { Boundary, Forward, Backward };

  static PoolTarget boundary(const ModelSpec& spec, std::optional<Vector> y) {
    PoolTarget t(spec, Kind::Boundary);
    t.exact_ = !y.has_value();
    if (y) t.y_ = std::move(*y);
    return t;
  }

  static PoolTarget forward(const ModelSpec& spec, Vector y, const Pool& prev) {
    PoolTarget t(spec, Kind::Forward);
    t.y_ = std::move(y);
    t.adjacent_ = &prev;
    const int L = static_cast<int>(prev.size());
    t.means_.resize(L, spec.dim());
    for (int l = 0; l < L; ++l) t.means_.row(l) = spec.apply_phi(prev[l].x).transpose();
    return t;
  }

  static PoolTarget backward(const ModelSpec& spec, const VecRef& y_next, const Pool& next,
                             bool next_is_last) {
    PoolTarget t(spec, Kind::Backward);
    t.adjacent_ = &next;
    const int L = static_cast<int>(next.size());
    const Vector inv_phi = spec.phi().cwiseInverse();
    t.means_.resize(L, spec.dim());
    t.link_w_.resize(L);
    for (int l = 0; l < L; ++l) {
      t.means_.row(l) = inv_phi.cwiseProduct(next[l].x).transpose();
      double w = log_obs_density(spec, next[l].x, y_next);
      if (next_is_last) w -= log_initial_density(spec, next[l].x);
      t.link_w_[l] = w;
    }
    return t;
  }

  Kind kind() const { return kind_; }
  bool linked() const { return kind_ != Kind::Boundary; }
  int links() const { return adjacent_ ? static_cast<int>(adjacent_->size()) : 0; }
  const Pool* adjacent() const { return adjacent_; }
  std::optional<double> fixed_eps() const {
    return exact_ ? std::optional<double>(1.0) : std::nullopt;
  }

  /// Likelihood factor multiplying the Gaussian part.
  double loglik(const VecRef& x) const {
    if (kind_ == Kind::Backward || exact_) return 0.0;
    return log_obs_density(*spec_, x, y_);
  }

  Vector gaussian_mean(int link) const {
    if (kind_ == Kind::Boundary) return Vector::Zero(spec_->dim());
    return means_.row(link).transpose();
  }

  const Matrix& gaussian_chol() const {
    switch (kind_) {
      case Kind::Boundary: return spec_->initial().chol();
      case Kind::Forward: return spec_->transition().chol();
      case Kind::Backward: return spec_->backward_transition().chol();
    }
    return spec_->transition().chol();
  }

  /// log of the target with the likelihood factor removed, up to a constant:
  /// log N(x;0,Sigma_init) | log p(x|a_l) | w_l + log p(a_l|x).
  double link_log_weight(const VecRef& x, int link) const {
    switch (kind_) {
      case Kind::Boundary: return log_initial_density(*spec_, x);
      case Kind::Forward: return log_trans_density(*spec_, (*adjacent_)[link].x, x);
      case Kind::Backward:
        return link_w_[link] + log_trans_density(*spec_, x, (*adjacent_)[link].x);
    }
    return 0.0;
  }

  double log_target(const VecRef& x, int link) const {
    return loglik(x) + link_log_weight(x, link);
  }

  /// Part of the link weight that depends on l only (w_l; zero going forward).
  double shift_weight(int link) const { return kind_ == Kind::Backward ? link_w_[link] : 0.0; }

  /// Translation that keeps the residual against the linked state fixed.
  Vector shift_offset(int from, int to) const {
    return (means_.row(to) - means_.row(from)).transpose();
  }

  const ModelSpec& spec() const { return *spec_; }

 private:
  PoolTarget(const ModelSpec& spec, Kind kind) : spec_(&spec), kind_(kind) {}

  const ModelSpec* spec_;
  Kind kind_;
  bool exact_ = false;
  Vector y_;
  const Pool* adjacent_ = nullptr;
  RowMatrix means_;      // L x P Gaussian means, one per link
  std::vector<double> link_w_;
};

namespace detail {

struct ChainState {
  Vector x;
  int link = -1;
  double loglik = 0.0;
};

inline int propose_link(int link, int L, int window, Rng& rng) {
  if (window <= 0 || window >= L) return uniform_index(L, rng);
  int k = 1 + uniform_index(window, rng);
  if (uniform01(rng) < 0.5) k = -k;
  return ((link + k) % L + L) % L;
}

inline bool ar_move(const PoolTarget& t, ChainState& s, const EhmmConfig& cfg, Rng& rng) {
  double eps;
  if (auto fixed = t.fixed_eps()) {
    eps = *fixed;
  } else {
    eps = cfg.eps_lo == cfg.eps_hi
              ? cfg.eps_lo
              : std::uniform_real_distribution<double>(cfg.eps_lo, cfg.eps_hi)(rng);
  }
  Vector mean = t.gaussian_mean(s.link);
  ArStep r = ar_pool_step(
      mean, t.gaussian_chol(), [&](const VecRef& v) { return t.loglik(v); }, s.x, s.loglik, eps,
      rng);
  s.x = std::move(r.x);
  s.loglik = r.loglik;
  return r.accepted;
}

inline bool shift_move(const PoolTarget& t, ChainState& s, int window, Rng& rng) {
  int to = propose_link(s.link, t.links(), window, rng);
  if (to == s.link) return true;
  Vector prop = s.x + t.shift_offset(s.link, to);
  double prop_loglik = t.loglik(prop);
  double log_ratio = prop_loglik - s.loglik + t.shift_weight(to) - t.shift_weight(s.link);
  if (!accept_log(log_ratio, rng)) return false;
  s.x = std::move(prop);
  s.link = to;
  s.loglik = prop_loglik;
  return true;
}

inline int mirror_link(int link, int L) {
  int partner = link ^ 1;
  if (partner >= L) {
    throw InvariantError("flip update: link " + std::to_string(link) +
                         " has no mirror partner in a pool of size " + std::to_string(L));
  }
  return partner;
}

inline bool flip_move(const PoolTarget& t, ChainState& s, Rng& rng) {
  Vector prop = -s.x;
  int to = t.linked() ? mirror_link(s.link, t.links()) : -1;
  double prop_loglik = t.loglik(prop);
  double log_ratio = prop_loglik + t.link_log_weight(prop, to) - s.loglik -
                     t.link_log_weight(s.x, s.link);
  if (!accept_log(log_ratio, rng)) return false;
  s.x = std::move(prop);
  s.link = to;
  s.loglik = prop_loglik;
  return true;
}

/// Independence Metropolis on lambda_i: l' uniform, x' from the Gaussian part.
inline bool independence_move(const PoolTarget& t, ChainState& s, Rng& rng) {
  int to = t.linked() ? uniform_index(t.links(), rng) : -1;
  Vector prop = t.gaussian_mean(to) +
                t.gaussian_chol().triangularView<Eigen::Lower>() * standard_normal(s.x.size(), rng);
  double prop_loglik = t.loglik(prop);
  if (!accept_log(prop_loglik - s.loglik, rng)) return false;
  s.x = std::move(prop);
  s.link = to;
  s.loglik = prop_loglik;
  return true;
}

enum class Transition { Composite, Flip };

inline Transition transition_between(int j, const EhmmConfig& cfg) {
  return (cfg.flip && j % 2 == 0) ? Transition::Flip : Transition::Composite;
}

inline void apply_transition(const PoolTarget& t, ChainState& s, Transition type, bool reverse,
                             const EhmmConfig& cfg, Rng& rng, EhmmStats& stats) {
  if (type == Transition::Flip) {
    stats.flip.record(flip_move(t, s, rng));
    return;
  }
  if (cfg.kernel == PoolKernel::Independence) {
    stats.independence.record(independence_move(t, s, rng));
    return;
  }
  // composite AR -> shift; its reversal is shift -> AR
  if (!reverse) stats.ar.record(ar_move(t, s, cfg, rng));
  if (t.linked()) stats.shift.record(shift_move(t, s, cfg.shift_window, rng));
  if (reverse) stats.ar.record(ar_move(t, s, cfg, rng));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Single pool-chain steps (public forms)
// ---------------------------------------------------------------------------

/// Shift update of (x, l) at a linked time: x' = x + D(a_{l'} - a_l).
inline std::pair<PoolState, bool> shift_step(const PoolState& state, const PoolTarget& target,
                                             int window, Rng& rng) {
  if (!target.linked()) throw ConfigError("shift updates need a linked time step");
  detail::ChainState s{state.x, state.link, target.loglik(state.x)};
  bool acc = detail::shift_move(target, s, window, rng);
  return {PoolState{std::move(s.x), s.link}, acc};
}

/// Flip update (x, l) -> (-x, l ^ 1), accepted by the full Metropolis ratio.
inline std::pair<PoolState, bool> flip_step(const PoolState& state, const PoolTarget& target,
                                            Rng& rng) {
  detail::ChainState s{state.x, state.link, target.loglik(state.x)};
  bool acc = detail::flip_move(target, s, rng);
  return {PoolState{std::move(s.x), s.link}, acc};
}

/// Draws the initial link for the current state with probability
/// proportional to its link weight under the target.
inline int init_link(const VecRef& x, const PoolTarget& target, Rng& rng) {
  const int L = target.links();
  if (L == 0) throw InvariantError("init_link: empty adjacent pool");
  if (L == 1) return 0;
  thread_local std::vector<double> logw;
  logw.resize(L);
  for (int l = 0; l < L; ++l) logw[l] = target.link_log_weight(x, l);
  return sample_log_weights(logw, rng, "init_link");
}

struct GeneratedPool {
  Pool states;
  int current_index = 0;
};

/// Places `current` at a uniformly chosen slot and fills the remaining slots
/// by running the pool chain forward to slot L-1 and in reverse to slot 0.
inline GeneratedPool generate_pool(const PoolTarget& target, const PoolState& current,
                                   const EhmmConfig& cfg, Rng& rng, EhmmStats* stats = nullptr) {
  EhmmStats local;
  EhmmStats& st = stats ? *stats : local;
  const int L = cfg.L;
  GeneratedPool out;
  out.states.resize(L);
  out.current_index = L == 1 ? 0 : uniform_index(L, rng);
  const int l0 = out.current_index;
  out.states[l0] = current;
  if (L == 1) return out;

  const detail::ChainState start{current.x, current.link, target.loglik(current.x)};
  detail::ChainState s = start;
  for (int j = l0 + 1; j < L; ++j) {
    detail::apply_transition(target, s, detail::transition_between(j - 1, cfg), false, cfg, rng,
                             st);
    out.states[j] = PoolState{s.x, s.link};
  }
  s = start;
  for (int j = l0 - 1; j >= 0; --j) {
    detail::apply_transition(target, s, detail::transition_between(j, cfg), true, cfg, rng, st);
    out.states[j] = PoolState{s.x, s.link};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pool construction for a whole sequence
// ---------------------------------------------------------------------------

/// Builds pools for every time with the forward (Direction::Forward) or
/// backward (Direction::Backward) sequential scheme.
inline PoolSet build_pools(const LatentSequence& x, const ModelSpec& spec,
                           const ObservationSequence& y, const EhmmConfig& cfg, Direction scheme,
                           Rng& rng, EhmmStats* stats = nullptr) {
  cfg.validate();
  const int n = static_cast<int>(x.rows());
  PoolSet ps;
  ps.pools.resize(n);
  ps.current_index.resize(n);
  ps.direction = scheme;
  ps.flip_enabled = cfg.flip;

  auto place = [&](int i, GeneratedPool&& g) {
    ps.pools[i] = std::move(g.states);
    ps.current_index[i] = g.current_index;
  };

  if (scheme == Direction::Forward) {
    auto t0 = PoolTarget::boundary(spec, Vector(y.row(0).transpose()));
    place(0, generate_pool(t0, PoolState{x.row(0).transpose(), -1}, cfg, rng, stats));
    for (int i = 1; i < n; ++i) {
      auto t = PoolTarget::forward(spec, y.row(i).transpose(), ps.pools[i - 1]);
      Vector xi = x.row(i).transpose();
      int link = init_link(xi, t, rng);
      place(i, generate_pool(t, PoolState{std::move(xi), link}, cfg, rng, stats));
    }
  } else if (scheme == Direction::Backward) {
    if (cfg.kernel != PoolKernel::Local) {
      throw ConfigError("the backward scheme supports only the local pool kernel");
    }
    if (!spec.phi_invertible()) throw ConfigError("the backward scheme requires all phi_j != 0");
    auto tn = PoolTarget::boundary(spec, std::nullopt);
    place(n - 1, generate_pool(tn, PoolState{x.row(n - 1).transpose(), -1}, cfg, rng, stats));
    for (int i = n - 2; i >= 0; --i) {
      auto t = PoolTarget::backward(spec, y.row(i + 1).transpose(), ps.pools[i + 1], i + 1 == n - 1);
      Vector xi = x.row(i).transpose();
      int link = init_link(xi, t, rng);
      place(i, generate_pool(t, PoolState{std::move(xi), link}, cfg, rng, stats));
    }
  } else {
    throw ConfigError("build_pools: scheme must be forward or backward");
  }
  return ps;
}

// ---------------------------------------------------------------------------
// Pool densities evaluated pointwise (unnormalized, log)
// ---------------------------------------------------------------------------

/// Forward-scheme pool densities: log p(x) + log p(y_1|x) at time 1 and
/// log p(y_i|x) + log sum_l p(x | x_{i-1}^{[l]}) afterwards. O(n L^2).
inline Matrix log_kappa_forward(const PoolSet& ps, const ModelSpec& spec,
                                const ObservationSequence& y) {
  const int n = ps.length();
  const int L = ps.pool_size();
  Matrix out(n, L);
  std::vector<double> terms(L);
  for (int i = 0; i < n; ++i) {
    for (int m = 0; m < L; ++m) {
      const Vector& x = ps.pools[i][m].x;
      double lo = log_obs_density(spec, x, y.row(i).transpose());
      if (i == 0) {
        out(i, m) = log_initial_density(spec, x) + lo;
      } else {
        for (int l = 0; l < L; ++l) terms[l] = log_trans_density(spec, ps.pools[i - 1][l].x, x);
        out(i, m) = lo + log_sum_exp(terms);
      }
    }
  }
  return out;
}

/// Backward-scheme pool densities: log p_n(x) at time n and
/// log sum_l exp(w_l) p(x_{i+1}^{[l]} | x) before, with w_l as in PoolTarget.
inline Matrix log_kappa_backward(const PoolSet& ps, const ModelSpec& spec,
                                 const ObservationSequence& y) {
  const int n = ps.length();
  const int L = ps.pool_size();
  Matrix out(n, L);
  std::vector<double> terms(L);
  for (int m = 0; m < L; ++m) out(n - 1, m) = log_initial_density(spec, ps.pools[n - 1][m].x);
  for (int i = n - 2; i >= 0; --i) {
    auto t = PoolTarget::backward(spec, y.row(i + 1).transpose(), ps.pools[i + 1], i + 1 == n - 1);
    for (int m = 0; m < L; ++m) {
      for (int l = 0; l < L; ++l) terms[l] = t.link_log_weight(ps.pools[i][m].x, l);
      out(i, m) = log_sum_exp(terms);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward / backward probabilities (general pool densities, O(n L^2))
// ---------------------------------------------------------------------------

/// log alpha_i(x) for every pool state, given log kappa_i(x).
inline Matrix compute_alpha(const PoolSet& ps, const ModelSpec& spec, const ObservationSequence& y,
                            const Matrix& log_kappa) {
  const int n = ps.length();
  const int L = ps.pool_size();
  Matrix a(n, L);
  std::vector<double> terms(L);
  for (int m = 0; m < L; ++m) {
    const Vector& x = ps.pools[0][m].x;
    a(0, m) = log_initial_density(spec, x) + log_obs_density(spec, x, y.row(0).transpose()) -
              log_kappa(0, m);
  }
  for (int i = 1; i < n; ++i) {
    for (int m = 0; m < L; ++m) {
      const Vector& x = ps.pools[i][m].x;
      for (int l = 0; l < L; ++l) {
        terms[l] = log_trans_density(spec, ps.pools[i - 1][l].x, x) + a(i - 1, l);
      }
      a(i, m) = log_obs_density(spec, x, y.row(i).transpose()) - log_kappa(i, m) +
                log_sum_exp(terms);
    }
  }
  return a;
}

/// log beta_i(x) for every pool state. beta_n(x) = 1 / kappa_n(x), which is
/// the constant 1 when the time-n pool density is flat.
inline Matrix compute_beta(const PoolSet& ps, const ModelSpec& spec, const ObservationSequence& y,
                           const Matrix& log_kappa) {
  const int n = ps.length();
  const int L = ps.pool_size();
  Matrix b(n, L);
  std::vector<double> terms(L);
  std::vector<double> next_obs(L);
  for (int m = 0; m < L; ++m) b(n - 1, m) = -log_kappa(n - 1, m);
  for (int i = n - 2; i >= 0; --i) {
    for (int l = 0; l < L; ++l) {
      next_obs[l] = log_obs_density(spec, ps.pools[i + 1][l].x, y.row(i + 1).transpose());
    }
    for (int m = 0; m < L; ++m) {
      const Vector& x = ps.pools[i][m].x;
      for (int l = 0; l < L; ++l) {
        terms[l] = next_obs[l] + log_trans_density(spec, x, ps.pools[i + 1][l].x) + b(i + 1, l);
      }
      b(i, m) = -log_kappa(i, m) + log_sum_exp(terms);
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Stochastic passes
// ---------------------------------------------------------------------------

/// Pool indices chosen by the stochastic backward pass:
/// l_n ~ alpha_n, then l_{i-1} ~ alpha_{i-1}(x) p(x_i' | x).
inline std::vector<int> backward_pass_indices(const PoolSet& ps, const ModelSpec& spec,
                                              const Matrix& log_alpha, Rng& rng) {
  const int n = ps.length();
  const int L = ps.pool_size();
  std::vector<int> idx(n);
  std::vector<double> w(L);
  for (int m = 0; m < L; ++m) w[m] = log_alpha(n - 1, m);
  idx[n - 1] = L == 1 ? 0 : sample_log_weights(w, rng, "backward_pass");
  for (int i = n - 1; i >= 1; --i) {
    const Vector& next = ps.pools[i][idx[i]].x;
    if (L == 1) {
      idx[i - 1] = 0;
      continue;
    }
    for (int m = 0; m < L; ++m) {
      w[m] = log_alpha(i - 1, m) + log_trans_density(spec, ps.pools[i - 1][m].x, next);
    }
    idx[i - 1] = sample_log_weights(w, rng, "backward_pass");
  }
  return idx;
}

/// Pool indices chosen by the stochastic forward pass:
/// l_1 ~ beta_1(x) p(x) p(y_1|x), then l_i ~ beta_i(x) p(x | x_{i-1}') p(y_i|x).
inline std::vector<int> forward_pass_indices(const PoolSet& ps, const ModelSpec& spec,
                                             const ObservationSequence& y, const Matrix& log_beta,
                                             Rng& rng) {
  const int n = ps.length();
  const int L = ps.pool_size();
  std::vector<int> idx(n);
  std::vector<double> w(L);
  if (L == 1) return std::vector<int>(n, 0);
  for (int m = 0; m < L; ++m) {
    const Vector& x = ps.pools[0][m].x;
    w[m] = log_beta(0, m) + log_initial_density(spec, x) +
           log_obs_density(spec, x, y.row(0).transpose());
  }
  idx[0] = sample_log_weights(w, rng, "forward_pass");
  for (int i = 1; i < n; ++i) {
    const Vector& prev = ps.pools[i - 1][idx[i - 1]].x;
    for (int m = 0; m < L; ++m) {
      const Vector& x = ps.pools[i][m].x;
      w[m] = log_beta(i, m) + log_trans_density(spec, prev, x) +
             log_obs_density(spec, x, y.row(i).transpose());
    }
    idx[i] = sample_log_weights(w, rng, "forward_pass");
  }
  return idx;
}

inline LatentSequence gather(const PoolSet& ps, const std::vector<int>& idx) {
  const int n = ps.length();
  LatentSequence out(n, ps.pools[0][0].x.size());
  for (int i = 0; i < n; ++i) out.row(i) = ps.pools[i][idx[i]].x.transpose();
  return out;
}

inline LatentSequence backward_pass(const PoolSet& ps, const ModelSpec& spec,
                                    const Matrix& log_alpha, Rng& rng) {
  return gather(ps, backward_pass_indices(ps, spec, log_alpha, rng));
}

inline LatentSequence forward_pass(const PoolSet& ps, const ModelSpec& spec,
                                   const ObservationSequence& y, const Matrix& log_beta,
                                   Rng& rng) {
  return gather(ps, forward_pass_indices(ps, spec, y, log_beta, rng));
}

// ---------------------------------------------------------------------------
// Full updates
// ---------------------------------------------------------------------------

namespace detail {

inline LatentSequence ehmm_forward(const LatentSequence& x, const ModelSpec& spec,
                                   const ObservationSequence& y, const EhmmConfig& cfg, Rng& rng,
                                   EhmmStats* stats) {
  PoolSet ps = build_pools(x, spec, y, cfg, Direction::Forward, rng, stats);
  // alpha is constant under the forward scheme
  Matrix zero_alpha = Matrix::Zero(ps.length(), ps.pool_size());
  return backward_pass(ps, spec, zero_alpha, rng);
}

inline LatentSequence ehmm_backward(const LatentSequence& x, const ModelSpec& spec,
                                    const ObservationSequence& y, const EhmmConfig& cfg, Rng& rng,
                                    EhmmStats* stats) {
  PoolSet ps = build_pools(x, spec, y, cfg, Direction::Backward, rng, stats);
  const int n = ps.length();
  const int L = ps.pool_size();
  // beta is constant before time n; beta_n = 1 / p_n
  Matrix beta = Matrix::Zero(n, L);
  if (L > 1) {
    for (int m = 0; m < L; ++m) beta(n - 1, m) = -log_initial_density(spec, ps.pools[n - 1][m].x);
  }
  return forward_pass(ps, spec, y, beta, rng);
}

}  // namespace detail

/// One embedded-HMM update of the whole sequence.
///
/// Direction::Reversed applies the forward scheme to (y_n, ..., y_1); it
/// needs a time-reversible latent process (see ModelSpec::reversible).
inline LatentSequence ehmm_update(const LatentSequence& x, const ModelSpec& spec,
                                  const ObservationSequence& y, const EhmmConfig& cfg,
                                  Direction direction, Rng& rng, EhmmStats* stats = nullptr) {
  cfg.validate();
  if (x.rows() != y.rows() || x.cols() != spec.dim() || y.cols() != spec.dim()) {
    throw ConfigError("ehmm_update: sequence shape does not match the model");
  }
  if (cfg.L == 1) return x;
  switch (direction) {
    case Direction::Forward: return detail::ehmm_forward(x, spec, y, cfg, rng, stats);
    case Direction::Backward: return detail::ehmm_backward(x, spec, y, cfg, rng, stats);
    case Direction::Reversed:
      if (!spec.reversible()) {
        throw ConfigError("reversed-sequence updates need a stationary, time-reversible latent process");
      }
      return reverse_rows(
          detail::ehmm_forward(reverse_rows(x), spec, reverse_rows(y), cfg, rng, stats));
  }
  return x;
}

/// The PGBS-like sampler: pools filled by independence Metropolis on lambda_i.
inline LatentSequence independence_pool_update(const LatentSequence& x, const ModelSpec& spec,
                                               const ObservationSequence& y, int L, Rng& rng,
                                               Direction direction = Direction::Forward,
                                               EhmmStats* stats = nullptr) {
  if (direction == Direction::Backward) {
    throw ConfigError("independence pool updates run forward or on the reversed sequence");
  }
  EhmmConfig cfg;
  cfg.L = L;
  cfg.kernel = PoolKernel::Independence;
  return ehmm_update(x, spec, y, cfg, direction, rng, stats);
}

/// Convenience wrapper that alternates forward and reversed-sequence updates
/// when cfg.alternate_directions is set.
class EhmmSampler {
 public:
  EhmmSampler(const ModelSpec& spec, EhmmConfig cfg, Direction first = Direction::Forward)
      : spec_(&spec), cfg_(cfg), next_(first) {
    cfg_.validate();
  }

  LatentSequence update(const LatentSequence& x, const ObservationSequence& y, Rng& rng) {
    LatentSequence out = ehmm_update(x, *spec_, y, cfg_, next_, rng, &stats_);
    if (cfg_.alternate_directions) {
      next_ = next_ == Direction::Forward ? Direction::Reversed : Direction::Forward;
    }
    return out;
  }

  const EhmmStats& stats() const { return stats_; }

 private:
  const ModelSpec* spec_;
  EhmmConfig cfg_;
  Direction next_;
  EhmmStats stats_;
};

}  // namespace seqpool
