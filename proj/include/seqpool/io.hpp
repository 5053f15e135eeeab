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
/// Text formats: model files, schedule files and dataset CSV.
///
/// Model file (one `key = value` per line, `#` starts a comment):
///
///     variant = loglink_poisson   # or abs_poisson, gaussian
///     P = 10
///     n = 250
///     phi = 0.9                   # one value (broadcast) or P comma-separated
///     rho = 0.7
///     c = -0.4                    # loglink_poisson
///     sigma = 0.6                 # loglink_poisson, abs_poisson
///     tau = 1.0                   # gaussian
///     seed = 1                    # dataset seed for `simulate`
///
/// Schedule file: one update per line, `kind key=value ...`:
///
///     ehmm direction=forward L=50 eps=0.1,0.4 flip=0 shift_window=0 record=1
///     pgbs direction=reversed L=250 record=1
///     metropolis reps=10 eps=0.2,0.8 record=1
///     independence direction=forward L=50 record=1
///
/// Dataset CSV: header `t,dim,x,y`, one row per (time, dimension), both
/// 1-based, time-major. An empty x field means the latent value is unknown.

#include "seqpool/common.hpp"
#include "seqpool/ehmm.hpp"
#include "seqpool/model.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace seqpool {

namespace detail {

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("cannot parse " + what + " value '" + s + "'");
  }
}

inline long long parse_int(const std::string& s, const std::string& what) {
  long long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError("cannot parse integer " + what + " value '" + s + "'");
  }
  return v;
}

inline bool parse_bool(const std::string& s, const std::string& what) {
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw ConfigError("cannot parse boolean " + what + " value '" + s + "'");
}

inline Vector parse_vector(const std::string& s, int P, const std::string& what) {
  auto parts = split(s, ',');
  if (parts.size() == 1) return Vector::Constant(P, parse_double(parts[0], what));
  if (static_cast<int>(parts.size()) != P) {
    throw ConfigError(what + " needs 1 or P = " + std::to_string(P) + " values");
  }
  Vector v(P);
  for (int j = 0; j < P; ++j) v[j] = parse_double(parts[j], what);
  return v;
}

inline std::string format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);  // shortest round-trip form
  return std::string(buf, p);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Model file
// ---------------------------------------------------------------------------

struct ModelFile {
  ModelSpec spec;
  std::uint64_t seed = 1;
};

inline ModelFile parse_model(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("model file line " + std::to_string(lineno) + ": expected key = value");
    }
    kv[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
  }
  auto need = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw ConfigError("model file: missing key '" + k + "'");
    return it->second;
  };
  static const char* known[] = {"variant", "P", "n", "phi", "rho", "c", "sigma", "tau", "seed"};
  for (const auto& [k, v] : kv) {
    if (std::find(std::begin(known), std::end(known), k) == std::end(known)) {
      throw ConfigError("model file: unknown key '" + k + "'");
    }
  }

  const int P = static_cast<int>(detail::parse_int(need("P"), "P"));
  const int n = static_cast<int>(detail::parse_int(need("n"), "n"));
  if (P < 1 || n < 1) throw ConfigError("model file: P and n must be positive");
  const std::string variant = need("variant");
  ObservationModel obs;
  if (variant == "loglink_poisson") {
    obs = LogLinkPoisson{detail::parse_vector(need("c"), P, "c"),
                         detail::parse_vector(need("sigma"), P, "sigma")};
  } else if (variant == "abs_poisson") {
    obs = AbsPoisson{detail::parse_vector(need("sigma"), P, "sigma")};
  } else if (variant == "gaussian") {
    obs = GaussianObs{detail::parse_vector(need("tau"), P, "tau")};
  } else {
    throw ConfigError("model file: unknown variant '" + variant + "'");
  }
  double rho = kv.count("rho") ? detail::parse_double(kv["rho"], "rho") : 0.0;
  Vector phi = detail::parse_vector(need("phi"), P, "phi");
  std::uint64_t seed =
      kv.count("seed") ? static_cast<std::uint64_t>(detail::parse_int(kv["seed"], "seed")) : 1;
  try {
    return ModelFile{ModelSpec(P, n, phi, rho, std::move(obs)), seed};
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("model file: ") + e.what());
  }
}

inline ModelFile load_model(const std::string& path) { return parse_model(detail::read_file(path)); }

inline std::string format_model(const ModelSpec& spec, std::uint64_t seed) {
  auto vec = [](const Vector& v) {
    std::string s;
    for (Eigen::Index j = 0; j < v.size(); ++j) s += (j ? "," : "") + detail::format_double(v[j]);
    return s;
  };
  std::ostringstream out;
  out << "variant = " << variant_name(spec.obs()) << "\n"
      << "P = " << spec.dim() << "\n"
      << "n = " << spec.length() << "\n"
      << "phi = " << vec(spec.phi()) << "\n"
      << "rho = " << detail::format_double(spec.rho()) << "\n";
  if (auto* o = std::get_if<LogLinkPoisson>(&spec.obs())) {
    out << "c = " << vec(o->c) << "\nsigma = " << vec(o->sigma) << "\n";
  } else if (auto* o = std::get_if<AbsPoisson>(&spec.obs())) {
    out << "sigma = " << vec(o->sigma) << "\n";
  } else {
    out << "tau = " << vec(std::get<GaussianObs>(spec.obs()).tau) << "\n";
  }
  out << "seed = " << seed << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Schedule file
// ---------------------------------------------------------------------------

enum class UpdateKind { Ehmm, Pgbs, Metropolis, Independence };

inline std::string to_string(UpdateKind k) {
  switch (k) {
    case UpdateKind::Ehmm: return "ehmm";
    case UpdateKind::Pgbs: return "pgbs";
    case UpdateKind::Metropolis: return "metropolis";
    case UpdateKind::Independence: return "independence";
  }
  return "?";
}

struct UpdateSpec {
  UpdateKind kind = UpdateKind::Ehmm;
  Direction direction = Direction::Forward;
  EhmmConfig ehmm;       // ehmm / independence (L also used by pgbs)
  int reps = 1;          // metropolis sweeps per element
  double eps_small = 0.2;
  double eps_large = 0.8;
  bool record = true;

  std::string describe() const {
    std::ostringstream s;
    s << to_string(kind);
    if (kind != UpdateKind::Metropolis) s << " direction=" << to_string(direction) << " L=" << ehmm.L;
    if (kind == UpdateKind::Ehmm) {
      s << " eps=" << ehmm.eps_lo << "," << ehmm.eps_hi << " flip=" << ehmm.flip
        << " shift_window=" << ehmm.shift_window;
    }
    if (kind == UpdateKind::Metropolis) s << " reps=" << reps << " eps=" << eps_small << "," << eps_large;
    s << " record=" << record;
    return s.str();
  }
};

inline std::vector<UpdateSpec> parse_schedule(const std::string& text) {
  std::vector<UpdateSpec> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    std::istringstream words(line);
    std::string kind;
    if (!(words >> kind)) continue;
    const std::string where = "schedule line " + std::to_string(lineno);
    UpdateSpec u;
    if (kind == "ehmm") u.kind = UpdateKind::Ehmm;
    else if (kind == "pgbs") u.kind = UpdateKind::Pgbs;
    else if (kind == "metropolis") u.kind = UpdateKind::Metropolis;
    else if (kind == "independence") {
      u.kind = UpdateKind::Independence;
      u.ehmm.kernel = PoolKernel::Independence;
    } else {
      throw ConfigError(where + ": unknown update '" + kind + "'");
    }
    std::string tok;
    while (words >> tok) {
      auto eq = tok.find('=');
      if (eq == std::string::npos) throw ConfigError(where + ": expected key=value, got '" + tok + "'");
      std::string k = tok.substr(0, eq), v = tok.substr(eq + 1);
      if (k == "direction") u.direction = parse_direction(v);
      else if (k == "L") u.ehmm.L = static_cast<int>(detail::parse_int(v, k));
      else if (k == "flip") u.ehmm.flip = detail::parse_bool(v, k);
      else if (k == "shift_window") u.ehmm.shift_window = static_cast<int>(detail::parse_int(v, k));
      else if (k == "reps") u.reps = static_cast<int>(detail::parse_int(v, k));
      else if (k == "record") u.record = detail::parse_bool(v, k);
      else if (k == "eps") {
        auto parts = detail::split(v, ',');
        if (parts.size() != 2) throw ConfigError(where + ": eps needs two values");
        double a = detail::parse_double(parts[0], k), b = detail::parse_double(parts[1], k);
        if (u.kind == UpdateKind::Metropolis) {
          u.eps_small = a;
          u.eps_large = b;
        } else {
          u.ehmm.eps_lo = a;
          u.ehmm.eps_hi = b;
        }
      } else {
        throw ConfigError(where + ": unknown key '" + k + "'");
      }
    }
    if (u.kind == UpdateKind::Metropolis && u.reps < 1) throw ConfigError(where + ": reps must be >= 1");
    if (u.kind != UpdateKind::Metropolis) u.ehmm.validate();
    if (u.kind == UpdateKind::Pgbs && u.direction == Direction::Backward) {
      throw ConfigError(where + ": pgbs supports forward and reversed directions");
    }
    if (u.kind == UpdateKind::Independence && u.direction == Direction::Backward) {
      throw ConfigError(where + ": independence supports forward and reversed directions");
    }
    out.push_back(u);
  }
  if (out.empty()) throw ConfigError("schedule is empty");
  return out;
}

inline std::vector<UpdateSpec> load_schedule(const std::string& path) {
  return parse_schedule(detail::read_file(path));
}

// ---------------------------------------------------------------------------
// Dataset CSV
// ---------------------------------------------------------------------------

struct Dataset {
  LatentSequence x;  // NaN where unknown
  ObservationSequence y;
};

inline void write_dataset(std::ostream& out, const LatentSequence& x, const ObservationSequence& y) {
  out << "t,dim,x,y\n";
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      out << (i + 1) << ',' << (j + 1) << ',' << detail::format_double(x(i, j)) << ','
          << detail::format_double(y(i, j)) << '\n';
    }
  }
}

inline void write_dataset(const std::string& path, const LatentSequence& x,
                          const ObservationSequence& y) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  write_dataset(out, x, y);
}

inline Dataset parse_dataset(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != "t,dim,x,y") {
    throw ConfigError("dataset: header must be 't,dim,x,y'");
  }
  struct Row {
    long long t, dim;
    double x, y;
  };
  std::vector<Row> rows;
  long long n = 0, P = 0;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto f = detail::split(line, ',');
    if (f.size() != 4) throw ConfigError("dataset line " + std::to_string(lineno) + ": expected 4 fields");
    Row r{detail::parse_int(f[0], "t"), detail::parse_int(f[1], "dim"),
          f[2].empty() ? std::numeric_limits<double>::quiet_NaN() : detail::parse_double(f[2], "x"),
          detail::parse_double(f[3], "y")};
    if (r.t < 1 || r.dim < 1) throw ConfigError("dataset: t and dim are 1-based");
    n = std::max(n, r.t);
    P = std::max(P, r.dim);
    rows.push_back(r);
  }
  if (rows.size() != static_cast<std::size_t>(n * P)) {
    throw ConfigError("dataset: expected one row per (t, dim)");
  }
  Dataset d{LatentSequence::Constant(n, P, std::numeric_limits<double>::quiet_NaN()),
            ObservationSequence::Constant(n, P, std::numeric_limits<double>::quiet_NaN())};
  for (const auto& r : rows) {
    d.x(r.t - 1, r.dim - 1) = r.x;
    d.y(r.t - 1, r.dim - 1) = r.y;
  }
  if (d.y.hasNaN()) throw ConfigError("dataset: duplicate or missing (t, dim) rows");
  return d;
}

inline Dataset load_dataset(const std::string& path) { return parse_dataset(detail::read_file(path)); }

/// Checks a dataset against a model: shape and, for Poisson variants,
/// nonnegative integer observations.
inline void check_dataset(const ModelSpec& spec, const Dataset& d) {
  if (d.y.rows() != spec.length() || d.y.cols() != spec.dim()) {
    throw ConfigError("dataset shape " + std::to_string(d.y.rows()) + "x" +
                      std::to_string(d.y.cols()) + " does not match the model (n=" +
                      std::to_string(spec.length()) + ", P=" + std::to_string(spec.dim()) + ")");
  }
  if (spec.poisson_obs()) {
    for (Eigen::Index i = 0; i < d.y.size(); ++i) {
      double v = d.y.data()[i];
      if (v < 0.0 || v != std::floor(v)) throw ConfigError("dataset: Poisson observations must be integers >= 0");
    }
  }
}

// ---------------------------------------------------------------------------
// Variable addresses: x[dim][time], both 1-based
// ---------------------------------------------------------------------------

inline std::string variable_name(int dim, int time) {
  return "x[" + std::to_string(dim + 1) + "][" + std::to_string(time + 1) + "]";
}

/// Parses "x[j][i]" into 0-based (dim, time).
inline std::pair<int, int> parse_variable(const std::string& s) {
  int j = 0, i = 0;
  char tail = 0;
  if (std::sscanf(s.c_str(), "x[%d][%d]%c", &j, &i, &tail) != 2 || j < 1 || i < 1) {
    throw ConfigError("bad variable address '" + s + "' (expected x[dim][time], 1-based)");
  }
  return {j - 1, i - 1};
}

}  // namespace seqpool
