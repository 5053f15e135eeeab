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
/// Batch experiments: run an update schedule for several seeds and write the
/// samples, then pool the runs into autocorrelation reports.
///
/// Run layout, one directory per seed:
///
///     <out>/seed_<S>/samples.csv   header `seed,iter,element,x[1][1],x[2][1],...`
///                                  (x[dim][time], time-major), one row per kept sample
///     <out>/seed_<S>/samples.bin   alternative binary layout, little-endian:
///                                  "SEQPOOL1", u64 n, u64 P, u64 count, u64 seed,
///                                  then per sample i64 iter, i64 element, n*P f64
///     <out>/seed_<S>/meta.json     timing, acceptance rates, density counters
///     <out>/seed_<S>/error.txt     written only when the run aborted

#include "seqpool/diagnostics.hpp"
#include "seqpool/ehmm.hpp"
#include "seqpool/io.hpp"
#include "seqpool/metropolis.hpp"
#include "seqpool/model.hpp"
#include "seqpool/pgbs.hpp"

#include <json.hpp>

#include <atomic>
#include <bit>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

namespace seqpool {

enum class SampleFormat { Csv, Binary };

struct ExperimentConfig {
  ModelSpec spec;
  ObservationSequence y;
  std::vector<UpdateSpec> schedule;
  long long iterations = 0;
  std::vector<std::uint64_t> seeds;
  std::size_t thin = 1;
  std::string out_dir;
  double init = 0.0;
  SampleFormat format = SampleFormat::Csv;
  int threads = 0;  // 0: SEQPOOL_THREADS, else hardware concurrency

  void validate() const {
    if (schedule.empty()) throw ConfigError("schedule is empty");
    if (iterations < 0) throw ConfigError("iterations must be >= 0");
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
      throw ConfigError("seeds must be distinct");
    }
    if (thin < 1) throw ConfigError("thin must be >= 1");
    if (out_dir.empty()) throw ConfigError("an output directory is required");
    if (y.rows() != spec.length() || y.cols() != spec.dim()) {
      throw ConfigError("observations do not match the model shape");
    }
    for (const auto& u : schedule) {
      bool reversed = u.direction == Direction::Reversed && u.kind != UpdateKind::Metropolis;
      if (reversed && !spec.reversible()) {
        throw ConfigError("reversed-sequence updates need a stationary, time-reversible latent process");
      }
      if (u.kind == UpdateKind::Ehmm && u.direction == Direction::Backward && !spec.phi_invertible()) {
        throw ConfigError("the backward scheme requires all phi_j != 0");
      }
    }
  }
};

struct RunSummary {
  std::uint64_t seed = 0;
  bool ok = true;
  bool numerical_failure = false;
  std::string error;
  std::size_t samples = 0;
  double seconds = 0.0;
  std::string dir;
};

inline std::string seed_dir(const std::string& out, std::uint64_t seed) {
  return (std::filesystem::path(out) / ("seed_" + std::to_string(seed))).string();
}

inline int worker_limit(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("SEQPOOL_THREADS")) {
    int v = std::atoi(env);
    if (v > 0) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace detail {

class SampleWriter {
 public:
  SampleWriter(const std::string& dir, SampleFormat fmt, int n, int P, std::uint64_t seed)
      : fmt_(fmt), n_(n), P_(P), seed_(seed) {
    if (fmt_ == SampleFormat::Csv) {
      out_.open(std::filesystem::path(dir) / "samples.csv");
      out_ << "seed,iter,element";
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < P; ++j) out_ << ',' << variable_name(j, i);
      out_ << '\n';
    } else {
      static_assert(std::endian::native == std::endian::little, "binary samples assume little-endian");
      out_.open(std::filesystem::path(dir) / "samples.bin", std::ios::binary);
      out_.write("SEQPOOL1", 8);
      std::uint64_t hdr[4] = {static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(P), 0, seed};
      out_.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
    }
    if (!out_) throw ConfigError("cannot write samples in '" + dir + "'");
  }

  void write(long long iter, int element, const LatentSequence& x) {
    ++count_;
    if (fmt_ == SampleFormat::Csv) {
      out_ << seed_ << ',' << iter << ',' << element;
      for (Eigen::Index k = 0; k < x.size(); ++k) out_ << ',' << format_double(x.data()[k]);
      out_ << '\n';
    } else {
      std::int64_t prov[2] = {iter, element};
      out_.write(reinterpret_cast<const char*>(prov), sizeof(prov));
      out_.write(reinterpret_cast<const char*>(x.data()), static_cast<std::streamsize>(x.size() * sizeof(double)));
    }
  }

  void close() {
    if (fmt_ == SampleFormat::Binary) {
      out_.seekp(8 + 2 * sizeof(std::uint64_t));
      std::uint64_t c = count_;
      out_.write(reinterpret_cast<const char*>(&c), sizeof(c));
    }
    out_.close();
  }

  std::size_t count() const { return count_; }

 private:
  std::ofstream out_;
  SampleFormat fmt_;
  int n_, P_;
  std::uint64_t seed_;
  std::size_t count_ = 0;
};

inline nlohmann::json counts_json(const StepCounts& c) {
  return {{"attempts", c.attempts}, {"accepts", c.accepts}, {"rate", c.rate()}};
}

inline RunSummary run_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  namespace fs = std::filesystem;
  RunSummary sum;
  sum.seed = seed;
  sum.dir = seed_dir(cfg.out_dir, seed);
  fs::create_directories(sum.dir);
  fs::remove(fs::path(sum.dir) / "error.txt");

  const ModelSpec& spec = cfg.spec;
  Rng rng = make_stream(seed, 0);
  LatentSequence x = LatentSequence::Constant(spec.length(), spec.dim(), cfg.init);

  const std::size_t E = cfg.schedule.size();
  std::vector<EhmmStats> ehmm_stats(E);
  std::vector<std::optional<MetropolisSampler>> metro(E);
  for (std::size_t e = 0; e < E; ++e) {
    const auto& u = cfg.schedule[e];
    if (u.kind == UpdateKind::Metropolis) metro[e].emplace(spec, u.eps_small, u.eps_large);
  }

  SampleWriter writer(sum.dir, cfg.format, spec.length(), spec.dim(), seed);
  eval_counters().reset();
  std::size_t recorded = 0;
  double seconds = 0.0;
  long long iter = 0;
  try {
    for (; iter < cfg.iterations; ++iter) {
      for (std::size_t e = 0; e < E; ++e) {
        const auto& u = cfg.schedule[e];
        auto t0 = std::chrono::steady_clock::now();
        switch (u.kind) {
          case UpdateKind::Ehmm:
          case UpdateKind::Independence:
            x = ehmm_update(x, spec, cfg.y, u.ehmm, u.direction, rng, &ehmm_stats[e]);
            break;
          case UpdateKind::Pgbs: x = pgbs_update(x, spec, cfg.y, u.ehmm.L, u.direction, rng); break;
          case UpdateKind::Metropolis:
            for (int r = 0; r < u.reps; ++r) x = metro[e]->sweep(x, cfg.y, rng);
            break;
        }
        seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (u.record) {
          if (recorded % cfg.thin == 0) writer.write(iter, static_cast<int>(e), x);
          ++recorded;
        }
      }
    }
  } catch (const NumericalError& err) {
    sum.ok = false;
    sum.numerical_failure = true;
    sum.error = err.what();
  } catch (const std::exception& err) {
    sum.ok = false;
    sum.error = err.what();
  }
  writer.close();
  sum.samples = writer.count();
  sum.seconds = seconds;

  if (!sum.ok) {
    std::ofstream diag(fs::path(sum.dir) / "error.txt");
    diag << "seed " << seed << " aborted at iteration " << iter << ": " << sum.error << "\n";
  }

  nlohmann::json meta;
  meta["seed"] = seed;
  meta["status"] = sum.ok ? "ok" : (sum.numerical_failure ? "numerical-error" : "error");
  meta["n"] = spec.length();
  meta["P"] = spec.dim();
  meta["variant"] = variant_name(spec.obs());
  meta["iterations"] = cfg.iterations;
  meta["thin"] = cfg.thin;
  meta["init"] = cfg.init;
  meta["format"] = cfg.format == SampleFormat::Csv ? "csv" : "binary";
  meta["samples"] = sum.samples;
  meta["recorded_updates"] = recorded;
  meta["seconds"] = seconds;
  meta["secs_per_sample"] = sum.samples ? seconds / static_cast<double>(sum.samples) : 0.0;
  nlohmann::json sched = nlohmann::json::array();
  nlohmann::json acc = nlohmann::json::array();
  for (std::size_t e = 0; e < E; ++e) {
    const auto& u = cfg.schedule[e];
    sched.push_back(u.describe());
    nlohmann::json a;
    a["element"] = e;
    a["kind"] = to_string(u.kind);
    if (u.kind == UpdateKind::Ehmm) {
      a["ar"] = counts_json(ehmm_stats[e].ar);
      a["shift"] = counts_json(ehmm_stats[e].shift);
      a["flip"] = counts_json(ehmm_stats[e].flip);
    } else if (u.kind == UpdateKind::Independence) {
      a["independence"] = counts_json(ehmm_stats[e].independence);
    } else if (u.kind == UpdateKind::Metropolis) {
      const auto& ms = metro[e]->stats();
      a["mean_rate"] = ms.mean_rate();
      std::vector<double> per_time;
      for (std::size_t i = 0; i < ms.attempts.size(); ++i) per_time.push_back(ms.rate(static_cast<int>(i)));
      a["per_time"] = per_time;
    }
    acc.push_back(a);
  }
  meta["schedule"] = sched;
  meta["acceptance"] = acc;
  meta["counters"] = {{"trans", eval_counters().trans}, {"obs", eval_counters().obs}};
  if (!sum.ok) meta["error"] = sum.error;
  std::ofstream(fs::path(sum.dir) / "meta.json") << meta.dump(2) << "\n";
  return sum;
}

}  // namespace detail

/// Runs every seed as an independent worker (at most worker_limit() at once).
inline std::vector<RunSummary> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  std::filesystem::create_directories(cfg.out_dir);
  std::vector<RunSummary> out(cfg.seeds.size());
  const int workers = std::min<int>(worker_limit(cfg.threads), static_cast<int>(cfg.seeds.size()));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < cfg.seeds.size();) {
      out[k] = detail::run_seed(cfg, cfg.seeds[k]);
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reading runs back
// ---------------------------------------------------------------------------

struct SampleTable {
  int n = 0;
  int P = 0;
  std::uint64_t seed = 0;
  std::vector<long long> iter;
  std::vector<int> element;
  RowMatrix values;  // count x (n*P), time-major

  std::size_t count() const { return iter.size(); }
  std::vector<double> series(int dim, int time) const {
    std::vector<double> s(count());
    for (std::size_t r = 0; r < count(); ++r) s[r] = values(static_cast<Eigen::Index>(r), time * P + dim);
    return s;
  }
};

inline SampleTable read_samples(const std::string& dir) {
  namespace fs = std::filesystem;
  SampleTable t;
  fs::path csv = fs::path(dir) / "samples.csv";
  fs::path bin = fs::path(dir) / "samples.bin";
  if (fs::exists(bin)) {
    std::ifstream in(bin, std::ios::binary);
    char magic[8];
    in.read(magic, 8);
    if (std::string(magic, 8) != "SEQPOOL1") throw ConfigError("bad sample file " + bin.string());
    std::uint64_t hdr[4];
    in.read(reinterpret_cast<char*>(hdr), sizeof(hdr));
    t.n = static_cast<int>(hdr[0]);
    t.P = static_cast<int>(hdr[1]);
    t.seed = hdr[3];
    const std::size_t width = static_cast<std::size_t>(t.n) * t.P;
    t.values.resize(static_cast<Eigen::Index>(hdr[2]), static_cast<Eigen::Index>(width));
    for (std::uint64_t r = 0; r < hdr[2]; ++r) {
      std::int64_t prov[2];
      in.read(reinterpret_cast<char*>(prov), sizeof(prov));
      in.read(reinterpret_cast<char*>(t.values.row(static_cast<Eigen::Index>(r)).data()),
              static_cast<std::streamsize>(width * sizeof(double)));
      t.iter.push_back(prov[0]);
      t.element.push_back(static_cast<int>(prov[1]));
    }
    if (!in) throw ConfigError("truncated sample file " + bin.string());
    return t;
  }
  std::ifstream in(csv);
  if (!in) throw ConfigError("no samples found in '" + dir + "'");
  std::string line;
  std::getline(in, line);
  auto header = detail::split(line, ',');
  if (header.size() < 4 || header[0] != "seed") throw ConfigError("bad sample header in " + csv.string());
  for (std::size_t k = 3; k < header.size(); ++k) {
    auto [j, i] = parse_variable(header[k]);
    t.P = std::max(t.P, j + 1);
    t.n = std::max(t.n, i + 1);
  }
  const std::size_t width = header.size() - 3;
  if (width != static_cast<std::size_t>(t.n) * t.P) throw ConfigError("bad sample header in " + csv.string());
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = detail::split(line, ',');
    if (f.size() != header.size()) throw ConfigError("ragged sample row in " + csv.string());
    t.seed = static_cast<std::uint64_t>(detail::parse_int(f[0], "seed"));
    t.iter.push_back(detail::parse_int(f[1], "iter"));
    t.element.push_back(static_cast<int>(detail::parse_int(f[2], "element")));
    std::vector<double> v(width);
    for (std::size_t k = 0; k < width; ++k) v[k] = detail::parse_double(f[k + 3], "sample");
    rows.push_back(std::move(v));
  }
  t.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t k = 0; k < width; ++k) t.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = rows[r][k];
  }
  return t;
}

/// Expands a directory holding seed_* subdirectories into those runs.
inline std::vector<std::string> expand_run_dirs(const std::vector<std::string>& dirs) {
  namespace fs = std::filesystem;
  std::vector<std::string> out;
  for (const auto& d : dirs) {
    if (fs::exists(fs::path(d) / "samples.csv") || fs::exists(fs::path(d) / "samples.bin")) {
      out.push_back(d);
      continue;
    }
    std::vector<std::string> sub;
    if (fs::is_directory(d)) {
      for (const auto& ent : fs::directory_iterator(d)) {
        if (ent.is_directory() && ent.path().filename().string().rfind("seed_", 0) == 0) {
          sub.push_back(ent.path().string());
        }
      }
    }
    if (sub.empty()) throw ConfigError("no runs found under '" + d + "'");
    std::sort(sub.begin(), sub.end());
    out.insert(out.end(), sub.begin(), sub.end());
  }
  return out;
}

struct DiagnoseOptions {
  ActOptions act;
  std::vector<std::string> variables;  // empty: every variable
  std::vector<std::string> trace;      // variables to export as trace CSV
  std::string out_prefix;              // writes <prefix>.json / .csv / _trace.csv when set
};

inline DiagnosticsReport diagnose(const std::vector<std::string>& run_dirs, const DiagnoseOptions& opt) {
  namespace fs = std::filesystem;
  const auto dirs = expand_run_dirs(run_dirs);
  std::vector<SampleTable> tables;
  DiagnosticsReport rep;
  rep.options = opt.act;
  rep.thinning = opt.act.thin;
  double secs = 0.0;
  std::size_t trans = 0, obs = 0;
  for (const auto& d : dirs) {
    tables.push_back(read_samples(d));
    if (tables.back().n != tables.front().n || tables.back().P != tables.front().P) {
      throw ConfigError("runs have mismatched shapes (" + d + ")");
    }
    rep.runs.push_back(d);
    fs::path meta_path = fs::path(d) / "meta.json";
    if (fs::exists(meta_path)) {
      auto meta = nlohmann::json::parse(detail::read_file(meta_path.string()));
      secs += meta.value("secs_per_sample", 0.0);
      rep.acceptance.push_back({{"run", d}, {"acceptance", meta.value("acceptance", nlohmann::json::array())}});
      if (meta.contains("counters")) {
        trans += meta["counters"].value("trans", std::size_t{0});
        obs += meta["counters"].value("obs", std::size_t{0});
      }
    }
  }
  rep.n = tables.front().n;
  rep.P = tables.front().P;
  rep.secs_per_sample = secs / static_cast<double>(dirs.size()) * static_cast<double>(opt.act.thin);
  rep.counters = {{"trans", trans}, {"obs", obs}};

  std::vector<std::pair<int, int>> vars;
  if (opt.variables.empty()) {
    for (int i = 0; i < rep.n; ++i)
      for (int j = 0; j < rep.P; ++j) vars.emplace_back(j, i);
  } else {
    for (const auto& v : opt.variables) {
      auto dv = parse_variable(v);
      if (dv.first >= rep.P || dv.second >= rep.n) throw ConfigError("variable " + v + " is out of range");
      vars.push_back(dv);
    }
  }
  for (auto [j, i] : vars) {
    std::vector<std::vector<double>> runs;
    for (const auto& t : tables) runs.push_back(t.series(j, i));
    ActEstimate est = act(runs, opt.act);
    rep.variables.push_back(variable_name(j, i));
    rep.dims.push_back(j);
    rep.times.push_back(i);
    rep.act.push_back(est.tau);
    rep.act_time_adjusted.push_back(est.tau * rep.secs_per_sample);
    rep.cutoff_lag.push_back(est.cutoff_lag);
    rep.mean.push_back(est.mean);
  }

  if (!opt.out_prefix.empty()) {
    std::ofstream(opt.out_prefix + ".json") << rep.to_json().dump(2) << "\n";
    std::ofstream csv(opt.out_prefix + ".csv");
    csv << "variable,act,act_time_adjusted,cutoff_lag,mean\n";
    for (std::size_t k = 0; k < rep.act.size(); ++k) {
      csv << rep.variables[k] << ',' << detail::format_double(rep.act[k]) << ','
          << detail::format_double(rep.act_time_adjusted[k]) << ',' << rep.cutoff_lag[k] << ','
          << detail::format_double(rep.mean[k]) << '\n';
    }
    if (!opt.trace.empty()) {
      std::ofstream tr(opt.out_prefix + "_trace.csv");
      tr << "run,iteration,element,variable,value\n";
      for (const auto& v : opt.trace) {
        auto [j, i] = parse_variable(v);
        for (std::size_t r = 0; r < tables.size(); ++r) {
          auto s = tables[r].series(j, i);
          for (std::size_t k = 0; k < s.size(); ++k) {
            tr << tables[r].seed << ',' << tables[r].iter[k] << ',' << tables[r].element[k] << ',' << v
               << ',' << detail::format_double(s[k]) << '\n';
          }
        }
      }
    }
  }
  return rep;
}

}  // namespace seqpool
