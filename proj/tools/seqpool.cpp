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

// seqpool command-line front end: simulate, run, diagnose, oracle.

#include "seqpool/experiment.hpp"
#include "seqpool/io.hpp"
#include "seqpool/oracle.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const auto& part : seqpool::detail::split(s, ',')) {
    auto v = seqpool::detail::parse_int(seqpool::detail::trim(part), "seed");
    if (v < 0) throw seqpool::ConfigError("seeds must be >= 0");
    out.push_back(static_cast<std::uint64_t>(v));
  }
  if (out.empty()) throw seqpool::ConfigError("no seeds given");
  return out;
}

// Observations come from --data when given, else they are simulated from the
// model file's seed.
seqpool::Dataset obtain_data(const seqpool::ModelFile& mf, const std::string& data_path) {
  if (!data_path.empty()) {
    seqpool::Dataset d = seqpool::load_dataset(data_path);
    seqpool::check_dataset(mf.spec, d);
    return d;
  }
  auto [x, y] = seqpool::simulate(mf.spec, mf.seed);
  return {x, y};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"seqpool: embedded-HMM, PGBS and Metropolis samplers for state space models"};
  app.require_subcommand(1);

  std::string model_path, schedule_path, out, data_path, seeds_arg, format = "csv";
  long long iters = 1000;
  std::size_t thin = 1;
  double init = 0.0;
  int threads = 0;

  auto* sim = app.add_subcommand("simulate", "Simulate a dataset (x, y) from a model file");
  sim->add_option("--model", model_path, "Model file")->required()->check(CLI::ExistingFile);
  sim->add_option("--seed", seeds_arg, "Seed (defaults to the model file's seed)");
  sim->add_option("--out", out, "Output CSV (t,dim,x,y); '-' for stdout")->required();

  auto* run = app.add_subcommand("run", "Run an update schedule for one or more seeds");
  run->add_option("--model", model_path, "Model file")->required()->check(CLI::ExistingFile);
  run->add_option("--schedule", schedule_path, "Schedule file")->required()->check(CLI::ExistingFile);
  run->add_option("--data", data_path, "Dataset CSV (default: simulate from the model seed)")
      ->check(CLI::ExistingFile);
  run->add_option("--iters", iters, "Iterations of the schedule")->check(CLI::NonNegativeNumber);
  run->add_option("--seed", seeds_arg, "Seeds, comma separated")->required();
  run->add_option("--thin", thin, "Keep every T-th recorded sample")->check(CLI::PositiveNumber);
  run->add_option("--out", out, "Output directory")->required();
  run->add_option("--init", init, "Initial value of every x[j][i]");
  run->add_option("--format", format, "Sample format")->check(CLI::IsMember({"csv", "bin"}));
  run->add_option("--threads", threads, "Worker cap (default: SEQPOOL_THREADS or all cores)");

  std::vector<std::string> run_dirs, vars, trace;
  double burn_in = 0.1, threshold = 0.01;
  std::string cutoff = "first_below";
  auto* diag = app.add_subcommand("diagnose", "Pooled autocorrelation times over runs");
  diag->add_option("runs", run_dirs, "Run directories (or a directory of seed_* runs)")->required();
  diag->add_option("--vars", vars, "Variables x[dim][time] (default: all)")->delimiter(',');
  diag->add_option("--trace", trace, "Variables to export as trace CSV")->delimiter(',');
  diag->add_option("--thin", thin, "Additional thinning before estimation")->check(CLI::PositiveNumber);
  diag->add_option("--burn-in", burn_in, "Fraction discarded from each run")->check(CLI::Range(0.0, 0.99));
  diag->add_option("--cutoff", cutoff, "Cutoff rule")->check(CLI::IsMember({"first_below", "geyer"}));
  diag->add_option("--threshold", threshold, "Autocorrelation threshold for first_below");
  diag->add_option("--out", out, "Output prefix for .json/.csv")->required();

  int grid = 2000;
  auto* orc = app.add_subcommand("oracle", "Exact posterior means and variances (Kalman or grid)");
  orc->add_option("--model", model_path, "Model file")->required()->check(CLI::ExistingFile);
  orc->add_option("--data", data_path, "Dataset CSV (default: simulate from the model seed)")
      ->check(CLI::ExistingFile);
  orc->add_option("--grid", grid, "Grid points for the P = 1 grid oracle")->check(CLI::Range(3, 1000000));
  orc->add_option("--out", out, "Output CSV; '-' for stdout")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*sim) {
      seqpool::ModelFile mf = seqpool::load_model(model_path);
      std::uint64_t seed = seeds_arg.empty() ? mf.seed : parse_seeds(seeds_arg).front();
      auto [x, y] = seqpool::simulate(mf.spec, seed);
      if (out == "-") seqpool::write_dataset(std::cout, x, y);
      else seqpool::write_dataset(out, x, y);
      return 0;
    }
    if (*run) {
      seqpool::ModelFile mf = seqpool::load_model(model_path);
      seqpool::Dataset d = obtain_data(mf, data_path);
      seqpool::ExperimentConfig cfg{mf.spec, d.y, seqpool::load_schedule(schedule_path)};
      cfg.iterations = iters;
      cfg.seeds = parse_seeds(seeds_arg);
      cfg.thin = thin;
      cfg.out_dir = out;
      cfg.init = init;
      cfg.format = format == "bin" ? seqpool::SampleFormat::Binary : seqpool::SampleFormat::Csv;
      cfg.threads = threads;
      auto results = seqpool::run_experiment(cfg);
      int rc = 0;
      for (const auto& r : results) {
        std::cout << "seed " << r.seed << ": " << (r.ok ? "ok" : "FAILED") << ", " << r.samples
                  << " samples, " << r.seconds << " s -> " << r.dir << "\n";
        if (!r.ok) {
          std::cerr << "seed " << r.seed << ": " << r.error << "\n";
          rc = std::max(rc, r.numerical_failure ? kExitNumerical : 1);
        }
      }
      return rc;
    }
    if (*diag) {
      seqpool::DiagnoseOptions opt;
      opt.act.burn_in_frac = burn_in;
      opt.act.threshold = threshold;
      opt.act.thin = thin;
      opt.act.cutoff = cutoff == "geyer" ? seqpool::CutoffRule::Geyer : seqpool::CutoffRule::FirstBelow;
      opt.variables = vars;
      opt.trace = trace;
      opt.out_prefix = out;
      auto rep = seqpool::diagnose(run_dirs, opt);
      std::cout << rep.variables.size() << " variables over " << rep.runs.size() << " runs -> " << out
                << ".json, " << out << ".csv\n";
      return 0;
    }
    if (*orc) {
      seqpool::ModelFile mf = seqpool::load_model(model_path);
      seqpool::Dataset d = obtain_data(mf, data_path);
      std::ofstream file;
      std::ostream* os = &std::cout;
      if (out != "-") {
        file.open(out);
        if (!file) throw seqpool::ConfigError("cannot write '" + out + "'");
        os = &file;
      }
      *os << "variable,mean,variance\n";
      using seqpool::detail::format_double;
      if (std::holds_alternative<seqpool::GaussianObs>(mf.spec.obs())) {
        auto kf = seqpool::kalman_smoother(mf.spec, d.y);
        for (int i = 0; i < mf.spec.length(); ++i)
          for (int j = 0; j < mf.spec.dim(); ++j)
            *os << seqpool::variable_name(j, i) << ',' << format_double(kf.means(i, j)) << ','
                << format_double(kf.covariances[i](j, j)) << '\n';
      } else if (mf.spec.dim() == 1) {
        auto gp = seqpool::grid_hmm_posterior(mf.spec, d.y, grid);
        if (gp.narrow) std::cerr << "warning: grid too narrow, boundary mass " << gp.boundary_mass << "\n";
        for (int i = 0; i < mf.spec.length(); ++i)
          *os << seqpool::variable_name(0, i) << ',' << format_double(gp.means[i]) << ','
              << format_double(gp.variances[i]) << '\n';
      } else {
        throw seqpool::ConfigError("no exact oracle for a non-Gaussian model with P > 1");
      }
      return 0;
    }
  } catch (const seqpool::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    // ConfigError and ParameterError
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
