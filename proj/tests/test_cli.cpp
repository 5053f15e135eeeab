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

#include "seqpool/experiment.hpp"
#include "seqpool/io.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace seqpool;
using namespace seqpool::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("seqpool_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) { return detail::read_file(p.string()); }

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

const char* kModel = R"(# test model
variant = loglink_poisson
P = 2
n = 12
phi = 0.9
rho = 0.7
c = -0.4
sigma = 0.6
seed = 5
)";

ExperimentConfig small_config(const fs::path& out) {
  ModelFile mf = parse_model(kModel);
  auto [x, y] = simulate(mf.spec, mf.seed);
  ExperimentConfig cfg{mf.spec, y, parse_schedule("ehmm direction=forward L=6\nehmm direction=reversed L=6\n")};
  cfg.iterations = 30;
  cfg.seeds = {1, 2};
  cfg.out_dir = out.string();
  return cfg;
}

int run_cli(const std::string& args) {
  std::string cmd = std::string(SEQPOOL_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(ModelFile, ParsesAndRoundTrips) {
  ModelFile mf = parse_model(kModel);
  EXPECT_EQ(mf.spec.dim(), 2);
  EXPECT_EQ(mf.spec.length(), 12);
  EXPECT_EQ(mf.seed, 5u);
  EXPECT_EQ(variant_name(mf.spec.obs()), "loglink_poisson");
  ModelFile back = parse_model(format_model(mf.spec, mf.seed));
  EXPECT_EQ(format_model(back.spec, back.seed), format_model(mf.spec, mf.seed));
  EXPECT_TRUE((back.spec.sigma_init().array() == mf.spec.sigma_init().array()).all());
}

TEST(ModelFile, Errors) {
  EXPECT_THROW(parse_model("variant = gaussian\nP = 1\nn = 3\nphi = 0.5\n"), ConfigError);  // no tau
  EXPECT_THROW(parse_model("variant = bogus\nP = 1\nn = 3\nphi = 0.5\n"), ConfigError);
  EXPECT_THROW(parse_model("variant = gaussian\nP = 1\nn = 3\nphi = 1.2\ntau = 1\n"), ConfigError);
  EXPECT_THROW(parse_model("variant = gaussian\nP = 1\nn = 3\nphi = 0.5\ntau = 1\ncolour = red\n"),
               ConfigError);
  EXPECT_THROW(parse_model("variant = gaussian\nP = 2\nn = 3\nphi = 0.5,0.4,0.1\ntau = 1\n"), ConfigError);
}

TEST(Schedule, Parses) {
  auto s = parse_schedule(
      "# comment\n"
      "ehmm direction=reversed L=50 eps=0.1,0.4 flip=true shift_window=3\n"
      "pgbs L=250\n"
      "metropolis reps=10 eps=0.2,0.8 record=false\n"
      "independence L=20 direction=reversed\n");
  ASSERT_EQ(s.size(), 4u);
  EXPECT_EQ(s[0].kind, UpdateKind::Ehmm);
  EXPECT_EQ(s[0].direction, Direction::Reversed);
  EXPECT_EQ(s[0].ehmm.L, 50);
  EXPECT_TRUE(s[0].ehmm.flip);
  EXPECT_EQ(s[0].ehmm.shift_window, 3);
  EXPECT_DOUBLE_EQ(s[0].ehmm.eps_hi, 0.4);
  EXPECT_EQ(s[1].kind, UpdateKind::Pgbs);
  EXPECT_EQ(s[1].ehmm.L, 250);
  EXPECT_EQ(s[2].reps, 10);
  EXPECT_FALSE(s[2].record);
  EXPECT_DOUBLE_EQ(s[2].eps_large, 0.8);
  EXPECT_EQ(s[3].ehmm.kernel, PoolKernel::Independence);
}

TEST(Schedule, Errors) {
  EXPECT_THROW(parse_schedule(""), ConfigError);
  EXPECT_THROW(parse_schedule("gibbs L=3\n"), ConfigError);
  EXPECT_THROW(parse_schedule("ehmm L=5 flip=true\n"), ConfigError);
  EXPECT_THROW(parse_schedule("pgbs direction=backward\n"), ConfigError);
  EXPECT_THROW(parse_schedule("ehmm size=3\n"), ConfigError);
  EXPECT_THROW(parse_schedule("metropolis reps=0\n"), ConfigError);
}

TEST(Dataset, SimulateWriteReadIsBitwiseStable) {
  ModelFile mf = parse_model(kModel);
  auto [x, y] = simulate(mf.spec, 9);
  std::ostringstream out;
  write_dataset(out, x, y);
  Dataset d = parse_dataset(out.str());
  EXPECT_TRUE((d.x.array() == x.array()).all());
  EXPECT_TRUE((d.y.array() == y.array()).all());
  auto [x2, y2] = simulate(mf.spec, 9);
  EXPECT_TRUE((x2.array() == d.x.array()).all());
  EXPECT_NO_THROW(check_dataset(mf.spec, d));
  d.y(0, 0) = 0.5;
  EXPECT_THROW(check_dataset(mf.spec, d), ConfigError);
}

TEST(Variables, Addressing) {
  EXPECT_EQ(variable_name(0, 299), "x[1][300]");
  auto [j, i] = parse_variable("x[1][300]");
  EXPECT_EQ(j, 0);
  EXPECT_EQ(i, 299);
  EXPECT_THROW(parse_variable("x[0][3]"), ConfigError);
  EXPECT_THROW(parse_variable("y[1][3]"), ConfigError);
  EXPECT_THROW(parse_variable("x[1][3]z"), ConfigError);
}

TEST(RunExperiment, WritesArtifactsWithProvenance) {
  fs::path out = scratch("artifacts");
  ExperimentConfig cfg = small_config(out);
  auto res = run_experiment(cfg);
  ASSERT_EQ(res.size(), 2u);
  for (const auto& r : res) {
    EXPECT_TRUE(r.ok) << r.error;
    EXPECT_EQ(r.samples, 60u);
    SampleTable t = read_samples(r.dir);
    EXPECT_EQ(t.n, 12);
    EXPECT_EQ(t.P, 2);
    EXPECT_EQ(t.seed, r.seed);
    ASSERT_EQ(t.count(), 60u);
    EXPECT_EQ(t.iter[0], 0);
    EXPECT_EQ(t.element[0], 0);
    EXPECT_EQ(t.iter[59], 29);
    EXPECT_EQ(t.element[59], 1);
    auto meta = nlohmann::json::parse(slurp(fs::path(r.dir) / "meta.json"));
    EXPECT_EQ(meta["status"], "ok");
    double ar = meta["acceptance"][0]["ar"]["rate"].get<double>();
    EXPECT_GT(ar, 0.0);
    EXPECT_LE(ar, 1.0);
    EXPECT_GT(meta["counters"]["obs"].get<std::uint64_t>(), 0u);
  }
  auto header = slurp(fs::path(res[0].dir) / "samples.csv").substr(0, 60);
  EXPECT_EQ(header.rfind("seed,iter,element,x[1][1],x[2][1],x[1][2]", 0), 0u);
}

TEST(RunExperiment, DeterministicPerSeed) {
  fs::path a = scratch("det_a"), b = scratch("det_b");
  ExperimentConfig ca = small_config(a), cb = small_config(b);
  cb.seeds = {2, 1};
  cb.threads = 1;
  run_experiment(ca);
  run_experiment(cb);
  for (const char* s : {"seed_1", "seed_2"}) {
    EXPECT_EQ(slurp(a / s / "samples.csv"), slurp(b / s / "samples.csv"));
  }
  EXPECT_NE(slurp(a / "seed_1" / "samples.csv"), slurp(a / "seed_2" / "samples.csv"));
}

TEST(RunExperiment, ZeroIterations) {
  fs::path out = scratch("zero");
  ExperimentConfig cfg = small_config(out);
  cfg.iterations = 0;
  auto res = run_experiment(cfg);
  SampleTable t = read_samples(res[0].dir);
  EXPECT_EQ(t.count(), 0u);
  auto meta = nlohmann::json::parse(slurp(fs::path(res[0].dir) / "meta.json"));
  EXPECT_EQ(meta["samples"], 0);
  EXPECT_EQ(meta["status"], "ok");
}

TEST(RunExperiment, ThinningAndRecordFlags) {
  fs::path out = scratch("thin");
  ExperimentConfig cfg = small_config(out);
  cfg.schedule = parse_schedule("pgbs L=8\nmetropolis reps=2 record=false\n");
  cfg.thin = 4;
  cfg.seeds = {3};
  auto res = run_experiment(cfg);
  SampleTable t = read_samples(res[0].dir);
  ASSERT_EQ(t.count(), 8u);  // 30 recorded, every 4th kept
  EXPECT_EQ(t.iter[1], 4);
  for (int e : t.element) EXPECT_EQ(e, 0);
}

TEST(RunExperiment, BinaryMatchesCsv) {
  fs::path a = scratch("fmt_csv"), b = scratch("fmt_bin");
  ExperimentConfig ca = small_config(a), cb = small_config(b);
  cb.format = SampleFormat::Binary;
  run_experiment(ca);
  run_experiment(cb);
  SampleTable tc = read_samples((a / "seed_1").string()), tb = read_samples((b / "seed_1").string());
  EXPECT_TRUE(fs::exists(b / "seed_1" / "samples.bin"));
  ASSERT_EQ(tc.count(), tb.count());
  EXPECT_TRUE((tc.values.array() == tb.values.array()).all());
  EXPECT_EQ(tc.iter, tb.iter);
  EXPECT_EQ(tc.element, tb.element);
}

TEST(RunExperiment, ConfigValidation) {
  fs::path out = scratch("invalid");
  ExperimentConfig cfg = small_config(out);
  cfg.seeds = {1, 1};
  EXPECT_THROW(run_experiment(cfg), ConfigError);
  cfg = small_config(out);
  cfg.iterations = -1;
  EXPECT_THROW(run_experiment(cfg), ConfigError);
  Vector phi(2);
  phi << 0.9, 0.5;
  ModelSpec spec(2, 12, phi, 0.7, GaussianObs{Vector::Ones(2)});
  ExperimentConfig bad{spec, ObservationSequence::Zero(12, 2),
                       parse_schedule("ehmm direction=reversed\n")};
  bad.iterations = 1;
  bad.seeds = {1};
  bad.out_dir = out.string();
  EXPECT_THROW(run_experiment(bad), ConfigError);
}

TEST(RunExperiment, NumericalFailureIsIsolatedPerSeed) {
  fs::path out = scratch("numerr");
  // zero rate with a positive count: every particle weight vanishes
  ModelSpec spec(1, 4, Vector::Constant(1, 0.5), 0.0, AbsPoisson{Vector::Zero(1)});
  ObservationSequence y = ObservationSequence::Zero(4, 1);
  y(2, 0) = 1.0;
  ExperimentConfig cfg{spec, y, parse_schedule("pgbs L=4\n")};
  cfg.iterations = 3;
  cfg.seeds = {1, 2};
  cfg.out_dir = out.string();
  auto res = run_experiment(cfg);
  for (const auto& r : res) {
    EXPECT_FALSE(r.ok);
    EXPECT_TRUE(r.numerical_failure);
    EXPECT_TRUE(fs::exists(fs::path(r.dir) / "error.txt"));
    auto meta = nlohmann::json::parse(slurp(fs::path(r.dir) / "meta.json"));
    EXPECT_EQ(meta["status"], "numerical-error");
  }
}

TEST(Diagnose, WhiteNoiseRunsAndAddressing) {
  fs::path root = scratch("white");
  Rng rng = make_stream(1);
  std::normal_distribution<double> nd;
  for (int s = 1; s <= 5; ++s) {
    fs::path d = root / ("seed_" + std::to_string(s));
    fs::create_directories(d);
    std::ofstream f(d / "samples.csv");
    f << "seed,iter,element,x[1][1],x[2][1],x[1][2],x[2][2]\n";
    for (int it = 0; it < 4000; ++it) {
      f << s << ',' << it << ",0";
      for (int k = 0; k < 4; ++k) f << ',' << detail::format_double(nd(rng));
      f << '\n';
    }
    nlohmann::json meta{{"secs_per_sample", 0.001 * s}};
    std::ofstream(d / "meta.json") << meta.dump();
  }
  DiagnoseOptions opt;
  opt.out_prefix = (root / "report").string();
  DiagnosticsReport rep = diagnose({root.string()}, opt);
  ASSERT_EQ(rep.act.size(), 4u);
  EXPECT_EQ(rep.runs.size(), 5u);
  for (double t : rep.act) {
    EXPECT_GE(t, 0.9);
    EXPECT_LE(t, 1.1);
  }
  EXPECT_DOUBLE_EQ(rep.secs_per_sample, 0.003);
  for (std::size_t k = 0; k < rep.act.size(); ++k) {
    EXPECT_EQ(rep.act_time_adjusted[k], rep.act[k] * rep.secs_per_sample);
  }
  auto j = nlohmann::json::parse(slurp(root / "report.json"));
  EXPECT_EQ(j["act_matrix"].size(), 2u);
  EXPECT_TRUE(fs::exists(root / "report.csv"));

  DiagnoseOptions one;
  one.variables = {"x[2][1]"};
  one.trace = {"x[2][1]"};
  one.out_prefix = (root / "one").string();
  DiagnosticsReport r1 = diagnose({(root / "seed_3").string()}, one);
  ASSERT_EQ(r1.act.size(), 1u);
  EXPECT_EQ(r1.variables[0], "x[2][1]");
  std::istringstream csv(slurp(root / "one.csv"));
  std::string line;
  int rows = 0;
  while (std::getline(csv, line)) rows += !line.empty();
  EXPECT_EQ(rows, 2);  // header plus one row
  EXPECT_TRUE(fs::exists(root / "one_trace.csv"));

  DiagnoseOptions oob;
  oob.variables = {"x[1][300]"};
  EXPECT_THROW(diagnose({root.string()}, oob), ConfigError);
}

TEST(Diagnose, MismatchedShapesRejected) {
  fs::path a = scratch("shape_a"), b = scratch("shape_b");
  ExperimentConfig ca = small_config(a);
  ca.seeds = {1};
  run_experiment(ca);
  ModelSpec other = loglink_spec(3, 12);
  auto [x, y] = simulate(other, 1);
  ExperimentConfig cb{other, y, parse_schedule("pgbs L=4\n")};
  cb.iterations = 10;
  cb.seeds = {1};
  cb.out_dir = b.string();
  run_experiment(cb);
  EXPECT_THROW(diagnose({(a / "seed_1").string(), (b / "seed_1").string()}, {}), ConfigError);
}

TEST(Cli, ExitCodes) {
  fs::path root = scratch("cli");
  write_text(root / "model.txt", kModel);
  write_text(root / "sched.txt", "ehmm direction=forward L=4\n");
  write_text(root / "bad_sched.txt", "ehmm L=3 flip=true\n");
  write_text(root / "zero_model.txt",
             "variant = abs_poisson\nP = 1\nn = 4\nphi = 0.5\nsigma = 0\n");
  write_text(root / "data.csv", "t,dim,x,y\n1,1,,0\n2,1,,0\n3,1,,1\n4,1,,0\n");
  write_text(root / "pgbs.txt", "pgbs L=4\n");
  std::string m = (root / "model.txt").string();
  EXPECT_EQ(run_cli("simulate --model " + m + " --out " + (root / "sim.csv").string()), 0);
  EXPECT_EQ(run_cli("run --model " + m + " --schedule " + (root / "sched.txt").string() +
                    " --data " + (root / "sim.csv").string() + " --iters 5 --seed 1,2 --out " +
                    (root / "out").string()),
            0);
  EXPECT_TRUE(fs::exists(root / "out" / "seed_2" / "samples.csv"));
  EXPECT_EQ(run_cli("diagnose " + (root / "out").string() + " --burn-in 0 --out " +
                    (root / "rep").string()),
            0);
  EXPECT_EQ(run_cli("run --model " + m + " --schedule " + (root / "bad_sched.txt").string() +
                    " --iters 5 --seed 1 --out " + (root / "bad").string()),
            2);
  EXPECT_EQ(run_cli("run --model " + m + " --schedule " + (root / "sched.txt").string() +
                    " --iters 5 --seed 1,1 --out " + (root / "bad").string()),
            2);
  EXPECT_EQ(run_cli("run --model " + (root / "zero_model.txt").string() + " --schedule " +
                    (root / "pgbs.txt").string() + " --data " + (root / "data.csv").string() +
                    " --iters 5 --seed 1 --out " + (root / "num").string()),
            3);
  EXPECT_EQ(run_cli("frobnicate"), 2);
}
