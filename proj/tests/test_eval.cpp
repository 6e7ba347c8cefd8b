#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "json.hpp"
#include "support.hpp"

using namespace dcgym;
using dcgym::testing::preset;
using dcgym::testing::slurp;
using dcgym::testing::TempDir;

namespace {

EpisodeRecord run(const std::string& preset_name, const std::string& policy, std::uint64_t seed, double lambda = 1.0) {
  auto cfg = preset(preset_name);
  cfg.policy.name = policy;
  cfg.workload.arrival_scale = lambda;
  return run_episode(cfg, seed);
}

struct CliResult {
  int code = -1;
  std::string out;
};

CliResult cli(const std::string& args) {
  std::string cmd = std::string(DCGYM_CLI_PATH) + " " + args + " 2>&1";
  CliResult r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string preset_path(const std::string& name) { return dcgym::testing::source_path("presets/" + name + ".json"); }

std::string edited_preset(const TempDir& dir, const std::string& name, const std::function<void(nlohmann::json&)>& edit) {
  auto j = nlohmann::json::parse(slurp(preset_path(name)));
  edit(j);
  return dir.write(name + "_edited.json", j.dump(2));
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(Metrics, ZeroWorkloadEpisode) {
  auto rec = run("tiny_desk", "greedy", 0, 0.0);
  const auto& m = rec.metrics;
  EXPECT_EQ(m.u_mean, 0.0);
  EXPECT_EQ(m.q_mean_total(), 0.0);
  EXPECT_EQ(m.completed, 0);
  EXPECT_FALSE(m.energy_per_job.has_value());
  double cooling = 0.0;
  for (const auto& s : rec.steps) {
    EXPECT_EQ(s.energy_compute_j, 0.0);
    cooling += s.energy_cooling_j;
  }
  EXPECT_DOUBLE_EQ(m.energy_kwh, joules_to_kwh(cooling));
}

TEST(Metrics, SameSeedSameResult) {
  auto a = run("tiny_desk", "powercool", 6);
  auto b = run("tiny_desk", "powercool", 6);
  EXPECT_EQ(a.metrics, b.metrics);
  auto cfg = preset("tiny_desk");
  EXPECT_EQ(a.log(cfg), b.log(cfg));
}

TEST(Metrics, EnergyAndCostCloseFromLog) {
  auto cfg = preset("tiny_desk");
  cfg.policy.name = "thermal";
  cfg.workload.arrival_scale = 1.3;
  auto rec = run_episode(cfg, 2);
  std::istringstream in(rec.log(cfg));
  auto log = parse_log(in);
  double kwh = 0.0, cost = 0.0;
  for (const auto& s : log.steps)
    for (int d = 0; d < cfg.num_datacenters(); ++d) {
      auto k = static_cast<std::size_t>(d);
      double compute = 0.0;
      for (const auto& c : cfg.clusters)
        if (c.physics.datacenter == d) compute += c.physics.phi * s.utilization[static_cast<std::size_t>(&c - cfg.clusters.data())];
      EXPECT_NEAR(compute, s.compute_power[k], 1e-9 * (1.0 + compute));
      double e = (compute + s.cooling[k]) * cfg.dt() / 3.6e6;
      kwh += e;
      cost += s.price[k] * e;
    }
  EXPECT_NEAR(rec.metrics.energy_kwh, kwh, 1e-9 * kwh);
  EXPECT_NEAR(rec.metrics.cost_usd, cost, 1e-9 * cost);
  ASSERT_TRUE(rec.metrics.energy_per_job.has_value());
  EXPECT_DOUBLE_EQ(*rec.metrics.energy_per_job, rec.metrics.energy_kwh / static_cast<double>(rec.metrics.completed));
}

TEST(Metrics, LogRoundTripIsExact) {
  auto cfg = preset("tiny_desk");
  cfg.policy.name = "hmpc";
  auto rec = run_episode(cfg, 8);
  std::string text = rec.log(cfg);
  std::istringstream in(text);
  auto log = parse_log(in);
  EXPECT_EQ(log.num_clusters, cfg.num_clusters());
  EXPECT_EQ(log.num_datacenters, cfg.num_datacenters());
  EXPECT_EQ(log_to_string(log.steps, log.num_clusters, log.num_datacenters), text);
  EXPECT_EQ(compute_metrics(log.steps, cfg), rec.metrics);
}

TEST(Metrics, MalformedLogRejected) {
  std::istringstream empty("");
  EXPECT_THROW(parse_log(empty), ParseError);
  auto rec = run("tiny_desk", "greedy", 0);
  std::string text = rec.log(preset("tiny_desk"));
  text.insert(text.find('\n') + 1, "1,2,3\n");
  std::istringstream bad(text);
  EXPECT_THROW(parse_log(bad), ParseError);
}

TEST(Metrics, InternalConsistency) {
  auto cfg = preset("tiny_desk");
  for (double lambda : {0.5, 2.5}) {
    cfg.workload.arrival_scale = lambda;
    auto rec = run_episode(cfg, 1);
    const auto& m = rec.metrics;
    EXPECT_GE(m.theta_max, m.theta_mean);
    bool hot = false;
    for (const auto& s : rec.steps)
      for (int d = 0; d < cfg.num_datacenters(); ++d)
        hot = hot || s.theta[static_cast<std::size_t>(d)] > cfg.datacenters[static_cast<std::size_t>(d)].physics.theta_soft;
    EXPECT_EQ(m.throttle_pct > 0.0, hot);
    EXPECT_GE(m.u_mean, 0.0);
    EXPECT_LE(m.u_mean, 100.0);
    EXPECT_LE(m.completed, m.arrivals);
  }
}

TEST(Paired, WorkloadAndWeatherSharedAcrossPolicies) {
  std::uint64_t sched = 0, amb = 0;
  for (const char* p : {"random", "greedy", "thermal", "powercool", "scmpc", "hmpc"}) {
    auto rec = run("tiny_desk", p, 4);
    if (sched == 0) {
      sched = rec.schedule_hash;
      amb = rec.ambient_hash;
    }
    EXPECT_EQ(rec.schedule_hash, sched) << p;
    EXPECT_EQ(rec.ambient_hash, amb) << p;
  }
  auto other = run("tiny_desk", "greedy", 5);
  EXPECT_NE(other.schedule_hash, sched);
  EXPECT_NE(other.ambient_hash, amb);
}

TEST(Experiment, SingleCellHasZeroSpread) {
  ExperimentSpec spec;
  spec.policies = {"greedy"};
  spec.seeds = {3};
  auto cells = run_experiment(preset("tiny_desk"), spec);
  ASSERT_EQ(cells.size(), 1u);
  auto aggs = aggregate(cells);
  ASSERT_EQ(aggs.size(), 1u);
  EXPECT_EQ(aggs[0].runs, 1);
  EXPECT_EQ(aggs[0].std, EpisodeMetrics{});
  EXPECT_EQ(aggs[0].mean.energy_kwh, cells[0].record->metrics.energy_kwh);
}

TEST(Experiment, AggregateMatchesHandStatistics) {
  ExperimentSpec spec;
  spec.policies = {"random"};
  spec.seeds = {0, 1, 2};
  spec.jobs = 2;
  auto cells = run_experiment(preset("tiny_desk"), spec);
  auto aggs = aggregate(cells);
  std::vector<double> e;
  for (const auto& c : cells) e.push_back(c.record->metrics.energy_kwh);
  double mean = (e[0] + e[1] + e[2]) / 3.0;
  double var = 0.0;
  for (double v : e) var += (v - mean) * (v - mean);
  EXPECT_NEAR(aggs[0].mean.energy_kwh, mean, 1e-12 * mean);
  EXPECT_NEAR(aggs[0].std.energy_kwh, std::sqrt(var / 2.0), 1e-9 * mean);
}

TEST(Experiment, ParallelMatchesSerial) {
  ExperimentSpec spec;
  spec.policies = {"greedy", "thermal"};
  spec.seeds = {0, 1};
  auto serial = run_experiment(preset("tiny_desk"), spec);
  spec.jobs = 3;
  auto parallel = run_experiment(preset("tiny_desk"), spec);
  ASSERT_EQ(serial.size(), parallel.size());
  for (std::size_t k = 0; k < serial.size(); ++k) {
    EXPECT_EQ(serial[k].policy, parallel[k].policy);
    EXPECT_EQ(serial[k].seed, parallel[k].seed);
    EXPECT_EQ(serial[k].record->metrics, parallel[k].record->metrics);
  }
}

TEST(Experiment, FullGridCardinality) {
  ExperimentSpec spec;
  spec.policies = {"random", "greedy", "thermal", "powercool", "scmpc", "hmpc"};
  spec.seeds = {0, 1, 2, 3, 4};
  auto cfg = preset("tiny_desk");
  cfg.workload.episode_length = 24;
  auto cells = run_experiment(cfg, spec);
  EXPECT_EQ(cells.size(), 30u);
  for (const auto& c : cells) EXPECT_TRUE(c.ok()) << c.error;
  auto aggs = aggregate(cells);
  EXPECT_EQ(aggs.size(), 6u);
  auto table = summary_table(aggs);
  for (const auto& p : spec.policies) EXPECT_NE(table.find(display_name(p)), std::string::npos);
  EXPECT_EQ(count_lines(cells_csv(cells)), 31u);
}

TEST(Experiment, InvalidSpecRejected) {
  ExperimentSpec spec;
  spec.seeds = {0};
  EXPECT_THROW(run_experiment(preset("tiny_desk"), spec), ConfigError);
  spec.policies = {"greedy"};
  spec.lambdas = {-1.0};
  EXPECT_THROW(run_experiment(preset("tiny_desk"), spec), ConfigError);
}

TEST(Sweep, CongestionGrowsUnderOverload) {
  ExperimentSpec spec;
  spec.policies = {"greedy"};
  spec.seeds = {0};
  spec.lambdas = {0.5, 1.0, 2.0};
  auto pts = frontier(aggregate(run_experiment(preset("tiny_desk"), spec)));
  ASSERT_EQ(pts.size(), 3u);
  EXPECT_GT(pts[2].queue, pts[1].queue);
  EXPECT_GE(pts[1].queue, pts[0].queue);
}

TEST(Sweep, SingleLambdaDegeneratesToExperiment) {
  ExperimentSpec spec;
  spec.policies = {"greedy", "random"};
  spec.seeds = {0};
  auto pts = frontier(aggregate(run_experiment(preset("tiny_desk"), spec)));
  EXPECT_EQ(pts.size(), 2u);
  EXPECT_EQ(count_lines(frontier_csv(pts)), 3u);
}

TEST(Sweep, LightLoadNeverThrottles) {
  for (const char* p : {"random", "greedy", "thermal", "powercool", "scmpc", "hmpc"}) {
    auto rec = run("table1_nominal", p, 0, 0.5);
    EXPECT_EQ(rec.metrics.throttle_pct, 0.0) << p;
  }
}

TEST(Knee, FlatThenSteep) {
  std::vector<double> x{0.5, 1.0, 1.5, 2.0, 2.5};
  auto k = detect_knee(x, {0.0, 0.1, 0.2, 30.0, 60.0});
  ASSERT_TRUE(k.has_value());
  EXPECT_EQ(k->lambda, 1.5);
  // Slopes 0.2, 0.2, 59.6, 60; the earlier slope is lifted to 1% of 60.
  EXPECT_NEAR(k->ratio, 59.6 / 0.6, 1e-9);
}

TEST(Knee, ExactlyZeroBeforeUsesFlatFloor) {
  std::vector<double> x{0.5, 1.0, 1.5, 2.0};
  auto k = detect_knee(x, {0.0, 0.0, 0.0, 10.0});
  ASSERT_TRUE(k.has_value());
  EXPECT_EQ(k->lambda, 1.5);
  EXPECT_NEAR(k->ratio, 100.0, 1e-9);
}

TEST(Knee, LinearOrFlatHasNone) {
  std::vector<double> x{1, 2, 3, 4, 5};
  EXPECT_FALSE(detect_knee(x, {1, 2, 3, 4, 5}).has_value());
  EXPECT_FALSE(detect_knee(x, {0, 0, 0, 0, 0}).has_value());
  EXPECT_FALSE(detect_knee({1, 2}, {0, 5}).has_value());
}

TEST(Cli, ValidateShippedPreset) {
  auto r = cli("validate --config " + preset_path("table1_nominal"));
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("valid"), std::string::npos);
}

TEST(Cli, ValidateNamesEveryViolation) {
  TempDir dir;
  auto path = edited_preset(dir, "table1_nominal", [](nlohmann::json& j) {
    j["datacenters"][0]["g_min"] = 1.5;
    j["datacenters"][2]["theta_soft"] = 40;
  });
  auto r = cli("validate --config " + path);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("g_min"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("theta_soft"), std::string::npos) << r.out;
}

TEST(Cli, UnreadableOrBrokenConfigExitsNonZero) {
  TempDir dir;
  EXPECT_EQ(cli("validate --config " + dir.file("missing.json")).code, 1);
  auto broken = dir.write("broken.json", "{\"datacenters\": [");
  auto r = cli("validate --config " + broken);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("JSON"), std::string::npos);
  EXPECT_EQ(cli("frobnicate").code, 1);
  EXPECT_EQ(cli("sweep --config " + preset_path("tiny_desk")).code, 1);
}

TEST(Cli, EpisodeLogReplaysToSameMetrics) {
  TempDir dir;
  auto r = cli("episode --config " + preset_path("tiny_desk") + " --policy thermal --seed 3 --save-schedule --out " + dir.path());
  ASSERT_EQ(r.code, 0) << r.out;
  auto log = dir.file("thermal_l1_s3.csv");
  ASSERT_TRUE(std::filesystem::exists(log));
  ASSERT_TRUE(std::filesystem::exists(dir.file("schedule_s3.csv")));
  auto replay = cli("replay --config " + preset_path("tiny_desk") + " --log " + log);
  ASSERT_EQ(replay.code, 0) << replay.out;
  std::istringstream lines(replay.out);
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    EXPECT_NE(r.out.find(line), std::string::npos) << line;
    ++n;
  }
  EXPECT_GT(n, 5);

  // Replaying the saved schedule as a fixture reproduces the log bit for bit.
  TempDir again;
  auto f = cli("episode --config " + preset_path("tiny_desk") + " --policy thermal --seed 3 --fixture " +
               dir.file("schedule_s3.csv") + " --out " + again.path());
  ASSERT_EQ(f.code, 0) << f.out;
  EXPECT_EQ(slurp(again.file("thermal_l1_s3.csv")), slurp(log));
}

TEST(Cli, ExperimentSummaryRegeneratesFromLogs) {
  TempDir dir;
  auto r = cli("rq1 --config " + preset_path("tiny_desk") + " --policy greedy,hmpc --seeds 0,1 --jobs 2 --out " + dir.path());
  ASSERT_EQ(r.code, 0) << r.out;
  auto summary = slurp(dir.file("summary.txt"));
  EXPECT_FALSE(summary.empty());
  auto replay = cli("replay --config " + preset_path("tiny_desk") + " --logs " + dir.file("logs"));
  ASSERT_EQ(replay.code, 0) << replay.out;
  EXPECT_EQ(replay.out, summary);
}

TEST(Cli, OutputDirectoryIsProtected) {
  TempDir dir;
  dir.write("keep.txt", "x");
  auto args = "rq1 --config " + preset_path("tiny_desk") + " --policy greedy --seeds 0 --out " + dir.path();
  EXPECT_EQ(cli(args).code, 1);
  EXPECT_EQ(cli(args + " --overwrite").code, 0);
}

TEST(Cli, SweepWritesFrontierRows) {
  TempDir dir;
  auto r = cli("rq2 --config " + preset_path("tiny_desk") + " --policy greedy,powercool --lambda-grid 0.5,1,2 --seeds 0 --out " +
               dir.path());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(count_lines(slurp(dir.file("frontier.csv"))), 1u + 3u * 2u);
  EXPECT_EQ(count_lines(slurp(dir.file("cells.csv"))), 1u + 3u * 2u);
  EXPECT_NE(r.out.find("knee greedy"), std::string::npos);
}
