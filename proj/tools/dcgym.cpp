// Command-line driver: validate configs, run episodes and experiments,
// regenerate summaries from saved logs.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dcgym/dcgym.hpp"

namespace fs = std::filesystem;
using namespace dcgym;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

const std::vector<std::string> kAllPolicies = {"random", "greedy", "thermal", "powercool", "scmpc", "hmpc"};
const std::vector<std::string> kSweepPolicies = {"greedy", "powercool", "hmpc"};
const std::vector<double> kSweepGrid = {0.5, 1.0, 1.5, 2.0, 2.5, 3.0};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> policies;
  std::vector<double> lambdas;
  std::string out;
  int jobs = 1;
  bool verbose = false;
  bool overwrite = false;
  std::string log_path;
  std::string logs_dir;
  std::string fixture;
  bool save_schedule = false;
};

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write '" + p.string() + "'");
  os << text;
}

/// Creates the output directory. A non-empty directory is only reused with
/// --overwrite.
fs::path prepare_out(const Options& o, const std::string& fallback) {
  fs::path dir = o.out.empty() ? fs::path(fallback) : fs::path(o.out);
  if (fs::exists(dir) && !fs::is_empty(dir) && !o.overwrite)
    throw UsageError("output directory '" + dir.string() + "' is not empty (pass --overwrite to reuse it)");
  fs::create_directories(dir);
  return dir;
}

WorldConfig load_valid(const Options& o) {
  if (o.config.empty()) throw UsageError("--config is required");
  WorldConfig cfg = load_config(o.config);
  cfg.validate();
  cfg.mpc.verbose = cfg.mpc.verbose || o.verbose;
  return cfg;
}

std::vector<std::uint64_t> seeds_or(const Options& o, std::vector<std::uint64_t> fallback) {
  return o.seeds.empty() ? fallback : o.seeds;
}

void print_metrics(const EpisodeMetrics& m) {
  std::printf("cpu_util_pct      %.4f\n", m.u_mean_cpu);
  std::printf("gpu_util_pct      %.4f\n", m.u_mean_gpu);
  std::printf("cpu_queue         %.4f\n", m.q_mean_cpu);
  std::printf("gpu_queue         %.4f\n", m.q_mean_gpu);
  std::printf("theta_mean_c      %.4f\n", m.theta_mean);
  std::printf("theta_max_c       %.4f\n", m.theta_max);
  std::printf("throttle_pct      %.4f\n", m.throttle_pct);
  std::printf("energy_kwh        %.4f\n", m.energy_kwh);
  if (m.energy_per_job) std::printf("energy_per_job    %.6f\n", *m.energy_per_job);
  else std::printf("energy_per_job    n/a\n");
  std::printf("cost_usd          %.4f\n", m.cost_usd);
  std::printf("completed         %lld\n", static_cast<long long>(m.completed));
  std::printf("arrivals          %lld\n", static_cast<long long>(m.arrivals));
}

void report_failures(const std::vector<Cell>& cells) {
  for (const auto& c : cells)
    if (!c.ok())
      std::fprintf(stderr, "cell %s failed: %s\n", cell_stem(c.policy, c.lambda, c.seed).c_str(), c.error.c_str());
}

int cmd_validate(const Options& o) {
  if (o.config.empty()) throw UsageError("--config is required");
  WorldConfig cfg = load_config(o.config);
  auto issues = cfg.check();
  if (issues.empty()) {
    std::printf("%s: valid (%d datacenters, %d clusters)\n", o.config.c_str(), cfg.num_datacenters(), cfg.num_clusters());
    return kExitOk;
  }
  std::printf("%s: %zu problem(s)\n", o.config.c_str(), issues.size());
  for (const auto& m : issues) std::printf("  %s\n", m.c_str());
  return kExitUsage;
}

int cmd_episode(const Options& o) {
  WorldConfig cfg = load_valid(o);
  if (!o.policies.empty()) cfg.policy.name = o.policies.front();
  cfg.validate();
  std::uint64_t seed = seeds_or(o, {0}).front();
  RunOptions ro;
  ro.check_invariants = true;
  if (!o.fixture.empty()) {
    std::ifstream in(o.fixture);
    if (!in) throw UsageError("cannot open fixture '" + o.fixture + "'");
    ro.schedule = read_schedule(in, cfg.episode_length());
  }
  auto t0 = std::chrono::steady_clock::now();
  EpisodeRecord r = run_episode(cfg, seed, ro);
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.out.empty()) {
    fs::path dir = prepare_out(o, o.out);
    std::string stem = cell_stem(cfg.policy.name, cfg.workload.arrival_scale, seed);
    write_file(dir / (stem + ".csv"), r.log(cfg));
    if (o.verbose && !r.diagnostics.empty()) write_file(dir / (stem + ".solver.csv"), diagnostics_to_string(r.diagnostics));
    if (o.save_schedule) {
      Environment env(cfg);
      env.reset(seed);
      write_file(dir / ("schedule_s" + std::to_string(seed) + ".csv"), schedule_to_string(env.schedule()));
    }
  }
  std::printf("policy            %s\nseed              %llu\n", cfg.policy.name.c_str(), static_cast<unsigned long long>(seed));
  print_metrics(r.metrics);
  std::printf("wall_seconds      %.3f\n", secs);
  for (const auto& v : r.violations) std::fprintf(stderr, "invariant: %s\n", v.c_str());
  if (o.verbose && !r.diagnostics.empty())
    std::printf("solver            %d fallbacks, worst residual %.3g\n", r.fallbacks, r.solver_residual);
  return r.violations.empty() ? kExitOk : kExitRuntime;
}

int cmd_rq1(const Options& o) {
  WorldConfig cfg = load_valid(o);
  fs::path dir = prepare_out(o, "out/rq1");
  fs::create_directories(dir / "logs");
  ExperimentSpec spec;
  spec.policies = o.policies.empty() ? kAllPolicies : o.policies;
  spec.seeds = seeds_or(o, {0, 1, 2, 3, 4});
  spec.lambdas = {cfg.workload.arrival_scale};
  spec.jobs = o.jobs;
  spec.log_dir = (dir / "logs").string();
  spec.verbose = o.verbose;
  auto cells = run_experiment(cfg, spec);
  auto aggs = aggregate(cells);
  std::string table = summary_table(aggs);
  write_file(dir / "summary.txt", table);
  write_file(dir / "cells.csv", cells_csv(cells));
  std::fputs(table.c_str(), stdout);
  report_failures(cells);
  return kExitOk;
}

int run_sweep(const Options& o, const std::vector<double>& grid, const std::vector<std::string>& policies) {
  WorldConfig cfg = load_valid(o);
  fs::path dir = prepare_out(o, "out/sweep");
  fs::create_directories(dir / "logs");
  ExperimentSpec spec;
  spec.policies = policies;
  spec.seeds = seeds_or(o, {0, 1, 2, 3, 4});
  spec.lambdas = grid;
  spec.jobs = o.jobs;
  spec.log_dir = (dir / "logs").string();
  spec.verbose = o.verbose;
  auto cells = run_experiment(cfg, spec);
  auto aggs = aggregate(cells);
  auto pts = frontier(aggs);
  write_file(dir / "frontier.csv", frontier_csv(pts));
  write_file(dir / "thermal.csv", thermal_csv(cells));
  write_file(dir / "cells.csv", cells_csv(cells));
  std::printf("%-8s %-10s %12s %12s %10s %10s\n", "lambda", "policy", "util_pct", "queue", "theta_max", "throttle");
  for (const auto& p : pts)
    std::printf("%-8s %-10s %12.2f %12.2f %10.2f %10.2f\n", format_lambda(p.lambda).c_str(), p.policy.c_str(),
                p.utilization, p.queue, p.theta_max, p.throttle_pct);
  for (const auto& pol : policies) {
    std::vector<double> x, y;
    for (const auto& p : pts)
      if (p.policy == pol) {
        x.push_back(p.lambda);
        y.push_back(p.queue);
      }
    auto knee = detect_knee(x, y);
    if (knee) std::printf("knee %-10s lambda*=%s slope ratio %.1f\n", pol.c_str(), format_lambda(knee->lambda).c_str(), knee->ratio);
    else std::printf("knee %-10s none\n", pol.c_str());
  }
  report_failures(cells);
  return kExitOk;
}

int cmd_replay(const Options& o) {
  if (o.config.empty()) throw UsageError("--config is required");
  WorldConfig cfg = load_config(o.config);
  cfg.validate();
  if (!o.log_path.empty()) {
    auto log = read_log_file(o.log_path);
    if (log.num_clusters != cfg.num_clusters() || log.num_datacenters != cfg.num_datacenters())
      throw UsageError("log shape does not match the config");
    print_metrics(compute_metrics(log.steps, cfg));
    return kExitOk;
  }
  if (o.logs_dir.empty()) throw UsageError("replay needs --log FILE or --logs DIR");
  // Rebuild cells from <policy>_l<lambda>_s<seed>.csv files.
  static const std::regex name(R"(([a-z]+)_l([0-9.eE+-]+)_s([0-9]+)\.csv)");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(o.logs_dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Cell> cells;
  for (const auto& f : files) {
    std::smatch m;
    std::string fn = f.filename().string();
    if (!std::regex_match(fn, m, name)) continue;
    Cell c;
    c.policy = m[1];
    c.lambda = std::stod(m[2]);
    c.seed = std::stoull(m[3]);
    auto log = read_log_file(f.string());
    EpisodeRecord r;
    r.policy = c.policy;
    r.seed = c.seed;
    r.lambda = c.lambda;
    r.metrics = compute_metrics(log.steps, cfg);
    c.record = std::move(r);
    cells.push_back(std::move(c));
  }
  if (cells.empty()) throw UsageError("no episode logs found in '" + o.logs_dir + "'");
  // Match the experiment's column order.
  std::stable_sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) {
    auto rank = [](const std::string& p) {
      auto it = std::find(kAllPolicies.begin(), kAllPolicies.end(), p);
      return static_cast<std::size_t>(it - kAllPolicies.begin());
    };
    if (a.lambda != b.lambda) return a.lambda < b.lambda;
    if (rank(a.policy) != rank(b.policy)) return rank(a.policy) < rank(b.policy);
    return a.seed < b.seed;
  });
  std::fputs(summary_table(aggregate(cells)).c_str(), stdout);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Geo-distributed datacenter scheduling simulator"};
  app.require_subcommand(1);
  Options o;
  std::string seeds_text;
  std::string policy_text;
  std::string grid_text;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "World definition (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed,--seeds", seeds_text, "Seed or comma-separated seeds");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_flag("--verbose", o.verbose, "Write solver diagnostics");
    sub->add_flag("--overwrite", o.overwrite, "Reuse a non-empty output directory");
  };
  auto* validate = app.add_subcommand("validate", "Check a config and report every invalid field");
  validate->add_option("--config", o.config, "World definition (JSON)")->required();
  auto* episode = app.add_subcommand("episode", "Run one episode");
  common(episode);
  episode->add_option("--policy", policy_text, "Policy name");
  episode->add_option("--fixture", o.fixture, "Arrival schedule fixture to replay");
  episode->add_flag("--save-schedule", o.save_schedule, "Write the generated arrival schedule");
  auto* rq1 = app.add_subcommand("rq1", "Nominal-regime policy comparison");
  common(rq1);
  rq1->add_option("--policy", policy_text, "Comma-separated policies (default: all six)");
  rq1->add_option("--jobs", o.jobs, "Parallel cells")->check(CLI::PositiveNumber);
  auto* rq2 = app.add_subcommand("rq2", "Arrival-rate sweep with the default grid and policies");
  common(rq2);
  rq2->add_option("--policy", policy_text, "Comma-separated policies");
  rq2->add_option("--lambda-grid", grid_text, "Comma-separated arrival multipliers");
  rq2->add_option("--jobs", o.jobs, "Parallel cells")->check(CLI::PositiveNumber);
  auto* sweep = app.add_subcommand("sweep", "Arrival-rate sweep over an explicit grid");
  common(sweep);
  sweep->add_option("--policy", policy_text, "Comma-separated policies")->required();
  sweep->add_option("--lambda-grid", grid_text, "Comma-separated arrival multipliers")->required();
  sweep->add_option("--jobs", o.jobs, "Parallel cells")->check(CLI::PositiveNumber);
  auto* replay = app.add_subcommand("replay", "Recompute metrics from saved episode logs");
  replay->add_option("--config", o.config, "World definition (JSON)")->required();
  replay->add_option("--log", o.log_path, "Single episode log");
  replay->add_option("--logs", o.logs_dir, "Directory of episode logs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) out.push_back(item);
    return out;
  };
  try {
    for (const auto& s : split(seeds_text)) o.seeds.push_back(std::stoull(s));
    o.policies = split(policy_text);
    for (const auto& s : split(grid_text)) o.lambdas.push_back(std::stod(s));
  } catch (const std::exception&) {
    std::fprintf(stderr, "error: malformed numeric list\n");
    return kExitUsage;
  }

  try {
    if (*validate) return cmd_validate(o);
    if (*episode) return cmd_episode(o);
    if (*rq1) return cmd_rq1(o);
    if (*rq2) return run_sweep(o, o.lambdas.empty() ? kSweepGrid : o.lambdas, o.policies.empty() ? kSweepPolicies : o.policies);
    if (*sweep) return run_sweep(o, o.lambdas, o.policies);
    if (*replay) return cmd_replay(o);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "runtime fault: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
