#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dcgym/config.hpp"
#include "dcgym/environment.hpp"
#include "dcgym/mpc.hpp"
#include "dcgym/policies.hpp"
#include "dcgym/workload.hpp"

namespace dcgym {

struct EpisodeMetrics {
  double u_mean_cpu = 0.0;  // %
  double u_mean_gpu = 0.0;  // %
  double u_mean = 0.0;      // %, all clusters
  double q_mean_cpu = 0.0;  // jobs per cluster
  double q_mean_gpu = 0.0;
  double theta_mean = 0.0;
  double theta_max = 0.0;
  double throttle_pct = 0.0;
  double energy_kwh = 0.0;
  std::optional<double> energy_per_job;
  double cost_usd = 0.0;
  std::int64_t completed = 0;
  std::int64_t arrivals = 0;
  std::int64_t infeasible = 0;
  std::int64_t unplaceable = 0;

  double q_mean_total() const { return q_mean_cpu + q_mean_gpu; }
  friend bool operator==(const EpisodeMetrics&, const EpisodeMetrics&) = default;
};

// ---------------------------------------------------------------------------
// Episode log: one CSV row per step, doubles printed with 17 significant
// digits so that a parsed log reproduces the in-memory values exactly.

namespace detail {

inline void put(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

}  // namespace detail

inline std::string log_header(int C, int D) {
  std::string h = "t,arrivals,completed,infeasible,dispatched,unplaceable,pending_cpu,pending_gpu,"
                  "energy_compute_j,energy_cooling_j,cost";
  for (int i = 0; i < C; ++i) {
    auto s = std::to_string(i);
    h += ",u_" + s + ",ceff_" + s + ",q_" + s + ",p_" + s;
  }
  for (int d = 0; d < D; ++d) {
    auto s = std::to_string(d);
    h += ",theta_" + s + ",amb_" + s + ",price_" + s + ",setpoint_" + s + ",cooling_" + s + ",compute_" + s;
  }
  return h;
}

inline std::string log_to_string(const std::vector<StepInfo>& steps, int C, int D) {
  std::string out = log_header(C, D) + "\n";
  for (const auto& s : steps) {
    out += std::to_string(s.t);
    for (int v : {s.arrivals, s.completed, s.infeasible, s.dispatched, s.unplaceable, s.pending[0], s.pending[1]})
      out += "," + std::to_string(v);
    for (double v : {s.energy_compute_j, s.energy_cooling_j, s.cost}) {
      out += ',';
      detail::put(out, v);
    }
    for (std::size_t i = 0; i < static_cast<std::size_t>(C); ++i)
      for (double v : {s.utilization[i], s.effective_capacity[i], s.queue[i], s.power[i]}) {
        out += ',';
        detail::put(out, v);
      }
    for (std::size_t d = 0; d < static_cast<std::size_t>(D); ++d)
      for (double v : {s.theta[d], s.theta_amb[d], s.price[d], s.setpoint[d], s.cooling[d], s.compute_power[d]}) {
        out += ',';
        detail::put(out, v);
      }
    out += '\n';
  }
  return out;
}

struct ParsedLog {
  int num_clusters = 0;
  int num_datacenters = 0;
  std::vector<StepInfo> steps;
};

inline ParsedLog parse_log(std::istream& is) {
  ParsedLog log;
  std::string line;
  if (!std::getline(is, line)) throw ParseError("episode log is empty");
  auto head = detail::split_fields(line);
  for (auto f : head) {
    if (f.rfind("u_", 0) == 0) ++log.num_clusters;
    if (f.rfind("theta_", 0) == 0) ++log.num_datacenters;
  }
  const int C = log.num_clusters;
  const int D = log.num_datacenters;
  if (line != log_header(C, D)) throw ParseError("episode log header not recognized");
  const std::size_t width = 11 + 4 * static_cast<std::size_t>(C) + 6 * static_cast<std::size_t>(D);
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    auto f = detail::split_fields(line);
    if (f.size() != width) throw ParseError("episode log row " + std::to_string(row) + ": wrong field count");
    std::size_t k = 0;
    auto num = [&]() {
      auto v = detail::parse_double(f[k++]);
      if (!v) throw ParseError("episode log row " + std::to_string(row) + ": bad number");
      return *v;
    };
    auto integer = [&]() {
      auto v = detail::parse_int(f[k++]);
      if (!v) throw ParseError("episode log row " + std::to_string(row) + ": bad integer");
      return static_cast<int>(*v);
    };
    StepInfo s;
    s.t = integer();
    s.arrivals = integer();
    s.completed = integer();
    s.infeasible = integer();
    s.dispatched = integer();
    s.unplaceable = integer();
    s.pending[0] = integer();
    s.pending[1] = integer();
    s.energy_compute_j = num();
    s.energy_cooling_j = num();
    s.cost = num();
    for (int i = 0; i < C; ++i) {
      s.utilization.push_back(num());
      s.effective_capacity.push_back(num());
      s.queue.push_back(num());
      s.power.push_back(num());
    }
    for (int d = 0; d < D; ++d) {
      s.theta.push_back(num());
      s.theta_amb.push_back(num());
      s.price.push_back(num());
      s.setpoint.push_back(num());
      s.cooling.push_back(num());
      s.compute_power.push_back(num());
    }
    log.steps.push_back(std::move(s));
  }
  return log;
}

inline ParsedLog read_log_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open episode log '" + path + "'");
  return parse_log(in);
}

// ---------------------------------------------------------------------------
// Metrics

/// Aggregates a step log. Only the log and the static world description
/// are used, so metrics regenerate exactly from saved logs.
inline EpisodeMetrics compute_metrics(const std::vector<StepInfo>& steps, const WorldConfig& cfg) {
  EpisodeMetrics m;
  const auto T = static_cast<double>(steps.size());
  if (steps.empty()) return m;
  const int C = cfg.num_clusters();
  const int D = cfg.num_datacenters();
  std::array<double, kNumHardware> cap{}, nclus{}, used{}, queued{};
  double cap_all = 0.0;
  for (const auto& c : cfg.clusters) {
    cap[static_cast<std::size_t>(index_of(c.hardware))] += c.physics.capacity;
    nclus[static_cast<std::size_t>(index_of(c.hardware))] += 1.0;
    cap_all += c.physics.capacity;
  }
  double theta_sum = 0.0;
  double joules = 0.0;
  std::int64_t hot = 0;
  m.theta_max = -std::numeric_limits<double>::infinity();
  for (const auto& s : steps) {
    for (int i = 0; i < C; ++i) {
      auto h = static_cast<std::size_t>(index_of(cfg.clusters[static_cast<std::size_t>(i)].hardware));
      used[h] += s.utilization[static_cast<std::size_t>(i)];
      queued[h] += s.queue[static_cast<std::size_t>(i)];
    }
    for (std::size_t h = 0; h < kNumHardware; ++h) queued[h] += s.pending[h];
    for (int d = 0; d < D; ++d) {
      double th = s.theta[static_cast<std::size_t>(d)];
      theta_sum += th;
      m.theta_max = std::max(m.theta_max, th);
      if (th > cfg.datacenters[static_cast<std::size_t>(d)].physics.theta_soft) ++hot;
    }
    joules += s.energy_compute_j + s.energy_cooling_j;
    m.cost_usd += s.cost;
    m.completed += s.completed;
    m.arrivals += s.arrivals;
    m.infeasible += s.infeasible;
    m.unplaceable += s.unplaceable;
  }
  auto pct = [&](std::size_t h) { return cap[h] > 0.0 ? 100.0 * used[h] / (T * cap[h]) : 0.0; };
  auto per_cluster = [&](std::size_t h) { return nclus[h] > 0.0 ? queued[h] / (T * nclus[h]) : 0.0; };
  m.u_mean_cpu = pct(0);
  m.u_mean_gpu = pct(1);
  m.u_mean = cap_all > 0.0 ? 100.0 * (used[0] + used[1]) / (T * cap_all) : 0.0;
  m.q_mean_cpu = per_cluster(0);
  m.q_mean_gpu = per_cluster(1);
  m.theta_mean = theta_sum / (T * D);
  m.throttle_pct = 100.0 * static_cast<double>(hot) / (T * D);
  m.energy_kwh = joules_to_kwh(joules);
  if (m.completed > 0) m.energy_per_job = m.energy_kwh / static_cast<double>(m.completed);
  return m;
}

// ---------------------------------------------------------------------------
// Episodes

struct RunOptions {
  bool check_invariants = false;
  std::optional<ArrivalSchedule> schedule;  // replaces the generated workload
};

struct EpisodeRecord {
  std::string policy;
  std::uint64_t seed = 0;
  double lambda = 1.0;
  EpisodeMetrics metrics;
  std::vector<StepInfo> steps;
  std::vector<SolveDiagnostics> diagnostics;
  std::uint64_t schedule_hash = 0;
  std::uint64_t ambient_hash = 0;
  std::vector<std::string> violations;
  double solver_residual = 0.0;
  int fallbacks = 0;

  std::string log(const WorldConfig& cfg) const { return log_to_string(steps, cfg.num_clusters(), cfg.num_datacenters()); }
};

inline std::uint64_t hash_doubles(const std::vector<std::vector<double>>& series) {
  std::string text;
  for (const auto& s : series)
    for (double v : s) {
      detail::put(text, v);
      text += ',';
    }
  return std::hash<std::string>{}(text);
}

/// Runs one closed-loop episode of `cfg.policy.name` under `seed`.
inline EpisodeRecord run_episode(const WorldConfig& cfg, std::uint64_t seed, const RunOptions& opt = {}) {
  Environment env(cfg);
  auto policy = make_policy(cfg.policy.name, env.config(), seed);
  Observation obs = opt.schedule ? env.reset(seed, *opt.schedule) : env.reset(seed);
  EpisodeRecord rec;
  rec.policy = cfg.policy.name;
  rec.seed = seed;
  rec.lambda = cfg.workload.arrival_scale;
  rec.schedule_hash = schedule_fingerprint(env.schedule());
  rec.ambient_hash = hash_doubles(env.ambient_series());
  rec.steps.reserve(static_cast<std::size_t>(cfg.episode_length()));
  while (!env.done()) {
    Action a = policy->act(obs);
    auto [next, info] = env.step(a);
    if (opt.check_invariants) {
      auto v = env.check_invariants();
      for (int i = 0; i < cfg.num_clusters(); ++i) {
        auto k = static_cast<std::size_t>(i);
        if (next.dispatched[k] > 0.0 && info.utilization[k] > info.effective_capacity[k] + FleetView::kTol)
          v.push_back("cluster " + std::to_string(i) + ": dispatch pushed utilization above c_eff");
      }
      for (auto& s : v) rec.violations.push_back("t=" + std::to_string(info.t) + " " + s);
    }
    rec.steps.push_back(std::move(info));
    obs = std::move(next);
  }
  if (auto* mpc = dynamic_cast<MpcPolicy*>(policy.get())) {
    rec.diagnostics = mpc->diagnostics();
    rec.solver_residual = mpc->worst_residual();
    for (const auto& d : rec.diagnostics) rec.fallbacks += d.fallback ? 1 : 0;
  }
  rec.metrics = compute_metrics(rec.steps, env.config());
  return rec;
}

inline std::string diagnostics_to_string(const std::vector<SolveDiagnostics>& diag) {
  std::string out = "t,iterations,objective,box_residual,quota_residual,headroom_residual,fallback,violation,note\n";
  for (const auto& d : diag) {
    out += std::to_string(d.t) + "," + std::to_string(d.iterations) + ",";
    for (double v : {d.objective, d.box_residual, d.quota_residual, d.headroom_residual}) {
      detail::put(out, v);
      out += ',';
    }
    out += std::string(d.fallback ? "1" : "0") + "," + (d.violation ? "1" : "0") + ",\"" + d.note + "\"\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiments

struct ExperimentSpec {
  std::vector<std::string> policies;
  std::vector<std::uint64_t> seeds;
  std::vector<double> lambdas{1.0};
  int jobs = 1;
  bool check_invariants = false;
  std::optional<std::string> log_dir;  // per-cell logs when set
  bool verbose = false;

  void validate() const {
    if (policies.empty()) throw ConfigError("experiment needs at least one policy");
    if (seeds.empty()) throw ConfigError("experiment needs at least one seed");
    if (lambdas.empty()) throw ConfigError("experiment needs at least one arrival multiplier");
    for (double l : lambdas)
      if (!(l >= 0.0)) throw ConfigError("arrival multipliers must be >= 0");
  }
};

struct Cell {
  std::string policy;
  std::uint64_t seed = 0;
  double lambda = 1.0;
  std::optional<EpisodeRecord> record;
  std::string error;

  bool ok() const { return record.has_value(); }
};

struct Aggregate {
  std::string policy;
  double lambda = 1.0;
  int runs = 0;
  int failed = 0;
  EpisodeMetrics mean;
  EpisodeMetrics std;
  std::optional<double> energy_per_job_mean;
  std::optional<double> energy_per_job_std;
};

inline std::string format_lambda(double l) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", l);
  return buf;
}

inline std::string cell_stem(const std::string& policy, double lambda, std::uint64_t seed) {
  return policy + "_l" + format_lambda(lambda) + "_s" + std::to_string(seed);
}

/// Runs every (policy, lambda, seed) cell on its own environment. For a
/// given (lambda, seed) all policies see the same workload and ambient.
inline std::vector<Cell> run_experiment(const WorldConfig& base, const ExperimentSpec& spec) {
  spec.validate();
  std::vector<Cell> cells;
  for (double l : spec.lambdas)
    for (const auto& p : spec.policies)
      for (auto s : spec.seeds) {
        Cell c;
        c.policy = p;
        c.seed = s;
        c.lambda = l;
        cells.push_back(std::move(c));
      }
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t k = next++; k < cells.size(); k = next++) {
      Cell& c = cells[k];
      try {
        WorldConfig cfg = base;
        cfg.policy.name = c.policy;
        cfg.workload.arrival_scale = c.lambda;
        RunOptions opt;
        opt.check_invariants = spec.check_invariants;
        EpisodeRecord r = run_episode(cfg, c.seed, opt);
        if (spec.log_dir) {
          namespace fs = std::filesystem;
          fs::path stem = fs::path(*spec.log_dir) / cell_stem(c.policy, c.lambda, c.seed);
          std::ofstream(stem.string() + ".csv") << r.log(cfg);
          if (spec.verbose && !r.diagnostics.empty())
            std::ofstream(stem.string() + ".solver.csv") << diagnostics_to_string(r.diagnostics);
        }
        c.record = std::move(r);
      } catch (const std::exception& e) {
        c.error = e.what();
      }
    }
  };
  int n = std::max(1, std::min<int>(spec.jobs, static_cast<int>(cells.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return cells;
}

namespace detail {

inline void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  mean = sd = 0.0;
  if (v.empty()) return;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace detail

/// Mean and sample standard deviation over seeds for each (policy, lambda),
/// in first-appearance order. Failed cells are skipped and counted.
inline std::vector<Aggregate> aggregate(const std::vector<Cell>& cells) {
  std::vector<Aggregate> out;
  for (const auto& c : cells) {
    auto it = std::find_if(out.begin(), out.end(), [&](const Aggregate& a) { return a.policy == c.policy && a.lambda == c.lambda; });
    if (it == out.end()) {
      Aggregate a;
      a.policy = c.policy;
      a.lambda = c.lambda;
      out.push_back(a);
    }
  }
  for (auto& a : out) {
    std::vector<const EpisodeMetrics*> ms;
    for (const auto& c : cells)
      if (c.policy == a.policy && c.lambda == a.lambda) {
        if (c.ok()) ms.push_back(&c.record->metrics);
        else ++a.failed;
      }
    a.runs = static_cast<int>(ms.size());
    auto stat = [&](auto get, double& mean, double& sd) {
      std::vector<double> v;
      for (auto* m : ms) v.push_back(static_cast<double>(get(*m)));
      detail::mean_std(v, mean, sd);
    };
    stat([](const EpisodeMetrics& m) { return m.u_mean_cpu; }, a.mean.u_mean_cpu, a.std.u_mean_cpu);
    stat([](const EpisodeMetrics& m) { return m.u_mean_gpu; }, a.mean.u_mean_gpu, a.std.u_mean_gpu);
    stat([](const EpisodeMetrics& m) { return m.u_mean; }, a.mean.u_mean, a.std.u_mean);
    stat([](const EpisodeMetrics& m) { return m.q_mean_cpu; }, a.mean.q_mean_cpu, a.std.q_mean_cpu);
    stat([](const EpisodeMetrics& m) { return m.q_mean_gpu; }, a.mean.q_mean_gpu, a.std.q_mean_gpu);
    stat([](const EpisodeMetrics& m) { return m.theta_mean; }, a.mean.theta_mean, a.std.theta_mean);
    stat([](const EpisodeMetrics& m) { return m.theta_max; }, a.mean.theta_max, a.std.theta_max);
    stat([](const EpisodeMetrics& m) { return m.throttle_pct; }, a.mean.throttle_pct, a.std.throttle_pct);
    stat([](const EpisodeMetrics& m) { return m.energy_kwh; }, a.mean.energy_kwh, a.std.energy_kwh);
    stat([](const EpisodeMetrics& m) { return m.cost_usd; }, a.mean.cost_usd, a.std.cost_usd);
    double cm = 0.0, cs = 0.0;
    stat([](const EpisodeMetrics& m) { return m.completed; }, cm, cs);
    a.mean.completed = static_cast<std::int64_t>(std::llround(cm));
    a.std.completed = static_cast<std::int64_t>(std::llround(cs));
    std::vector<double> epj;
    for (auto* m : ms)
      if (m->energy_per_job) epj.push_back(*m->energy_per_job);
    if (!epj.empty()) {
      double mean = 0.0, sd = 0.0;
      detail::mean_std(epj, mean, sd);
      a.energy_per_job_mean = mean;
      a.energy_per_job_std = sd;
    }
  }
  return out;
}

inline std::string display_name(const std::string& p) {
  if (p == "random") return "Random";
  if (p == "greedy") return "Greedy";
  if (p == "thermal") return "Thermal";
  if (p == "powercool") return "PowerCool";
  if (p == "scmpc") return "SC-MPC";
  if (p == "hmpc") return "H-MPC";
  return p;
}

/// Policy comparison table with QoS, thermal and energy sections; one
/// column per policy, entries are mean +- std over seeds.
inline std::string summary_table(const std::vector<Aggregate>& aggs) {
  std::ostringstream os;
  const int label_w = 20;
  const int col_w = 22;
  auto cell = [&](double m, double s, const char* fmt) {
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, m, s);
    return std::string(buf);
  };
  auto pad = [](std::string s, int w) {
    if (static_cast<int>(s.size()) < w) s.insert(0, static_cast<std::size_t>(w) - s.size(), ' ');
    return s;
  };
  int seeds = aggs.empty() ? 0 : aggs.front().runs;
  os << "Policy comparison (mean +- std over " << seeds << " seeds";
  if (!aggs.empty()) os << ", arrival multiplier " << format_lambda(aggs.front().lambda);
  os << ")\n";
  os << std::string(label_w, ' ');
  for (const auto& a : aggs) os << pad(display_name(a.policy), col_w);
  os << "\n";
  auto row = [&](const char* label, auto get, const char* fmt) {
    std::string l = std::string("  ") + label;
    l.resize(static_cast<std::size_t>(label_w), ' ');
    os << l;
    for (const auto& a : aggs) {
      auto [m, s] = get(a);
      os << pad(cell(m, s, fmt), col_w);
    }
    os << "\n";
  };
  using P = std::pair<double, double>;
  os << "QoS\n";
  row("CPU Util (%)", [](const Aggregate& a) { return P{a.mean.u_mean_cpu, a.std.u_mean_cpu}; }, "%.2f +- %.2f");
  row("GPU Util (%)", [](const Aggregate& a) { return P{a.mean.u_mean_gpu, a.std.u_mean_gpu}; }, "%.2f +- %.2f");
  row("CPU Queue", [](const Aggregate& a) { return P{a.mean.q_mean_cpu, a.std.q_mean_cpu}; }, "%.2f +- %.2f");
  row("GPU Queue", [](const Aggregate& a) { return P{a.mean.q_mean_gpu, a.std.q_mean_gpu}; }, "%.2f +- %.2f");
  row("Completed", [](const Aggregate& a) { return P{static_cast<double>(a.mean.completed), static_cast<double>(a.std.completed)}; }, "%.0f +- %.0f");
  os << "Thermal\n";
  row("Mean Temp (C)", [](const Aggregate& a) { return P{a.mean.theta_mean, a.std.theta_mean}; }, "%.2f +- %.2f");
  row("Max Temp (C)", [](const Aggregate& a) { return P{a.mean.theta_max, a.std.theta_max}; }, "%.2f +- %.2f");
  row("Throttle (%)", [](const Aggregate& a) { return P{a.mean.throttle_pct, a.std.throttle_pct}; }, "%.2f +- %.2f");
  os << "Energy\n";
  row("Energy (kWh)", [](const Aggregate& a) { return P{a.mean.energy_kwh, a.std.energy_kwh}; }, "%.0f +- %.0f");
  {
    std::string l = "  E/J (kWh/job)";
    l.resize(static_cast<std::size_t>(label_w), ' ');
    os << l;
    for (const auto& a : aggs)
      os << pad(a.energy_per_job_mean ? cell(*a.energy_per_job_mean, *a.energy_per_job_std, "%.3f +- %.3f") : "n/a", col_w);
    os << "\n";
  }
  row("Cost ($)", [](const Aggregate& a) { return P{a.mean.cost_usd, a.std.cost_usd}; }, "%.0f +- %.0f");
  for (const auto& a : aggs)
    if (a.failed > 0) os << "! " << display_name(a.policy) << ": " << a.failed << " failed cell(s) excluded\n";
  return os.str();
}

/// Per-cell metrics as delimited rows.
inline std::string cells_csv(const std::vector<Cell>& cells) {
  std::string out = "policy,lambda,seed,status,u_cpu,u_gpu,u_all,q_cpu,q_gpu,theta_mean,theta_max,throttle_pct,"
                    "energy_kwh,energy_per_job,cost_usd,completed,arrivals,infeasible,unplaceable,schedule_hash\n";
  for (const auto& c : cells) {
    out += c.policy + "," + format_lambda(c.lambda) + "," + std::to_string(c.seed) + ",";
    if (!c.ok()) {
      out += "failed,,,,,,,,,,,,,,,,\n";
      continue;
    }
    const auto& m = c.record->metrics;
    out += "ok";
    for (double v : {m.u_mean_cpu, m.u_mean_gpu, m.u_mean, m.q_mean_cpu, m.q_mean_gpu, m.theta_mean, m.theta_max,
                     m.throttle_pct, m.energy_kwh}) {
      out += ',';
      detail::put(out, v);
    }
    out += ',';
    if (m.energy_per_job) detail::put(out, *m.energy_per_job);
    out += ',';
    detail::put(out, m.cost_usd);
    out += "," + std::to_string(m.completed) + "," + std::to_string(m.arrivals) + "," + std::to_string(m.infeasible) +
           "," + std::to_string(m.unplaceable) + "," + std::to_string(c.record->schedule_hash) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Saturation sweep

struct FrontierPoint {
  double lambda = 1.0;
  std::string policy;
  double utilization = 0.0;  // %, all clusters
  double queue = 0.0;        // jobs per cluster, both classes
  double theta_max = 0.0;
  double throttle_pct = 0.0;
};

inline std::vector<FrontierPoint> frontier(const std::vector<Aggregate>& aggs) {
  std::vector<FrontierPoint> out;
  for (const auto& a : aggs)
    out.push_back({a.lambda, a.policy, a.mean.u_mean, a.mean.q_mean_total(), a.mean.theta_max, a.mean.throttle_pct});
  std::stable_sort(out.begin(), out.end(), [](const FrontierPoint& x, const FrontierPoint& y) { return x.lambda < y.lambda; });
  return out;
}

inline std::string frontier_csv(const std::vector<FrontierPoint>& pts) {
  std::string out = "lambda,policy,utilization_pct,queue,theta_max,throttle_pct\n";
  for (const auto& p : pts) {
    out += format_lambda(p.lambda) + "," + p.policy;
    for (double v : {p.utilization, p.queue, p.theta_max, p.throttle_pct}) {
      out += ',';
      detail::put(out, v);
    }
    out += '\n';
  }
  return out;
}

/// Per-step datacenter temperatures of every cell, long format.
inline std::string thermal_csv(const std::vector<Cell>& cells) {
  std::string out = "lambda,policy,seed,datacenter,t,theta\n";
  for (const auto& c : cells) {
    if (!c.ok()) continue;
    for (const auto& s : c.record->steps)
      for (std::size_t d = 0; d < s.theta.size(); ++d) {
        out += format_lambda(c.lambda) + "," + c.policy + "," + std::to_string(c.seed) + "," + std::to_string(d) + "," +
               std::to_string(s.t) + ",";
        detail::put(out, s.theta[d]);
        out += '\n';
      }
  }
  return out;
}

struct Knee {
  double lambda = 0.0;
  std::size_t index = 0;
  double ratio = 0.0;
};

/// Finite-difference knee of y(x): the interior grid point with the largest
/// ratio of the slope after it to the slope before it. Slopes below
/// `flat_fraction` of the steepest slope count as flat. Returns nothing
/// unless the ratio exceeds `threshold`.
inline std::optional<Knee> detect_knee(const std::vector<double>& x, const std::vector<double>& y, double threshold = 5.0,
                                       double flat_fraction = 0.01) {
  if (x.size() != y.size() || x.size() < 3) return std::nullopt;
  std::vector<double> slope;
  for (std::size_t k = 0; k + 1 < x.size(); ++k) slope.push_back((y[k + 1] - y[k]) / (x[k + 1] - x[k]));
  double steepest = 0.0;
  for (double s : slope) steepest = std::max(steepest, s);
  if (!(steepest > 0.0)) return std::nullopt;
  double floor = flat_fraction * steepest;
  std::optional<Knee> best;
  for (std::size_t k = 1; k < slope.size(); ++k) {
    double ratio = slope[k] / std::max(slope[k - 1], floor);
    if (!best || ratio > best->ratio) best = Knee{x[k], k, ratio};
  }
  if (!best || !(best->ratio > threshold)) return std::nullopt;
  return best;
}

}  // namespace dcgym
