#pragma once

#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dcgym/physics.hpp"
#include "dcgym/types.hpp"
#include "dcgym/workload.hpp"

namespace dcgym {

struct DatacenterSpec {
  std::string name;
  DatacenterPhysicsParams physics;
  double setpoint = 24.0;  // fixed setpoint for policies that leave cooling alone
  std::optional<std::string> ambient_trace;
};

struct ClusterSpec {
  std::string name;
  Hardware hardware = Hardware::Cpu;
  ClusterPhysicsParams physics;
  double initial_power = 0.0;
};

enum class TieBreak { LowestId, SeededShuffle };

struct PolicyParams {
  std::string name = "greedy";
  double omega = 1.0;
  std::optional<double> gamma;  // defaults to the datacenter's kp
  TieBreak tie_break = TieBreak::LowestId;
};

/// Objective weights and solver knobs for the MPC controllers. Energy is
/// measured in kWh, temperatures in degC, queue and rejection terms in jobs.
struct MpcParams {
  double w_energy = 0.1;
  double w_queue = 0.1;
  double w_temperature = 1.0;
  double w_rejection = 0.2;
  double w_slack = 1000.0;
  double w_reject_stage2 = 1.0;
  double theta_ref = 24.0;
  double soft_margin = 0.5;  // degC below theta_soft where the slack starts
  int h1 = 12;
  int h2 = 6;

  int stage1_iterations = 40;
  double stage1_tolerance = 1e-7;
  double fd_step = 1e-4;
  int scmpc_starts = 3;
  int scmpc_iterations = 30;
  double hard_penalty = 1e6;
  int lp_max_iterations = 10000;
  double lp_tolerance = 1e-9;
  std::string scmpc_placement = "greedy";

  // Aggregate workload model; <= 0 means "take it from the workload config".
  double cpu_mean_size = 0.0;
  double gpu_mean_size = 0.0;
  double cpu_mean_duration = 0.0;
  double gpu_mean_duration = 0.0;

  bool verbose = false;

  void check(std::vector<std::string>& issues) const {
    auto fail = [&](const std::string& m) { issues.push_back("mpc: " + m); };
    for (double w : {w_energy, w_queue, w_temperature, w_rejection, w_slack, w_reject_stage2})
      if (!(w >= 0.0)) {
        fail("weights must be >= 0");
        break;
      }
    if (h2 < 1 || h2 > h1) fail("horizons must satisfy 1 <= h2 <= h1");
    if (stage1_iterations < 1 || scmpc_iterations < 1 || scmpc_starts < 1) fail("iteration caps must be >= 1");
    if (!(fd_step > 0.0)) fail("fd_step must be > 0");
    if (!(soft_margin >= 0.0)) fail("soft_margin must be >= 0");
  }
};

/// One complete world definition: datacenters, clusters, workload and
/// controller parameters.
struct WorldConfig {
  std::string name = "unnamed";
  std::vector<DatacenterSpec> datacenters;
  std::vector<ClusterSpec> clusters;
  WorkloadConfig workload;
  PolicyParams policy;
  MpcParams mpc;
  double setpoint_min = 18.0;
  double setpoint_max = 27.0;
  std::uint64_t world_seed = 0;

  int num_clusters() const { return static_cast<int>(clusters.size()); }
  int num_datacenters() const { return static_cast<int>(datacenters.size()); }
  double dt() const { return workload.timestep_seconds; }
  int episode_length() const { return workload.episode_length; }

  double fleet_capacity() const {
    double c = 0.0;
    for (const auto& cl : clusters) c += cl.physics.capacity;
    return c;
  }

  double class_capacity(Hardware h) const {
    double c = 0.0;
    for (const auto& cl : clusters)
      if (cl.hardware == h) c += cl.physics.capacity;
    return c;
  }

  std::vector<ClusterPhysicsParams> cluster_physics() const {
    std::vector<ClusterPhysicsParams> out;
    out.reserve(clusters.size());
    for (const auto& c : clusters) out.push_back(c.physics);
    return out;
  }

  double mean_size(Hardware h) const {
    double v = h == Hardware::Cpu ? mpc.cpu_mean_size : mpc.gpu_mean_size;
    if (v > 0.0) return v;
    return h == Hardware::Cpu ? workload.cpu_size_mean : workload.gpu_size_mean;
  }

  double mean_duration(Hardware h) const {
    double v = h == Hardware::Cpu ? mpc.cpu_mean_duration : mpc.gpu_mean_duration;
    if (v > 0.0) return v;
    return h == Hardware::Cpu ? workload.cpu_duration_mean : workload.gpu_duration_mean;
  }

  /// Every invariant violation, one message per offending field.
  std::vector<std::string> check() const {
    std::vector<std::string> issues;
    if (datacenters.empty()) issues.push_back("at least one datacenter is required");
    if (clusters.empty()) issues.push_back("at least one cluster is required");
    if (!(setpoint_min <= setpoint_max)) issues.push_back("setpoint_min must be <= setpoint_max");
    for (std::size_t d = 0; d < datacenters.size(); ++d) {
      const auto& dc = datacenters[d];
      std::string where = "datacenters[" + std::to_string(d) + "] (" + dc.name + ")";
      dc.physics.check(where, issues);
      if (!(dc.setpoint >= setpoint_min && dc.setpoint <= setpoint_max))
        issues.push_back(where + ": setpoint outside [setpoint_min, setpoint_max]");
      double kappa_sum = 0.0;
      int members = 0;
      for (const auto& c : clusters)
        if (c.physics.datacenter == static_cast<int>(d)) {
          kappa_sum += c.physics.kappa;
          ++members;
        }
      if (members == 0) issues.push_back(where + ": hosts no clusters");
      else if (std::abs(kappa_sum - 1.0) > 1e-9) issues.push_back(where + ": cluster kappa must sum to 1");
    }
    for (std::size_t i = 0; i < clusters.size(); ++i) {
      const auto& c = clusters[i].physics;
      std::string where = "clusters[" + std::to_string(i) + "] (" + clusters[i].name + ")";
      if (!(c.alpha > 0.0)) issues.push_back(where + ": alpha must be > 0");
      if (!(c.phi > 0.0)) issues.push_back(where + ": phi must be > 0");
      if (!(c.kappa >= 0.0)) issues.push_back(where + ": kappa must be >= 0");
      if (!(c.capacity > 0.0)) issues.push_back(where + ": capacity must be > 0");
      if (!(c.grid_inflow >= 0.0)) issues.push_back(where + ": grid_inflow must be >= 0");
      if (!(clusters[i].initial_power >= 0.0)) issues.push_back(where + ": initial_power must be >= 0");
      if (c.datacenter < 0 || c.datacenter >= num_datacenters())
        issues.push_back(where + ": datacenter index out of range");
    }
    workload.check(issues);
    mpc.check(issues);
    static const char* kPolicies[] = {"random", "greedy", "thermal", "powercool", "scmpc", "hmpc"};
    auto known = [](const std::string& n) {
      for (const char* p : kPolicies)
        if (n == p) return true;
      return false;
    };
    if (!known(policy.name)) issues.push_back("policy: unknown policy '" + policy.name + "'");
    if (!(policy.omega > 0.0)) issues.push_back("policy: omega must be > 0");
    if (policy.gamma && !(*policy.gamma > 0.0)) issues.push_back("policy: gamma must be > 0");
    if (mpc.scmpc_placement == "scmpc" || mpc.scmpc_placement == "hmpc" || !known(mpc.scmpc_placement))
      issues.push_back("mpc: scmpc_placement must name a baseline heuristic");
    return issues;
  }

  void validate() const {
    auto issues = check();
    if (issues.empty()) return;
    std::string msg = "invalid config:";
    for (const auto& m : issues) msg += "\n  " + m;
    throw ConfigError(msg);
  }
};

namespace detail {

using nlohmann::json;

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

// Accepts either a scalar `key` or a `key_range` pair drawn uniformly.
inline double read_drawn(const json& j, const std::string& key, Rng& rng, const std::string& where) {
  if (j.contains(key)) return j.at(key).get<double>();
  std::string rkey = key + "_range";
  if (j.contains(rkey)) {
    auto r = j.at(rkey).get<std::vector<double>>();
    if (r.size() != 2 || !(r[0] <= r[1])) throw ConfigError(where + ": " + rkey + " must be [lo, hi]");
    return std::uniform_real_distribution<double>(r[0], r[1])(rng);
  }
  throw ConfigError(where + ": missing '" + key + "' (or '" + rkey + "')");
}

inline WorkloadConfig parse_workload(const json& j, const std::string& base_dir) {
  WorkloadConfig w;
  if (j.contains("source")) {
    auto s = j.at("source").get<std::string>();
    if (s == "trace") w.source = WorkloadSource::Trace;
    else if (s == "synthetic") w.source = WorkloadSource::Synthetic;
    else throw ConfigError("workload: unknown source '" + s + "'");
  }
  if (j.contains("trace_path")) {
    std::string p = j.at("trace_path").get<std::string>();
    if (!p.empty() && p[0] != '/' && !base_dir.empty()) p = base_dir + "/" + p;
    w.trace_path = p;
  }
  read_opt(j, "arrival_cap", w.arrival_cap);
  read_opt(j, "gpu_fraction", w.gpu_fraction);
  read_opt(j, "arrival_scale", w.arrival_scale);
  read_opt(j, "episode_length", w.episode_length);
  read_opt(j, "timestep_seconds", w.timestep_seconds);
  if (j.contains("slice_start")) w.slice_start = j.at("slice_start").get<double>();
  if (j.contains("columns")) {
    const auto& c = j.at("columns");
    read_opt(c, "start", w.columns.start);
    read_opt(c, "end", w.columns.end);
    read_opt(c, "cpu", w.columns.cpu);
    read_opt(c, "priority", w.columns.priority);
  }
  read_opt(j, "peak_demand_fraction", w.peak_demand_fraction);
  read_opt(j, "fleet_capacity", w.fleet_capacity);
  read_opt(j, "cpu_size_mean", w.cpu_size_mean);
  read_opt(j, "gpu_size_mean", w.gpu_size_mean);
  read_opt(j, "size_cv", w.size_cv);
  read_opt(j, "cpu_duration_mean", w.cpu_duration_mean);
  read_opt(j, "gpu_duration_mean", w.gpu_duration_mean);
  read_opt(j, "duration_max", w.duration_max);
  read_opt(j, "priority_levels", w.priority_levels);
  return w;
}

inline MpcParams parse_mpc(const json& j) {
  MpcParams m;
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    read_opt(w, "energy", m.w_energy);
    read_opt(w, "queue", m.w_queue);
    read_opt(w, "temperature", m.w_temperature);
    read_opt(w, "rejection", m.w_rejection);
    read_opt(w, "slack", m.w_slack);
    read_opt(w, "reject_stage2", m.w_reject_stage2);
  }
  read_opt(j, "theta_ref", m.theta_ref);
  read_opt(j, "soft_margin", m.soft_margin);
  read_opt(j, "h1", m.h1);
  read_opt(j, "h2", m.h2);
  read_opt(j, "stage1_iterations", m.stage1_iterations);
  read_opt(j, "stage1_tolerance", m.stage1_tolerance);
  read_opt(j, "fd_step", m.fd_step);
  read_opt(j, "scmpc_starts", m.scmpc_starts);
  read_opt(j, "scmpc_iterations", m.scmpc_iterations);
  read_opt(j, "hard_penalty", m.hard_penalty);
  read_opt(j, "lp_max_iterations", m.lp_max_iterations);
  read_opt(j, "lp_tolerance", m.lp_tolerance);
  read_opt(j, "scmpc_placement", m.scmpc_placement);
  read_opt(j, "cpu_mean_size", m.cpu_mean_size);
  read_opt(j, "gpu_mean_size", m.gpu_mean_size);
  read_opt(j, "cpu_mean_duration", m.cpu_mean_duration);
  read_opt(j, "gpu_mean_duration", m.gpu_mean_duration);
  read_opt(j, "verbose", m.verbose);
  return m;
}

}  // namespace detail

/// Parses a JSON world definition. Relative trace paths resolve against
/// `base_dir`. Parameter invariants are not enforced here; see
/// WorldConfig::check().
inline WorldConfig parse_config(const std::string& text, const std::string& base_dir = "") {
  using detail::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  try {
    WorldConfig cfg;
    detail::read_opt(j, "name", cfg.name);
    detail::read_opt(j, "setpoint_min", cfg.setpoint_min);
    detail::read_opt(j, "setpoint_max", cfg.setpoint_max);
    detail::read_opt(j, "world_seed", cfg.world_seed);
    if (j.contains("workload")) cfg.workload = detail::parse_workload(j.at("workload"), base_dir);
    Rng world = make_rng(cfg.world_seed, Stream::World);

    const auto& dcs = j.at("datacenters");
    for (std::size_t d = 0; d < dcs.size(); ++d) {
      const auto& jd = dcs[d];
      DatacenterSpec dc;
      auto& p = dc.physics;
      detail::read_opt(jd, "name", dc.name);
      std::string where = "datacenters[" + std::to_string(d) + "]";
      detail::read_opt(jd, "R", p.thermal_resistance);
      detail::read_opt(jd, "C", p.thermal_capacitance);
      detail::read_opt(jd, "cooling_max_w", p.cooling_max);
      detail::read_opt(jd, "theta_soft", p.theta_soft);
      detail::read_opt(jd, "theta_max", p.theta_max);
      detail::read_opt(jd, "g_min", p.g_min);
      detail::read_opt(jd, "kp", p.kp);
      detail::read_opt(jd, "ki", p.ki);
      detail::read_opt(jd, "kd", p.kd);
      detail::read_opt(jd, "ambient_base", p.ambient_base);
      detail::read_opt(jd, "ambient_amplitude", p.ambient_amplitude);
      detail::read_opt(jd, "ambient_noise_std", p.ambient_noise_std);
      if (jd.contains("ambient_period_hours"))
        p.ambient_period_seconds = jd.at("ambient_period_hours").get<double>() * 3600.0;
      detail::read_opt(jd, "price_peak", p.price_peak);
      detail::read_opt(jd, "price_offpeak", p.price_offpeak);
      if (jd.contains("peak_hours"))
        for (int h : jd.at("peak_hours").get<std::vector<int>>()) {
          if (h < 0 || h > 23) throw ConfigError(where + ": peak hour out of range");
          p.peak_hours[static_cast<std::size_t>(h)] = true;
        }
      detail::read_opt(jd, "setpoint", dc.setpoint);
      if (jd.contains("ambient_trace")) {
        std::string path = jd.at("ambient_trace").get<std::string>();
        if (!path.empty() && path[0] != '/' && !base_dir.empty()) path = base_dir + "/" + path;
        dc.ambient_trace = path;
      }

      const auto& jcs = jd.at("clusters");
      std::size_t first = cfg.clusters.size();
      for (std::size_t k = 0; k < jcs.size(); ++k) {
        const auto& jc = jcs[k];
        ClusterSpec c;
        std::string cw = where + ".clusters[" + std::to_string(k) + "]";
        c.name = jc.value("name", dc.name + "-" + std::to_string(k));
        c.hardware = hardware_from_string(jc.at("hardware").get<std::string>());
        c.physics.capacity = jc.at("capacity").get<double>();
        c.physics.alpha = detail::read_drawn(jc, "alpha", world, cw);
        c.physics.phi = detail::read_drawn(jc, "phi", world, cw);
        c.physics.datacenter = static_cast<int>(d);
        c.physics.kappa = jc.value("kappa", 1.0 / static_cast<double>(jcs.size()));
        c.physics.grid_inflow = jc.value("grid_inflow", -1.0);
        c.initial_power = jc.value("initial_power", -1.0);
        cfg.clusters.push_back(c);
      }
      // Default inflow covers the worst-case draw so power never binds.
      for (std::size_t i = first; i < cfg.clusters.size(); ++i) {
        auto& c = cfg.clusters[i];
        if (c.physics.grid_inflow < 0.0)
          c.physics.grid_inflow = c.physics.phi * c.physics.capacity + c.physics.kappa * p.cooling_max;
        if (c.initial_power < 0.0) c.initial_power = c.physics.grid_inflow;
      }
      cfg.datacenters.push_back(dc);
    }

    if (j.contains("policy")) {
      const auto& jp = j.at("policy");
      if (jp.is_string()) {
        cfg.policy.name = jp.get<std::string>();
      } else {
        detail::read_opt(jp, "name", cfg.policy.name);
        detail::read_opt(jp, "omega", cfg.policy.omega);
        if (jp.contains("gamma") && !jp.at("gamma").is_null()) cfg.policy.gamma = jp.at("gamma").get<double>();
        if (jp.contains("tie_break")) {
          auto tb = jp.at("tie_break").get<std::string>();
          if (tb == "lowest_id") cfg.policy.tie_break = TieBreak::LowestId;
          else if (tb == "shuffle") cfg.policy.tie_break = TieBreak::SeededShuffle;
          else throw ConfigError("policy: unknown tie_break '" + tb + "'");
        }
      }
    }
    if (j.contains("mpc")) cfg.mpc = detail::parse_mpc(j.at("mpc"));
    if (cfg.workload.fleet_capacity <= 0.0) cfg.workload.fleet_capacity = cfg.fleet_capacity();
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config schema error: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config schema error: ") + e.what());
  }
}

inline WorldConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  auto slash = path.find_last_of('/');
  std::string dir = slash == std::string::npos ? std::string(".") : path.substr(0, slash);
  return parse_config(ss.str(), dir);
}

}  // namespace dcgym
