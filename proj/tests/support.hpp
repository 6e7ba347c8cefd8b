#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "dcgym/dcgym.hpp"

namespace dcgym::testing {

inline std::string source_path(const std::string& rel) { return std::string(DCGYM_SOURCE_DIR) + "/" + rel; }

inline WorldConfig preset(const std::string& name) { return load_config(source_path("presets/" + name + ".json")); }

struct ClusterDef {
  Hardware hw = Hardware::Cpu;
  double capacity = 100.0;
  double alpha = 1.0;
  double phi = 1.0;
};

/// Quiet world: constant 24 degC ambient, no noise, flat price, no arrivals.
/// Callers drive it with explicit schedules.
inline WorldConfig small_world(const std::vector<std::vector<ClusterDef>>& dcs, int steps = 10) {
  WorldConfig cfg;
  cfg.name = "small";
  cfg.workload.episode_length = steps;
  cfg.workload.arrival_scale = 0.0;
  cfg.workload.cpu_size_mean = 10.0;
  cfg.workload.gpu_size_mean = 10.0;
  cfg.workload.cpu_duration_mean = 2.0;
  cfg.workload.gpu_duration_mean = 2.0;
  for (std::size_t d = 0; d < dcs.size(); ++d) {
    DatacenterSpec dc;
    dc.name = "dc" + std::to_string(d);
    auto& p = dc.physics;
    p.thermal_resistance = 0.003;
    p.thermal_capacitance = 7.0e8;
    p.cooling_max = 1.0e5;
    p.kp = 4000.0;
    p.ki = 1.0;
    p.kd = 0.0;
    p.ambient_base = 24.0;
    dc.setpoint = 24.0;
    cfg.datacenters.push_back(dc);
    for (std::size_t k = 0; k < dcs[d].size(); ++k) {
      const auto& def = dcs[d][k];
      ClusterSpec c;
      c.name = dc.name + "-" + std::to_string(k);
      c.hardware = def.hw;
      c.physics.capacity = def.capacity;
      c.physics.alpha = def.alpha;
      c.physics.phi = def.phi;
      c.physics.kappa = 1.0 / static_cast<double>(dcs[d].size());
      c.physics.datacenter = static_cast<int>(d);
      c.physics.grid_inflow = def.phi * def.capacity + c.physics.kappa * p.cooling_max;
      c.initial_power = c.physics.grid_inflow;
      cfg.clusters.push_back(c);
    }
  }
  cfg.workload.fleet_capacity = cfg.fleet_capacity();
  return cfg;
}

inline Job make_job(std::int64_t id, double r, int d, Hardware h = Hardware::Cpu) {
  Job j;
  j.id = id;
  j.resources = r;
  j.duration = d;
  j.remaining = d;
  j.affinity = h;
  return j;
}

inline ArrivalSchedule schedule_of(std::vector<std::vector<Job>> buckets, int steps) {
  ArrivalSchedule s;
  buckets.resize(static_cast<std::size_t>(steps));
  for (std::size_t t = 0; t < buckets.size(); ++t)
    for (auto& j : buckets[t]) j.arrival_time = static_cast<int>(t);
  s.buckets = std::move(buckets);
  return s;
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    auto base = std::filesystem::temp_directory_path();
    for (int k = 0;; ++k) {
      path_ = base / ("dcgym_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++) + "_" + std::to_string(k));
      if (std::filesystem::create_directory(path_)) break;
    }
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string path() const { return path_.string(); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

  std::string write(const std::string& name, const std::string& text) const {
    std::ofstream(file(name)) << text;
    return file(name);
  }

 private:
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace dcgym::testing
