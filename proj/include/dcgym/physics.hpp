#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dcgym/types.hpp"
#include "dcgym/workload.hpp"

namespace dcgym {

inline constexpr double kJoulesPerKwh = 3.6e6;
inline constexpr double kSecondsPerDay = 86400.0;

inline constexpr double joules_to_kwh(double joules) { return joules / kJoulesPerKwh; }

/// Datacenter-level thermal, cooling, climate and tariff parameters.
/// Units: R in degC/W, C in J/degC, powers in W, temperatures in degC,
/// prices in $/kWh.
struct DatacenterPhysicsParams {
  double thermal_resistance = 0.003;
  double thermal_capacitance = 7.0e8;
  double cooling_max = 6.8e5;
  double theta_soft = 32.0;
  double theta_max = 35.0;
  double g_min = 0.2;
  double kp = 4000.0;
  double ki = 100.0;
  double kd = 800.0;
  double ambient_base = 20.0;
  double ambient_amplitude = 0.0;
  double ambient_noise_std = 0.0;
  double ambient_period_seconds = kSecondsPerDay;
  double price_peak = 0.10;
  double price_offpeak = 0.10;
  std::array<bool, 24> peak_hours{};

  void check(const std::string& where, std::vector<std::string>& issues) const {
    auto fail = [&](const std::string& m) { issues.push_back(where + ": " + m); };
    auto finite = [](double v) { return std::isfinite(v); };
    if (!(thermal_resistance > 0.0) || !finite(thermal_resistance)) fail("R must be > 0");
    if (!(thermal_capacitance > 0.0) || !finite(thermal_capacitance)) fail("C must be > 0");
    if (!(cooling_max >= 0.0)) fail("cooling_max must be >= 0");
    if (!(theta_soft < theta_max)) fail("theta_soft must be < theta_max");
    if (!(g_min > 0.0 && g_min <= 1.0)) fail("g_min must lie in (0,1]");
    if (!(kp >= 0.0 && ki >= 0.0 && kd >= 0.0)) fail("PID gains must be >= 0");
    if (!(ambient_noise_std >= 0.0)) fail("ambient_noise_std must be >= 0");
    if (!(ambient_period_seconds > 0.0)) fail("ambient period must be > 0");
    if (!(price_peak >= 0.0 && price_offpeak >= 0.0)) fail("prices must be >= 0");
  }
};

/// Cluster-level coefficients. alpha and phi are W per CU of utilization.
struct ClusterPhysicsParams {
  double alpha = 1.0;
  double phi = 1.0;
  double kappa = 1.0;
  double capacity = 1.0;
  double grid_inflow = 0.0;  // W per step
  int datacenter = 0;
};

struct PidState {
  double integral = 0.0;  // degC*s
  double prev_error = 0.0;

  friend bool operator==(const PidState&, const PidState&) = default;
};

inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw SimulationFault(std::string("non-finite ") + what);
}

/// Lumped RC update of the datacenter temperature over one step.
inline double thermal_step(double theta, double heat_in, double theta_amb, double cooling,
                           const DatacenterPhysicsParams& p, double dt) {
  require_finite(theta, "temperature");
  require_finite(heat_in, "heat input");
  require_finite(theta_amb, "ambient temperature");
  require_finite(cooling, "cooling power");
  const double c = p.thermal_capacitance;
  double next = theta + dt / c * heat_in - dt / (c * p.thermal_resistance) * (theta - theta_amb) -
                dt / c * cooling;
  require_finite(next, "temperature update");
  return next;
}

/// Steady state of `thermal_step` under constant inputs.
inline double thermal_fixed_point(double heat_in, double theta_amb, double cooling,
                                  const DatacenterPhysicsParams& p) {
  return theta_amb + p.thermal_resistance * (heat_in - cooling);
}

struct PidOutput {
  double cooling = 0.0;
  PidState state;
};

/// Cooling controller. The actuated error is one-sided (the plant cannot be
/// heated); the integrator tracks the signed error and is clamped to
/// [0, cooling_max / ki] so that it unwinds once the room is below target.
inline PidOutput pid_cooling(double theta, double target, const PidState& state,
                             const DatacenterPhysicsParams& p, double dt) {
  const double error = std::max(0.0, theta - target);
  PidState next = state;
  next.integral += (theta - target) * dt;
  double upper = p.ki > 0.0 ? p.cooling_max / p.ki : 0.0;
  next.integral = std::clamp(next.integral, 0.0, upper);
  double raw = p.kp * error + p.ki * next.integral + p.kd * (error - state.prev_error) / dt;
  next.prev_error = error;
  return {std::clamp(raw, 0.0, p.cooling_max), next};
}

/// Fraction of nominal capacity available at temperature theta.
inline double throttle_factor(double theta, const DatacenterPhysicsParams& p) {
  double span = p.theta_max - p.theta_soft;
  double g = 1.0 - (1.0 - p.g_min) * (theta - p.theta_soft) / span;
  return std::max(p.g_min, std::min(1.0, g));
}

/// Deterministic diurnal component of the ambient temperature at step t.
inline double ambient_nominal(int t, const DatacenterPhysicsParams& p, double dt) {
  double phase = 2.0 * std::numbers::pi * (t * dt) / p.ambient_period_seconds;
  return p.ambient_base + p.ambient_amplitude * std::sin(phase);
}

inline double ambient_temperature(int t, const DatacenterPhysicsParams& p, double dt, Rng& rng) {
  double v = ambient_nominal(t, p, dt);
  if (p.ambient_noise_std > 0.0) v += std::normal_distribution<double>(0.0, p.ambient_noise_std)(rng);
  return v;
}

/// Reads a `timestep,temperature_c` file. Missing steps repeat the last value.
inline std::vector<double> load_ambient_trace(const std::string& path, int episode_length) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open ambient trace '" + path + "'");
  std::vector<std::pair<int, double>> rows;
  std::string line;
  std::size_t row_no = 0;
  while (std::getline(in, line)) {
    ++row_no;
    if (line.empty() || line[0] == '#') continue;
    auto f = detail::split_fields(line);
    if (f.size() < 2) throw ParseError("ambient row " + std::to_string(row_no) + ": expected 2 columns");
    auto t = detail::parse_int(f[0]);
    auto v = detail::parse_double(f[1]);
    if (!t || !v) {
      if (rows.empty() && row_no == 1) continue;  // header
      throw ParseError("ambient row " + std::to_string(row_no) + ": non-numeric field");
    }
    rows.emplace_back(static_cast<int>(*t), *v);
  }
  if (rows.empty()) throw ParseError("ambient trace '" + path + "' has no rows");
  std::sort(rows.begin(), rows.end());
  std::vector<double> out(static_cast<std::size_t>(episode_length + 1));
  std::size_t k = 0;
  double last = rows.front().second;
  for (int t = 0; t <= episode_length; ++t) {
    while (k < rows.size() && rows[k].first <= t) last = rows[k++].second;
    out[static_cast<std::size_t>(t)] = last;
  }
  return out;
}

/// Available-power balance after one step; admission keeps it non-negative.
inline double power_step(double available, double utilization, double cooling_dc,
                         const ClusterPhysicsParams& c) {
  return available - c.phi * utilization - c.kappa * cooling_dc + c.grid_inflow;
}

inline int hour_of_day(int t, double dt) {
  double secs = std::fmod(t * dt, kSecondsPerDay);
  return static_cast<int>(secs / 3600.0) % 24;
}

inline double electricity_price(int t, const DatacenterPhysicsParams& p, double dt) {
  return p.peak_hours[static_cast<std::size_t>(hour_of_day(t, dt))] ? p.price_peak : p.price_offpeak;
}

/// Compute power (W) drawn by the clusters of one datacenter.
inline double compute_power(std::span<const double> utilization,
                            std::span<const ClusterPhysicsParams> clusters, int datacenter) {
  double w = 0.0;
  for (std::size_t i = 0; i < clusters.size(); ++i)
    if (clusters[i].datacenter == datacenter) w += clusters[i].phi * utilization[i];
  return w;
}

/// Operating cost in $ of one step across all datacenters.
inline double step_cost(std::span<const double> utilization, std::span<const ClusterPhysicsParams> clusters,
                        std::span<const double> cooling, std::span<const double> prices, double dt) {
  double cost = 0.0;
  for (std::size_t d = 0; d < cooling.size(); ++d) {
    double watts = compute_power(utilization, clusters, static_cast<int>(d)) + cooling[d];
    cost += prices[d] * joules_to_kwh(watts * dt);
  }
  return cost;
}

}  // namespace dcgym
