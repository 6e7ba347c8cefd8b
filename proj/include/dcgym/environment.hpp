#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dcgym/config.hpp"
#include "dcgym/physics.hpp"
#include "dcgym/types.hpp"
#include "dcgym/workload.hpp"

namespace dcgym {

struct ClusterState {
  int id = 0;
  int datacenter = 0;
  Hardware hardware = Hardware::Cpu;
  double capacity = 0.0;            // c_max
  double effective_capacity = 0.0;  // c_max * g(theta)
  double utilization = 0.0;         // sum of active job sizes
  double power = 0.0;               // available power balance
  std::vector<Job> active;
  std::deque<Job> queue;
  ClusterPhysicsParams physics;
};

struct DatacenterState {
  int id = 0;
  double theta = 0.0;
  double theta_amb = 0.0;
  double price = 0.0;
  double setpoint = 0.0;
  PidState pid;
  double cooling_last = 0.0;
  std::vector<int> clusters;
  DatacenterPhysicsParams physics;
};

/// Flattened `[p, c_eff, q]` per cluster followed by `[theta, theta_amb, psi]`
/// per datacenter, plus the arrival batch and controller-side information.
struct Observation {
  int t = 0;
  int num_clusters = 0;
  int num_datacenters = 0;
  std::vector<double> values;
  std::vector<Job> jobs;

  // Side information.
  std::vector<double> utilization;
  std::vector<double> dispatched;  // CU started on each cluster last step
  std::vector<double> setpoints;
  std::vector<PidState> pid;
  std::vector<int> new_arrivals;  // per hardware class, this step

  double power(int i) const { return values[static_cast<std::size_t>(3 * i)]; }
  double effective_capacity(int i) const { return values[static_cast<std::size_t>(3 * i + 1)]; }
  double queue(int i) const { return values[static_cast<std::size_t>(3 * i + 2)]; }
  double theta(int d) const { return values[static_cast<std::size_t>(3 * num_clusters + 3 * d)]; }
  double theta_amb(int d) const { return values[static_cast<std::size_t>(3 * num_clusters + 3 * d + 1)]; }
  double price(int d) const { return values[static_cast<std::size_t>(3 * num_clusters + 3 * d + 2)]; }

  friend bool operator==(const Observation&, const Observation&) = default;
};

/// `assignments[k]` routes `obs.jobs[k]`: 0 defers, i in 1..C targets
/// cluster i-1. Without setpoints the configured fixed setpoints apply.
struct Action {
  std::vector<int> assignments;
  std::optional<std::vector<double>> setpoints;
};

struct StepInfo {
  int t = 0;
  std::vector<double> utilization;         // executed this step
  std::vector<double> effective_capacity;  // in force during dispatch
  std::vector<double> queue;               // local queue lengths after the step
  std::vector<double> power;               // balance after the step
  std::vector<double> theta;               // after the thermal update
  std::vector<double> theta_amb;
  std::vector<double> price;
  std::vector<double> setpoint;
  std::vector<double> cooling;        // W
  std::vector<double> compute_power;  // W per datacenter
  double energy_compute_j = 0.0;
  double energy_cooling_j = 0.0;
  double cost = 0.0;
  int arrivals = 0;  // new jobs presented in this step's batch
  int completed = 0;
  int infeasible = 0;
  int dispatched = 0;
  int unplaceable = 0;                      // arrivals of this step no cluster can ever host
  std::array<int, kNumHardware> pending{};  // deferred pool by class, after the step
};

/// Tentative fleet state used to filter assignments within one batch.
class FleetView {
 public:
  FleetView(const Observation& obs, const WorldConfig& cfg) : cfg_(&cfg) {
    auto n = static_cast<std::size_t>(cfg.num_clusters());
    u_.resize(n);
    c_eff_.resize(n);
    power_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      u_[i] = obs.utilization[i];
      c_eff_[i] = obs.effective_capacity(static_cast<int>(i));
      power_[i] = obs.power(static_cast<int>(i));
    }
  }

  int size() const { return static_cast<int>(u_.size()); }
  double utilization(int i) const { return u_[static_cast<std::size_t>(i)]; }
  double effective_capacity(int i) const { return c_eff_[static_cast<std::size_t>(i)]; }
  double headroom(int i) const { return c_eff_[static_cast<std::size_t>(i)] - u_[static_cast<std::size_t>(i)]; }

  bool fits(int i, Hardware h, double r) const {
    const auto& spec = cfg_->clusters[static_cast<std::size_t>(i)];
    if (spec.hardware != h) return false;
    auto k = static_cast<std::size_t>(i);
    if (c_eff_[k] - u_[k] < r - kTol) return false;
    return power_after(i, u_[k] + r) >= -kTol;
  }

  bool feasible(int i, const Job& j) const { return fits(i, j.affinity, j.resources); }

  std::vector<int> feasible_set(const Job& j) const {
    std::vector<int> out;
    for (int i = 0; i < size(); ++i)
      if (feasible(i, j)) out.push_back(i);
    return out;
  }

  void commit(int i, const Job& j) { u_[static_cast<std::size_t>(i)] += j.resources; }

  // Worst-case balance: cooling drawn at its limit.
  double power_after(int i, double u) const {
    const auto& c = cfg_->clusters[static_cast<std::size_t>(i)].physics;
    double cool_max = cfg_->datacenters[static_cast<std::size_t>(c.datacenter)].physics.cooling_max;
    return power_[static_cast<std::size_t>(i)] + c.grid_inflow - c.phi * u - c.kappa * cool_max;
  }

  static constexpr double kTol = 1e-9;

 private:
  const WorldConfig* cfg_;
  std::vector<double> u_;
  std::vector<double> c_eff_;
  std::vector<double> power_;
};

/// Clusters that can take `job` right now: matching hardware, enough
/// effective headroom and a non-negative worst-case power balance.
inline std::vector<int> feasible_clusters(const Job& job, const Observation& obs, const WorldConfig& cfg) {
  return FleetView(obs, cfg).feasible_set(job);
}

/// Scans the local queue in FIFO order and starts every job that `fits`
/// (a later, smaller job may start ahead of a blocked head). Returns the
/// number of jobs started.
template <typename Fits>
int dispatch_backfill(ClusterState& c, Fits&& fits) {
  int started = 0;
  for (auto it = c.queue.begin(); it != c.queue.end();) {
    if (fits(c, it->resources)) {
      c.utilization += it->resources;
      c.active.push_back(*it);
      it = c.queue.erase(it);
      ++started;
    } else {
      ++it;
    }
  }
  return started;
}

/// Closed-loop datacenter fleet. Single-threaded; one instance per episode.
class Environment {
 public:
  explicit Environment(WorldConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const WorldConfig& config() const { return cfg_; }
  const std::vector<ClusterState>& clusters() const { return clusters_; }
  const std::vector<DatacenterState>& datacenters() const { return dcs_; }
  const ArrivalSchedule& schedule() const { return schedule_; }
  const std::vector<std::vector<double>>& ambient_series() const { return ambient_; }
  int time() const { return t_; }
  bool done() const { return t_ >= cfg_.episode_length(); }

  std::int64_t total_arrivals() const { return arrivals_total_; }
  std::int64_t total_completed() const { return completed_total_; }
  std::int64_t total_unplaceable() const { return unplaceable_total_; }
  std::int64_t total_infeasible() const { return infeasible_total_; }
  const std::vector<Job>& batch() const { return batch_; }

  Observation reset(std::uint64_t seed) { return reset(seed, build_schedule(cfg_.workload, seed)); }

  /// Starts an episode over an explicit arrival schedule (fixture replay).
  Observation reset(std::uint64_t seed, ArrivalSchedule schedule) {
    const int n_steps = cfg_.episode_length();
    if (static_cast<int>(schedule.buckets.size()) < n_steps) schedule.buckets.resize(static_cast<std::size_t>(n_steps));
    schedule_ = std::move(schedule);
    t_ = 0;
    arrivals_total_ = completed_total_ = unplaceable_total_ = infeasible_total_ = 0;
    pending_.clear();
    batch_.clear();
    last_dispatched_.assign(static_cast<std::size_t>(cfg_.num_clusters()), 0.0);

    const double dt = cfg_.dt();
    dcs_.clear();
    ambient_.clear();
    for (int d = 0; d < cfg_.num_datacenters(); ++d) {
      const auto& spec = cfg_.datacenters[static_cast<std::size_t>(d)];
      std::vector<double> amb;
      if (spec.ambient_trace) {
        amb = load_ambient_trace(*spec.ambient_trace, n_steps);
      } else {
        Rng rng = make_rng(seed, Stream::Ambient, static_cast<std::uint32_t>(d));
        amb.resize(static_cast<std::size_t>(n_steps + 1));
        for (int t = 0; t <= n_steps; ++t) amb[static_cast<std::size_t>(t)] = ambient_temperature(t, spec.physics, dt, rng);
      }
      ambient_.push_back(std::move(amb));
      DatacenterState s;
      s.id = d;
      s.physics = spec.physics;
      s.setpoint = spec.setpoint;
      s.theta = spec.setpoint;
      s.theta_amb = ambient_.back()[0];
      s.price = electricity_price(0, spec.physics, dt);
      dcs_.push_back(std::move(s));
    }
    clusters_.clear();
    for (int i = 0; i < cfg_.num_clusters(); ++i) {
      const auto& spec = cfg_.clusters[static_cast<std::size_t>(i)];
      ClusterState c;
      c.id = i;
      c.datacenter = spec.physics.datacenter;
      c.hardware = spec.hardware;
      c.capacity = spec.physics.capacity;
      c.physics = spec.physics;
      c.effective_capacity = c.capacity * throttle_factor(dcs_[static_cast<std::size_t>(c.datacenter)].theta,
                                                          dcs_[static_cast<std::size_t>(c.datacenter)].physics);
      c.power = spec.initial_power;
      dcs_[static_cast<std::size_t>(c.datacenter)].clusters.push_back(i);
      clusters_.push_back(std::move(c));
    }
    new_arrivals_ = {0, 0};
    admit_arrivals(0);
    return observe();
  }

  std::pair<Observation, StepInfo> step(const Action& action) {
    if (done()) throw ProtocolError("step() called on a finished episode");
    if (action.assignments.size() != batch_.size())
      throw ProtocolError("action has " + std::to_string(action.assignments.size()) + " assignments for " +
                          std::to_string(batch_.size()) + " jobs");
    const int C = cfg_.num_clusters();
    const int D = cfg_.num_datacenters();
    if (action.setpoints && static_cast<int>(action.setpoints->size()) != D)
      throw ProtocolError("action setpoints must have one entry per datacenter");

    StepInfo info;
    info.t = t_;
    info.arrivals = batch_arrivals_;
    info.unplaceable = batch_unplaceable_;
    const double dt = cfg_.dt();

    // (1)-(2) Apply assignments; infeasible ones fall back to the pool.
    std::deque<Job> next_pending;
    {
      Observation snap = observe();
      FleetView view(snap, cfg_);
      for (std::size_t k = 0; k < batch_.size(); ++k) {
        int a = action.assignments[k];
        if (a < 0 || a > C) throw ProtocolError("assignment index out of range");
        Job& j = batch_[k];
        if (a == 0) {
          next_pending.push_back(j);
          continue;
        }
        int i = a - 1;
        if (view.feasible(i, j)) {
          view.commit(i, j);
          clusters_[static_cast<std::size_t>(i)].queue.push_back(j);
        } else {
          ++info.infeasible;
          next_pending.push_back(j);
        }
      }
    }

    // (3) FIFO dispatch with backfilling.
    info.effective_capacity.resize(static_cast<std::size_t>(C));
    for (auto& c : clusters_) {
      info.effective_capacity[static_cast<std::size_t>(c.id)] = c.effective_capacity;
      double before = c.utilization;
      info.dispatched += dispatch_backfill(c, [&](const ClusterState& cl, double r) { return dispatchable(cl, r); });
      last_dispatched_[static_cast<std::size_t>(c.id)] = c.utilization - before;
    }

    // (4) Execute one step and retire finished jobs.
    info.utilization.resize(static_cast<std::size_t>(C));
    for (auto& c : clusters_) {
      info.utilization[static_cast<std::size_t>(c.id)] = active_sum(c);
      for (auto& j : c.active) --j.remaining;
      auto done_it = std::stable_partition(c.active.begin(), c.active.end(), [](const Job& j) { return j.remaining > 0; });
      info.completed += static_cast<int>(std::distance(done_it, c.active.end()));
      c.active.erase(done_it, c.active.end());
      c.utilization = active_sum(c);
    }
    completed_total_ += info.completed;

    // (5) Cooling and thermal update.
    info.theta_amb.resize(static_cast<std::size_t>(D));
    info.price.resize(static_cast<std::size_t>(D));
    info.setpoint.resize(static_cast<std::size_t>(D));
    info.cooling.resize(static_cast<std::size_t>(D));
    info.compute_power.resize(static_cast<std::size_t>(D));
    info.theta.resize(static_cast<std::size_t>(D));
    for (auto& dc : dcs_) {
      auto d = static_cast<std::size_t>(dc.id);
      double sp = action.setpoints ? std::clamp((*action.setpoints)[d], cfg_.setpoint_min, cfg_.setpoint_max)
                                   : cfg_.datacenters[d].setpoint;
      dc.setpoint = sp;
      double heat = 0.0;
      double compute = 0.0;
      for (int i : dc.clusters) {
        const auto& c = clusters_[static_cast<std::size_t>(i)];
        heat += c.physics.alpha * info.utilization[static_cast<std::size_t>(i)];
        compute += c.physics.phi * info.utilization[static_cast<std::size_t>(i)];
      }
      auto pid = pid_cooling(dc.theta, sp, dc.pid, dc.physics, dt);
      dc.pid = pid.state;
      dc.cooling_last = pid.cooling;
      info.theta_amb[d] = dc.theta_amb;
      info.price[d] = dc.price;
      info.setpoint[d] = sp;
      info.cooling[d] = pid.cooling;
      info.compute_power[d] = compute;
      dc.theta = thermal_step(dc.theta, heat, dc.theta_amb, pid.cooling, dc.physics, dt);
      info.theta[d] = dc.theta;
      info.energy_compute_j += compute * dt;
      info.energy_cooling_j += pid.cooling * dt;
      info.cost += dc.price * joules_to_kwh((compute + pid.cooling) * dt);
    }

    // (6) Throttling, (7) power balance.
    info.power.resize(static_cast<std::size_t>(C));
    info.queue.resize(static_cast<std::size_t>(C));
    for (auto& c : clusters_) {
      const auto& dc = dcs_[static_cast<std::size_t>(c.datacenter)];
      c.effective_capacity = c.capacity * throttle_factor(dc.theta, dc.physics);
      c.power = power_step(c.power, info.utilization[static_cast<std::size_t>(c.id)], dc.cooling_last, c.physics);
      info.power[static_cast<std::size_t>(c.id)] = c.power;
      info.queue[static_cast<std::size_t>(c.id)] = static_cast<double>(c.queue.size());
    }

    // (8) Exogenous inputs for the next step.
    ++t_;
    for (auto& dc : dcs_) {
      dc.theta_amb = ambient_[static_cast<std::size_t>(dc.id)][static_cast<std::size_t>(t_)];
      dc.price = electricity_price(t_, dc.physics, dt);
    }

    infeasible_total_ += info.infeasible;
    for (const auto& j : next_pending) ++info.pending[static_cast<std::size_t>(index_of(j.affinity))];
    pending_ = std::move(next_pending);
    admit_arrivals(t_);
    return {observe(), std::move(info)};
  }

  Observation observe() const {
    const int C = cfg_.num_clusters();
    const int D = cfg_.num_datacenters();
    Observation o;
    o.t = t_;
    o.num_clusters = C;
    o.num_datacenters = D;
    o.values.reserve(static_cast<std::size_t>(3 * C + 3 * D));
    for (const auto& c : clusters_) {
      o.values.push_back(c.power);
      o.values.push_back(c.effective_capacity);
      o.values.push_back(static_cast<double>(c.queue.size()));
    }
    for (const auto& d : dcs_) {
      o.values.push_back(d.theta);
      o.values.push_back(d.theta_amb);
      o.values.push_back(d.price);
    }
    o.jobs = batch_;
    o.utilization.reserve(static_cast<std::size_t>(C));
    for (const auto& c : clusters_) o.utilization.push_back(c.utilization);
    o.dispatched = last_dispatched_;
    for (const auto& d : dcs_) {
      o.setpoints.push_back(d.setpoint);
      o.pid.push_back(d.pid);
    }
    o.new_arrivals = {new_arrivals_[0], new_arrivals_[1]};
    return o;
  }

  /// Jobs by state; sums to total_arrivals().
  std::int64_t jobs_in_system() const {
    std::int64_t n = static_cast<std::int64_t>(batch_.size());
    for (const auto& c : clusters_) n += static_cast<std::int64_t>(c.active.size() + c.queue.size());
    return n;
  }

  /// Structural invariants of the current state; empty when all hold.
  std::vector<std::string> check_invariants() const {
    std::vector<std::string> v;
    for (const auto& c : clusters_) {
      std::string tag = "cluster " + std::to_string(c.id) + ": ";
      double s = active_sum(c);
      if (c.utilization != s) v.push_back(tag + "utilization differs from active sum");
      if (c.utilization < 0.0) v.push_back(tag + "negative utilization");
      if (c.utilization > c.capacity * (1.0 + 1e-12)) v.push_back(tag + "utilization above c_max");
      if (c.effective_capacity > c.capacity) v.push_back(tag + "c_eff above c_max");
      const auto& dc = dcs_[static_cast<std::size_t>(c.datacenter)];
      if (c.effective_capacity != c.capacity * throttle_factor(dc.theta, dc.physics))
        v.push_back(tag + "c_eff inconsistent with throttle factor");
      if (c.power < 0.0) v.push_back(tag + "negative power balance");
      for (const auto& j : c.active)
        if (j.remaining < 1 || j.remaining > j.duration) v.push_back(tag + "active job with invalid remaining");
    }
    if (arrivals_total_ != completed_total_ + unplaceable_total_ + jobs_in_system())
      v.push_back("job conservation violated");
    return v;
  }

 private:
  static double active_sum(const ClusterState& c) {
    double s = 0.0;
    for (const auto& j : c.active) s += j.resources;
    return s;
  }

  bool dispatchable(const ClusterState& c, double r) const {
    if (c.effective_capacity - c.utilization < r - FleetView::kTol) return false;
    double cool_max = dcs_[static_cast<std::size_t>(c.datacenter)].physics.cooling_max;
    double balance = c.power + c.physics.grid_inflow - c.physics.phi * (c.utilization + r) - c.physics.kappa * cool_max;
    return balance >= -FleetView::kTol;
  }

  bool placeable(const Job& j) const {
    for (const auto& c : clusters_)
      if (c.hardware == j.affinity && c.capacity >= j.resources) return true;
    return false;
  }

  void admit_arrivals(int t) {
    batch_.assign(pending_.begin(), pending_.end());
    pending_.clear();
    new_arrivals_ = {0, 0};
    batch_arrivals_ = batch_unplaceable_ = 0;
    if (t >= cfg_.episode_length()) return;
    for (const auto& j : schedule_.buckets[static_cast<std::size_t>(t)]) {
      ++arrivals_total_;
      ++batch_arrivals_;
      if (!placeable(j)) {
        ++unplaceable_total_;
        ++batch_unplaceable_;
        continue;
      }
      Job copy = j;
      copy.remaining = copy.duration;
      batch_.push_back(copy);
      ++new_arrivals_[static_cast<std::size_t>(index_of(j.affinity))];
    }
  }

  WorldConfig cfg_;
  std::vector<ClusterState> clusters_;
  std::vector<DatacenterState> dcs_;
  ArrivalSchedule schedule_;
  std::vector<std::vector<double>> ambient_;
  std::deque<Job> pending_;
  std::vector<Job> batch_;
  std::vector<double> last_dispatched_;
  std::array<int, kNumHardware> new_arrivals_{};
  int batch_arrivals_ = 0;
  int batch_unplaceable_ = 0;
  int t_ = 0;
  std::int64_t arrivals_total_ = 0;
  std::int64_t completed_total_ = 0;
  std::int64_t unplaceable_total_ = 0;
  std::int64_t infeasible_total_ = 0;
};

}  // namespace dcgym
