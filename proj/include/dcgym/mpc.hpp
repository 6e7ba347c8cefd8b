#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "dcgym/config.hpp"
#include "dcgym/environment.hpp"
#include "dcgym/lp.hpp"
#include "dcgym/physics.hpp"
#include "dcgym/policies.hpp"

namespace dcgym {

/// Aggregate plant state used inside the controllers' prediction model.
struct ModelState {
  std::vector<double> u;  // per cluster, at dispatch time
  std::vector<double> c_eff;
  std::vector<double> power;
  std::vector<double> theta;  // per datacenter
  std::vector<PidState> pid;
};

inline ModelState model_state(const Observation& obs) {
  ModelState s;
  s.u = obs.utilization;
  for (int i = 0; i < obs.num_clusters; ++i) {
    s.c_eff.push_back(obs.effective_capacity(i));
    s.power.push_back(obs.power(i));
  }
  for (int d = 0; d < obs.num_datacenters; ++d) s.theta.push_back(obs.theta(d));
  s.pid = obs.pid;
  return s;
}

/// One predicted step. Per-cluster vectors are indexed by global cluster id.
struct PredictedStep {
  std::vector<double> theta;
  std::vector<double> cooling;
  std::vector<double> compute;
  std::vector<double> u_exec;
  std::vector<double> c_eff;
  std::vector<double> power;
  double energy_kwh = 0.0;
  double cost = 0.0;
};

/// Setpoints per datacenter and work (CU) started per cluster at one step.
struct PlanStep {
  std::vector<double> setpoints;
  std::vector<double> inflow;
};

/// Copy of the plant physics plus nominal exogenous forecasts. Workload is
/// aggregated: active utilization drains by (1 - 1/mean_duration) per step.
class PredictionModel {
 public:
  explicit PredictionModel(const WorldConfig& cfg) : cfg_(&cfg) {
    const int span = cfg.episode_length() + std::max(cfg.mpc.h1, 1) + 1;
    dc_clusters_.resize(static_cast<std::size_t>(cfg.num_datacenters()));
    for (int i = 0; i < cfg.num_clusters(); ++i)
      dc_clusters_[static_cast<std::size_t>(cfg.clusters[static_cast<std::size_t>(i)].physics.datacenter)].push_back(i);
    for (int d = 0; d < cfg.num_datacenters(); ++d) {
      const auto& spec = cfg.datacenters[static_cast<std::size_t>(d)];
      std::vector<double> series;
      if (spec.ambient_trace) {
        series = load_ambient_trace(*spec.ambient_trace, span);
      } else {
        series.resize(static_cast<std::size_t>(span + 1));
        for (int t = 0; t <= span; ++t) series[static_cast<std::size_t>(t)] = ambient_nominal(t, spec.physics, cfg.dt());
      }
      ambient_.push_back(std::move(series));
    }
    for (auto h : {Hardware::Cpu, Hardware::Gpu}) {
      auto k = static_cast<std::size_t>(index_of(h));
      mean_size_[k] = cfg.mean_size(h);
      double dbar = std::max(1.0, cfg.mean_duration(h));
      decay_[k] = 1.0 - 1.0 / dbar;
    }
  }

  const WorldConfig& config() const { return *cfg_; }
  int num_clusters() const { return cfg_->num_clusters(); }
  int num_datacenters() const { return cfg_->num_datacenters(); }
  const std::vector<int>& clusters_of(int d) const { return dc_clusters_[static_cast<std::size_t>(d)]; }
  Hardware hardware(int i) const { return cfg_->clusters[static_cast<std::size_t>(i)].hardware; }
  const ClusterPhysicsParams& cluster(int i) const { return cfg_->clusters[static_cast<std::size_t>(i)].physics; }
  const DatacenterPhysicsParams& datacenter(int d) const { return cfg_->datacenters[static_cast<std::size_t>(d)].physics; }
  double mean_size(Hardware h) const { return mean_size_[static_cast<std::size_t>(index_of(h))]; }
  double decay(Hardware h) const { return decay_[static_cast<std::size_t>(index_of(h))]; }

  /// Replaces the ambient forecast (per datacenter, indexed by absolute step).
  void set_ambient(std::vector<std::vector<double>> series) { ambient_ = std::move(series); }

  double ambient(int d, int t) const {
    const auto& s = ambient_[static_cast<std::size_t>(d)];
    return s[static_cast<std::size_t>(std::clamp(t, 0, static_cast<int>(s.size()) - 1))];
  }
  double price(int d, int t) const { return electricity_price(t, datacenter(d), cfg_->dt()); }

  /// Advances datacenter d (all of them when d < 0) by one step at time t.
  void step(ModelState& s, int t, const std::vector<double>& setpoints, const std::vector<double>& inflow,
            PredictedStep* rec = nullptr, int only = -1) const {
    const double dt = cfg_->dt();
    if (rec) {
      auto C = static_cast<std::size_t>(num_clusters());
      auto D = static_cast<std::size_t>(num_datacenters());
      rec->theta.assign(D, 0.0);
      rec->cooling.assign(D, 0.0);
      rec->compute.assign(D, 0.0);
      rec->u_exec.assign(C, 0.0);
      rec->c_eff.assign(C, 0.0);
      rec->power.assign(C, 0.0);
      rec->energy_kwh = rec->cost = 0.0;
    }
    for (int d = 0; d < num_datacenters(); ++d) {
      if (only >= 0 && d != only) continue;
      auto dd = static_cast<std::size_t>(d);
      const auto& dc = datacenter(d);
      double heat = 0.0;
      double compute = 0.0;
      for (int i : clusters_of(d)) {
        auto k = static_cast<std::size_t>(i);
        double ue = s.u[k] + inflow[k];
        s.u[k] = ue;
        heat += cluster(i).alpha * ue;
        compute += cluster(i).phi * ue;
      }
      auto pid = pid_cooling(s.theta[dd], setpoints[dd], s.pid[dd], dc, dt);
      s.pid[dd] = pid.state;
      s.theta[dd] = thermal_step(s.theta[dd], heat, ambient(d, t), pid.cooling, dc, dt);
      double g = throttle_factor(s.theta[dd], dc);
      for (int i : clusters_of(d)) {
        auto k = static_cast<std::size_t>(i);
        const auto& c = cluster(i);
        if (rec) rec->u_exec[k] = s.u[k];
        s.c_eff[k] = c.capacity * g;
        s.power[k] = power_step(s.power[k], s.u[k], pid.cooling, c);
        s.u[k] *= decay(hardware(i));
        if (rec) {
          rec->c_eff[k] = s.c_eff[k];
          rec->power[k] = s.power[k];
        }
      }
      if (rec) {
        rec->theta[dd] = s.theta[dd];
        rec->cooling[dd] = pid.cooling;
        rec->compute[dd] = compute;
        double kwh = joules_to_kwh((compute + pid.cooling) * dt);
        rec->energy_kwh += kwh;
        rec->cost += price(d, t) * kwh;
      }
    }
  }

 private:
  const WorldConfig* cfg_;
  std::vector<std::vector<int>> dc_clusters_;
  std::vector<std::vector<double>> ambient_;
  std::array<double, kNumHardware> mean_size_{};
  std::array<double, kNumHardware> decay_{};
};

/// Rolls the model forward over `plan` starting at step t0.
inline std::vector<PredictedStep> predict_trajectory(const ModelState& start, int t0, const std::vector<PlanStep>& plan,
                                                     const PredictionModel& model) {
  ModelState s = start;
  std::vector<PredictedStep> out(plan.size());
  for (std::size_t k = 0; k < plan.size(); ++k)
    model.step(s, t0 + static_cast<int>(k), plan[k].setpoints, plan[k].inflow, &out[k]);
  return out;
}

/// Whole jobs of mean size that fit in the headroom.
inline double headroom_jobs(double c_eff, double u, double rbar) {
  return std::floor(std::max(0.0, c_eff - u) / rbar + 1e-9);
}

/// Splits `total` units over weights by largest remainder. Ties go to the
/// lower index. Requires total <= sum(weights) when weights are integers.
inline std::vector<int> largest_remainder(int total, const std::vector<double>& weights) {
  std::vector<int> out(weights.size(), 0);
  double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (total <= 0 || wsum <= 0.0) return out;
  std::vector<double> frac(weights.size(), 0.0);
  int given = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    double share = total * weights[k] / wsum;
    out[k] = static_cast<int>(std::floor(share + 1e-9));
    frac[k] = share - out[k];
    given += out[k];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t k = 0; given < total && k < order.size(); ++k) {
    if (weights[order[k]] <= 0.0) continue;
    ++out[order[k]];
    ++given;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Supervisory stage

struct Stage1Plan {
  int horizon = 0;
  std::array<std::vector<double>, kNumHardware> rho;      // [type][k]
  std::array<std::vector<double>, kNumHardware> backlog;  // jobs waiting at k
  std::array<std::vector<double>, kNumHardware> bound;    // fleet headroom in jobs at k
  std::vector<std::vector<double>> setpoints;             // [d][k]
  std::vector<std::vector<double>> slack;                 // [d][k]
  std::vector<std::vector<double>> theta;                 // predicted, [d][k]
  std::vector<std::array<std::vector<int>, kNumHardware>> quota;  // [k][type][d]
  double objective = 0.0;
  int iterations = 0;
  double box_residual = 0.0;
  double headroom_residual = 0.0;
};

struct Stage1Input {
  ModelState state;
  int t = 0;
  std::array<double, kNumHardware> waiting{};   // jobs in the current batch
  std::array<double, kNumHardware> forecast{};  // new arrivals per future step
};

namespace detail {

/// Evaluates the supervisory objective. Decision vector layout:
/// [rho_cpu(0..H), rho_gpu(0..H), z_0(0..H), ..., z_{D-1}(0..H)] with the
/// setpoint z scaled to [0, 1] over the setpoint box. The admission
/// fractions are clipped to the headroom bound in place while rolling out,
/// which makes the clip an exact projection.
class Stage1Problem {
 public:
  Stage1Problem(const PredictionModel& model, const Stage1Input& in) : m_(&model), in_(&in) {
    const auto& cfg = model.config();
    H_ = cfg.mpc.h1;
    D_ = model.num_datacenters();
    lo_ = cfg.setpoint_min;
    hi_ = cfg.setpoint_max;
  }

  int size() const { return (kNumHardware + D_) * H_; }
  double setpoint(const std::vector<double>& z, int d, int k) const {
    return lo_ + (hi_ - lo_) * z[static_cast<std::size_t>((kNumHardware + d) * H_ + k)];
  }
  double& rho(std::vector<double>& z, int type, int k) const { return z[static_cast<std::size_t>(type * H_ + k)]; }

  double evaluate(std::vector<double>& z, Stage1Plan* plan = nullptr) const {
    const auto& cfg = m_->config();
    const auto& w = cfg.mpc;
    for (auto& v : z) v = std::clamp(v, 0.0, 1.0);
    ModelState s = in_->state;
    std::array<double, kNumHardware> n = in_->waiting;
    const int C = m_->num_clusters();
    std::vector<double> inflow(static_cast<std::size_t>(C));
    std::vector<double> sp(static_cast<std::size_t>(D_));
    std::vector<double> hj(static_cast<std::size_t>(C));
    PredictedStep rec;
    double cost = 0.0;
    if (plan) init_plan(*plan);
    for (int k = 0; k < H_; ++k) {
      std::fill(inflow.begin(), inflow.end(), 0.0);
      std::array<double, kNumHardware> admitted{};
      for (int tau = 0; tau < kNumHardware; ++tau) {
        auto h = static_cast<Hardware>(tau);
        double rbar = m_->mean_size(h);
        double total = 0.0;
        for (int i = 0; i < C; ++i) {
          auto ki = static_cast<std::size_t>(i);
          hj[ki] = m_->hardware(i) == h ? headroom_jobs(s.c_eff[ki], s.u[ki], rbar) : 0.0;
          total += hj[ki];
        }
        double limit = n[static_cast<std::size_t>(tau)] > 0.0 ? std::min(1.0, total / n[static_cast<std::size_t>(tau)]) : 1.0;
        double& r = rho(z, tau, k);
        r = std::min(r, limit);
        admitted[static_cast<std::size_t>(tau)] = r * n[static_cast<std::size_t>(tau)];
        if (total > 0.0)
          for (int i = 0; i < C; ++i)
            if (m_->hardware(i) == h) inflow[static_cast<std::size_t>(i)] = admitted[static_cast<std::size_t>(tau)] * rbar * hj[static_cast<std::size_t>(i)] / total;
        if (plan) {
          plan->backlog[static_cast<std::size_t>(tau)][static_cast<std::size_t>(k)] = n[static_cast<std::size_t>(tau)];
          plan->bound[static_cast<std::size_t>(tau)][static_cast<std::size_t>(k)] = total;
          record_quota(*plan, k, tau, admitted[static_cast<std::size_t>(tau)], hj);
        }
      }
      for (int d = 0; d < D_; ++d) sp[static_cast<std::size_t>(d)] = setpoint(z, d, k);
      m_->step(s, in_->t + k, sp, inflow, &rec);
      cost += w.w_energy * rec.energy_kwh;
      for (int d = 0; d < D_; ++d) {
        const auto& dc = m_->datacenter(d);
        double th = rec.theta[static_cast<std::size_t>(d)];
        double dev = th - w.theta_ref;
        double xi = std::max(0.0, th - (dc.theta_soft - w.soft_margin));
        cost += w.w_temperature * dev * dev + w.w_slack * xi + w.hard_penalty * std::pow(std::max(0.0, th - dc.theta_max), 2);
        if (plan) {
          plan->setpoints[static_cast<std::size_t>(d)][static_cast<std::size_t>(k)] = sp[static_cast<std::size_t>(d)];
          plan->slack[static_cast<std::size_t>(d)][static_cast<std::size_t>(k)] = xi;
          plan->theta[static_cast<std::size_t>(d)][static_cast<std::size_t>(k)] = th;
        }
      }
      for (int tau = 0; tau < kNumHardware; ++tau) {
        auto t = static_cast<std::size_t>(tau);
        double left = n[t] - admitted[t];
        cost += w.w_rejection * left;
        n[t] = in_->forecast[t] + left;
        cost += w.w_queue * n[t];
        if (plan) plan->rho[t][static_cast<std::size_t>(k)] = rho(z, tau, k);
      }
    }
    if (plan) plan->objective = cost;
    return cost;
  }

 private:
  void init_plan(Stage1Plan& p) const {
    auto H = static_cast<std::size_t>(H_);
    auto D = static_cast<std::size_t>(D_);
    p.horizon = H_;
    for (int tau = 0; tau < kNumHardware; ++tau) {
      p.rho[static_cast<std::size_t>(tau)].assign(H, 0.0);
      p.backlog[static_cast<std::size_t>(tau)].assign(H, 0.0);
      p.bound[static_cast<std::size_t>(tau)].assign(H, 0.0);
    }
    p.setpoints.assign(D, std::vector<double>(H, 0.0));
    p.slack.assign(D, std::vector<double>(H, 0.0));
    p.theta.assign(D, std::vector<double>(H, 0.0));
    p.quota.assign(H, {});
    for (auto& q : p.quota)
      for (auto& v : q) v.assign(D, 0);
  }

  void record_quota(Stage1Plan& p, int k, int tau, double admitted, const std::vector<double>& hj) const {
    std::vector<double> per_dc(static_cast<std::size_t>(D_), 0.0);
    for (int i = 0; i < m_->num_clusters(); ++i)
      per_dc[static_cast<std::size_t>(m_->cluster(i).datacenter)] += hj[static_cast<std::size_t>(i)];
    int total = static_cast<int>(std::floor(admitted + 1e-9));
    auto q = largest_remainder(total, per_dc);
    p.quota[static_cast<std::size_t>(k)][static_cast<std::size_t>(tau)] = q;
    double bound = std::accumulate(per_dc.begin(), per_dc.end(), 0.0);
    p.headroom_residual = std::max(p.headroom_residual, admitted - bound);
    for (int d = 0; d < D_; ++d)
      p.headroom_residual = std::max(p.headroom_residual, q[static_cast<std::size_t>(d)] - per_dc[static_cast<std::size_t>(d)]);
  }

  const PredictionModel* m_;
  const Stage1Input* in_;
  int H_ = 0;
  int D_ = 0;
  double lo_ = 0.0;
  double hi_ = 1.0;
};

/// Projected descent with forward-difference gradients and backtracking.
/// `f` must project its argument in place.
template <typename F>
double projected_descent(std::vector<double>& z, F&& f, int max_iter, double fd, double tol, int& iters) {
  double fz = f(z);
  std::vector<double> g(z.size());
  std::vector<double> trial(z.size());
  double step = 0.25;
  for (iters = 0; iters < max_iter; ++iters) {
    double gmax = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) {
      trial = z;
      double h = z[j] + fd <= 1.0 ? fd : -fd;
      trial[j] += h;
      g[j] = (f(trial) - fz) / h;
      gmax = std::max(gmax, std::abs(g[j]));
    }
    if (!(gmax > 0.0) || !std::isfinite(gmax)) break;
    bool moved = false;
    for (int ls = 0; ls < 30 && step > 1e-7; ++ls) {
      for (std::size_t j = 0; j < z.size(); ++j) trial[j] = z[j] - step * g[j] / gmax;
      double ft = f(trial);
      if (ft < fz - 1e-12 * (1.0 + std::abs(fz))) {
        bool small = fz - ft <= tol * (1.0 + std::abs(fz));
        z = trial;
        fz = ft;
        moved = true;
        step = std::min(1.0, step * 2.0);
        if (small) return fz;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;
  }
  return fz;
}

}  // namespace detail

/// Solves the supervisory problem. `warm` seeds the decision vector (shifted
/// by the caller); by default admissions start at 1 and setpoints at the
/// configured values.
inline Stage1Plan hmpc_stage1(const Stage1Input& in, const PredictionModel& model,
                              const std::optional<Stage1Plan>& warm = std::nullopt) {
  const auto& cfg = model.config();
  detail::Stage1Problem prob(model, in);
  const int H = cfg.mpc.h1;
  const double lo = cfg.setpoint_min;
  const double span = std::max(1e-12, cfg.setpoint_max - cfg.setpoint_min);
  std::vector<double> z(static_cast<std::size_t>(prob.size()), 1.0);
  for (int d = 0; d < model.num_datacenters(); ++d)
    for (int k = 0; k < H; ++k) {
      double sp = cfg.datacenters[static_cast<std::size_t>(d)].setpoint;
      if (warm && warm->horizon == H) sp = warm->setpoints[static_cast<std::size_t>(d)][static_cast<std::size_t>(std::min(k + 1, H - 1))];
      z[static_cast<std::size_t>((kNumHardware + d) * H + k)] = (sp - lo) / span;
    }
  if (warm && warm->horizon == H)
    for (int tau = 0; tau < kNumHardware; ++tau)
      for (int k = 0; k < H; ++k) {
        double r = warm->rho[static_cast<std::size_t>(tau)][static_cast<std::size_t>(std::min(k + 1, H - 1))];
        z[static_cast<std::size_t>(tau * H + k)] = std::max(r, 1e-3);
      }
  int iters = 0;
  detail::projected_descent(z, [&](std::vector<double>& v) { return prob.evaluate(v); }, cfg.mpc.stage1_iterations,
                            cfg.mpc.fd_step, cfg.mpc.stage1_tolerance, iters);
  Stage1Plan plan;
  prob.evaluate(z, &plan);
  plan.iterations = iters;
  double box = 0.0;
  for (const auto& r : plan.rho)
    for (double v : r) box = std::max({box, -v, v - 1.0});
  for (const auto& row : plan.setpoints)
    for (double v : row) box = std::max({box, cfg.setpoint_min - v, v - cfg.setpoint_max});
  for (const auto& row : plan.slack)
    for (double v : row) box = std::max(box, -v);
  plan.box_residual = box;
  return plan;
}

// ---------------------------------------------------------------------------
// Per-datacenter routing stage

struct Stage2Plan {
  int datacenter = 0;
  int horizon = 0;
  std::vector<int> clusters;                                // global ids
  std::vector<std::vector<double>> x;                       // [k][local cluster]
  std::vector<std::array<double, kNumHardware>> rejected;  // [k][type]
  std::vector<int> counts;                                  // integerized k = 0
  std::vector<double> cost;                                 // per-job cost coefficient per local cluster
  double objective = 0.0;
  int iterations = 0;
  lp::Status status = lp::Status::Invalid;
  double quota_residual = 0.0;
  double headroom_residual = 0.0;
};

struct Stage2Input {
  int datacenter = 0;
  int horizon = 1;
  std::vector<std::array<int, kNumHardware>> quota;  // [k][type]
  std::vector<double> u0;                            // per global cluster
  std::vector<double> c_eff;                         // per global cluster
};

namespace detail {

struct Stage2Builder {
  const PredictionModel& model;
  const Stage2Input& in;
  std::vector<int> local;  // global ids of this datacenter's clusters
  std::vector<double> cost;

  Stage2Builder(const PredictionModel& m, const Stage2Input& input) : model(m), in(input) {
    local = m.clusters_of(input.datacenter);
    const auto& w = m.config().mpc;
    const double dt = m.config().dt();
    for (int i : local) {
      const auto& c = m.cluster(i);
      Hardware h = m.hardware(i);
      double life = std::max(1.0, m.config().mean_duration(h));
      double kwh = joules_to_kwh((c.phi + c.alpha) * m.mean_size(h) * life * dt);
      cost.push_back(-w.w_reject_stage2 + w.w_energy * kwh);
    }
  }

  std::size_t n() const { return local.size(); }

  /// Headroom of local cluster li at step k, in jobs, before any routing.
  double capacity(std::size_t li, int k) const {
    int i = local[li];
    auto gi = static_cast<std::size_t>(i);
    double rbar = model.mean_size(model.hardware(i));
    double dec = std::pow(model.decay(model.hardware(i)), k);
    return std::max(0.0, in.c_eff[gi] - dec * in.u0[gi]) / rbar;
  }

  double decay_pow(std::size_t li, int p) const { return std::pow(model.decay(model.hardware(local[li])), p); }

  /// LP over steps [k0, H); steps before k0 are fixed to `fixed`.
  lp::Problem build(int k0, const std::vector<std::vector<double>>& fixed) const {
    const int H = in.horizon;
    const std::size_t nc = n();
    const std::size_t nk = static_cast<std::size_t>(H - k0);
    std::size_t rows = nk * nc;
    for (int tau = 0; tau < kNumHardware; ++tau)
      if (has_type(tau)) rows += nk;
    lp::Problem p(rows, nk * nc);
    auto var = [&](int k, std::size_t li) { return static_cast<std::size_t>(k - k0) * nc + li; };
    std::size_t row = 0;
    for (int k = k0; k < H; ++k)
      for (int tau = 0; tau < kNumHardware; ++tau) {
        if (!has_type(tau)) continue;
        for (std::size_t li = 0; li < nc; ++li)
          if (index_of(model.hardware(local[li])) == tau) p.at(row, var(k, li)) = 1.0;
        p.b[row] = std::max(0.0, static_cast<double>(in.quota[static_cast<std::size_t>(k)][static_cast<std::size_t>(tau)]));
        ++row;
      }
    for (int k = k0; k < H; ++k)
      for (std::size_t li = 0; li < nc; ++li) {
        double rhs = capacity(li, k);
        for (int m = 0; m < k0; ++m) rhs -= decay_pow(li, k - m) * fixed[static_cast<std::size_t>(m)][li];
        for (int m = k0; m <= k; ++m) p.at(row, var(m, li)) = decay_pow(li, k - m);
        p.b[row] = std::max(0.0, rhs);
        ++row;
      }
    for (int k = k0; k < H; ++k)
      for (std::size_t li = 0; li < nc; ++li) p.c[var(k, li)] = cost[li];
    return p;
  }

  bool has_type(int tau) const {
    for (int i : local)
      if (index_of(model.hardware(i)) == tau) return true;
    return false;
  }
};

}  // namespace detail

/// Floors each entry, then hands out the remaining units of each type by
/// largest fractional part without exceeding the integer capacity; leftovers
/// go to the cheapest clusters with spare room.
inline std::vector<int> integerize(const std::vector<double>& x, const std::vector<double>& cap_jobs,
                                   const std::vector<int>& type, const std::vector<double>& cost) {
  const std::size_t n = x.size();
  std::vector<int> out(n, 0);
  for (int tau = 0; tau < kNumHardware; ++tau) {
    std::vector<std::size_t> members;
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (type[i] == tau) {
        members.push_back(i);
        sum += x[i];
      }
    if (members.empty()) continue;
    int target = static_cast<int>(std::floor(sum + 1e-6));
    int given = 0;
    std::vector<int> cap(n, 0);
    for (std::size_t i : members) {
      cap[i] = static_cast<int>(std::floor(cap_jobs[i] + 1e-9));
      out[i] = std::min(cap[i], static_cast<int>(std::floor(std::max(0.0, x[i]) + 1e-9)));
      given += out[i];
    }
    auto by_frac = members;
    std::stable_sort(by_frac.begin(), by_frac.end(), [&](std::size_t a, std::size_t b) {
      return x[a] - std::floor(x[a] + 1e-9) > x[b] - std::floor(x[b] + 1e-9);
    });
    for (std::size_t i : by_frac) {
      if (given >= target) break;
      if (x[i] - out[i] > 1e-9 && out[i] < cap[i]) {
        ++out[i];
        ++given;
      }
    }
    auto by_cost = members;
    std::stable_sort(by_cost.begin(), by_cost.end(), [&](std::size_t a, std::size_t b) { return cost[a] < cost[b]; });
    for (std::size_t i : by_cost)
      while (given < target && out[i] < cap[i] && cost[i] < 0.0) {
        ++out[i];
        ++given;
      }
  }
  return out;
}

/// Routes one datacenter's quotas over its clusters for `in.horizon` steps.
inline Stage2Plan hmpc_stage2(const Stage2Input& in, const PredictionModel& model) {
  const auto& w = model.config().mpc;
  detail::Stage2Builder b(model, in);
  Stage2Plan plan;
  plan.datacenter = in.datacenter;
  plan.horizon = in.horizon;
  plan.clusters = b.local;
  plan.cost = b.cost;
  const std::size_t nc = b.n();
  const int H = in.horizon;

  auto first = lp::solve(b.build(0, {}), w.lp_max_iterations, w.lp_tolerance);
  plan.iterations = first.iterations;
  plan.status = first.status;
  if (first.status != lp::Status::Optimal) return plan;

  // Spread step-0 mass evenly (by headroom) across clusters that the LP
  // cannot tell apart, then re-optimize the later steps around it.
  std::vector<double> x0(first.x.begin(), first.x.begin() + static_cast<std::ptrdiff_t>(nc));
  std::vector<bool> done(nc, false);
  for (std::size_t a = 0; a < nc; ++a) {
    if (done[a]) continue;
    std::vector<std::size_t> group;
    for (std::size_t c = a; c < nc; ++c)
      if (!done[c] && model.hardware(b.local[c]) == model.hardware(b.local[a]) &&
          std::abs(b.cost[c] - b.cost[a]) <= 1e-12 * std::max(1.0, std::abs(b.cost[a]))) {
        group.push_back(c);
        done[c] = true;
      }
    double mass = 0.0;
    double room = 0.0;
    for (auto c : group) {
      mass += x0[c];
      room += b.capacity(c, 0);
    }
    if (room > 0.0)
      for (auto c : group) x0[c] = mass * b.capacity(c, 0) / room;
  }
  plan.x.assign(static_cast<std::size_t>(H), std::vector<double>(nc, 0.0));
  plan.x[0] = x0;
  if (H > 1) {
    auto rest = lp::solve(b.build(1, plan.x), w.lp_max_iterations, w.lp_tolerance);
    plan.iterations += rest.iterations;
    plan.status = rest.status;
    if (rest.status != lp::Status::Optimal) return plan;
    for (int k = 1; k < H; ++k)
      for (std::size_t li = 0; li < nc; ++li)
        plan.x[static_cast<std::size_t>(k)][li] = rest.x[static_cast<std::size_t>(k - 1) * nc + li];
  }

  plan.rejected.assign(static_cast<std::size_t>(H), {});
  plan.objective = 0.0;
  for (int k = 0; k < H; ++k) {
    auto kk = static_cast<std::size_t>(k);
    std::array<double, kNumHardware> routed{};
    for (std::size_t li = 0; li < nc; ++li) {
      routed[static_cast<std::size_t>(index_of(model.hardware(b.local[li])))] += plan.x[kk][li];
      plan.objective += (b.cost[li] + w.w_reject_stage2) * plan.x[kk][li];
      plan.headroom_residual = std::max(plan.headroom_residual, -plan.x[kk][li]);
      double load = 0.0;
      for (int m = 0; m <= k; ++m) load += b.decay_pow(li, k - m) * plan.x[static_cast<std::size_t>(m)][li];
      plan.headroom_residual = std::max(plan.headroom_residual, load - b.capacity(li, k));
    }
    for (int tau = 0; tau < kNumHardware; ++tau) {
      double a = b.has_type(tau) ? in.quota[kk][static_cast<std::size_t>(tau)] : 0.0;
      double r = a - routed[static_cast<std::size_t>(tau)];
      plan.rejected[kk][static_cast<std::size_t>(tau)] = r;
      plan.quota_residual = std::max(plan.quota_residual, -r);
      plan.objective += w.w_reject_stage2 * std::max(0.0, r);
    }
  }

  std::vector<double> cap(nc);
  std::vector<int> type(nc);
  for (std::size_t li = 0; li < nc; ++li) {
    cap[li] = b.capacity(li, 0);
    type[li] = index_of(model.hardware(b.local[li]));
  }
  plan.counts = integerize(plan.x[0], cap, type, b.cost);
  for (std::size_t li = 0; li < nc; ++li)
    plan.headroom_residual = std::max(plan.headroom_residual, plan.counts[li] - cap[li]);
  return plan;
}

/// Objective of an integer step-0 routing for a single-step instance:
/// energy of the routed jobs plus the stage-2 rejection weight on unrouted
/// quota. Differs from the LP objective by the constant w * quota.
inline double stage2_integer_objective(const Stage2Plan& plan, const std::vector<int>& counts,
                                       const std::array<int, kNumHardware>& quota, const PredictionModel& model) {
  const auto& w = model.config().mpc;
  double obj = 0.0;
  std::array<double, kNumHardware> routed{};
  for (std::size_t li = 0; li < counts.size(); ++li) {
    obj += (plan.cost[li] + w.w_reject_stage2) * counts[li];
    routed[static_cast<std::size_t>(index_of(model.hardware(plan.clusters[li])))] += counts[li];
  }
  for (int tau = 0; tau < kNumHardware; ++tau) {
    bool has = false;
    for (int i : plan.clusters)
      if (index_of(model.hardware(i)) == tau) has = true;
    if (has) obj += w.w_reject_stage2 * (quota[static_cast<std::size_t>(tau)] - routed[static_cast<std::size_t>(tau)]);
  }
  return obj;
}

// ---------------------------------------------------------------------------
// Controllers

/// Per-step solver record.
struct SolveDiagnostics {
  int t = 0;
  int iterations = 0;
  double objective = 0.0;
  double box_residual = 0.0;
  double quota_residual = 0.0;
  double headroom_residual = 0.0;
  bool fallback = false;
  bool violation = false;
  std::string note;
};

/// Assigns counts per cluster to concrete jobs, largest first. A job that
/// no longer fits on any cluster with remaining count is deferred.
inline std::vector<int> map_counts_to_jobs(const Observation& obs, const WorldConfig& cfg, std::vector<int> counts) {
  std::vector<int> assign(obs.jobs.size(), 0);
  std::vector<std::size_t> order(obs.jobs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return obs.jobs[a].resources > obs.jobs[b].resources; });
  FleetView view(obs, cfg);
  for (std::size_t k : order) {
    const Job& j = obs.jobs[k];
    for (int i = 0; i < view.size(); ++i) {
      if (counts[static_cast<std::size_t>(i)] <= 0 || !view.feasible(i, j)) continue;
      view.commit(i, j);
      --counts[static_cast<std::size_t>(i)];
      assign[k] = i + 1;
      break;
    }
  }
  return assign;
}

class MpcPolicy : public Policy {
 public:
  const std::vector<SolveDiagnostics>& diagnostics() const { return diag_; }
  const SolveDiagnostics* last_diagnostics() const { return diag_.empty() ? nullptr : &diag_.back(); }

  /// Worst constraint residual over every solve so far.
  double worst_residual() const {
    double w = 0.0;
    for (const auto& d : diag_) w = std::max({w, d.box_residual, d.quota_residual, d.headroom_residual});
    return w;
  }

 protected:
  std::vector<SolveDiagnostics> diag_;
};

/// Safety-constrained MPC over cooling setpoints; placement delegated to a
/// baseline heuristic.
class ScMpcPolicy final : public MpcPolicy {
 public:
  ScMpcPolicy(const WorldConfig& cfg, std::uint64_t seed)
      : cfg_(&cfg), model_(cfg), placement_(make_baseline(cfg.mpc.scmpc_placement, cfg, seed)) {
    for (const auto& d : cfg.datacenters) previous_.push_back(d.setpoint);
  }
  std::string name() const override { return "scmpc"; }
  PredictionModel& model() { return model_; }

  Action act(const Observation& obs) override {
    Action a = placement_->act(obs);
    std::vector<double> inflow(static_cast<std::size_t>(obs.num_clusters), 0.0);
    for (std::size_t k = 0; k < obs.jobs.size(); ++k)
      if (a.assignments[k] > 0) inflow[static_cast<std::size_t>(a.assignments[k] - 1)] += obs.jobs[k].resources;
    a.setpoints = setpoints(model_state(obs), obs.t, inflow);
    return a;
  }

  /// Optimizes each datacenter's setpoint sequence under a persistent
  /// per-cluster inflow; returns the first-step setpoints.
  std::vector<double> setpoints(const ModelState& s, int t, const std::vector<double>& inflow) {
    const auto& w = cfg_->mpc;
    const int H = w.h1;
    const double lo = cfg_->setpoint_min;
    const double span = std::max(1e-12, cfg_->setpoint_max - lo);
    const int D = model_.num_datacenters();
    SolveDiagnostics diag;
    diag.t = t;
    std::vector<double> out(static_cast<std::size_t>(D));
    for (int d = 0; d < D; ++d) {
      const auto& dc = model_.datacenter(d);
      std::vector<double> sp(static_cast<std::size_t>(D), 0.0);
      bool hard_hit = false;
      auto f = [&](std::vector<double>& z) {
        ModelState m = s;
        PredictedStep rec;
        double cost = 0.0;
        hard_hit = false;
        for (int k = 0; k < H; ++k) {
          auto& zk = z[static_cast<std::size_t>(k)];
          zk = std::clamp(zk, 0.0, 1.0);
          sp[static_cast<std::size_t>(d)] = lo + span * zk;
          model_.step(m, t + k, sp, inflow, &rec, d);
          double th = rec.theta[static_cast<std::size_t>(d)];
          double dev = th - w.theta_ref;
          cost += w.w_energy * rec.energy_kwh + w.w_temperature * dev * dev +
                  w.w_slack * std::max(0.0, th - dc.theta_soft) +
                  w.hard_penalty * std::pow(std::max(0.0, th - dc.theta_max), 2);
          if (th > dc.theta_max) hard_hit = true;
        }
        return cost;
      };
      std::vector<double> coldest(static_cast<std::size_t>(H), 0.0);
      f(coldest);
      if (hard_hit) {
        out[static_cast<std::size_t>(d)] = lo;
        diag.violation = true;
        continue;
      }
      std::vector<std::vector<double>> starts;
      double prev_z = (previous_[static_cast<std::size_t>(d)] - lo) / span;
      starts.emplace_back(static_cast<std::size_t>(H), prev_z);
      starts.emplace_back(static_cast<std::size_t>(H), 0.0);
      starts.emplace_back(static_cast<std::size_t>(H), 1.0);
      starts.resize(static_cast<std::size_t>(std::max(1, w.scmpc_starts)), std::vector<double>(static_cast<std::size_t>(H), 0.5));
      double best = std::numeric_limits<double>::infinity();
      std::vector<double> best_z;
      for (auto& z : starts) {
        int it = 0;
        double v = detail::projected_descent(z, f, w.scmpc_iterations, w.fd_step, w.stage1_tolerance, it);
        diag.iterations += it;
        if (std::isfinite(v) && v < best) {
          best = v;
          best_z = z;
        }
      }
      if (best_z.empty()) {
        out[static_cast<std::size_t>(d)] = previous_[static_cast<std::size_t>(d)];
        diag.fallback = true;
        diag.note = "setpoint search failed; previous setpoints kept";
        continue;
      }
      diag.objective += best;
      out[static_cast<std::size_t>(d)] = lo + span * best_z[0];
    }
    previous_ = out;
    diag_.push_back(diag);
    return out;
  }

 private:
  const WorldConfig* cfg_;
  PredictionModel model_;
  std::unique_ptr<Policy> placement_;
  std::vector<double> previous_;
};

/// Two-stage hierarchical MPC: fleet-level admission and setpoints, then
/// per-datacenter routing LPs.
class HmpcPolicy final : public MpcPolicy {
 public:
  HmpcPolicy(const WorldConfig& cfg, std::uint64_t seed) : cfg_(&cfg), model_(cfg), fallback_(cfg, seed) {
    for (const auto& d : cfg.datacenters) previous_.push_back(d.setpoint);
  }
  std::string name() const override { return "hmpc"; }
  PredictionModel& model() { return model_; }
  const std::optional<Stage1Plan>& last_plan() const { return plan_; }
  const std::vector<Stage2Plan>& last_routing() const { return routing_; }

  Action act(const Observation& obs) override {
    SolveDiagnostics diag;
    diag.t = obs.t;
    Action a;
    try {
      Stage1Input in;
      in.state = model_state(obs);
      in.t = obs.t;
      for (const auto& j : obs.jobs) in.waiting[static_cast<std::size_t>(index_of(j.affinity))] += 1.0;
      for (int tau = 0; tau < kNumHardware; ++tau)
        in.forecast[static_cast<std::size_t>(tau)] = obs.new_arrivals[static_cast<std::size_t>(tau)];
      Stage1Plan plan = hmpc_stage1(in, model_, plan_);
      diag.iterations = plan.iterations;
      diag.objective = plan.objective;
      diag.box_residual = plan.box_residual;
      diag.headroom_residual = plan.headroom_residual;

      const int H2 = cfg_->mpc.h2;
      std::vector<int> counts(static_cast<std::size_t>(obs.num_clusters), 0);
      routing_.clear();
      for (int d = 0; d < obs.num_datacenters; ++d) {
        Stage2Input s2;
        s2.datacenter = d;
        s2.horizon = H2;
        s2.u0 = in.state.u;
        s2.c_eff = in.state.c_eff;
        for (int k = 0; k < H2; ++k) {
          std::array<int, kNumHardware> q{};
          for (int tau = 0; tau < kNumHardware; ++tau)
            q[static_cast<std::size_t>(tau)] = plan.quota[static_cast<std::size_t>(k)][static_cast<std::size_t>(tau)][static_cast<std::size_t>(d)];
          s2.quota.push_back(q);
        }
        Stage2Plan r = hmpc_stage2(s2, model_);
        diag.iterations += r.iterations;
        if (r.status != lp::Status::Optimal) throw SimulationFault("routing LP did not reach optimality");
        diag.quota_residual = std::max(diag.quota_residual, r.quota_residual);
        diag.headroom_residual = std::max(diag.headroom_residual, r.headroom_residual);
        for (std::size_t li = 0; li < r.clusters.size(); ++li)
          counts[static_cast<std::size_t>(r.clusters[li])] = r.counts[li];
        routing_.push_back(std::move(r));
      }
      a.assignments = map_counts_to_jobs(obs, *cfg_, counts);
      std::vector<double> sp;
      for (int d = 0; d < obs.num_datacenters; ++d) {
        // A room already at its hard limit gets the coldest setpoint outright.
        bool at_limit = obs.theta(d) >= cfg_->datacenters[static_cast<std::size_t>(d)].physics.theta_max;
        sp.push_back(at_limit ? cfg_->setpoint_min : plan.setpoints[static_cast<std::size_t>(d)][0]);
      }
      a.setpoints = sp;
      previous_ = sp;
      plan_ = std::move(plan);
    } catch (const std::exception& e) {
      a = fallback_.act(obs);
      a.setpoints = previous_;
      diag.fallback = true;
      diag.note = e.what();
      plan_.reset();
    }
    diag_.push_back(diag);
    return a;
  }

 private:
  const WorldConfig* cfg_;
  PredictionModel model_;
  GreedyPolicy fallback_;
  std::optional<Stage1Plan> plan_;
  std::vector<Stage2Plan> routing_;
  std::vector<double> previous_;
};

inline std::unique_ptr<Policy> make_policy(const std::string& name, const WorldConfig& cfg, std::uint64_t seed) {
  if (name == "scmpc") return std::make_unique<ScMpcPolicy>(cfg, seed);
  if (name == "hmpc") return std::make_unique<HmpcPolicy>(cfg, seed);
  return make_baseline(name, cfg, seed);
}

}  // namespace dcgym
