#pragma once

#include <algorithm>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "dcgym/config.hpp"
#include "dcgym/environment.hpp"

namespace dcgym {

/// A scheduling policy maps an observation (with its arrival batch) to an
/// action. One instance drives one environment.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::string name() const = 0;
  virtual Action act(const Observation& obs) = 0;
};

/// Shared machinery for the one-job-at-a-time heuristics: each job goes to
/// the feasible cluster with the smallest score, and the tentative state is
/// updated before the next job is considered.
class ArgminPolicy : public Policy {
 public:
  ArgminPolicy(const WorldConfig& cfg, std::uint64_t seed)
      : cfg_(&cfg), rng_(make_rng(seed, Stream::Policy)), tie_break_(cfg.policy.tie_break) {}

  Action act(const Observation& obs) override {
    Action a;
    a.assignments.assign(obs.jobs.size(), 0);
    FleetView view(obs, *cfg_);
    begin_batch(obs);
    std::vector<int> order(static_cast<std::size_t>(view.size()));
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t k = 0; k < obs.jobs.size(); ++k) {
      const Job& j = obs.jobs[k];
      if (tie_break_ == TieBreak::SeededShuffle) std::shuffle(order.begin(), order.end(), rng_);
      int best = -1;
      double best_score = std::numeric_limits<double>::infinity();
      for (int i : order) {
        if (!view.feasible(i, j)) continue;
        double s = score(view, i, j);
        if (s < best_score) {
          best_score = s;
          best = i;
        }
      }
      if (best < 0) continue;
      view.commit(best, j);
      on_commit(best, j);
      a.assignments[k] = best + 1;
    }
    return a;
  }

 protected:
  virtual void begin_batch(const Observation&) {}
  virtual double score(const FleetView& view, int i, const Job& j) const = 0;
  virtual void on_commit(int, const Job&) {}

  const WorldConfig* cfg_;
  Rng rng_;
  TieBreak tie_break_;
};

/// Uniform choice over the feasible set.
class RandomPolicy final : public Policy {
 public:
  RandomPolicy(const WorldConfig& cfg, std::uint64_t seed) : cfg_(&cfg), rng_(make_rng(seed, Stream::Policy)) {}
  std::string name() const override { return "random"; }

  Action act(const Observation& obs) override {
    Action a;
    a.assignments.assign(obs.jobs.size(), 0);
    FleetView view(obs, *cfg_);
    for (std::size_t k = 0; k < obs.jobs.size(); ++k) {
      auto feas = view.feasible_set(obs.jobs[k]);
      if (feas.empty()) continue;
      std::uniform_int_distribution<std::size_t> pick(0, feas.size() - 1);
      int i = feas[pick(rng_)];
      view.commit(i, obs.jobs[k]);
      a.assignments[k] = i + 1;
    }
    return a;
  }

 private:
  const WorldConfig* cfg_;
  Rng rng_;
};

/// Lowest normalized utilization u / c_eff.
class GreedyPolicy final : public ArgminPolicy {
 public:
  using ArgminPolicy::ArgminPolicy;
  std::string name() const override { return "greedy"; }

 protected:
  double score(const FleetView& view, int i, const Job&) const override {
    return view.utilization(i) / view.effective_capacity(i);
  }
};

/// Lowest post-assignment temperature proxy theta_d + alpha_i * r_j. The
/// proxy mixes units and is only used for ranking.
class ThermalPolicy final : public ArgminPolicy {
 public:
  using ArgminPolicy::ArgminPolicy;
  std::string name() const override { return "thermal"; }

 protected:
  void begin_batch(const Observation& obs) override {
    proxy_.resize(static_cast<std::size_t>(obs.num_datacenters));
    for (int d = 0; d < obs.num_datacenters; ++d) proxy_[static_cast<std::size_t>(d)] = obs.theta(d);
  }
  double score(const FleetView&, int i, const Job& j) const override {
    const auto& c = cfg_->clusters[static_cast<std::size_t>(i)].physics;
    return proxy_[static_cast<std::size_t>(c.datacenter)] + c.alpha * j.resources;
  }
  void on_commit(int i, const Job& j) override {
    const auto& c = cfg_->clusters[static_cast<std::size_t>(i)].physics;
    proxy_[static_cast<std::size_t>(c.datacenter)] += c.alpha * j.resources;
  }

 private:
  std::vector<double> proxy_;
};

/// Lowest marginal power phi_i r_j + omega * max(0, gamma (theta - target +
/// R_d alpha_i r_j)).
class PowerCoolPolicy final : public ArgminPolicy {
 public:
  using ArgminPolicy::ArgminPolicy;
  std::string name() const override { return "powercool"; }

  double incremental_cooling(int i, const Job& j) const {
    const auto& c = cfg_->clusters[static_cast<std::size_t>(i)].physics;
    auto d = static_cast<std::size_t>(c.datacenter);
    const auto& dc = cfg_->datacenters[d].physics;
    double gamma = cfg_->policy.gamma.value_or(dc.kp);
    return std::max(0.0, gamma * (theta_[d] - target_[d] + dc.thermal_resistance * c.alpha * j.resources));
  }

 protected:
  void begin_batch(const Observation& obs) override {
    theta_.resize(static_cast<std::size_t>(obs.num_datacenters));
    target_ = obs.setpoints;
    for (int d = 0; d < obs.num_datacenters; ++d) theta_[static_cast<std::size_t>(d)] = obs.theta(d);
  }
  double score(const FleetView&, int i, const Job& j) const override {
    const auto& c = cfg_->clusters[static_cast<std::size_t>(i)].physics;
    return c.phi * j.resources + cfg_->policy.omega * incremental_cooling(i, j);
  }
  void on_commit(int i, const Job& j) override {
    const auto& c = cfg_->clusters[static_cast<std::size_t>(i)].physics;
    auto d = static_cast<std::size_t>(c.datacenter);
    theta_[d] += cfg_->datacenters[d].physics.thermal_resistance * c.alpha * j.resources;
  }

 private:
  std::vector<double> theta_;
  std::vector<double> target_;
};

inline std::unique_ptr<Policy> make_baseline(const std::string& name, const WorldConfig& cfg, std::uint64_t seed) {
  if (name == "random") return std::make_unique<RandomPolicy>(cfg, seed);
  if (name == "greedy") return std::make_unique<GreedyPolicy>(cfg, seed);
  if (name == "thermal") return std::make_unique<ThermalPolicy>(cfg, seed);
  if (name == "powercool") return std::make_unique<PowerCoolPolicy>(cfg, seed);
  throw ConfigError("unknown baseline policy '" + name + "'");
}

}  // namespace dcgym
