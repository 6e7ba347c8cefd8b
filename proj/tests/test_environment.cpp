#include <gtest/gtest.h>

#include "support.hpp"

using namespace dcgym;
using dcgym::testing::make_job;
using dcgym::testing::preset;
using dcgym::testing::schedule_of;
using dcgym::testing::small_world;

namespace {

Action defer_all(const Observation& obs) {
  Action a;
  a.assignments.assign(obs.jobs.size(), 0);
  return a;
}

Action all_to(const Observation& obs, int cluster) {
  Action a;
  a.assignments.assign(obs.jobs.size(), cluster + 1);
  return a;
}

}  // namespace

TEST(Environment, ObservationLayoutForNominalPreset) {
  Environment env(preset("table1_nominal"));
  auto obs = env.reset(0);
  EXPECT_EQ(obs.values.size(), 72u);
  EXPECT_EQ(obs.num_clusters, 20);
  EXPECT_EQ(obs.num_datacenters, 4);
  EXPECT_EQ(obs.setpoints.size(), 4u);
  EXPECT_EQ(obs.utilization.size(), 20u);
}

TEST(Environment, ResetIsDeterministic) {
  Environment env(preset("tiny_desk"));
  auto a = env.reset(11);
  auto b = env.reset(11);
  EXPECT_EQ(a, b);
  auto c = env.reset(12);
  EXPECT_NE(a.jobs, c.jobs);
}

TEST(Environment, EmptyWorkloadHasNoQueues) {
  auto cfg = preset("tiny_desk");
  cfg.workload.arrival_scale = 0.0;
  Environment env(cfg);
  auto obs = env.reset(1);
  while (!env.done()) {
    for (int i = 0; i < obs.num_clusters; ++i) EXPECT_EQ(obs.queue(i), 0.0);
    EXPECT_TRUE(obs.jobs.empty());
    obs = env.step(defer_all(obs)).first;
  }
}

TEST(Environment, QuiescentStateIsFixed) {
  auto cfg = small_world({{{Hardware::Cpu, 100.0}}});
  cfg.clusters[0].physics.grid_inflow = 0.0;
  cfg.clusters[0].initial_power = 500.0;
  Environment env(cfg);
  auto before = env.reset(3, schedule_of({}, 10));
  auto after = env.step(defer_all(before)).first;
  EXPECT_EQ(after.t, before.t + 1);
  after.t = before.t;
  EXPECT_EQ(after, before);
}

TEST(Environment, SingleJobHandTrace) {
  auto cfg = small_world({{{Hardware::Cpu, 100.0}}});
  Environment env(cfg);
  auto obs = env.reset(0, schedule_of({{make_job(0, 10.0, 2)}}, 10));
  ASSERT_EQ(obs.jobs.size(), 1u);
  EXPECT_EQ(obs.effective_capacity(0), 100.0);

  auto [o1, s1] = env.step(all_to(obs, 0));
  EXPECT_EQ(s1.utilization[0], 10.0);
  EXPECT_EQ(s1.completed, 0);
  EXPECT_EQ(s1.dispatched, 1);
  EXPECT_EQ(o1.utilization[0], 10.0);

  auto [o2, s2] = env.step(defer_all(o1));
  EXPECT_EQ(s2.utilization[0], 10.0);
  EXPECT_EQ(s2.completed, 1);
  EXPECT_EQ(o2.utilization[0], 0.0);

  auto [o3, s3] = env.step(defer_all(o2));
  EXPECT_EQ(s3.utilization[0], 0.0);
  EXPECT_EQ(s3.completed, 0);
  EXPECT_EQ(env.total_completed(), 1);
}

TEST(Environment, InfeasibleAssignmentIsDeferredAndCounted) {
  auto cfg = small_world({{{Hardware::Cpu, 100.0}}});
  Environment env(cfg);
  auto obs = env.reset(0, schedule_of({{make_job(0, 95.0, 5)}, {make_job(1, 10.0, 1)}}, 10));
  obs = env.step(all_to(obs, 0)).first;
  ASSERT_EQ(obs.jobs.size(), 1u);
  auto [next, info] = env.step(all_to(obs, 0));
  EXPECT_EQ(info.infeasible, 1);
  EXPECT_EQ(info.pending[static_cast<std::size_t>(index_of(Hardware::Cpu))], 1);
  EXPECT_EQ(env.total_infeasible(), 1);
  ASSERT_EQ(next.jobs.size(), 1u);
  EXPECT_EQ(next.jobs[0].id, 1);
  EXPECT_TRUE(env.check_invariants().empty());
}

TEST(Environment, WrongHardwareIsInfeasible) {
  auto cfg = small_world({{{Hardware::Cpu, 100.0}, {Hardware::Gpu, 100.0}}});
  Environment env(cfg);
  auto obs = env.reset(0, schedule_of({{make_job(0, 10.0, 1, Hardware::Gpu)}}, 4));
  auto info = env.step(all_to(obs, 0)).second;
  EXPECT_EQ(info.infeasible, 1);
  EXPECT_EQ(info.pending[1], 1);
}

TEST(Environment, PowerBalanceBlocksAdmission) {
  auto cfg = small_world({{{Hardware::Cpu, 100.0}}});
  cfg.datacenters[0].physics.cooling_max = 0.0;
  cfg.clusters[0].physics.grid_inflow = 0.0;
  cfg.clusters[0].initial_power = 50.0;
  Environment env(cfg);
  auto obs = env.reset(0, schedule_of({{make_job(0, 60.0, 1), make_job(1, 40.0, 1)}}, 4));
  EXPECT_TRUE(feasible_clusters(obs.jobs[0], obs, env.config()).empty());
  EXPECT_EQ(feasible_clusters(obs.jobs[1], obs, env.config()), std::vector<int>{0});
  auto [next, info] = env.step(all_to(obs, 0));
  EXPECT_EQ(info.infeasible, 1);
  EXPECT_EQ(info.utilization[0], 40.0);
  EXPECT_GE(next.power(0), 0.0);
}

TEST(Environment, UnplaceableJobsAreCountedNotQueued) {
  auto cfg = small_world({{{Hardware::Cpu, 100.0}}});
  Environment env(cfg);
  auto obs = env.reset(0, schedule_of({{make_job(0, 500.0, 1), make_job(1, 5.0, 1, Hardware::Gpu)}}, 3));
  EXPECT_TRUE(obs.jobs.empty());
  auto info = env.step(defer_all(obs)).second;
  EXPECT_EQ(info.arrivals, 2);
  EXPECT_EQ(info.unplaceable, 2);
  EXPECT_EQ(env.total_unplaceable(), 2);
  EXPECT_TRUE(env.check_invariants().empty());
}

TEST(Environment, SetpointsAreClampedToBox) {
  auto cfg = small_world({{{Hardware::Cpu, 100.0}}, {{Hardware::Cpu, 100.0}}});
  Environment env(cfg);
  auto obs = env.reset(0, schedule_of({}, 3));
  Action a = defer_all(obs);
  a.setpoints = std::vector<double>{100.0, -5.0};
  auto info = env.step(a).second;
  EXPECT_EQ(info.setpoint[0], cfg.setpoint_max);
  EXPECT_EQ(info.setpoint[1], cfg.setpoint_min);
}

TEST(Environment, ProtocolErrors) {
  auto cfg = small_world({{{Hardware::Cpu, 100.0}}}, 2);
  Environment env(cfg);
  auto obs = env.reset(0, schedule_of({{make_job(0, 1.0, 1)}}, 2));
  Action wrong;
  EXPECT_THROW(env.step(wrong), ProtocolError);
  Action bad = all_to(obs, 5);
  EXPECT_THROW(env.step(bad), ProtocolError);
  Action sp = defer_all(obs);
  sp.setpoints = std::vector<double>{24.0, 24.0};
  EXPECT_THROW(env.step(sp), ProtocolError);
  obs = env.step(defer_all(obs)).first;
  obs = env.step(defer_all(obs)).first;
  EXPECT_TRUE(env.done());
  EXPECT_THROW(env.step(defer_all(obs)), ProtocolError);
}

TEST(Environment, InvalidConfigRejected) {
  auto cfg = small_world({{{Hardware::Cpu, 100.0}}});
  cfg.datacenters[0].physics.g_min = 0.0;
  EXPECT_THROW(Environment{cfg}, ConfigError);
}

TEST(FeasibleSet, FullGpuClustersGiveEmptySet) {
  auto cfg = small_world({{{Hardware::Cpu, 100.0}, {Hardware::Gpu, 50.0}, {Hardware::Gpu, 50.0}}});
  Environment env(cfg);
  auto obs = env.reset(0, schedule_of({}, 3));
  obs.utilization = {0.0, 50.0, 50.0};
  EXPECT_TRUE(feasible_clusters(make_job(0, 1.0, 1, Hardware::Gpu), obs, cfg).empty());
}

TEST(FeasibleSet, FreshFleetAdmitsSmallCpuJobEverywhereCpu) {
  auto cfg = small_world({{{Hardware::Cpu, 100.0}, {Hardware::Gpu, 50.0}}, {{Hardware::Cpu, 10.0}, {Hardware::Cpu, 30.0}}});
  Environment env(cfg);
  auto obs = env.reset(0, schedule_of({}, 3));
  EXPECT_EQ(feasible_clusters(make_job(0, 1.0, 1), obs, cfg), (std::vector<int>{0, 2, 3}));
}

TEST(FeasibleSet, ThrottledHeadroomExcludes) {
  auto cfg = small_world({{{Hardware::Cpu, 1000.0}}});
  Environment env(cfg);
  auto obs = env.reset(0, schedule_of({}, 3));
  obs.values[1] = 0.2 * 1000.0;
  obs.utilization[0] = 0.15 * 1000.0;
  EXPECT_TRUE(feasible_clusters(make_job(0, 0.1 * 1000.0, 1), obs, cfg).empty());
  EXPECT_EQ(feasible_clusters(make_job(0, 0.04 * 1000.0, 1), obs, cfg), std::vector<int>{0});
}

TEST(Dispatch, BackfillsPastBlockedHead) {
  ClusterState c;
  c.capacity = c.effective_capacity = 100.0;
  c.utilization = 30.0;
  c.queue.push_back(make_job(0, 80.0, 1));
  c.queue.push_back(make_job(1, 10.0, 1));
  c.queue.push_back(make_job(2, 50.0, 1));
  c.queue.push_back(make_job(3, 20.0, 1));
  auto fits = [](const ClusterState& cl, double r) { return cl.effective_capacity - cl.utilization >= r; };
  int started = dispatch_backfill(c, fits);
  EXPECT_EQ(started, 2);
  EXPECT_EQ(c.utilization, 90.0);
  ASSERT_EQ(c.queue.size(), 2u);
  EXPECT_EQ(c.queue[0].id, 0);
  EXPECT_EQ(c.queue[1].id, 3);
  ASSERT_EQ(c.active.size(), 2u);
  EXPECT_EQ(c.active[0].id, 1);
  EXPECT_EQ(c.active[1].id, 2);
}

TEST(Environment, SameActionsGiveIdenticalTrajectory) {
  auto cfg = preset("tiny_desk");
  auto run = [&] {
    Environment env(cfg);
    GreedyPolicy pol(env.config(), 5);
    auto obs = env.reset(5);
    std::vector<StepInfo> steps;
    while (!env.done()) {
      auto [next, info] = env.step(pol.act(obs));
      steps.push_back(info);
      obs = next;
    }
    return log_to_string(steps, cfg.num_clusters(), cfg.num_datacenters());
  };
  EXPECT_EQ(run(), run());
}

TEST(Environment, InvariantsHoldForEveryPolicy) {
  for (const char* name : {"random", "greedy", "thermal", "powercool", "scmpc", "hmpc"}) {
    auto cfg = preset("tiny_desk");
    cfg.policy.name = name;
    cfg.workload.arrival_scale = 1.5;
    RunOptions opt;
    opt.check_invariants = true;
    auto rec = run_episode(cfg, 2, opt);
    EXPECT_TRUE(rec.violations.empty()) << name << ": " << (rec.violations.empty() ? "" : rec.violations.front());
  }
}

TEST(Environment, JobConservationAtEveryStep) {
  auto cfg = preset("tiny_desk");
  cfg.workload.arrival_scale = 2.0;
  Environment env(cfg);
  RandomPolicy pol(env.config(), 9);
  auto obs = env.reset(9);
  std::int64_t arrivals = 0;
  while (!env.done()) {
    auto [next, info] = env.step(pol.act(obs));
    arrivals += info.arrivals;
    EXPECT_EQ(env.total_arrivals(), env.total_completed() + env.total_unplaceable() + env.jobs_in_system());
    obs = next;
  }
  EXPECT_EQ(arrivals, env.total_arrivals());
  EXPECT_EQ(static_cast<std::size_t>(env.total_arrivals()), env.schedule().total_jobs());
}

TEST(Environment, EffectiveCapacityTracksTemperature) {
  auto cfg = small_world({{{Hardware::Cpu, 1000.0, 400.0, 1.0}}}, 40);
  cfg.datacenters[0].physics.cooling_max = 0.0;
  cfg.datacenters[0].physics.thermal_capacitance = 1.0e6;
  std::vector<std::vector<Job>> b(1);
  b[0].push_back(make_job(0, 800.0, 40));
  Environment env(cfg);
  auto obs = env.reset(0, schedule_of(b, 40));
  obs = env.step(all_to(obs, 0)).first;
  bool throttled = false;
  while (!env.done()) {
    const auto& dc = env.datacenters()[0];
    EXPECT_EQ(obs.effective_capacity(0), 1000.0 * throttle_factor(dc.theta, dc.physics));
    throttled = throttled || obs.effective_capacity(0) < 1000.0;
    EXPECT_TRUE(env.check_invariants().empty());
    obs = env.step(defer_all(obs)).first;
  }
  EXPECT_TRUE(throttled);
}
