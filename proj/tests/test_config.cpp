#include <gtest/gtest.h>

#include "support.hpp"

using namespace dcgym;
using dcgym::testing::preset;

namespace {

bool mentions(const std::vector<std::string>& issues, const std::string& needle) {
  for (const auto& s : issues)
    if (s.find(needle) != std::string::npos) return true;
  return false;
}

const char* kMinimal = R"({
  "datacenters": [{
    "name": "solo", "setpoint": 24,
    "clusters": [{"hardware": "CPU", "capacity": 100, "alpha": 1, "phi": 1}]
  }]
})";

}  // namespace

TEST(Presets, AllShippedPresetsValidate) {
  for (const char* name : {"table1_nominal", "tiny_desk"}) {
    auto cfg = preset(name);
    EXPECT_TRUE(cfg.check().empty()) << name;
  }
}

TEST(Presets, NominalFleetShape) {
  auto cfg = preset("table1_nominal");
  EXPECT_EQ(cfg.num_datacenters(), 4);
  EXPECT_EQ(cfg.num_clusters(), 20);
  EXPECT_EQ(cfg.episode_length(), 288);
  EXPECT_EQ(cfg.dt(), 300.0);
  EXPECT_EQ(cfg.workload.arrival_cap, 200);
  const auto& seattle = cfg.datacenters[0].physics;
  EXPECT_EQ(seattle.thermal_resistance, 0.003);
  EXPECT_EQ(seattle.thermal_capacitance, 7.0e8);
  EXPECT_EQ(seattle.cooling_max, 6.8e5);
  for (const auto& dc : cfg.datacenters) {
    EXPECT_EQ(dc.physics.theta_soft, 32.0);
    EXPECT_EQ(dc.physics.theta_max, 35.0);
  }
}

TEST(Presets, DrawnCoefficientsDependOnWorldSeedOnly) {
  auto a = preset("table1_nominal");
  auto b = preset("table1_nominal");
  for (int i = 0; i < a.num_clusters(); ++i) {
    EXPECT_EQ(a.clusters[static_cast<std::size_t>(i)].physics.alpha, b.clusters[static_cast<std::size_t>(i)].physics.alpha);
    EXPECT_EQ(a.clusters[static_cast<std::size_t>(i)].physics.phi, b.clusters[static_cast<std::size_t>(i)].physics.phi);
  }
}

TEST(Config, MinimalDefaultsAreValid) {
  auto cfg = parse_config(kMinimal);
  EXPECT_TRUE(cfg.check().empty());
  EXPECT_EQ(cfg.clusters[0].physics.kappa, 1.0);
  EXPECT_GT(cfg.clusters[0].physics.grid_inflow, 0.0);
  EXPECT_EQ(cfg.clusters[0].initial_power, cfg.clusters[0].physics.grid_inflow);
  EXPECT_EQ(cfg.workload.fleet_capacity, 100.0);
}

TEST(Config, GMinOutOfRangeNamed) {
  auto cfg = preset("table1_nominal");
  cfg.datacenters[1].physics.g_min = 1.5;
  auto issues = cfg.check();
  ASSERT_FALSE(issues.empty());
  EXPECT_TRUE(mentions(issues, "g_min"));
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Config, SoftLimitMustBeBelowHardLimit) {
  auto cfg = preset("table1_nominal");
  cfg.datacenters[0].physics.theta_soft = 35.0;
  EXPECT_TRUE(mentions(cfg.check(), "theta_soft"));
  cfg.datacenters[0].physics.theta_soft = 36.0;
  EXPECT_TRUE(mentions(cfg.check(), "theta_soft"));
}

TEST(Config, KappaMustSumToOne) {
  auto cfg = preset("tiny_desk");
  cfg.clusters[0].physics.kappa += 0.1;
  EXPECT_TRUE(mentions(cfg.check(), "kappa"));
}

TEST(Config, HorizonOrdering) {
  auto cfg = preset("tiny_desk");
  cfg.mpc.h2 = cfg.mpc.h1 + 1;
  EXPECT_TRUE(mentions(cfg.check(), "horizons"));
}

TEST(Config, UnknownPolicyRejected) {
  auto cfg = preset("tiny_desk");
  cfg.policy.name = "oracle";
  EXPECT_TRUE(mentions(cfg.check(), "unknown policy"));
}

TEST(Config, PolicyObjectForm) {
  std::string text = kMinimal;
  text.insert(text.rfind('}'), R"(, "policy": {"name": "powercool", "omega": 2.5, "gamma": 10, "tie_break": "shuffle"})");
  auto cfg = parse_config(text);
  EXPECT_EQ(cfg.policy.name, "powercool");
  EXPECT_EQ(cfg.policy.omega, 2.5);
  EXPECT_EQ(cfg.policy.gamma.value(), 10.0);
  EXPECT_EQ(cfg.policy.tie_break, TieBreak::SeededShuffle);
}

TEST(Config, MalformedInputsAreConfigErrors) {
  EXPECT_THROW(parse_config("{not json"), ConfigError);
  EXPECT_THROW(parse_config(R"({"datacenters": [{"clusters": [{"capacity": 1}]}]})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"datacenters": [{"clusters": [{"hardware": "TPU", "capacity": 1, "alpha": 1, "phi": 1}]}]})"),
               ConfigError);
  EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(Config, RangesDrawnWithinBounds) {
  const char* text = R"({
    "world_seed": 3,
    "datacenters": [{
      "clusters": [{"hardware": "GPU", "capacity": 10, "alpha_range": [0.5, 0.7], "phi_range": [5, 7]},
                   {"hardware": "GPU", "capacity": 10, "alpha_range": [0.5, 0.7], "phi_range": [5, 7]}]
    }]
  })";
  auto cfg = parse_config(text);
  for (const auto& c : cfg.clusters) {
    EXPECT_GE(c.physics.alpha, 0.5);
    EXPECT_LE(c.physics.alpha, 0.7);
    EXPECT_GE(c.physics.phi, 5.0);
    EXPECT_LE(c.physics.phi, 7.0);
  }
  EXPECT_NE(cfg.clusters[0].physics.alpha, cfg.clusters[1].physics.alpha);
}
