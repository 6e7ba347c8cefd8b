#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dcgym {

enum class Hardware : std::uint8_t { Cpu = 0, Gpu = 1 };

inline constexpr int kNumHardware = 2;

inline constexpr int index_of(Hardware h) { return static_cast<int>(h); }

inline std::string_view to_string(Hardware h) {
  return h == Hardware::Cpu ? "CPU" : "GPU";
}

inline Hardware hardware_from_string(std::string_view s) {
  if (s == "CPU" || s == "cpu") return Hardware::Cpu;
  if (s == "GPU" || s == "gpu") return Hardware::Gpu;
  throw std::invalid_argument("unknown hardware type '" + std::string(s) + "'");
}

/// One unit of work. `remaining` counts timesteps still to execute and drops
/// by exactly one per executed step.
struct Job {
  std::int64_t id = 0;
  double resources = 0.0;  // CU
  int duration = 1;        // timesteps
  int priority = 0;
  Hardware affinity = Hardware::Cpu;
  int remaining = 1;
  int arrival_time = 0;

  friend bool operator==(const Job&, const Job&) = default;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ProtocolError : std::logic_error {
  using std::logic_error::logic_error;
};

struct SimulationFault : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

// Independent streams derived from one user seed.
enum class Stream : std::uint32_t {
  Workload = 1,
  Affinity = 2,
  Ambient = 3,
  Scaling = 4,
  Policy = 5,
  World = 6,
};

inline Rng make_rng(std::uint64_t seed, Stream stream, std::uint32_t salt = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), salt};
  return Rng(seq);
}

}  // namespace dcgym
