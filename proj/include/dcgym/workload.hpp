#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <deque>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dcgym/types.hpp"

namespace dcgym {

enum class WorkloadSource { Trace, Synthetic };

/// Column positions inside a trace row. Defaults follow the Alibaba 2018
/// `batch_task` export reduced to `start_ts,end_ts,plan_cpu[,priority]`.
struct TraceColumns {
  int start = 0;
  int end = 1;
  int cpu = 2;
  int priority = 3;  // negative: no priority column
};

struct WorkloadConfig {
  WorkloadSource source = WorkloadSource::Synthetic;
  std::optional<std::string> trace_path;
  int arrival_cap = 200;
  double gpu_fraction = 0.6;
  double arrival_scale = 1.0;
  int episode_length = 288;
  double timestep_seconds = 300.0;

  // Trace replay.
  std::optional<double> slice_start;  // seconds; earliest row when absent
  TraceColumns columns;
  double peak_demand_fraction = 0.65;
  double fleet_capacity = 0.0;  // CU; <= 0 disables normalization

  // Synthetic generator.
  double cpu_size_mean = 300.0;  // CU
  double gpu_size_mean = 300.0;  // CU
  double size_cv = 0.5;
  double cpu_duration_mean = 12.0;  // timesteps
  double gpu_duration_mean = 12.0;
  int duration_max = 1152;
  int priority_levels = 3;

  void check(std::vector<std::string>& issues) const {
    auto fail = [&](const std::string& m) { issues.push_back("workload: " + m); };
    if (arrival_cap < 0) fail("arrival_cap must be >= 0");
    if (!(gpu_fraction >= 0.0 && gpu_fraction <= 1.0)) fail("gpu_fraction must lie in [0,1]");
    if (!(arrival_scale >= 0.0)) fail("arrival_scale must be >= 0");
    if (episode_length < 1) fail("episode_length must be >= 1");
    if (!(timestep_seconds > 0.0)) fail("timestep_seconds must be > 0");
    if (source == WorkloadSource::Trace && !trace_path) fail("trace source requires trace_path");
    if (!(peak_demand_fraction > 0.0)) fail("peak_demand_fraction must be > 0");
    if (!(cpu_size_mean > 0.0) || !(gpu_size_mean > 0.0)) fail("size means must be > 0");
    if (!(size_cv >= 0.0)) fail("size_cv must be >= 0");
    if (!(cpu_duration_mean >= 1.0) || !(gpu_duration_mean >= 1.0))
      fail("duration means must be >= 1");
    if (duration_max < 1) fail("duration_max must be >= 1");
    if (priority_levels < 1) fail("priority_levels must be >= 1");
  }

  void validate() const {
    std::vector<std::string> issues;
    check(issues);
    if (!issues.empty()) throw ConfigError(issues.front());
  }
};

/// Per-timestep arrival buckets for one episode.
struct ArrivalSchedule {
  std::vector<std::vector<Job>> buckets;
  std::int64_t spilled_past_end = 0;  // capped overflow that ran off the episode

  std::size_t total_jobs() const {
    std::size_t n = 0;
    for (const auto& b : buckets) n += b.size();
    return n;
  }

  std::int64_t max_id() const {
    std::int64_t m = -1;
    for (const auto& b : buckets)
      for (const auto& j : b) m = std::max(m, j.id);
    return m;
  }

  double total_resources() const {
    double s = 0.0;
    for (const auto& b : buckets)
      for (const auto& j : b) s += j.resources;
    return s;
  }

  friend bool operator==(const ArrivalSchedule&, const ArrivalSchedule&) = default;
};

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line, char delim = ',') {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    auto next = line.find(delim, pos);
    auto field = line.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos);
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
      field.remove_suffix(1);
    out.push_back(field);
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::optional<std::int64_t> parse_int(std::string_view s) {
  if (s.empty()) return std::nullopt;
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

// Enforce the per-bucket cap; overflow moves to the following bucket in
// arrival order.
inline std::int64_t apply_arrival_cap(std::vector<std::vector<Job>>& buckets, int cap) {
  std::deque<Job> carry;
  for (std::size_t t = 0; t < buckets.size(); ++t) {
    std::vector<Job> merged(carry.begin(), carry.end());
    carry.clear();
    merged.insert(merged.end(), buckets[t].begin(), buckets[t].end());
    if (merged.size() > static_cast<std::size_t>(cap)) {
      carry.assign(merged.begin() + cap, merged.end());
      merged.resize(static_cast<std::size_t>(cap));
    }
    for (auto& j : merged) j.arrival_time = static_cast<int>(t);
    buckets[t] = std::move(merged);
  }
  return static_cast<std::int64_t>(carry.size());
}

inline void assign_affinity(std::vector<std::vector<Job>>& buckets, double gpu_fraction,
                            std::uint64_t seed) {
  Rng rng = make_rng(seed, Stream::Affinity);
  std::bernoulli_distribution gpu(gpu_fraction);
  for (auto& b : buckets)
    for (auto& j : b) j.affinity = gpu(rng) ? Hardware::Gpu : Hardware::Cpu;
}

}  // namespace detail

/// Replays a comma-separated trace into `episode_length` buckets.
inline ArrivalSchedule load_trace(const std::string& path, const WorkloadConfig& cfg,
                                  std::uint64_t seed) {
  cfg.validate();
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open trace '" + path + "'");

  struct Row {
    double start;
    double end;
    double cpu;
    int priority;
    std::size_t order;
  };
  std::vector<Row> rows;
  const auto& col = cfg.columns;
  const int needed = std::max({col.start, col.end, col.cpu});

  std::string line;
  std::size_t row_no = 0;
  bool first_content = true;
  while (std::getline(in, line)) {
    ++row_no;
    std::string_view sv(line);
    if (sv.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    auto fields = detail::split_fields(sv);
    if (first_content) {
      first_content = false;
      if (static_cast<int>(fields.size()) > col.start && !detail::parse_double(fields[col.start]))
        continue;  // header
    }
    auto bad = [&](const std::string& what) {
      return ParseError("trace row " + std::to_string(row_no) + ": " + what);
    };
    if (static_cast<int>(fields.size()) <= needed) throw bad("expected at least " + std::to_string(needed + 1) + " columns");
    auto s = detail::parse_double(fields[col.start]);
    auto e = detail::parse_double(fields[col.end]);
    auto c = detail::parse_double(fields[col.cpu]);
    if (!s || !e || !c) throw bad("non-numeric field");
    if (*e < *s) throw bad("end_ts precedes start_ts");
    if (!(*c > 0.0)) throw bad("plan_cpu must be positive");
    int prio = 0;
    if (col.priority >= 0 && static_cast<int>(fields.size()) > col.priority &&
        !fields[col.priority].empty()) {
      auto p = detail::parse_int(fields[col.priority]);
      if (!p) throw bad("non-integer priority");
      prio = static_cast<int>(*p);
    }
    rows.push_back({*s, *e, *c, prio, rows.size()});
  }
  if (rows.empty()) throw ParseError("empty slice: trace has no data rows");

  const double dt = cfg.timestep_seconds;
  double t0 = cfg.slice_start.value_or(
      std::min_element(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.start < b.start; })->start);
  const double t_end = t0 + dt * cfg.episode_length;

  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.start < b.start; });

  std::vector<std::vector<Job>> buckets(static_cast<std::size_t>(cfg.episode_length));
  std::int64_t next_id = 0;
  bool any = false;
  for (const auto& r : rows) {
    if (r.start < t0 || r.start >= t_end) continue;
    any = true;
    auto b = static_cast<std::size_t>(std::floor((r.start - t0) / dt));
    Job j;
    j.id = next_id++;
    j.resources = r.cpu;
    j.duration = std::max(1, static_cast<int>(std::ceil((r.end - r.start) / dt)));
    j.remaining = j.duration;
    j.priority = r.priority;
    j.arrival_time = static_cast<int>(b);
    buckets[b].push_back(j);
  }
  if (!any) throw ParseError("empty slice: no rows inside the episode window");

  ArrivalSchedule sched;
  sched.spilled_past_end = detail::apply_arrival_cap(buckets, cfg.arrival_cap);

  if (cfg.fleet_capacity > 0.0) {
    std::vector<double> demand(buckets.size(), 0.0);
    for (const auto& b : buckets)
      for (const auto& j : b) {
        auto stop = std::min(buckets.size(), static_cast<std::size_t>(j.arrival_time + j.duration));
        for (auto t = static_cast<std::size_t>(j.arrival_time); t < stop; ++t) demand[t] += j.resources;
      }
    double peak = *std::max_element(demand.begin(), demand.end());
    double scale = cfg.peak_demand_fraction * cfg.fleet_capacity / peak;
    for (auto& b : buckets)
      for (auto& j : b) j.resources *= scale;
  }

  detail::assign_affinity(buckets, cfg.gpu_fraction, seed);
  sched.buckets = std::move(buckets);
  return sched;
}

/// Poisson arrivals at `arrival_scale * arrival_cap` jobs per step with
/// lognormal sizes and geometric durations.
inline ArrivalSchedule generate_synthetic(const WorkloadConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng = make_rng(seed, Stream::Workload);
  Rng aff_rng = make_rng(seed, Stream::Affinity);
  const double mean_rate = cfg.arrival_scale * cfg.arrival_cap;

  auto lognormal_for = [&](double mean) {
    double s2 = std::log1p(cfg.size_cv * cfg.size_cv);
    return std::lognormal_distribution<double>(std::log(mean) - 0.5 * s2, std::sqrt(s2));
  };
  auto cpu_size = lognormal_for(cfg.cpu_size_mean);
  auto gpu_size = lognormal_for(cfg.gpu_size_mean);
  std::geometric_distribution<int> cpu_dur(1.0 / cfg.cpu_duration_mean);
  std::geometric_distribution<int> gpu_dur(1.0 / cfg.gpu_duration_mean);
  std::bernoulli_distribution gpu(cfg.gpu_fraction);
  std::uniform_int_distribution<int> prio(0, cfg.priority_levels - 1);

  ArrivalSchedule sched;
  sched.buckets.resize(static_cast<std::size_t>(cfg.episode_length));
  std::int64_t next_id = 0;
  for (int t = 0; t < cfg.episode_length; ++t) {
    int count = 0;
    if (mean_rate > 0.0) count = std::poisson_distribution<int>(mean_rate)(rng);
    auto& bucket = sched.buckets[static_cast<std::size_t>(t)];
    bucket.reserve(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) {
      Job j;
      j.id = next_id++;
      j.affinity = gpu(aff_rng) ? Hardware::Gpu : Hardware::Cpu;
      bool is_gpu = j.affinity == Hardware::Gpu;
      j.resources = is_gpu ? gpu_size(rng) : cpu_size(rng);
      j.duration = std::min(cfg.duration_max, 1 + (is_gpu ? gpu_dur(rng) : cpu_dur(rng)));
      j.remaining = j.duration;
      j.priority = prio(rng);
      j.arrival_time = t;
      bucket.push_back(j);
    }
  }
  return sched;
}

/// Thins (lambda < 1) or replicates (lambda > 1) each bucket. Replicas get
/// fresh ids and a +-10% size jitter.
inline ArrivalSchedule scale_arrivals(const ArrivalSchedule& in, double lambda, std::uint64_t seed) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("scale_arrivals: lambda must be >= 0");
  if (lambda == 1.0) return in;
  Rng rng = make_rng(seed, Stream::Scaling);
  ArrivalSchedule out;
  out.spilled_past_end = in.spilled_past_end;
  out.buckets.resize(in.buckets.size());
  std::int64_t next_id = in.max_id() + 1;
  const auto whole = static_cast<int>(std::floor(lambda));
  const double frac = lambda - whole;
  std::bernoulli_distribution extra(frac);
  std::bernoulli_distribution keep(std::min(lambda, 1.0));
  std::uniform_real_distribution<double> jitter(0.9, 1.1);
  for (std::size_t t = 0; t < in.buckets.size(); ++t) {
    auto& dst = out.buckets[t];
    for (const auto& j : in.buckets[t]) {
      if (lambda < 1.0) {
        if (keep(rng)) dst.push_back(j);
        continue;
      }
      dst.push_back(j);
      int copies = whole - 1 + (extra(rng) ? 1 : 0);
      for (int c = 0; c < copies; ++c) {
        Job d = j;
        d.id = next_id++;
        d.resources = j.resources * jitter(rng);
        dst.push_back(d);
      }
    }
  }
  return out;
}

/// Builds the episode schedule described by `cfg`.
inline ArrivalSchedule build_schedule(const WorkloadConfig& cfg, std::uint64_t seed) {
  if (cfg.source == WorkloadSource::Synthetic) return generate_synthetic(cfg, seed);
  return scale_arrivals(load_trace(*cfg.trace_path, cfg, seed), cfg.arrival_scale, seed);
}

// Fixture format: one `t,id,r,d,v,tau` record per line.

inline void write_schedule(std::ostream& os, const ArrivalSchedule& s) {
  os << "# t,id,resources,duration,priority,affinity\n";
  char buf[160];
  for (std::size_t t = 0; t < s.buckets.size(); ++t)
    for (const auto& j : s.buckets[t]) {
      std::snprintf(buf, sizeof buf, "%zu,%lld,%.17g,%d,%d,%s\n", t, static_cast<long long>(j.id),
                    j.resources, j.duration, j.priority, to_string(j.affinity).data());
      os << buf;
    }
}

inline std::string schedule_to_string(const ArrivalSchedule& s) {
  std::ostringstream os;
  write_schedule(os, s);
  return os.str();
}

/// Reads a fixture; `episode_length` fixes the bucket count (0: derive from
/// the largest timestep).
inline ArrivalSchedule read_schedule(std::istream& is, int episode_length = 0) {
  std::vector<std::pair<std::size_t, Job>> recs;
  std::string line;
  std::size_t row_no = 0;
  std::size_t max_t = 0;
  while (std::getline(is, line)) {
    ++row_no;
    if (line.empty() || line[0] == '#') continue;
    auto f = detail::split_fields(line);
    auto bad = [&] { return ParseError("fixture row " + std::to_string(row_no) + ": malformed record"); };
    if (f.size() != 6) throw bad();
    auto t = detail::parse_int(f[0]);
    auto id = detail::parse_int(f[1]);
    auto r = detail::parse_double(f[2]);
    auto d = detail::parse_int(f[3]);
    auto v = detail::parse_int(f[4]);
    if (!t || !id || !r || !d || !v || *t < 0 || *d < 1 || !(*r > 0.0)) throw bad();
    Job j;
    j.id = *id;
    j.resources = *r;
    j.duration = static_cast<int>(*d);
    j.remaining = j.duration;
    j.priority = static_cast<int>(*v);
    try {
      j.affinity = hardware_from_string(f[5]);
    } catch (const std::invalid_argument&) {
      throw bad();
    }
    j.arrival_time = static_cast<int>(*t);
    max_t = std::max(max_t, static_cast<std::size_t>(*t));
    recs.emplace_back(static_cast<std::size_t>(*t), j);
  }
  ArrivalSchedule s;
  std::size_t n = episode_length > 0 ? static_cast<std::size_t>(episode_length) : (recs.empty() ? 0 : max_t + 1);
  s.buckets.resize(n);
  for (auto& [t, j] : recs) {
    if (t >= n) throw ParseError("fixture timestep " + std::to_string(t) + " beyond episode length");
    s.buckets[t].push_back(j);
  }
  return s;
}

inline std::uint64_t schedule_fingerprint(const ArrivalSchedule& s) {
  return std::hash<std::string>{}(schedule_to_string(s));
}

}  // namespace dcgym
