// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "caora/error.hpp"

namespace caora {

/// Random state threaded explicitly through every sampling call.
using Rng = std::mt19937_64;

enum class TaskKind { RanRealtime, RanNonRealtime, Ai };

/// Per-class task priorities. Defaults encode RAN real-time > RAN non-real-time > AI.
struct Priorities {
  double ran_realtime = 1.0;
  double ran_nonrealtime = 0.7;
  double ai = 0.5;

  double of(TaskKind kind) const {
    switch (kind) {
      case TaskKind::RanRealtime: return ran_realtime;
      case TaskKind::RanNonRealtime: return ran_nonrealtime;
      case TaskKind::Ai: return ai;
    }
    return 0.0;
  }

  void validate() const {
    for (double p : {ran_realtime, ran_nonrealtime, ai})
      detail::require(p >= 0.0 && p <= 1.0, "priority must lie in [0,1]");
  }
};

/// One unit of RAN or AI work. Resources are in MIG slices, one entry per resource type.
struct Task {
  TaskKind kind = TaskKind::Ai;
  std::vector<double> resources;
  double priority = 0.0;

  static Task make(TaskKind kind, std::vector<double> resources, const Priorities& prio = {}) {
    Task t{kind, std::move(resources), prio.of(kind)};
    t.validate();
    return t;
  }

  void validate() const {
    detail::require(priority >= 0.0 && priority <= 1.0, "task priority must lie in [0,1]");
    for (double r : resources)
      detail::require(std::isfinite(r) && r >= 0.0, "task resources must be finite and non-negative");
  }
};

/// Closed integer interval of MIG counts.
struct IntRange {
  int low = 0;
  int high = 0;

  bool valid() const { return low <= high && low >= 0; }
  bool contains(double v) const { return v >= low && v <= high && v == std::floor(v); }
  friend bool operator==(const IntRange&, const IntRange&) = default;
};

enum class ScenarioMode { OffPeak, PeakRan };

inline std::string_view to_string(ScenarioMode m) {
  return m == ScenarioMode::OffPeak ? "off_peak" : "peak_ran";
}

inline ScenarioMode scenario_mode_from_string(std::string_view s) {
  if (s == "off_peak") return ScenarioMode::OffPeak;
  if (s == "peak_ran") return ScenarioMode::PeakRan;
  throw InvalidArgument("unknown scenario mode '" + std::string(s) + "'");
}

/// Demand-generation settings for one scenario.
///
/// In `PeakRan` mode RAN demand is drawn from `peak_ran_range` from `peak_onset_step`
/// onwards (from step 0 when no onset is given) and from `ran_range` before it.
/// AI demand always comes from `ai_range`.
struct ScenarioProfile {
  ScenarioMode mode = ScenarioMode::OffPeak;
  IntRange ran_range{2, 5};
  IntRange ai_range{2, 5};
  IntRange peak_ran_range{6, 7};
  std::optional<int> peak_onset_step;
  std::uint64_t seed = 1;

  static ScenarioProfile off_peak(std::uint64_t seed = 1) {
    ScenarioProfile p;
    p.seed = seed;
    return p;
  }

  static ScenarioProfile peak(int onset, std::uint64_t seed = 1) {
    ScenarioProfile p;
    p.mode = ScenarioMode::PeakRan;
    p.peak_onset_step = onset;
    p.seed = seed;
    return p;
  }

  void validate() const {
    detail::require(ran_range.valid(), "ran_range must satisfy 0 <= low <= high");
    detail::require(ai_range.valid(), "ai_range must satisfy 0 <= low <= high");
    detail::require(peak_ran_range.valid(), "peak_ran_range must satisfy 0 <= low <= high");
    if (peak_onset_step) detail::require(*peak_onset_step >= 0, "peak_onset_step must be >= 0");
  }

  bool is_peak_at(int t) const {
    return mode == ScenarioMode::PeakRan && t >= peak_onset_step.value_or(0);
  }

  const IntRange& ran_range_at(int t) const { return is_peak_at(t) ? peak_ran_range : ran_range; }

  friend bool operator==(const ScenarioProfile&, const ScenarioProfile&) = default;
};

struct DemandSample {
  int t = 0;
  double d_ran = 0.0;
  double d_ai = 0.0;
  int active_users = 0;

  friend bool operator==(const DemandSample&, const DemandSample&) = default;
};

/// Draws the RAN and AI MIG demands for step `t`. RAN is drawn before AI, so a
/// trace is a pure function of the seed and the call order.
inline DemandSample sample_demand(const ScenarioProfile& profile, int t, Rng& rng) {
  detail::require(t >= 0, "timestep must be non-negative");
  profile.validate();
  const IntRange& ran = profile.ran_range_at(t);
  std::uniform_int_distribution<int> ran_dist(ran.low, ran.high);
  std::uniform_int_distribution<int> ai_dist(profile.ai_range.low, profile.ai_range.high);
  DemandSample s;
  s.t = t;
  s.d_ran = ran_dist(rng);
  s.d_ai = ai_dist(rng);
  s.active_users = static_cast<int>(s.d_ran + s.d_ai);
  return s;
}

/// L1 norm of the task's resource vector.
inline double task_demand(const Task& task) {
  return std::accumulate(task.resources.begin(), task.resources.end(), 0.0);
}

inline double total_demand(std::span<const Task> tasks) {
  double sum = 0.0;
  for (const auto& task : tasks) sum += task_demand(task);
  return sum;
}

/// Total demand relative to the available pool.
inline double contention(double total, double r_max) {
  detail::require(r_max > 0.0, "r_max must be positive");
  detail::require(total >= 0.0, "total demand must be non-negative");
  return total / r_max;
}

inline double completion_probability(const Task& task, double alpha_eff) {
  detail::require(alpha_eff > 0.0 && alpha_eff <= 1.0, "alpha_eff must lie in (0,1]");
  return std::clamp(alpha_eff * task.priority, 0.0, 1.0);
}

/// Generated and completed demand mass for one step of the workload balance.
struct WorkloadStep {
  double generation_mass = 0.0;
  double completion_mass = 0.0;
};

/// Completion mass of one step: sum over tasks of P_c * demand * contention.
inline double completion_mass(std::span<const Task> tasks, double alpha_eff, double r_max) {
  const double c = contention(total_demand(tasks), r_max);
  double mass = 0.0;
  for (const auto& task : tasks) mass += completion_probability(task, alpha_eff) * task_demand(task) * c;
  return mass;
}

/// Unit-step discretisation of the cumulative workload W(t). The result is not clamped.
inline double accumulate_workload(std::span<const WorkloadStep> history) {
  detail::require(!history.empty(), "workload history must not be empty");
  double w = 0.0;
  for (const auto& step : history) w += step.generation_mass - step.completion_mass;
  return w;
}

}  // namespace caora
