// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <utility>

#include <fmt/format.h>

#include "caora/error.hpp"
#include "caora/workload.hpp"

namespace caora {

/// How the pool size reacts to the number of active users. Only `Identity`
/// (pool fixed at r_base) is used by the shipped experiments.
enum class UserScaling { Identity };

inline std::string_view to_string(UserScaling) { return "identity"; }

inline UserScaling user_scaling_from_string(std::string_view s) {
  if (s == "identity") return UserScaling::Identity;
  throw InvalidArgument("unknown user scaling '" + std::string(s) + "'");
}

struct ResourcePool {
  double r_base = 7.0;
  UserScaling user_scaling = UserScaling::Identity;
  double r_max = 7.0;

  static ResourcePool with_base(double r_base, UserScaling scaling = UserScaling::Identity) {
    detail::require(r_base > 0.0 && std::isfinite(r_base), "r_base must be positive");
    ResourcePool p{r_base, scaling, r_base};
    p.r_max = r_base * scale(scaling, 0);
    return p;
  }

  /// Scaling factor f(u).
  static double scale(UserScaling scaling, int /*active_users*/) {
    switch (scaling) {
      case UserScaling::Identity: return 1.0;
    }
    return 1.0;
  }

  /// Recomputes r_max for the given number of active users.
  void update_users(int active_users) { r_max = r_base * scale(user_scaling, active_users); }
};

/// MDP observation: current demands and the previous step's allocation.
struct EnvState {
  double d_ran = 0.0;
  double d_ai = 0.0;
  double prev_r_ran = 0.0;
  double prev_r_ai = 0.0;

  friend bool operator==(const EnvState&, const EnvState&) = default;
};

/// Allocation increments chosen by a policy, in MIGs.
struct AllocAction {
  double delta_r_ran = 0.0;
  double delta_r_ai = 0.0;
};

struct Allocation {
  double r_ran = 0.0;
  double r_ai = 0.0;
  int executed_ran = 0;
  int executed_ai = 0;

  double total() const { return r_ran + r_ai; }
  int executed_total() const { return executed_ran + executed_ai; }
};

struct RewardBreakdown {
  double w_ran = 0.5;
  double w_ai = 0.5;
  double base = 0.0;
  double penalty = 0.0;
  double final = 0.0;
  double lambda = 0.0;
  double allocated = 0.0;
};

enum class WeightPolicyKind { DemandProportional, Fixed };

/// How the reward weights are chosen each step.
struct WeightPolicy {
  WeightPolicyKind kind = WeightPolicyKind::DemandProportional;
  double w_floor = 0.5;      // lower bound on w_ran for DemandProportional
  double fixed_w_ran = 0.5;  // used by Fixed
};

struct EnvConfig {
  double lambda = 0.1;
  double alpha_eff = 0.9;
  Priorities priorities;
  WeightPolicy weights;
  std::optional<double> a_max;  // defaults to r_max
  int episode_length = 100;

  /// Priority used for the RAN class in the completion-rate formula.
  double ran_priority() const { return priorities.ran_realtime; }
  double ai_priority() const { return priorities.ai; }
  double action_bound(const ResourcePool& pool) const { return a_max.value_or(pool.r_max); }

  void validate() const {
    detail::require(lambda >= 0.0 && std::isfinite(lambda), "lambda must be >= 0");
    detail::require(alpha_eff > 0.0 && alpha_eff <= 1.0, "alpha_eff must lie in (0,1]");
    priorities.validate();
    detail::require(weights.w_floor >= 0.0 && weights.w_floor <= 1.0, "w_floor must lie in [0,1]");
    detail::require(weights.fixed_w_ran >= 0.0 && weights.fixed_w_ran <= 1.0,
                    "fixed_w_ran must lie in [0,1]");
    if (a_max) detail::require(*a_max > 0.0, "a_max must be positive");
    detail::require(episode_length >= 1, "episode_length must be >= 1");
  }
};

namespace detail {
inline constexpr double kSliceEps = 1e-9;
}

/// Splits floor(r_ran + r_ai) whole MIGs between the two classes: each class gets
/// the floor of its share, and a leftover slice goes to the larger fractional part
/// (RAN on ties).
inline std::pair<int, int> whole_slices(double r_ran, double r_ai, double r_max) {
  using detail::kSliceEps;
  const int cap = static_cast<int>(std::floor(r_max + kSliceEps));
  const int total = std::min(cap, static_cast<int>(std::floor(r_ran + r_ai + kSliceEps)));
  int ran = std::min(total, static_cast<int>(std::floor(r_ran + kSliceEps)));
  int ai = std::min(total - ran, static_cast<int>(std::floor(r_ai + kSliceEps)));
  if (ran + ai < total) {
    const double frac_ran = r_ran - ran;
    const double frac_ai = r_ai - ai;
    if (frac_ran >= frac_ai) ++ran; else ++ai;
  }
  return {ran, ai};
}

/// Applies the increments and enforces r_ran + r_ai <= r_max, serving RAN first.
inline Allocation project_action(const EnvState& state, const AllocAction& action, const ResourcePool& pool) {
  double r_ran = std::max(0.0, state.prev_r_ran + action.delta_r_ran);
  double r_ai = std::max(0.0, state.prev_r_ai + action.delta_r_ai);
  if (r_ran + r_ai > pool.r_max) {
    r_ran = std::min(r_ran, pool.r_max);
    r_ai = std::min(r_ai, pool.r_max - r_ran);
  }
  Allocation out{r_ran, r_ai, 0, 0};
  std::tie(out.executed_ran, out.executed_ai) = whole_slices(r_ran, r_ai, pool.r_max);
  return out;
}

/// Served demand: min(priority * allocated, demand).
inline double completion_rate(double priority, double allocated, double demand) {
  return std::min(priority * allocated, demand);
}

inline RewardBreakdown reward(double c_ran, double d_ran, double c_ai, double d_ai,
                              std::pair<double, double> weights, double lambda, double allocated,
                              const ResourcePool& pool) {
  const auto [w_ran, w_ai] = weights;
  if (std::abs(w_ran + w_ai - 1.0) > 1e-9 || w_ran < 0.0 || w_ai < 0.0)
    throw InvalidArgument(fmt::format("reward weights must be non-negative and sum to 1 (got {}, {})",
                                      w_ran, w_ai));
  detail::require(lambda >= 0.0, "lambda must be >= 0");
  detail::require(allocated <= pool.r_max + 1e-9, "allocated exceeds r_max");
  auto ratio = [](double c, double d) { return d == 0.0 ? 1.0 : c / d; };
  RewardBreakdown rb;
  rb.w_ran = w_ran;
  rb.w_ai = w_ai;
  rb.lambda = lambda;
  rb.allocated = allocated;
  rb.base = w_ran * ratio(c_ran, d_ran) + w_ai * ratio(c_ai, d_ai);
  rb.penalty = lambda * (1.0 - allocated / pool.r_max);
  rb.final = rb.base - rb.penalty;
  return rb;
}

inline std::pair<double, double> select_weights(const DemandSample& sample, const ResourcePool& /*pool*/,
                                                const WeightPolicy& policy) {
  if (policy.kind == WeightPolicyKind::Fixed) return {policy.fixed_w_ran, 1.0 - policy.fixed_w_ran};
  const double total = sample.d_ran + sample.d_ai;
  if (total <= 0.0) return {0.5, 0.5};
  const double w_ran = std::max(policy.w_floor, sample.d_ran / total);
  return {w_ran, 1.0 - w_ran};
}

/// Diagnostics for one executed step; one CSV row.
struct StepInfo {
  int t = 0;
  double d_ran = 0.0;
  double d_ai = 0.0;
  Allocation allocation;
  double c_ran = 0.0;
  double c_ai = 0.0;
  double utilization = 0.0;           // continuous allocation / r_max
  double executed_utilization = 0.0;  // whole MIGs in use / r_max
  double ran_completion = 1.0;        // c_ran / d_ran, 1 when d_ran = 0
  double ai_completion = 1.0;
  RewardBreakdown reward;
};

struct StepResult {
  EnvState next_state;
  RewardBreakdown reward;
  StepInfo info;
};

/// One environment transition: project, serve, score, then observe `sample_next`.
inline StepResult step(const EnvState& state, const AllocAction& action, const DemandSample& sample_next,
                       const ResourcePool& pool, const EnvConfig& config, int t) {
  detail::require(std::isfinite(action.delta_r_ran) && std::isfinite(action.delta_r_ai),
                  "action must be finite");
  const double bound = config.action_bound(pool);
  const AllocAction bounded{std::clamp(action.delta_r_ran, -bound, bound),
                            std::clamp(action.delta_r_ai, -bound, bound)};
  const Allocation alloc = project_action(state, bounded, pool);

  StepInfo info;
  info.t = t;
  info.d_ran = state.d_ran;
  info.d_ai = state.d_ai;
  info.allocation = alloc;
  info.c_ran = completion_rate(config.ran_priority(), alloc.r_ran, state.d_ran);
  info.c_ai = completion_rate(config.ai_priority(), alloc.r_ai, state.d_ai);
  info.utilization = alloc.total() / pool.r_max;
  info.executed_utilization = alloc.executed_total() / pool.r_max;
  info.ran_completion = state.d_ran == 0.0 ? 1.0 : info.c_ran / state.d_ran;
  info.ai_completion = state.d_ai == 0.0 ? 1.0 : info.c_ai / state.d_ai;

  const DemandSample current{t, state.d_ran, state.d_ai, static_cast<int>(state.d_ran + state.d_ai)};
  const auto weights = select_weights(current, pool, config.weights);
  info.reward = reward(info.c_ran, state.d_ran, info.c_ai, state.d_ai, weights, config.lambda,
                       alloc.total(), pool);

  StepResult out;
  out.info = info;
  out.reward = info.reward;
  out.next_state = EnvState{sample_next.d_ran, sample_next.d_ai, alloc.r_ran, alloc.r_ai};
  return out;
}

/// Initial state for a fresh episode drawn from the profile's own seed.
inline EnvState episode_reset(const ScenarioProfile& profile, const ResourcePool& /*pool*/) {
  Rng rng(profile.seed);
  const DemandSample s = sample_demand(profile, 0, rng);
  return EnvState{s.d_ran, s.d_ai, 0.0, 0.0};
}

/// Stateful episode driver around `step`. The demand stream continues across
/// resets, so consecutive episodes see different traces; the whole sequence is a
/// function of the profile seed.
class ResourceEnv {
 public:
  ResourceEnv(ScenarioProfile profile, ResourcePool pool, EnvConfig config)
      : profile_(std::move(profile)), pool_(pool), config_(std::move(config)), rng_(profile_.seed) {
    profile_.validate();
    config_.validate();
    detail::require(pool_.r_max > 0.0, "r_max must be positive");
  }

  EnvState reset() {
    t_ = 0;
    done_ = false;
    current_ = sample_demand(profile_, 0, rng_);
    pool_.update_users(current_.active_users);
    state_ = EnvState{current_.d_ran, current_.d_ai, 0.0, 0.0};
    started_ = true;
    return state_;
  }

  StepResult step(const AllocAction& action) {
    if (!started_) throw StateError("step called before reset");
    if (done_) throw StateError("step called on a terminated episode");
    const DemandSample next = sample_demand(profile_, t_ + 1, rng_);
    StepResult r = caora::step(state_, action, next, pool_, config_, t_);
    state_ = r.next_state;
    current_ = next;
    pool_.update_users(current_.active_users);
    ++t_;
    done_ = t_ >= config_.episode_length;
    return r;
  }

  /// Switches RAN demand to the peak range from `onset` onwards. Nothing else changes.
  void inject_peak(int onset) {
    if (onset < 0 || onset >= config_.episode_length)
      throw InvalidArgument(fmt::format("peak onset {} outside episode of length {}", onset,
                                        config_.episode_length));
    profile_.mode = ScenarioMode::PeakRan;
    profile_.peak_onset_step = onset;
  }

  const EnvState& state() const { return state_; }
  const DemandSample& current_sample() const { return current_; }
  int t() const { return t_; }
  bool done() const { return done_; }
  const ResourcePool& pool() const { return pool_; }
  const EnvConfig& config() const { return config_; }
  const ScenarioProfile& profile() const { return profile_; }

 private:
  ScenarioProfile profile_;
  ResourcePool pool_;
  EnvConfig config_;
  Rng rng_;
  EnvState state_{};
  DemandSample current_{};
  int t_ = 0;
  bool done_ = false;
  bool started_ = false;
};

inline constexpr std::string_view kStepCsvHeader = "t,d_ran,d_ai,r_ran,r_ai,c_ran,c_ai,utilization,reward";

inline void write_step_csv_row(std::ostream& os, const StepInfo& s) {
  os << fmt::format("{},{},{},{},{},{},{},{},{}\n", s.t, s.d_ran, s.d_ai, s.allocation.r_ran,
                    s.allocation.r_ai, s.c_ran, s.c_ai, s.utilization, s.reward.final);
}

inline void write_step_csv(std::ostream& os, std::span<const StepInfo> steps) {
  os << kStepCsvHeader << '\n';
  for (const auto& s : steps) write_step_csv_row(os, s);
}

}  // namespace caora
