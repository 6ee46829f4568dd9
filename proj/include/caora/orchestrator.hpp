// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "caora/error.hpp"
#include "caora/resource_env.hpp"
#include "caora/sac_agent.hpp"
#include "caora/workload.hpp"
#include "caora/y1_telemetry.hpp"

namespace caora {

enum class PolicyKind { Sac, RanOnly, StaticSplit, GreedyOracle };

struct PolicyChoice {
  PolicyKind kind = PolicyKind::Sac;
  double ran_share = 5.0 / 7.0;  // StaticSplit only

  static PolicyChoice sac() { return {PolicyKind::Sac}; }
  static PolicyChoice ran_only() { return {PolicyKind::RanOnly}; }
  static PolicyChoice greedy_oracle() { return {PolicyKind::GreedyOracle}; }
  static PolicyChoice static_split(double share = 5.0 / 7.0) {
    detail::require(share >= 0.0 && share <= 1.0, "static split ran_share must lie in [0,1]");
    return {PolicyKind::StaticSplit, share};
  }

  /// "sac", "ran_only", "greedy_oracle", "static_split" or "static_split:<share>".
  static PolicyChoice parse(std::string_view s) {
    if (s == "sac") return sac();
    if (s == "ran_only") return ran_only();
    if (s == "greedy_oracle") return greedy_oracle();
    if (s == "static_split") return static_split();
    if (s.starts_with("static_split:")) {
      const std::string num(s.substr(13));
      std::size_t used = 0;
      double share = 0.0;
      try {
        share = std::stod(num, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != num.size() || num.empty()) throw InvalidArgument("bad static_split share '" + num + "'");
      return static_split(share);
    }
    throw InvalidArgument("unknown policy '" + std::string(s) + "'");
  }

  std::string name() const {
    switch (kind) {
      case PolicyKind::Sac: return "sac";
      case PolicyKind::RanOnly: return "ran_only";
      case PolicyKind::GreedyOracle: return "greedy_oracle";
      case PolicyKind::StaticSplit: return fmt::format("static_split:{}", ran_share);
    }
    return "?";
  }
};

/// Demand-clairvoyant allocator: RAN gets min(d_ran, r_max), AI the remainder up to d_ai.
inline Allocation greedy_oracle_policy(const Y1Report& report, const ResourcePool& pool) {
  Allocation a;
  a.r_ran = std::min(report.d_ran, pool.r_max);
  a.r_ai = std::min(report.d_ai, pool.r_max - a.r_ran);
  std::tie(a.executed_ran, a.executed_ai) = whole_slices(a.r_ran, a.r_ai, pool.r_max);
  return a;
}

struct StepRecord {
  int episode = 0;
  StepInfo info;
};

struct ExperimentResult {
  std::string policy;
  ScenarioProfile profile;
  ResourcePool pool;
  EnvConfig env;
  std::uint64_t seed = 0;
  std::optional<int> peak_onset;
  std::vector<StepRecord> steps;
  std::vector<EpisodeMetrics> episodes;
  std::vector<Y1Report> reports;  // as received by the orchestrator
};

/// Per-episode aggregates recomputed from per-step records.
inline std::vector<EpisodeMetrics> episode_metrics(std::span<const StepRecord> steps, const std::string& label) {
  std::vector<EpisodeMetrics> out;
  EpisodeAccumulator acc;
  int current = steps.empty() ? 0 : steps.front().episode;
  for (const auto& s : steps) {
    if (s.episode != current) {
      out.push_back(acc.finish(current, label));
      acc = {};
      current = s.episode;
    }
    acc.add(s.info);
  }
  if (!steps.empty()) out.push_back(acc.finish(current, label));
  return out;
}

struct ExperimentOptions {
  Delivery transport = Delivery::InProcess;
  std::string socket_path;  // required for LocalSocket
  std::string consumer_id = "e2e-orchestrator";
};

/// Closed control loop: monitoring xApp -> Y1 -> orchestrator -> environment.
///
/// Every step the xApp publishes a report for the pending demand; the policy acts on
/// the report as received by the consumer, and the environment executes the action.
class ExperimentRunner {
 public:
  ExperimentRunner(ScenarioProfile profile, ResourcePool pool, EnvConfig env, PolicyChoice policy,
                   const SacAgent* agent = nullptr, ExperimentOptions options = {})
      : env_(profile, pool, env), policy_(policy), agent_(agent), options_(std::move(options)) {
    if (policy_.kind == PolicyKind::Sac && agent_ == nullptr)
      throw InvalidArgument("the sac policy requires a trained agent");
    result_.policy = policy_.name();
    result_.profile = profile;
    result_.pool = pool;
    result_.env = env;
    result_.seed = profile.seed;

    ConsumerRegistration reg{options_.consumer_id, options_.transport, std::nullopt};
    if (options_.transport == Delivery::LocalSocket) {
      detail::require(!options_.socket_path.empty(), "local socket transport needs socket_path");
      reg.endpoint = options_.socket_path;
      listener_.emplace(options_.socket_path);
      publisher_.register_consumer(reg);
      listener_->accept();
    } else {
      publisher_.register_consumer(reg, [this](const Y1Report& r) { inbox_ = r; });
    }
    registration_ = reg;
  }

  ExperimentRunner(const ExperimentRunner&) = delete;
  ExperimentRunner& operator=(const ExperimentRunner&) = delete;

  /// Switches RAN demand to the peak range from `onset` on, for this and later episodes.
  void inject_peak(int onset) {
    env_.inject_peak(onset);
    result_.peak_onset = onset;
    result_.profile = env_.profile();
  }

  void run_episode() {
    const int episode = episodes_run_++;
    env_.reset();
    const ResourcePool& pool = env_.pool();
    std::optional<StepInfo> previous;
    while (!env_.done()) {
      const Y1Report sent = build_report(previous ? &*previous : nullptr, env_.current_sample(), pool);
      const Y1Report report = deliver(sent);
      if (report.d_ran != env_.state().d_ran || report.d_ai != env_.state().d_ai)
        throw StateError(fmt::format("Y1 report for step {} disagrees with the environment demand", report.t));
      result_.reports.push_back(report);

      const EnvState& st = env_.state();
      const AllocAction action = decide(report, st, pool);
      const StepResult step = env_.step(action);
      const Allocation& a = step.info.allocation;
      if (a.r_ran + a.r_ai > pool.r_max + 1e-9 || a.executed_total() > pool.r_max + 1e-9)
        throw StateError(fmt::format("capacity violated at step {}", step.info.t));
      result_.steps.push_back({episode, step.info});
      previous = step.info;
    }
  }

  const ExperimentResult& result() {
    result_.episodes = episode_metrics(result_.steps, result_.policy);
    return result_;
  }

  ResourceEnv& env() { return env_; }

 private:
  Y1Report deliver(const Y1Report& report) {
    publisher_.publish(report, registration_);
    if (listener_) {
      auto received = listener_->next();
      if (!received) throw TransportError("Y1 stream closed before delivery", report);
      return *received;
    }
    if (!inbox_) throw TransportError("in-process consumer received nothing", report);
    Y1Report r = *inbox_;
    inbox_.reset();
    return r;
  }

  AllocAction decide(const Y1Report& report, const EnvState& st, const ResourcePool& pool) const {
    double target_ran = 0.0, target_ai = 0.0;
    switch (policy_.kind) {
      case PolicyKind::Sac: {
        const EnvState observed{report.d_ran, report.d_ai, st.prev_r_ran, st.prev_r_ai};
        Rng unused(0);
        const ActionSample s = agent_->sample_action(normalize_state(observed, pool.r_max), unused, true);
        return agent_->to_env_action(s.a);
      }
      case PolicyKind::RanOnly:
        target_ran = std::min(report.d_ran, pool.r_max);
        break;
      case PolicyKind::StaticSplit:
        target_ran = policy_.ran_share * pool.r_max;
        target_ai = pool.r_max - target_ran;
        break;
      case PolicyKind::GreedyOracle: {
        const Allocation a = greedy_oracle_policy(report, pool);
        target_ran = a.r_ran;
        target_ai = a.r_ai;
        break;
      }
    }
    return {target_ran - st.prev_r_ran, target_ai - st.prev_r_ai};
  }

  ResourceEnv env_;
  PolicyChoice policy_;
  const SacAgent* agent_;
  ExperimentOptions options_;
  Y1Publisher publisher_;
  ConsumerRegistration registration_;
  std::optional<Y1SocketListener> listener_;
  std::optional<Y1Report> inbox_;
  ExperimentResult result_;
  int episodes_run_ = 0;
};

/// Runs `episodes` episodes of `policy` on `profile`. With `peak_onset` set, RAN
/// demand switches to the peak range at that step of every episode.
inline ExperimentResult run_experiment(const ScenarioProfile& profile, const ResourcePool& pool, const EnvConfig& env,
                                       const PolicyChoice& policy, int episodes, const SacAgent* agent = nullptr,
                                       std::optional<int> peak_onset = std::nullopt,
                                       const ExperimentOptions& options = {}) {
  detail::require(episodes >= 1, "episodes must be >= 1");
  ExperimentRunner runner(profile, pool, env, policy, agent, options);
  if (peak_onset) runner.inject_peak(*peak_onset);
  for (int e = 0; e < episodes; ++e) runner.run_episode();
  return runner.result();
}

// -----------------------------------------------------------------------------
// Comparison

struct ComparisonRow {
  std::string policy;
  double mean_utilization = 0.0;
  double mean_executed_utilization = 0.0;
  double ran_completion = 0.0;
  double ai_completion = 0.0;
  double mean_reward = 0.0;
  std::size_t steps = 0;

  friend bool operator==(const ComparisonRow&, const ComparisonRow&) = default;
};

/// Whole-run aggregates of one result, straight from its per-step records.
inline ComparisonRow summarize(const ExperimentResult& r) {
  EpisodeAccumulator acc;
  for (const auto& s : r.steps) acc.add(s.info);
  const EpisodeMetrics m = acc.finish(0, r.policy);
  return {r.policy, m.utilization, m.executed_utilization, m.ran_completion, m.ai_completion, m.mean_reward,
          r.steps.size()};
}

inline std::vector<ComparisonRow> compare_policies(std::span<const ExperimentResult> results) {
  detail::require(!results.empty(), "nothing to compare");
  std::vector<ComparisonRow> rows;
  for (const auto& r : results) {
    if (!(r.profile == results.front().profile) || r.seed != results.front().seed ||
        r.peak_onset != results.front().peak_onset)
      throw InvalidArgument("compared results must share scenario profile and seed (policy '" + r.policy +
                            "' differs)");
    rows.push_back(summarize(r));
  }
  return rows;
}

inline constexpr std::string_view kComparisonCsvHeader =
    "policy,mean_utilization,mean_executed_utilization,ran_completion,ai_completion,mean_reward,steps";

inline void write_comparison_csv(std::ostream& os, std::span<const ComparisonRow> rows) {
  os << kComparisonCsvHeader << '\n';
  for (const auto& r : rows)
    os << fmt::format("{},{},{},{},{},{},{}\n", r.policy, r.mean_utilization, r.mean_executed_utilization,
                      r.ran_completion, r.ai_completion, r.mean_reward, r.steps);
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline double parse_double_cell(const std::string& s, std::size_t offset) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) throw ParseError("bad number '" + s + "'", offset);
  return v;
}

}  // namespace detail

inline std::vector<ComparisonRow> read_comparison_csv(std::istream& is) {
  std::string line;
  std::size_t offset = 0;
  if (!std::getline(is, line) || line != kComparisonCsvHeader) throw ParseError("missing comparison CSV header", 0);
  offset += line.size() + 1;
  std::vector<ComparisonRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 7) throw ParseError("comparison row needs 7 columns", offset);
    ComparisonRow r;
    r.policy = cells[0];
    r.mean_utilization = detail::parse_double_cell(cells[1], offset);
    r.mean_executed_utilization = detail::parse_double_cell(cells[2], offset);
    r.ran_completion = detail::parse_double_cell(cells[3], offset);
    r.ai_completion = detail::parse_double_cell(cells[4], offset);
    r.mean_reward = detail::parse_double_cell(cells[5], offset);
    r.steps = static_cast<std::size_t>(detail::parse_double_cell(cells[6], offset));
    rows.push_back(std::move(r));
    offset += line.size() + 1;
  }
  return rows;
}

// -----------------------------------------------------------------------------
// Experiment exports

inline constexpr std::string_view kExperimentCsvHeader =
    "episode,t,d_ran,d_ai,r_ran,r_ai,executed_ran,executed_ai,c_ran,c_ai,utilization,executed_utilization,reward";

inline void write_experiment_csv(std::ostream& os, const ExperimentResult& r) {
  os << kExperimentCsvHeader << '\n';
  for (const auto& rec : r.steps) {
    const StepInfo& s = rec.info;
    os << fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{}\n", rec.episode, s.t, s.d_ran, s.d_ai, s.allocation.r_ran,
                      s.allocation.r_ai, s.allocation.executed_ran, s.allocation.executed_ai, s.c_ran, s.c_ai,
                      s.utilization, s.executed_utilization, s.reward.final);
  }
}

inline constexpr std::string_view kCompletionCsvHeader = "episode,ran_completion_ratio,ai_completion_ratio";

inline void write_completion_csv(std::ostream& os, std::span<const EpisodeMetrics> episodes) {
  os << kCompletionCsvHeader << '\n';
  for (const auto& m : episodes) os << fmt::format("{},{},{}\n", m.episode, m.ran_completion, m.ai_completion);
}

inline void write_episode_csv(std::ostream& os, std::span<const EpisodeMetrics> episodes) {
  os << "episode,policy,mean_reward,ran_completion,ai_completion,utilization,executed_utilization\n";
  for (const auto& m : episodes)
    os << fmt::format("{},{},{},{},{},{},{}\n", m.episode, m.scenario, m.mean_reward, m.ran_completion,
                      m.ai_completion, m.utilization, m.executed_utilization);
}

}  // namespace caora
