// SPDX-License-Identifier: Apache-2.0
#pragma once

// Implementations behind the command-line subcommands. Each command writes its
// resolved configuration next to its outputs so a run can be repeated from that
// file alone.

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "caora/checkpoint.hpp"
#include "caora/config.hpp"
#include "caora/orchestrator.hpp"
#include "caora/sac_agent.hpp"

namespace caora {

enum class Experiment { OffpeakBalance, PeakInjection, CompletionRatio };

inline Experiment experiment_from_string(std::string_view s) {
  if (s == "offpeak_balance") return Experiment::OffpeakBalance;
  if (s == "peak_injection") return Experiment::PeakInjection;
  if (s == "completion_ratio") return Experiment::CompletionRatio;
  throw InvalidArgument("unknown experiment '" + std::string(s) +
                        "' (expected offpeak_balance, peak_injection or completion_ratio)");
}

namespace detail {

namespace fs = std::filesystem;

inline fs::path prepare_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory '" + dir + "': " + ec.message());
  return fs::path(dir);
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  os << text;
  if (!os) throw Error("failed writing '" + path.string() + "'");
}

template <typename Writer>
void write_with(const fs::path& path, Writer&& w) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  w(os);
  if (!os) throw Error("failed writing '" + path.string() + "'");
}

inline SacAgent load_agent_for(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw ConfigError("config field 'checkpoint': the sac policy needs a checkpoint");
  SacAgent agent = read_checkpoint_file(cfg.checkpoint, cfg.resolved_sac());
  const auto& dims = agent.actor().dims();
  if (dims[1] != cfg.sac.hidden || int(agent.actor().layers()) - 1 != cfg.sac.hidden_layers)
    throw ConfigError(fmt::format("checkpoint has {} hidden layers of width {}, config expects {} of width {}",
                                  agent.actor().layers() - 1, dims[1], cfg.sac.hidden_layers, cfg.sac.hidden));
  const double bound = cfg.env.action_bound(cfg.pool());
  if (agent.a_max() != bound)
    throw ConfigError(fmt::format("checkpoint action bound {} differs from config a_max {}", agent.a_max(), bound));
  return agent;
}

}  // namespace detail

inline std::string init_config_text() { return dump_config(RunConfig{}); }

struct TrainArtifacts {
  std::filesystem::path checkpoint;
  std::filesystem::path training_csv;
  std::filesystem::path config_snapshot;
  std::vector<EpisodeMetrics> metrics;
};

inline TrainArtifacts cmd_train(const RunConfig& cfg, std::ostream* progress = nullptr) {
  cfg.validate();
  const auto dir = detail::prepare_dir(cfg.output_dir);
  TrainArtifacts out{dir / "checkpoint.bin", dir / "training.csv", dir / "train_config.json", {}};

  RunConfig snapshot = cfg;
  snapshot.checkpoint = out.checkpoint.string();
  detail::write_text(out.config_snapshot, dump_config(snapshot));

  TrainSetup setup;
  setup.scenarios = cfg.training_profiles();
  setup.pool = cfg.pool();
  setup.env = cfg.env;
  setup.sac = cfg.resolved_sac();
  setup.episodes = cfg.training.episodes;
  if (progress) {
    setup.on_episode = [progress](const EpisodeMetrics& m) {
      if ((m.episode + 1) % 10 == 0)
        *progress << fmt::format("episode {:5d}  reward {:.4f}  ran {:.3f}  ai {:.3f}  util {:.3f}\n", m.episode + 1,
                                 m.mean_reward, m.ran_completion, m.ai_completion, m.executed_utilization);
    };
  }
  TrainOutcome trained = train(setup);
  write_checkpoint_file(out.checkpoint.string(), trained.agent);
  detail::write_text(out.training_csv, train_csv(trained.metrics));
  out.metrics = std::move(trained.metrics);
  return out;
}

/// Mean allocations over a window of steps [from, to) across all episodes.
struct WindowMeans {
  double r_ran = 0.0;
  double r_ai = 0.0;
  double ran_completion = 1.0;
  std::size_t steps = 0;
};

inline WindowMeans window_means(const ExperimentResult& r, int from, int to) {
  WindowMeans w;
  double c = 0.0, d = 0.0;
  for (const auto& s : r.steps) {
    if (s.info.t < from || s.info.t >= to) continue;
    w.r_ran += s.info.allocation.r_ran;
    w.r_ai += s.info.allocation.r_ai;
    c += s.info.c_ran;
    d += s.info.d_ran;
    ++w.steps;
  }
  if (w.steps > 0) {
    w.r_ran /= double(w.steps);
    w.r_ai /= double(w.steps);
  }
  w.ran_completion = d > 0.0 ? c / d : 1.0;
  return w;
}

/// Runs one named experiment for the config's policy.
inline ExperimentResult run_named_experiment(const RunConfig& cfg, Experiment which, const SacAgent* agent) {
  const std::optional<int> onset =
      which == Experiment::PeakInjection ? std::optional<int>(cfg.evaluation.peak_onset_step) : std::nullopt;
  ExperimentOptions opts;
  opts.transport = cfg.evaluation.transport;
  opts.socket_path = cfg.evaluation.socket_path;
  return run_experiment(cfg.evaluation_profile(), cfg.pool(), cfg.env, cfg.policy, cfg.evaluation.episodes, agent,
                        onset, opts);
}

inline nlohmann::ordered_json summary_json(const RunConfig& cfg, const ExperimentResult& r) {
  const ComparisonRow row = summarize(r);
  nlohmann::ordered_json j;
  j["experiment"] = cfg.experiment;
  j["policy"] = r.policy;
  j["seed"] = cfg.seed;
  j["episodes"] = r.episodes.size();
  j["steps"] = row.steps;
  j["mean_utilization"] = row.mean_utilization;
  j["mean_executed_utilization"] = row.mean_executed_utilization;
  j["ran_completion"] = row.ran_completion;
  j["ai_completion"] = row.ai_completion;
  j["mean_reward"] = row.mean_reward;
  if (r.peak_onset) {
    const int onset = *r.peak_onset;
    const WindowMeans pre = window_means(r, 0, onset);
    const WindowMeans post = window_means(r, onset, cfg.env.episode_length);
    j["peak_onset_step"] = onset;
    j["pre_onset"] = {{"mean_r_ran", pre.r_ran}, {"mean_r_ai", pre.r_ai}, {"ran_completion", pre.ran_completion}};
    j["post_onset"] = {{"mean_r_ran", post.r_ran}, {"mean_r_ai", post.r_ai}, {"ran_completion", post.ran_completion}};
  }
  j["config"] = to_json(cfg);
  return j;
}

struct EvalArtifacts {
  std::filesystem::path steps_csv;
  std::filesystem::path episodes_csv;
  std::filesystem::path summary_json;
  std::optional<std::filesystem::path> completion_csv;
  ExperimentResult result;
};

inline EvalArtifacts cmd_eval(const RunConfig& cfg) {
  cfg.validate();
  const Experiment which = experiment_from_string(cfg.experiment);
  std::optional<SacAgent> agent;
  if (cfg.policy.kind == PolicyKind::Sac) agent.emplace(detail::load_agent_for(cfg));
  const auto dir = detail::prepare_dir(cfg.output_dir);
  detail::write_text(dir / (cfg.experiment + "_config.json"), dump_config(cfg));

  EvalArtifacts out;
  out.result = run_named_experiment(cfg, which, agent ? &*agent : nullptr);
  out.steps_csv = dir / (cfg.experiment + "_steps.csv");
  out.episodes_csv = dir / (cfg.experiment + "_episodes.csv");
  out.summary_json = dir / (cfg.experiment + "_summary.json");
  detail::write_with(out.steps_csv, [&](std::ostream& os) { write_experiment_csv(os, out.result); });
  detail::write_with(out.episodes_csv, [&](std::ostream& os) { write_episode_csv(os, out.result.episodes); });
  if (which == Experiment::CompletionRatio) {
    out.completion_csv = dir / "completion_ratio.csv";
    detail::write_with(*out.completion_csv, [&](std::ostream& os) { write_completion_csv(os, out.result.episodes); });
  }
  detail::write_text(out.summary_json, summary_json(cfg, out.result).dump(2) + "\n");
  return out;
}

struct CompareArtifacts {
  std::filesystem::path comparison_csv;
  std::vector<ComparisonRow> rows;
};

/// Runs the config's experiment once per config (each with its own policy) and
/// tabulates the results. All configs must describe the same scenario.
inline CompareArtifacts cmd_compare(const std::vector<RunConfig>& configs) {
  if (configs.size() < 2) throw InvalidArgument("compare needs at least two policies");
  const RunConfig& first = configs.front();
  const auto same = [&](const RunConfig& c) {
    return c.seed == first.seed && c.experiment == first.experiment &&
           c.evaluation_profile() == first.evaluation_profile() && c.r_base == first.r_base &&
           c.env.episode_length == first.env.episode_length && c.env.lambda == first.env.lambda &&
           c.evaluation.episodes == first.evaluation.episodes &&
           c.evaluation.peak_onset_step == first.evaluation.peak_onset_step;
  };
  for (const auto& c : configs) {
    c.validate();
    if (!same(c))
      throw InvalidArgument("compare: scenario settings differ between configs (policy '" + c.policy.name() + "')");
  }
  const Experiment which = experiment_from_string(first.experiment);
  std::vector<ExperimentResult> results;
  for (const auto& c : configs) {
    std::optional<SacAgent> agent;
    if (c.policy.kind == PolicyKind::Sac) agent.emplace(detail::load_agent_for(c));
    results.push_back(run_named_experiment(c, which, agent ? &*agent : nullptr));
  }
  CompareArtifacts out;
  out.rows = compare_policies(results);
  const auto dir = detail::prepare_dir(first.output_dir);
  out.comparison_csv = dir / "comparison.csv";
  detail::write_with(out.comparison_csv, [&](std::ostream& os) { write_comparison_csv(os, out.rows); });
  nlohmann::ordered_json snap = nlohmann::ordered_json::array();
  for (const auto& c : configs) snap.push_back(to_json(c));
  detail::write_text(dir / "compare_config.json", snap.dump(2) + "\n");
  return out;
}

}  // namespace caora
