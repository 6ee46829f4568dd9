// SPDX-License-Identifier: Apache-2.0
//
// caora: train, evaluate and compare RAN/AI resource-allocation policies.
//
// Environment overrides (used when the matching flag is absent):
//   CAORA_CONFIG, CAORA_SEED, CAORA_EPISODES, CAORA_POLICY, CAORA_EXPERIMENT,
//   CAORA_OUT, CAORA_CHECKPOINT

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "caora/caora.hpp"

namespace {

struct Flags {
  std::vector<std::string> configs;
  std::optional<std::uint64_t> seed;
  std::optional<int> episodes;
  std::vector<std::string> policies;
  std::optional<std::string> experiment;
  std::optional<std::string> out;
  std::optional<std::string> checkpoint;
};

std::vector<caora::RunConfig> load_configs(const std::vector<std::string>& paths) {
  std::vector<caora::RunConfig> out;
  for (const auto& path : paths) {
    std::ifstream is(path);
    if (!is) throw caora::Error("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::parse_error& e) {
      throw caora::ParseError(path + " is not valid JSON: " + e.what(), e.byte);
    }
    if (j.is_array()) {
      for (const auto& item : j) out.push_back(caora::config_from_json(item));
    } else {
      out.push_back(caora::config_from_json(j));
    }
  }
  if (out.empty()) out.emplace_back();
  return out;
}

void apply(caora::RunConfig& c, const Flags& f, bool episodes_are_training) {
  if (f.seed) c.seed = *f.seed;
  if (f.episodes) (episodes_are_training ? c.training.episodes : c.evaluation.episodes) = *f.episodes;
  if (f.policies.size() == 1) c.policy = caora::PolicyChoice::parse(f.policies.front());
  if (f.experiment) c.experiment = *f.experiment;
  if (f.out) c.output_dir = *f.out;
  if (f.checkpoint) c.checkpoint = *f.checkpoint;
}

void add_common(CLI::App* cmd, Flags& f, bool multi_config = false) {
  auto* cfg = cmd->add_option("--config", f.configs, "JSON run configuration");
  cfg->envname("CAORA_CONFIG");
  if (!multi_config) cfg->expected(0, 1);
  cmd->add_option("--seed", f.seed, "master random seed")->envname("CAORA_SEED");
  cmd->add_option("--out", f.out, "output directory")->envname("CAORA_OUT");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"caora - RAN/AI compute orchestration with soft actor-critic"};
  app.require_subcommand(1);
  Flags f;

  auto* init = app.add_subcommand("init-config", "write the full default configuration");
  std::optional<std::string> init_path;
  init->add_option("--out", init_path, "file to write (stdout when omitted)");

  auto* train = app.add_subcommand("train", "train a SAC agent; writes checkpoint, training CSV and config");
  add_common(train, f);
  train->add_option("--episodes", f.episodes, "training episodes")->envname("CAORA_EPISODES");

  auto* eval = app.add_subcommand("eval", "run one experiment and write per-step/per-episode CSVs");
  add_common(eval, f);
  eval->add_option("--episodes", f.episodes, "evaluation episodes")->envname("CAORA_EPISODES");
  eval->add_option("--policy", f.policies, "sac | ran_only | greedy_oracle | static_split[:share]")
      ->envname("CAORA_POLICY")
      ->expected(0, 1);
  eval->add_option("--experiment", f.experiment, "offpeak_balance | peak_injection | completion_ratio")
      ->envname("CAORA_EXPERIMENT");
  eval->add_option("--checkpoint", f.checkpoint, "agent checkpoint for the sac policy")->envname("CAORA_CHECKPOINT");

  auto* compare = app.add_subcommand("compare", "evaluate several policies on one scenario");
  add_common(compare, f, true);
  compare->add_option("--episodes", f.episodes, "evaluation episodes")->envname("CAORA_EPISODES");
  compare->add_option("--policy", f.policies, "policy to include (repeatable)")->envname("CAORA_POLICY");
  compare->add_option("--experiment", f.experiment, "offpeak_balance | peak_injection | completion_ratio")
      ->envname("CAORA_EXPERIMENT");
  compare->add_option("--checkpoint", f.checkpoint, "agent checkpoint for the sac policy")->envname("CAORA_CHECKPOINT");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*init) {
      const std::string text = caora::init_config_text();
      if (init_path) {
        std::ofstream os(*init_path);
        if (!os || !(os << text)) throw caora::Error("cannot write '" + *init_path + "'");
      } else {
        std::cout << text;
      }
      return 0;
    }
    if (*train) {
      auto cfg = load_configs(f.configs).front();
      apply(cfg, f, true);
      const auto out = caora::cmd_train(cfg, &std::cerr);
      std::cout << "checkpoint: " << out.checkpoint.string() << "\ntraining csv: " << out.training_csv.string()
                << "\nconfig: " << out.config_snapshot.string() << "\n";
      return 0;
    }
    if (*eval) {
      auto cfg = load_configs(f.configs).front();
      apply(cfg, f, false);
      const auto out = caora::cmd_eval(cfg);
      const auto row = caora::summarize(out.result);
      std::cout << fmt::format("{} / {}: utilization {:.4f} (executed {:.4f})  ran {:.4f}  ai {:.4f}  reward {:.4f}\n",
                               cfg.experiment, row.policy, row.mean_utilization, row.mean_executed_utilization,
                               row.ran_completion, row.ai_completion, row.mean_reward)
                << "steps csv: " << out.steps_csv.string() << "\nsummary: " << out.summary_json.string() << "\n";
      return 0;
    }
    if (*compare) {
      std::vector<caora::RunConfig> configs = load_configs(f.configs);
      if (f.policies.size() >= 2) {
        const caora::RunConfig base = configs.front();
        configs.clear();
        for (const auto& p : f.policies) {
          caora::RunConfig c = base;
          c.policy = caora::PolicyChoice::parse(p);
          configs.push_back(c);
        }
      }
      Flags per = f;
      per.policies.clear();
      for (auto& c : configs) apply(c, per, false);
      const auto out = caora::cmd_compare(configs);
      caora::write_comparison_csv(std::cout, out.rows);
      std::cout << "comparison csv: " << out.comparison_csv.string() << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
