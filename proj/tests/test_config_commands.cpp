// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "caora/caora.hpp"

using namespace caora;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / fmt::format("caora-test-{}-{}", ::getpid(), name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Small networks and short warmup keep command tests fast.
RunConfig quick_config(const fs::path& out) {
  RunConfig c;
  c.sac.hidden = 16;
  c.sac.batch = 16;
  c.sac.warmup_steps = 100;
  c.training.episodes = 3;
  c.evaluation.episodes = 2;
  c.output_dir = out.string();
  return c;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CAORA_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(RunConfig, DefaultsMatchSimulationTable) {
  const RunConfig c;
  EXPECT_EQ(c.pool().r_max, 7.0);
  EXPECT_EQ(c.scenario.ran_range, (IntRange{2, 5}));
  EXPECT_EQ(c.scenario.ai_range, (IntRange{2, 5}));
  EXPECT_EQ(c.scenario.peak_ran_range, (IntRange{6, 7}));
  EXPECT_EQ(c.env.episode_length, 100);
  EXPECT_EQ(c.training.episodes, 1000);
  EXPECT_EQ(c.sac.gamma, 0.99);
  EXPECT_EQ(c.sac.temperature, 0.2);
  EXPECT_EQ(c.sac.lr_actor, 3e-4);
  EXPECT_EQ(c.sac.lr_critic, 3e-4);
  EXPECT_EQ(c.sac.batch, 64u);
  EXPECT_EQ(c.sac.buffer_capacity, 100000u);
  EXPECT_EQ(c.sac.hidden, 128);
  EXPECT_EQ(c.evaluation.peak_onset_step, 50);
}

TEST(RunConfig, JsonRoundTrip) {
  RunConfig c;
  c.seed = 99;
  c.policy = PolicyChoice::static_split(0.5);
  c.env.lambda = 0.2;
  c.env.a_max = 3.5;
  c.sac.auto_temperature = false;
  c.training.scenarios = {TrainingScenario::OffPeak};
  c.evaluation.transport = Delivery::LocalSocket;
  const std::string text = dump_config(c);
  const RunConfig back = parse_config(text);
  EXPECT_EQ(dump_config(back), text);
  EXPECT_EQ(back.env.a_max, 3.5);
  EXPECT_EQ(back.policy.ran_share, 0.5);
}

TEST(RunConfig, OmittedFieldsKeepDefaults) {
  EXPECT_EQ(dump_config(parse_config("{}")), init_config_text());
  EXPECT_EQ(parse_config(R"({"sac": {"batch": 32}})").sac.batch, 32u);
}

TEST(RunConfig, FieldLevelErrors) {
  auto message = [](const std::string& text) {
    try {
      parse_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message(R"({"sac": {"gama": 0.9}})").find("sac.gama"), std::string::npos);
  EXPECT_NE(message(R"({"environment": {"lambda": "big"}})").find("environment.lambda"), std::string::npos);
  EXPECT_NE(message(R"({"scenario": {"ran_range": [5, 2]}})").find("scenario.ran_range"), std::string::npos);
  EXPECT_NE(message(R"({"policy": "coinflip"})").find("policy"), std::string::npos);
  EXPECT_NE(message(R"({"sac": {"gamma": 1.5}})").find("gamma"), std::string::npos);
  EXPECT_THROW(parse_config("{not json"), ParseError);
}

TEST(Commands, TrainWritesArtifactsAndIsReproducibleFromSnapshot) {
  const fs::path dir = scratch("train");
  const RunConfig cfg = quick_config(dir / "a");
  const TrainArtifacts a = cmd_train(cfg);
  EXPECT_TRUE(fs::exists(a.checkpoint));
  EXPECT_TRUE(fs::exists(a.config_snapshot));
  const std::string csv = slurp(a.training_csv);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);

  RunConfig again = load_config(a.config_snapshot.string());
  again.output_dir = (dir / "b").string();
  const TrainArtifacts b = cmd_train(again);
  EXPECT_EQ(slurp(b.training_csv), csv);
  EXPECT_EQ(slurp(b.checkpoint), slurp(a.checkpoint));
  fs::remove_all(dir);
}

TEST(Commands, EvalPeakInjectionShowsRegimeChange) {
  const fs::path dir = scratch("eval");
  RunConfig cfg = quick_config(dir);
  cfg.policy = PolicyChoice::greedy_oracle();
  cfg.experiment = "peak_injection";
  const EvalArtifacts out = cmd_eval(cfg);
  for (const auto& s : out.result.steps) EXPECT_EQ(s.info.d_ran >= 6, s.info.t >= 50);
  EXPECT_TRUE(fs::exists(dir / "peak_injection_steps.csv"));
  const auto summary = nlohmann::json::parse(slurp(out.summary_json));
  EXPECT_EQ(summary["peak_onset_step"], 50);
  EXPECT_GT(summary["post_onset"]["mean_r_ran"].get<double>(), summary["pre_onset"]["mean_r_ran"].get<double>());
  fs::remove_all(dir);
}

TEST(Commands, EvalOffpeakOracleFillsCapacity) {
  const fs::path dir = scratch("oracle");
  RunConfig cfg = quick_config(dir);
  cfg.policy = PolicyChoice::greedy_oracle();
  const EvalArtifacts out = cmd_eval(cfg);
  std::ifstream is(out.steps_csv);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, kExperimentCsvHeader);
  int rows = 0;
  while (std::getline(is, line)) {
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    ASSERT_EQ(v.size(), 13u);
    if (v[2] + v[3] >= 7) EXPECT_EQ(v[10], 1.0);
    ++rows;
  }
  EXPECT_EQ(rows, 200);
  fs::remove_all(dir);
}

TEST(Commands, CompletionRatioMatchesRecomputation) {
  const fs::path dir = scratch("completion");
  RunConfig cfg = quick_config(dir);
  cfg.policy = PolicyChoice::static_split();
  cfg.experiment = "completion_ratio";
  const EvalArtifacts out = cmd_eval(cfg);
  ASSERT_TRUE(out.completion_csv);
  std::ifstream is(*out.completion_csv);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, kCompletionCsvHeader);
  for (int ep = 0; std::getline(is, line); ++ep) {
    double c_ran = 0, d_ran = 0, c_ai = 0, d_ai = 0;
    for (const auto& s : out.result.steps)
      if (s.episode == ep) {
        c_ran += s.info.c_ran;
        d_ran += s.info.d_ran;
        c_ai += s.info.c_ai;
        d_ai += s.info.d_ai;
      }
    EXPECT_EQ(line, fmt::format("{},{},{}", ep, c_ran / d_ran, c_ai / d_ai));
  }
  fs::remove_all(dir);
}

TEST(Commands, EvalRejectsUnknownExperimentAndMismatchedCheckpoint) {
  const fs::path dir = scratch("errors");
  RunConfig cfg = quick_config(dir);
  cfg.policy = PolicyChoice::ran_only();
  cfg.experiment = "fig9";
  EXPECT_THROW(cmd_eval(cfg), InvalidArgument);

  RunConfig train_cfg = quick_config(dir / "t");
  train_cfg.training.episodes = 1;
  const TrainArtifacts t = cmd_train(train_cfg);
  RunConfig eval_cfg = quick_config(dir / "e");
  eval_cfg.checkpoint = t.checkpoint.string();
  eval_cfg.sac.hidden = 32;
  EXPECT_THROW(cmd_eval(eval_cfg), ConfigError);
  eval_cfg.sac.hidden = 16;
  EXPECT_NO_THROW(cmd_eval(eval_cfg));
  fs::remove_all(dir);
}

TEST(Commands, CompareRowsAndRoundTrip) {
  const fs::path dir = scratch("compare");
  RunConfig a = quick_config(dir), b = a, c = a;
  a.policy = PolicyChoice::greedy_oracle();
  b.policy = PolicyChoice::ran_only();
  c.policy = PolicyChoice::ran_only();
  const CompareArtifacts out = cmd_compare({a, b, c});
  ASSERT_EQ(out.rows.size(), 3u);
  EXPECT_GT(out.rows[0].mean_utilization, out.rows[1].mean_utilization);
  EXPECT_EQ(out.rows[1], out.rows[2]);
  std::ifstream is(out.comparison_csv);
  EXPECT_EQ(read_comparison_csv(is), out.rows);
  EXPECT_THROW(cmd_compare({a}), InvalidArgument);
  RunConfig other = b;
  other.seed = 5;
  EXPECT_THROW(cmd_compare({a, other}), InvalidArgument);
  fs::remove_all(dir);
}

TEST(Cli, ExitStatusAndArtifacts) {
  const fs::path dir = scratch("cli");
  const std::string cfg = (dir / "run.json").string();
  ASSERT_EQ(run_cli("init-config --out " + cfg), 0);
  EXPECT_EQ(slurp(cfg), init_config_text());
  {
    std::ofstream os(cfg);
    os << dump_config(quick_config(dir / "out"));
  }
  EXPECT_EQ(run_cli("train --config " + cfg + " --episodes 10"), 0);
  EXPECT_TRUE(fs::exists(dir / "out" / "checkpoint.bin"));
  const std::string first = slurp(dir / "out" / "training.csv");
  EXPECT_EQ(std::count(first.begin(), first.end(), '\n'), 11);
  EXPECT_EQ(run_cli("train --config " + cfg + " --episodes 10"), 0);
  EXPECT_EQ(slurp(dir / "out" / "training.csv"), first);

  const std::string ckpt = " --checkpoint " + (dir / "out" / "checkpoint.bin").string();
  EXPECT_NE(run_cli("eval --config " + cfg + " --experiment peak_injection"), 0);
  EXPECT_EQ(run_cli("eval --config " + cfg + ckpt + " --experiment peak_injection"), 0);
  EXPECT_TRUE(fs::exists(dir / "out" / "peak_injection_summary.json"));
  EXPECT_EQ(run_cli("eval --config " + cfg + " --policy ran_only --experiment completion_ratio"), 0);
  EXPECT_TRUE(fs::exists(dir / "out" / "completion_ratio.csv"));
  EXPECT_EQ(run_cli("compare --config " + cfg + ckpt + " --policy sac --policy ran_only"), 0);
  EXPECT_TRUE(fs::exists(dir / "out" / "comparison.csv"));

  EXPECT_NE(run_cli("eval --config " + cfg + " --experiment nonsense"), 0);
  EXPECT_NE(run_cli("eval --config " + (dir / "missing.json").string()), 0);
  EXPECT_NE(run_cli("compare --config " + cfg + " --policy ran_only"), 0);
  EXPECT_NE(run_cli("frobnicate"), 0);
  EXPECT_NE(run_cli(""), 0);
  fs::remove_all(dir);
}

TEST(Cli, EnvironmentOverrides) {
  const fs::path dir = scratch("cli-env");
  const std::string cfg = (dir / "run.json").string();
  {
    std::ofstream os(cfg);
    os << dump_config(quick_config(dir / "unused"));
  }
  const std::string env = "CAORA_CONFIG=" + cfg + " CAORA_OUT=" + (dir / "env-out").string() +
                          " CAORA_POLICY=greedy_oracle CAORA_EPISODES=1 ";
  const std::string cmd = env + CAORA_CLI_PATH + " eval >/dev/null 2>&1";
  EXPECT_EQ(std::system(cmd.c_str()), 0);
  const auto summary = nlohmann::json::parse(slurp(dir / "env-out" / "offpeak_balance_summary.json"));
  EXPECT_EQ(summary["policy"], "greedy_oracle");
  EXPECT_EQ(summary["episodes"], 1);
  fs::remove_all(dir);
}
