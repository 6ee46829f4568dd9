// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "caora/error.hpp"
#include "caora/orchestrator.hpp"
#include "caora/resource_env.hpp"
#include "caora/sac_agent.hpp"
#include "caora/workload.hpp"
#include "caora/y1_telemetry.hpp"

namespace caora {

/// Demand ranges shared by every scenario of a run.
struct ScenarioRanges {
  IntRange ran_range{2, 5};
  IntRange ai_range{2, 5};
  IntRange peak_ran_range{6, 7};
};

enum class TrainingScenario { OffPeak, PeakInjection };

struct TrainingSettings {
  int episodes = 1000;
  std::vector<TrainingScenario> scenarios{TrainingScenario::OffPeak, TrainingScenario::PeakInjection};
};

struct EvaluationSettings {
  int episodes = 50;
  int peak_onset_step = 50;
  Delivery transport = Delivery::InProcess;
  std::string socket_path = "/tmp/caora-y1.sock";
};

/// Everything a command needs. Omitted fields keep the defaults below.
struct RunConfig {
  ScenarioRanges scenario;
  double r_base = 7.0;
  UserScaling user_scaling = UserScaling::Identity;
  EnvConfig env;
  SacConfig sac;
  TrainingSettings training;
  EvaluationSettings evaluation;
  PolicyChoice policy = PolicyChoice::sac();
  std::string output_dir = "caora-out";
  std::string checkpoint;                    // agent file for eval/compare with the sac policy
  std::string experiment = "offpeak_balance";
  std::uint64_t seed = 1;

  ResourcePool pool() const { return ResourcePool::with_base(r_base, user_scaling); }

  ScenarioProfile profile(TrainingScenario kind, std::uint64_t seed_value) const {
    ScenarioProfile p;
    p.ran_range = scenario.ran_range;
    p.ai_range = scenario.ai_range;
    p.peak_ran_range = scenario.peak_ran_range;
    p.seed = seed_value;
    if (kind == TrainingScenario::PeakInjection) {
      p.mode = ScenarioMode::PeakRan;
      p.peak_onset_step = evaluation.peak_onset_step;
    }
    return p;
  }

  /// Training environments draw from seeds derived from `seed`, distinct from evaluation.
  std::vector<ScenarioProfile> training_profiles() const {
    std::vector<ScenarioProfile> out;
    for (std::size_t i = 0; i < training.scenarios.size(); ++i)
      out.push_back(profile(training.scenarios[i], seed * 1000003ULL + 17ULL * (i + 1)));
    return out;
  }

  /// Off-peak profile used by every evaluation experiment; peak injection is applied on top.
  ScenarioProfile evaluation_profile() const { return profile(TrainingScenario::OffPeak, seed * 1000003ULL + 7919ULL); }

  SacConfig resolved_sac() const {
    SacConfig s = sac;
    s.seed = seed * 2654435761ULL + 1ULL;
    return s;
  }

  void validate() const {
    detail::require(r_base > 0.0, "r_base: must be positive");
    env.validate();
    sac.validate();
    detail::require(training.episodes >= 1, "training.episodes: must be >= 1");
    detail::require(!training.scenarios.empty(), "training.scenarios: must not be empty");
    detail::require(evaluation.episodes >= 1, "evaluation.episodes: must be >= 1");
    detail::require(evaluation.peak_onset_step >= 0 && evaluation.peak_onset_step < env.episode_length,
                    "evaluation.peak_onset_step: must lie inside the episode");
    profile(TrainingScenario::PeakInjection, seed).validate();
  }
};

class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

namespace detail {

using Json = nlohmann::ordered_json;

inline Json range_json(const IntRange& r) { return Json::array({r.low, r.high}); }

inline std::string training_scenario_name(TrainingScenario s) {
  return s == TrainingScenario::OffPeak ? "off_peak" : "peak_injection";
}

/// Reads fields from one JSON object, tracking the dotted path for error messages
/// and rejecting keys that were never read.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_.empty() ? "<root>" : path_, "must be an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.push_back(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const nlohmann::json::exception& e) {
      fail(field(key), std::string("wrong type (") + e.what() + ")");
    }
  }

  void range(const std::string& key, IntRange& out) {
    seen_.push_back(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_array() || it->size() != 2 || !(*it)[0].is_number_integer() || !(*it)[1].is_number_integer())
      fail(field(key), "must be [low, high] integers");
    out = {(*it)[0].get<int>(), (*it)[1].get<int>()};
    if (!out.valid()) fail(field(key), "needs 0 <= low <= high");
  }

  template <typename F>
  void string(const std::string& key, F&& apply) {
    seen_.push_back(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_string()) fail(field(key), "must be a string");
    try {
      apply(it->get<std::string>());
    } catch (const InvalidArgument& e) {
      fail(field(key), e.what());
    }
  }

  std::optional<ObjectReader> object(const std::string& key) {
    seen_.push_back(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return std::nullopt;
    return ObjectReader(*it, field(key));
  }

  const nlohmann::json* raw(const std::string& key) {
    seen_.push_back(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (std::find(seen_.begin(), seen_.end(), key) == seen_.end()) fail(field(key), "unknown field");
  }

  [[noreturn]] static void fail(const std::string& field, const std::string& msg) {
    throw ConfigError("config field '" + field + "': " + msg);
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::vector<std::string> seen_;
};

}  // namespace detail

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  using detail::Json;
  Json j;
  j["seed"] = c.seed;
  j["policy"] = c.policy.name();
  j["output_dir"] = c.output_dir;
  j["checkpoint"] = c.checkpoint;
  j["experiment"] = c.experiment;
  j["scenario"] = {{"ran_range", detail::range_json(c.scenario.ran_range)},
                   {"ai_range", detail::range_json(c.scenario.ai_range)},
                   {"peak_ran_range", detail::range_json(c.scenario.peak_ran_range)}};
  Json env;
  env["r_base"] = c.r_base;
  env["user_scaling"] = std::string(to_string(c.user_scaling));
  env["lambda"] = c.env.lambda;
  env["alpha_eff"] = c.env.alpha_eff;
  env["priorities"] = {{"ran_realtime", c.env.priorities.ran_realtime},
                       {"ran_nonrealtime", c.env.priorities.ran_nonrealtime},
                       {"ai", c.env.priorities.ai}};
  env["weight_policy"] = {
      {"kind", c.env.weights.kind == WeightPolicyKind::Fixed ? "fixed" : "demand_proportional"},
      {"w_floor", c.env.weights.w_floor},
      {"fixed_w_ran", c.env.weights.fixed_w_ran}};
  env["a_max"] = c.env.a_max ? Json(*c.env.a_max) : Json(nullptr);
  env["episode_length"] = c.env.episode_length;
  j["environment"] = env;
  j["sac"] = {{"lr_actor", c.sac.lr_actor},
              {"lr_critic", c.sac.lr_critic},
              {"gamma", c.sac.gamma},
              {"temperature", c.sac.temperature},
              {"auto_temperature", c.sac.auto_temperature},
              {"lr_temperature", c.sac.lr_temperature},
              {"target_entropy", c.sac.target_entropy},
              {"batch", c.sac.batch},
              {"buffer_capacity", c.sac.buffer_capacity},
              {"hidden", c.sac.hidden},
              {"hidden_layers", c.sac.hidden_layers},
              {"tau", c.sac.tau},
              {"grad_clip", c.sac.grad_clip},
              {"warmup_steps", c.sac.warmup_steps}};
  Json scen = Json::array();
  for (auto s : c.training.scenarios) scen.push_back(detail::training_scenario_name(s));
  j["training"] = {{"episodes", c.training.episodes}, {"scenarios", scen}};
  j["evaluation"] = {{"episodes", c.evaluation.episodes},
                     {"peak_onset_step", c.evaluation.peak_onset_step},
                     {"transport", std::string(to_string(c.evaluation.transport))},
                     {"socket_path", c.evaluation.socket_path}};
  return j;
}

/// Strict reader: unknown keys and wrong types fail with the dotted field name.
inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig c;
  detail::ObjectReader root(j, "");
  root.get("seed", c.seed);
  root.string("policy", [&](const std::string& s) { c.policy = PolicyChoice::parse(s); });
  root.get("output_dir", c.output_dir);
  root.get("checkpoint", c.checkpoint);
  root.get("experiment", c.experiment);
  if (auto s = root.object("scenario")) {
    s->range("ran_range", c.scenario.ran_range);
    s->range("ai_range", c.scenario.ai_range);
    s->range("peak_ran_range", c.scenario.peak_ran_range);
    s->finish();
  }
  if (auto e = root.object("environment")) {
    e->get("r_base", c.r_base);
    e->string("user_scaling", [&](const std::string& s) { c.user_scaling = user_scaling_from_string(s); });
    e->get("lambda", c.env.lambda);
    e->get("alpha_eff", c.env.alpha_eff);
    if (auto p = e->object("priorities")) {
      p->get("ran_realtime", c.env.priorities.ran_realtime);
      p->get("ran_nonrealtime", c.env.priorities.ran_nonrealtime);
      p->get("ai", c.env.priorities.ai);
      p->finish();
    }
    if (auto w = e->object("weight_policy")) {
      w->string("kind", [&](const std::string& s) {
        if (s == "fixed") c.env.weights.kind = WeightPolicyKind::Fixed;
        else if (s == "demand_proportional") c.env.weights.kind = WeightPolicyKind::DemandProportional;
        else throw InvalidArgument("must be 'demand_proportional' or 'fixed'");
      });
      w->get("w_floor", c.env.weights.w_floor);
      w->get("fixed_w_ran", c.env.weights.fixed_w_ran);
      w->finish();
    }
    if (const auto* a = e->raw("a_max"); a && !a->is_null()) {
      if (!a->is_number()) detail::ObjectReader::fail(e->field("a_max"), "must be a number or null");
      c.env.a_max = a->get<double>();
    }
    e->get("episode_length", c.env.episode_length);
    e->finish();
  }
  if (auto s = root.object("sac")) {
    s->get("lr_actor", c.sac.lr_actor);
    s->get("lr_critic", c.sac.lr_critic);
    s->get("gamma", c.sac.gamma);
    s->get("temperature", c.sac.temperature);
    s->get("auto_temperature", c.sac.auto_temperature);
    s->get("lr_temperature", c.sac.lr_temperature);
    s->get("target_entropy", c.sac.target_entropy);
    s->get("batch", c.sac.batch);
    s->get("buffer_capacity", c.sac.buffer_capacity);
    s->get("hidden", c.sac.hidden);
    s->get("hidden_layers", c.sac.hidden_layers);
    s->get("tau", c.sac.tau);
    s->get("grad_clip", c.sac.grad_clip);
    s->get("warmup_steps", c.sac.warmup_steps);
    s->finish();
  }
  if (auto t = root.object("training")) {
    t->get("episodes", c.training.episodes);
    if (const auto* sc = t->raw("scenarios")) {
      if (!sc->is_array()) detail::ObjectReader::fail("training.scenarios", "must be an array");
      c.training.scenarios.clear();
      for (const auto& v : *sc) {
        const std::string name = v.is_string() ? v.get<std::string>() : "";
        if (name == "off_peak") c.training.scenarios.push_back(TrainingScenario::OffPeak);
        else if (name == "peak_injection") c.training.scenarios.push_back(TrainingScenario::PeakInjection);
        else detail::ObjectReader::fail("training.scenarios", "entries must be 'off_peak' or 'peak_injection'");
      }
    }
    t->finish();
  }
  if (auto ev = root.object("evaluation")) {
    ev->get("episodes", c.evaluation.episodes);
    ev->get("peak_onset_step", c.evaluation.peak_onset_step);
    ev->string("transport", [&](const std::string& s) { c.evaluation.transport = delivery_from_string(s); });
    ev->get("socket_path", c.evaluation.socket_path);
    ev->finish();
  }
  root.finish();
  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  return c;
}

inline RunConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("config is not valid JSON: ") + e.what(), e.byte);
  }
  return config_from_json(j);
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

inline std::string dump_config(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

}  // namespace caora
