// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "caora/error.hpp"
#include "caora/mlp.hpp"
#include "caora/replay_buffer.hpp"
#include "caora/resource_env.hpp"
#include "caora/workload.hpp"

namespace caora {

struct SacConfig {
  double lr_actor = 3e-4;
  double lr_critic = 3e-4;
  double gamma = 0.99;
  double temperature = 0.2;
  std::size_t batch = 64;
  std::size_t buffer_capacity = 100000;
  int hidden = 128;
  int hidden_layers = 2;
  double tau = 0.005;
  double grad_clip = 10.0;
  bool auto_temperature = true;  // temperature starts at `temperature` and adapts
  double lr_temperature = 3e-4;
  double target_entropy = -static_cast<double>(kActionDim);
  /// Environment steps driven by uniform random actions before the policy takes over.
  int warmup_steps = 1000;
  std::uint64_t seed = 7;

  void validate() const {
    detail::require(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0,1)");
    detail::require(temperature > 0.0, "temperature must be positive");
    detail::require(lr_actor > 0.0 && lr_critic > 0.0, "learning rates must be positive");
    detail::require(batch >= 1, "batch must be >= 1");
    detail::require(buffer_capacity >= batch, "buffer_capacity must be >= batch");
    detail::require(hidden >= 1 && hidden_layers >= 1, "hidden layers must be non-empty");
    detail::require(tau > 0.0 && tau <= 1.0, "tau must lie in (0,1]");
    detail::require(grad_clip >= 0.0, "grad_clip must be >= 0");
    detail::require(warmup_steps >= 0, "warmup_steps must be >= 0");
  }
};

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;

using StateVec = std::array<double, kStateDim>;
using ActionVec = std::array<double, kActionDim>;

/// Network input for an environment state: demands and allocations divided by r_max.
inline StateVec normalize_state(const EnvState& s, double r_max) {
  return {s.d_ran / r_max, s.d_ai / r_max, s.prev_r_ran / r_max, s.prev_r_ai / r_max};
}

/// log(1 - tanh(u)^2), stable for large |u|.
inline double log_one_minus_tanh_sq(double u) {
  // softplus(-2u) = log(1 + exp(-2u))
  const double x = -2.0 * u;
  const double softplus = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  return 2.0 * (std::numbers::ln2 - u - softplus);
}

struct ActionSample {
  ActionVec a{};        // squashed action in [-1,1]
  double log_prob = 0;  // density of `a` in the squashed space
  ActionVec mean{};     // tanh(mean), the deterministic action
  ActionVec log_std{};
};

/// Loss and actor gradient of the policy objective for one batch.
struct ActorObjective {
  double loss = 0.0;
  double mean_log_prob = 0.0;
  Eigen::VectorXd grad;
};

/// Soft Actor-Critic learner: squashed-Gaussian actor, twin critics, target critics.
///
/// Actions are produced in [-1,1]^2; `to_env_action` rescales them to MIG
/// increments in [-a_max, a_max].
class SacAgent {
 public:
  using Matrix = Eigen::MatrixXd;
  using Vector = Eigen::VectorXd;

  SacAgent(SacConfig config, double a_max) : config_(config), a_max_(a_max) {
    config_.validate();
    detail::require(a_max > 0.0, "a_max must be positive");
    const std::vector<int> hidden(config_.hidden_layers, config_.hidden);
    actor_ = Mlp::make(kStateDim, hidden, 2 * kActionDim, Activation::Relu);
    critic_[0] = Mlp::make(kStateDim + kActionDim, hidden, 1, Activation::Relu);
    critic_[1] = critic_[0];
    Rng init(config_.seed);
    actor_.init_uniform(init);
    actor_.scale_output_layer(0.1);
    critic_[0].init_uniform(init);
    critic_[1].init_uniform(init);
    target_ = critic_;
    log_alpha_ = std::log(config_.temperature);
    reset_optimizers();
  }

  /// Rebuilds an agent around existing networks (checkpoint loading).
  SacAgent(SacConfig config, double a_max, Mlp actor, std::array<Mlp, 2> critics, std::array<Mlp, 2> targets,
           double temperature)
      : config_(config), a_max_(a_max), actor_(std::move(actor)), critic_(std::move(critics)),
        target_(std::move(targets)), log_alpha_(std::log(temperature)) {
    detail::require(a_max > 0.0 && temperature > 0.0, "a_max and temperature must be positive");
    detail::require(actor_.input_dim() == int(kStateDim) && actor_.output_dim() == int(2 * kActionDim),
                    "actor dimensions do not match state/action sizes");
    for (const auto* net : {&critic_[0], &critic_[1], &target_[0], &target_[1]})
      detail::require(net->input_dim() == int(kStateDim + kActionDim) && net->output_dim() == 1,
                      "critic dimensions do not match state/action sizes");
    config_.temperature = temperature;
    reset_optimizers();
  }

  const SacConfig& config() const { return config_; }
  double a_max() const { return a_max_; }
  double temperature() const { return std::exp(log_alpha_); }

  Mlp& actor() { return actor_; }
  const Mlp& actor() const { return actor_; }
  Mlp& critic(int i) { return critic_.at(i); }
  const Mlp& critic(int i) const { return critic_.at(i); }
  Mlp& target(int i) { return target_.at(i); }
  const Mlp& target(int i) const { return target_.at(i); }

  AllocAction to_env_action(const ActionVec& a) const { return {a[0] * a_max_, a[1] * a_max_}; }

  ActionSample sample_action(const StateVec& s, Rng& rng, bool deterministic) const {
    Matrix in(kStateDim, 1);
    for (std::size_t i = 0; i < kStateDim; ++i) in(i, 0) = s[i];
    const Matrix out = actor_.forward(in);
    ActionSample r;
    std::normal_distribution<double> normal(0.0, 1.0);
    r.log_prob = 0.0;
    for (std::size_t j = 0; j < kActionDim; ++j) {
      const double mu = out(j, 0);
      const double ls = std::clamp(out(kActionDim + j, 0), kLogStdMin, kLogStdMax);
      const double eps = deterministic ? 0.0 : normal(rng);
      const double u = mu + std::exp(ls) * eps;
      r.a[j] = std::tanh(u);
      r.mean[j] = std::tanh(mu);
      r.log_std[j] = ls;
      r.log_prob += -0.5 * eps * eps - ls - 0.5 * std::log(2.0 * std::numbers::pi) - log_one_minus_tanh_sq(u);
    }
    return r;
  }

  // ---------------------------------------------------------------------------
  // Critic side

  static Matrix states_of(const std::vector<Transition>& batch, bool next) {
    Matrix m(kStateDim, batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b)
      for (std::size_t i = 0; i < kStateDim; ++i) m(i, b) = next ? batch[b].s_next[i] : batch[b].s[i];
    return m;
  }

  static Matrix critic_input(const Matrix& states, const Matrix& actions) {
    Matrix in(kStateDim + kActionDim, states.cols());
    in.topRows(kStateDim) = states;
    in.bottomRows(kActionDim) = actions;
    return in;
  }

  static Matrix critic_input(const std::vector<Transition>& batch) {
    Matrix a(kActionDim, batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b)
      for (std::size_t j = 0; j < kActionDim; ++j) a(j, b) = batch[b].a[j];
    return critic_input(states_of(batch, false), a);
  }

  /// Squashed reparameterised actions and their log-densities for a batch of states.
  std::pair<Matrix, Vector> policy_batch(const Matrix& states, const Matrix& noise) const {
    const Matrix out = actor_.forward(states);
    Matrix a(kActionDim, states.cols());
    Vector logp = Vector::Zero(states.cols());
    for (Eigen::Index b = 0; b < states.cols(); ++b) {
      for (std::size_t j = 0; j < kActionDim; ++j) {
        const double ls = std::clamp(out(kActionDim + j, b), kLogStdMin, kLogStdMax);
        const double eps = noise(j, b);
        const double u = out(j, b) + std::exp(ls) * eps;
        a(j, b) = std::tanh(u);
        logp(b) += -0.5 * eps * eps - ls - 0.5 * std::log(2.0 * std::numbers::pi) - log_one_minus_tanh_sq(u);
      }
    }
    return {a, logp};
  }

  Matrix draw_noise(Eigen::Index cols, Rng& rng) const {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix n(kActionDim, cols);
    for (Eigen::Index b = 0; b < cols; ++b)
      for (std::size_t j = 0; j < kActionDim; ++j) n(j, b) = normal(rng);
    return n;
  }

  /// Soft Bellman targets y = r + gamma (1 - done) (min target Q(s', a') - alpha log pi(a'|s')).
  Vector critic_targets(const std::vector<Transition>& batch, const Matrix& noise) const {
    const Matrix next_states = states_of(batch, true);
    const auto [next_a, next_logp] = policy_batch(next_states, noise);
    const Matrix in = critic_input(next_states, next_a);
    const Matrix q1 = target_[0].forward(in);
    const Matrix q2 = target_[1].forward(in);
    const double alpha = temperature();
    Vector y(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const double soft_q = std::min(q1(0, b), q2(0, b)) - alpha * next_logp(b);
      y(b) = batch[b].r + config_.gamma * (batch[b].done ? 0.0 : 1.0) * soft_q;
    }
    return y;
  }

  Vector critic_targets(const std::vector<Transition>& batch, Rng& rng) const {
    return critic_targets(batch, draw_noise(batch.size(), rng));
  }

  /// Mean squared error of each online critic against `y`.
  std::array<double, 2> critic_losses(const std::vector<Transition>& batch, const Vector& y) const {
    const Matrix in = critic_input(batch);
    std::array<double, 2> out{};
    for (int i = 0; i < 2; ++i) out[i] = (critic_[i].forward(in).row(0).transpose() - y).squaredNorm() / y.size();
    return out;
  }

  /// One descent step for both critics on fixed targets, then a soft target update.
  /// Returns the mean of the two pre-step losses.
  double critic_step(const std::vector<Transition>& batch, const Vector& y) {
    const Matrix in = critic_input(batch);
    double loss = 0.0;
    for (int i = 0; i < 2; ++i) {
      Mlp::Tape tape;
      const Matrix q = critic_[i].forward(in, &tape);
      const Matrix diff = q - y.transpose();
      loss += diff.squaredNorm() / y.size();
      Vector grad;
      critic_[i].backward(tape, 2.0 * diff / double(y.size()), grad);
      critic_opt_[i].step(critic_[i].params(), std::move(grad));
      if (!critic_[i].all_finite()) throw NumericError(fmt::format("critic {} parameters became non-finite", i + 1));
    }
    for (int i = 0; i < 2; ++i) soft_update(target_[i], critic_[i], config_.tau);
    return 0.5 * loss;
  }

  double critic_update(const std::vector<Transition>& batch, Rng& rng) {
    return critic_step(batch, critic_targets(batch, rng));
  }

  double critic_update(const ReplayBuffer<>& buffer, Rng& rng) {
    require_fill(buffer);
    return critic_update(buffer.sample(config_.batch, rng), rng);
  }

  // ---------------------------------------------------------------------------
  // Actor side

  /// Objective mean(alpha log pi(a|s) - min(Q1, Q2)(s, a)) with a = tanh(mu + sigma * noise),
  /// and its exact gradient w.r.t. the actor parameters.
  ActorObjective actor_objective(const Matrix& states, const Matrix& noise) const {
    const Eigen::Index batch = states.cols();
    Mlp::Tape tape;
    const Matrix out = actor_.forward(states, &tape);
    Matrix u(kActionDim, batch), a(kActionDim, batch), sigma(kActionDim, batch);
    Vector logp = Vector::Zero(batch);
    for (Eigen::Index b = 0; b < batch; ++b) {
      for (std::size_t j = 0; j < kActionDim; ++j) {
        const double ls = std::clamp(out(kActionDim + j, b), kLogStdMin, kLogStdMax);
        sigma(j, b) = std::exp(ls);
        u(j, b) = out(j, b) + sigma(j, b) * noise(j, b);
        a(j, b) = std::tanh(u(j, b));
        logp(b) += -0.5 * noise(j, b) * noise(j, b) - ls - 0.5 * std::log(2.0 * std::numbers::pi) -
                   log_one_minus_tanh_sq(u(j, b));
      }
    }

    const Matrix cin = critic_input(states, a);
    std::array<Mlp::Tape, 2> ctape;
    const Matrix q1 = critic_[0].forward(cin, &ctape[0]);
    const Matrix q2 = critic_[1].forward(cin, &ctape[1]);

    const double alpha = temperature();
    const double inv_b = 1.0 / double(batch);
    ActorObjective obj;
    // dq/da through whichever critic is smaller per sample.
    std::array<Matrix, 2> upstream{Matrix::Zero(1, batch), Matrix::Zero(1, batch)};
    for (Eigen::Index b = 0; b < batch; ++b) {
      const bool first = q1(0, b) <= q2(0, b);
      const double q = first ? q1(0, b) : q2(0, b);
      obj.loss += (alpha * logp(b) - q) * inv_b;
      upstream[first ? 0 : 1](0, b) = 1.0;
    }
    obj.mean_log_prob = logp.mean();

    Matrix dq_da = Matrix::Zero(kActionDim, batch);
    for (int i = 0; i < 2; ++i) {
      Vector unused;
      const Matrix gin = critic_[i].backward(ctape[i], upstream[i], unused);
      dq_da += gin.bottomRows(kActionDim);
    }

    Matrix g_out = Matrix::Zero(2 * kActionDim, batch);
    for (Eigen::Index b = 0; b < batch; ++b) {
      for (std::size_t j = 0; j < kActionDim; ++j) {
        const double t = a(j, b);
        const double dl_du = inv_b * (alpha * 2.0 * t - dq_da(j, b) * (1.0 - t * t));
        g_out(j, b) = dl_du;
        const double raw_ls = out(kActionDim + j, b);
        const bool inside = raw_ls > kLogStdMin && raw_ls < kLogStdMax;
        g_out(kActionDim + j, b) = inside ? dl_du * sigma(j, b) * noise(j, b) - inv_b * alpha : 0.0;
      }
    }
    actor_.backward(tape, g_out, obj.grad);
    return obj;
  }

  double actor_update(const std::vector<Transition>& batch, Rng& rng) {
    const Matrix states = states_of(batch, false);
    ActorObjective obj = actor_objective(states, draw_noise(batch.size(), rng));
    actor_opt_.step(actor_.params(), std::move(obj.grad));
    if (!actor_.all_finite()) throw NumericError("actor parameters became non-finite");
    if (config_.auto_temperature) {
      Vector la(1), g(1);
      la(0) = log_alpha_;
      g(0) = -(obj.mean_log_prob + config_.target_entropy);
      alpha_opt_.step(la, g);
      log_alpha_ = la(0);
    }
    return obj.loss;
  }

  double actor_update(const ReplayBuffer<>& buffer, Rng& rng) {
    require_fill(buffer);
    return actor_update(buffer.sample(config_.batch, rng), rng);
  }

 private:
  void require_fill(const ReplayBuffer<>& buffer) const {
    if (buffer.size() < config_.batch)
      throw StateError(fmt::format("replay buffer holds {} transitions, batch needs {}", buffer.size(),
                                   config_.batch));
  }

  void reset_optimizers() {
    actor_opt_ = Adam(actor_.num_params(), config_.lr_actor, config_.grad_clip);
    for (int i = 0; i < 2; ++i) critic_opt_[i] = Adam(critic_[i].num_params(), config_.lr_critic, config_.grad_clip);
    alpha_opt_ = Adam(1, config_.lr_temperature);
  }

  SacConfig config_;
  double a_max_;
  Mlp actor_;
  std::array<Mlp, 2> critic_;
  std::array<Mlp, 2> target_;
  Adam actor_opt_;
  std::array<Adam, 2> critic_opt_;
  Adam alpha_opt_;
  double log_alpha_ = 0.0;
};

// -----------------------------------------------------------------------------
// Training

struct EpisodeMetrics {
  int episode = 0;
  std::string scenario;
  double mean_reward = 0.0;
  double ran_completion = 0.0;  // sum c_ran / sum d_ran
  double ai_completion = 0.0;
  double utilization = 0.0;
  double executed_utilization = 0.0;
  double critic_loss = 0.0;  // mean over the episode's updates, 0 when none ran
  double actor_loss = 0.0;
};

/// Running per-episode aggregates over StepInfo rows.
struct EpisodeAccumulator {
  double reward = 0, c_ran = 0, d_ran = 0, c_ai = 0, d_ai = 0, util = 0, exec_util = 0;
  int steps = 0;

  void add(const StepInfo& s) {
    reward += s.reward.final;
    c_ran += s.c_ran;
    d_ran += s.d_ran;
    c_ai += s.c_ai;
    d_ai += s.d_ai;
    util += s.utilization;
    exec_util += s.executed_utilization;
    ++steps;
  }

  EpisodeMetrics finish(int episode, std::string scenario) const {
    EpisodeMetrics m;
    m.episode = episode;
    m.scenario = std::move(scenario);
    const double n = steps > 0 ? steps : 1;
    m.mean_reward = reward / n;
    m.ran_completion = d_ran > 0 ? c_ran / d_ran : 1.0;
    m.ai_completion = d_ai > 0 ? c_ai / d_ai : 1.0;
    m.utilization = util / n;
    m.executed_utilization = exec_util / n;
    return m;
  }
};

struct TrainSetup {
  std::vector<ScenarioProfile> scenarios{ScenarioProfile::off_peak()};  // cycled episode by episode
  ResourcePool pool;
  EnvConfig env;
  SacConfig sac;
  int episodes = 1000;
  std::function<void(const EpisodeMetrics&)> on_episode;
  std::function<void(const StepInfo&)> on_step;
};

struct TrainOutcome {
  SacAgent agent;
  std::vector<EpisodeMetrics> metrics;
};

inline std::string scenario_label(const ScenarioProfile& p) {
  if (p.mode == ScenarioMode::OffPeak) return "off_peak";
  return p.peak_onset_step ? fmt::format("peak_ran@{}", *p.peak_onset_step) : "peak_ran";
}

/// Runs the full collect-act-store-learn loop, one critic and one actor update per
/// environment step once the buffer holds a batch.
inline TrainOutcome train(const TrainSetup& setup) {
  detail::require(setup.episodes >= 1, "episodes must be >= 1");
  detail::require(!setup.scenarios.empty(), "at least one training scenario is required");
  setup.env.validate();
  setup.sac.validate();

  std::vector<ResourceEnv> envs;
  for (const auto& p : setup.scenarios) envs.emplace_back(p, setup.pool, setup.env);

  TrainOutcome out{SacAgent(setup.sac, setup.env.action_bound(setup.pool)), {}};
  SacAgent& agent = out.agent;
  ReplayBuffer<> buffer(setup.sac.buffer_capacity);
  Rng rng(setup.sac.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);
  long long total_steps = 0;

  for (int ep = 0; ep < setup.episodes; ++ep) {
    const std::size_t which = std::size_t(ep) % envs.size();
    ResourceEnv& env = envs[which];
    EnvState state = env.reset();
    EpisodeAccumulator acc;
    double closs = 0.0, aloss = 0.0;
    int updates = 0;
    while (!env.done()) {
      const double r_max = env.pool().r_max;
      const StateVec s = normalize_state(state, r_max);
      ActionVec a{};
      if (total_steps < setup.sac.warmup_steps) {
        for (auto& v : a) v = uniform(rng);
      } else {
        a = agent.sample_action(s, rng, false).a;
      }
      const StepResult res = env.step(agent.to_env_action(a));
      ++total_steps;
      acc.add(res.info);
      if (setup.on_step) setup.on_step(res.info);

      Transition tr;
      tr.s = s;
      tr.a = a;
      tr.r = res.reward.final;
      tr.s_next = normalize_state(res.next_state, env.pool().r_max);
      tr.done = false;  // episodes end by time limit only
      buffer.push(tr);
      state = res.next_state;

      if (buffer.size() >= setup.sac.batch) {
        const auto batch = buffer.sample(setup.sac.batch, rng);
        const double cl = agent.critic_update(batch, rng);
        const double al = agent.actor_update(batch, rng);
        if (!std::isfinite(cl) || !std::isfinite(al))
          throw NumericError(fmt::format("non-finite loss at episode {} step {} (critic {}, actor {})", ep,
                                         env.t(), cl, al));
        closs += cl;
        aloss += al;
        ++updates;
      }
    }
    EpisodeMetrics m = acc.finish(ep, scenario_label(setup.scenarios[which]));
    if (updates > 0) {
      m.critic_loss = closs / updates;
      m.actor_loss = aloss / updates;
    }
    if (setup.on_episode) setup.on_episode(m);
    out.metrics.push_back(std::move(m));
  }
  return out;
}

inline constexpr std::string_view kTrainCsvHeader =
    "episode,scenario,mean_reward,ran_completion,ai_completion,utilization,executed_utilization,critic_loss,"
    "actor_loss";

inline std::string train_csv_row(const EpisodeMetrics& m) {
  return fmt::format("{},{},{},{},{},{},{},{},{}\n", m.episode, m.scenario, m.mean_reward, m.ran_completion,
                     m.ai_completion, m.utilization, m.executed_utilization, m.critic_loss, m.actor_loss);
}

inline std::string train_csv(std::span<const EpisodeMetrics> metrics) {
  std::string out(kTrainCsvHeader);
  out += '\n';
  for (const auto& m : metrics) out += train_csv_row(m);
  return out;
}

}  // namespace caora
