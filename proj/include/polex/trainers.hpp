#pragma once

// DQN, A2C and PPO trainers for discrete-action environments.
//
// Each family is implemented as a Learner that alternates data collection
// and updates one iteration at a time. Standalone training drives a learner
// on the environment reward; adversarial imitation drives the same learner
// with a reward override (RewardFn).

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "polex/env.hpp"
#include "polex/network.hpp"
#include "polex/optim.hpp"
#include "polex/policy.hpp"

namespace polex {

/// Trainer hyperparameters. Keys accepted by TrainerConfig::set are the field
/// names below (e.g. "gamma", "dqn.batch", "ppo.clip").
struct TrainerConfig {
  double gamma = 0.99;
  std::int64_t max_steps = 200000;  // env-step budget for one training run
  std::int64_t eval_interval = 5000;
  int eval_episodes = 10;
  double stop_reward = 200.0;  // stop once the periodic evaluation reaches this
  std::vector<int> hidden = {64, 64};

  struct Dqn {
    double lr = 1e-3;
    int buffer = 50000;
    int batch = 64;
    int target_sync = 500;
    double eps_start = 1.0;
    double eps_final = 0.02;
    double eps_fraction = 0.1;  // of max_steps
    int learning_starts = 1000;
    int train_freq = 1;
    double grad_clip = 10.0;
    int steps_per_iteration = 500;
    bool double_q = true;
  } dqn;

  struct A2c {
    double lr = 1e-3;
    int envs = 8;
    int nsteps = 5;
    double ent_coef = 0.01;
    double vf_coef = 0.5;
    double grad_clip = 0.5;
  } a2c;

  struct Ppo {
    double lr = 1e-3;
    int nsteps = 1024;
    int epochs = 4;
    int minibatch = 64;
    double clip = 0.2;
    double lambda = 0.95;
    double ent_coef = 0.0;
    double vf_coef = 0.5;
    double grad_clip = 0.5;
  } ppo;

  /// Family defaults: DQN uses one hidden layer, the actor-critics two.
  static TrainerConfig defaults(Family f);

  /// Sets one documented key; throws DomainError for unknown keys or
  /// unparsable values.
  void set(const std::string& key, const std::string& value);
  void apply(const std::map<std::string, std::string>& kv) {
    for (const auto& [k, v] : kv) set(k, v);
  }
};

/// Batched reward override: rewards arrives holding environment rewards for
/// (states.col(i), actions[i]) and is replaced in place.
using RewardFn = std::function<void(const Matrix& states, const std::vector<ActionId>& actions, Vector& rewards)>;

struct IterationReport {
  Matrix states;                 // state_dim x n, every state visited this iteration
  std::vector<ActionId> actions;  // action taken in each visited state
  std::vector<double> episode_returns;  // environment returns of episodes finished this iteration
  double loss = 0.0;
};

class Learner {
 public:
  virtual ~Learner() = default;
  virtual Family family() const = 0;
  virtual IterationReport iterate(const RewardFn& reward = nullptr) = 0;
  virtual WhitePolicy policy() const = 0;
  virtual std::int64_t env_steps() const = 0;
};

std::unique_ptr<Learner> make_learner(Family family, const Env& env, const TrainerConfig& config, std::uint64_t seed);

struct TrainResult {
  WhitePolicy policy;
  double best_eval = 0.0;
  std::int64_t env_steps = 0;
};

/// Runs a learner until the periodic greedy evaluation reaches stop_reward
/// or the step budget is spent; returns the best evaluated snapshot.
TrainResult train(Family family, const Env& env, const TrainerConfig& config, std::uint64_t seed);
TrainResult train_dqn(const Env& env, const TrainerConfig& config, std::uint64_t seed);
TrainResult train_a2c(const Env& env, const TrainerConfig& config, std::uint64_t seed);
TrainResult train_ppo(const Env& env, const TrainerConfig& config, std::uint64_t seed);

/// Mean undiscounted greedy-mode episode reward over seeded rollouts.
double evaluate(const PolicyOracle& policy, const Env& env, int episodes, std::uint64_t seed_base);

struct QualifiedModel {
  WhitePolicy policy;
  std::uint64_t seed;  // seed of the successful attempt
  double eval_reward;  // over eval_episodes
  int attempts;
};

/// Trains with fresh seeds until a model's evaluation reaches `threshold`,
/// at most `max_attempts` times. Returns nullopt when every attempt fails.
std::optional<QualifiedModel> train_qualified(Family family, const Env& env, const TrainerConfig& config,
                                              std::uint64_t seed, double threshold, int max_attempts = 5,
                                              int eval_episodes = 30);

// ---------------------------------------------------------------------------
// Loss functions with gradients, exposed for testing.

struct LossGradients {
  double loss = 0.0;
  ParamSet grads;
};

/// Discounted sum of rewards with bootstrap value after the last step.
/// dones[t] cuts the sum at t.
std::vector<double> discounted_returns(const std::vector<double>& rewards, const std::vector<bool>& dones,
                                       double gamma, double bootstrap = 0.0);

/// Generalized advantage estimates. values[t] = V(s_t); next_values[t] is
/// the value of the successor (0 for real terminations); episode_end[t]
/// stops the recursion.
std::vector<double> gae_advantages(const std::vector<double>& rewards, const std::vector<double>& values,
                                   const std::vector<double>& next_values, const std::vector<bool>& episode_end,
                                   double gamma, double lambda);

/// -mean(adv * log pi(a|s)) - ent_coef * mean(entropy).
LossGradients policy_gradient_loss(const NetworkBundle& actor, const Matrix& states,
                                   const std::vector<ActionId>& actions, const Vector& advantages, double ent_coef);

/// PPO clipped-surrogate loss: -mean(min(r A, clip(r, 1-c, 1+c) A)) - ent_coef * mean(entropy).
LossGradients clipped_surrogate_loss(const NetworkBundle& actor, const Matrix& states,
                                     const std::vector<ActionId>& actions, const Vector& old_log_probs,
                                     const Vector& advantages, double clip, double ent_coef);

/// Per-sample clipped objective and its derivative w.r.t. the ratio.
double clipped_objective(double ratio, double advantage, double clip);
double clipped_objective_ratio_grad(double ratio, double advantage, double clip);

/// coef * mean((returns - V(s))^2).
LossGradients value_loss(const NetworkBundle& critic, const Matrix& states, const Vector& returns, double coef);

/// mean((Q(s,a) - y)^2) with y = r + gamma * (1 - terminal) * Q_target(s', a*),
/// a* = argmax of the online net (double_q) or of the target net.
LossGradients bellman_loss(const NetworkBundle& q, const NetworkBundle& target, const Matrix& states,
                           const std::vector<ActionId>& actions, const Vector& rewards, const Matrix& next_states,
                           const std::vector<bool>& terminal, double gamma, bool double_q);

}  // namespace polex
