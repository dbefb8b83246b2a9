#pragma once

// Stage two of the attack: adversarial imitation of a black-box policy.
//
// The discriminator D(s, a) is trained toward 1 on generator pairs and
// toward 0 on expert pairs. The generator is an RL learner of the chosen
// family whose per-step reward is -log(1 - x), x = 1 - D(s, a) being the
// discriminator's belief that the pair came from the expert.

#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "polex/env.hpp"
#include "polex/evalmetrics.hpp"
#include "polex/fingerprint.hpp"
#include "polex/optim.hpp"
#include "polex/policy.hpp"
#include "polex/trainers.hpp"

namespace polex {

class Discriminator {
 public:
  static constexpr double kClamp = 1e-6;

  /// States enter the network as (s - input_shift) / input_scale.
  Discriminator(NetworkBundle net, int state_dim, int action_count, Vector input_scale, Vector input_shift);

  const NetworkBundle& network() const { return net_; }
  NetworkBundle& network() { return net_; }
  int state_dim() const { return state_dim_; }
  int action_count() const { return action_count_; }

  /// Network input: scaled state stacked on the one-hot action.
  Matrix encode(const Matrix& states, const std::vector<ActionId>& actions) const;

  /// D for each column, clamped to [kClamp, 1 - kClamp].
  Vector operator()(const Matrix& states, const std::vector<ActionId>& actions) const;
  double operator()(const State& s, ActionId a) const;

 private:
  NetworkBundle net_;
  int state_dim_;
  int action_count_;
  Vector input_scale_;
  Vector input_shift_;
};

Discriminator make_discriminator(int state_dim, int action_count, const std::vector<int>& hidden,
                                 const Vector& input_scale, const Vector& input_shift, Rng& rng);

struct DiscriminatorLoss {
  double loss = 0.0;
  ParamSet grads;
};

/// L_D = -mean_G log D - mean_E log(1 - D) and its parameter gradients.
/// Gradients vanish for samples whose output sits on the clamp.
DiscriminatorLoss discriminator_loss(const Discriminator& d, const Matrix& gen_states,
                                     const std::vector<ActionId>& gen_actions, const Matrix& expert_states,
                                     const std::vector<ActionId>& expert_actions);

/// One optimizer step on L_D; returns the loss before the step.
double discriminator_step(Discriminator& d, Optimizer& opt, const Matrix& gen_states,
                          const std::vector<ActionId>& gen_actions, const Matrix& expert_states,
                          const std::vector<ActionId>& expert_actions);

/// -log(1 - x) for the expert belief x in [0, 1).
double generator_reward(double expert_belief);
/// generator_reward(1 - D(s, a)).
double generator_reward(const Discriminator& d, const State& s, ActionId a);

// ---------------------------------------------------------------------------

struct GailConfig {
  int iterations = 100;         // N per cycle
  int max_cycles = 10;
  double delta = 10.0;          // accept when replica >= target - delta
  int expert_episodes = 50;     // collected afresh each cycle
  int eval_episodes = 30;
  int generator_steps = 1024;   // env steps per iteration
  std::vector<int> disc_hidden = {64, 64};
  double disc_lr = 1e-3;
  int disc_updates = 50;
  int disc_batch = 256;
  int js_bins = 8;              // quantile bins per state dimension
  int checkpoint_every = 10;
  int checkpoint_episodes = 10;
  int probe_states = 200;
  int probe_episodes = 10;
  int fidelity_samples = 100;
  double generator_lr = 3e-4;   // overrides the family's default learning rate
  // Snapshot choice: among checkpoints within delta of the best env score,
  // keep the one whose sampled actions agree best with the oracle on a
  // validation probe set (queried through the oracle only).
  bool select_by_fidelity = true;
  int validation_probes = 200;
  std::map<Family, TrainerConfig> generator;  // falls back to TrainerConfig::defaults
  std::uint64_t seed = 0;
  /// Called at every checkpoint with (cycle, iteration, generator snapshot, env score).
  std::function<void(int, int, const WhitePolicy&, double)> on_checkpoint;

  TrainerConfig generator_config(Family f) const;
};

struct IterationLog {
  double disc_loss = 0.0;
  double surrogate_reward = 0.0;   // mean over the iteration's generator steps
  double js = 0.0;                 // binned state-action occupancy divergence
  double disc_expert = 0.0;        // mean D on expert pairs
  double generator_return = 0.0;   // mean env return of finished episodes, NaN if none
};

struct CheckpointLog {
  int iteration = 0;
  double score = 0.0;                // mean env reward over checkpoint_episodes
  double validation_fidelity = 0.0;  // fraction of validation probes with js < 0.05
};

struct ImitationCycleLog {
  int cycle = 0;
  std::vector<IterationLog> iterations;
  std::vector<CheckpointLog> checkpoints;
  int selected_iteration = -1;
  double final_reward = 0.0;
  bool failed = false;
  std::string failure;
};

struct CycleResult {
  std::optional<WhitePolicy> policy;
  ImitationCycleLog log;
};

/// Discretizes states by per-dimension quantile cut points of a reference
/// set; the key is the bin tuple followed by the action.
class OccupancyBinning {
 public:
  OccupancyBinning(const Matrix& reference_states, int bins);
  std::vector<int> key(const State& s, ActionId a) const;
  std::map<std::vector<int>, double> histogram(const Matrix& states, const std::vector<ActionId>& actions) const;

 private:
  std::vector<std::vector<double>> cuts_;
};

/// One N-iteration imitation run from a fresh generator and discriminator.
CycleResult gail_cycle(const PolicyOracle& oracle, Family family, const Env& env, const GailConfig& config,
                       int cycle_index = 0);

struct ExtractionReport {
  Family family = Family::DQN;  // generator family used
  std::optional<FamilyPrediction> identified;
  std::vector<ImitationCycleLog> cycles;
  std::optional<int> accepted_cycle;
  double target_reward = 0.0;
  double replica_reward = 0.0;
  double delta = 10.0;
  std::optional<FidelitySummary> fidelity;
  std::optional<WhitePolicy> replica;  // accepted replica, else the best one seen

  bool accepted() const { return accepted_cycle.has_value(); }
};

/// Runs cycles until a replica reaches target reward - delta or the cycle
/// budget runs out. Expert data only ever flows through `oracle`.
ExtractionReport extract(const PolicyOracle& oracle, Family family, const Env& env, const GailConfig& config);

std::string report_json(const ExtractionReport& r);
/// cycle,iteration,disc_loss,surrogate_reward,js,disc_expert,generator_return
void write_cycles_csv(const ExtractionReport& r, std::ostream& os);

}  // namespace polex
