#pragma once

// Deterministic, seedable environments: Cart-Pole, MiniPong, and the
// watermark verification chain.

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "polex/oracle.hpp"
#include "polex/types.hpp"

namespace polex {

struct StepResult {
  State state;
  double reward = 0.0;
  bool done = false;
  bool truncated = false;  // done because of the step cap, not a failure
};

class Env {
 public:
  virtual ~Env() = default;

  virtual std::string id() const = 0;
  virtual int state_dim() const = 0;
  virtual int action_count() const = 0;
  virtual int step_cap() const = 0;

  virtual State reset(std::uint64_t seed) = 0;
  /// Throws DomainError on an invalid action, before reset, or after done.
  virtual StepResult step(ActionId action) = 0;

  /// Fresh instance with the same configuration, not yet reset.
  virtual std::unique_ptr<Env> clone() const = 0;

  /// Per-dimension magnitude used to express perturbation budgets.
  virtual Vector state_scale() const { return Vector::Ones(state_dim()); }
  /// Box the environment's observations are clipped to for perturbation.
  virtual Vector state_lower() const = 0;
  virtual Vector state_upper() const = 0;
};

/// Shared bookkeeping: step counting and the reset/termination guards.
class EpisodicEnv : public Env {
 protected:
  void begin_episode() {
    started_ = true;
    finished_ = false;
    steps_ = 0;
  }
  void check_step(ActionId action) const;
  int steps_ = 0;
  bool started_ = false;
  bool finished_ = false;
};

class CartPole final : public EpisodicEnv {
 public:
  static constexpr double kGravity = 9.8;
  static constexpr double kCartMass = 1.0;
  static constexpr double kPoleMass = 0.1;
  static constexpr double kHalfLength = 0.5;
  static constexpr double kForce = 10.0;
  static constexpr double kTau = 0.02;
  static constexpr double kAngleLimit = 12.0 * 2.0 * 3.14159265358979323846 / 360.0;
  static constexpr double kPositionLimit = 2.4;
  static constexpr int kStepCap = 200;

  std::string id() const override { return "cartpole"; }
  int state_dim() const override { return 4; }
  int action_count() const override { return 2; }
  int step_cap() const override { return kStepCap; }

  State reset(std::uint64_t seed) override;
  StepResult step(ActionId action) override;
  std::unique_ptr<Env> clone() const override { return std::make_unique<CartPole>(); }

  Vector state_scale() const override;
  Vector state_lower() const override;
  Vector state_upper() const override;

  /// Starts an episode from an explicit state.
  void reset_to(const State& s);
  const State& state() const { return s_; }

 private:
  State s_ = State::Zero(4);
};

/// Low-dimensional Pong-like task. Observation (all in [-1, 1]):
/// ball x, ball y, ball vx / speed, ball vy / speed, paddle y.
/// The paddle sits on the right wall; actions are UP, DOWN, IDLE.
class MiniPong final : public EpisodicEnv {
 public:
  static constexpr double kPaddleSpeed = 0.04;
  static constexpr double kBallSpeed = 0.03;
  static constexpr double kPaddleHalf = 0.2;
  static constexpr int kStepCap = 500;
  enum Action : ActionId { Up = 0, Down = 1, Idle = 2 };

  std::string id() const override { return "minipong"; }
  int state_dim() const override { return 5; }
  int action_count() const override { return 3; }
  int step_cap() const override { return kStepCap; }

  State reset(std::uint64_t seed) override;
  StepResult step(ActionId action) override;
  std::unique_ptr<Env> clone() const override { return std::make_unique<MiniPong>(); }

  Vector state_lower() const override { return Vector::Constant(5, -1.0); }
  Vector state_upper() const override { return Vector::Constant(5, 1.0); }

 private:
  State observe() const;
  double bx_ = 0, by_ = 0, vx_ = 0, vy_ = 0, py_ = 0;
};

/// Sequential out-of-distribution watermark: four chain states plus the
/// terminal state reached on a wrong action.
struct WatermarkRules {
  static constexpr int kIndexCount = 5;
  std::vector<State> states;

  /// Cart-Pole watermark states; every state has |x| >= 5 and |theta| >= 25.
  static WatermarkRules cartpole_default();

  /// Action expected at chain index i.
  static ActionId expected_action(int i) { return i % 2; }
  /// Chain index reached after the expected action at index i.
  static int successor(int i) { return (i + 1) % 4; }
};

/// Verification environment for a WatermarkRules. Starts at states[0];
/// the expected action earns +1 and moves along the chain, any other action
/// ends the episode with -1 at the terminal state.
class WatermarkEnv final : public EpisodicEnv {
 public:
  static constexpr int kDefaultCap = 20;

  WatermarkEnv(std::string base_id, int state_dim, int action_count, WatermarkRules rules, int cap = kDefaultCap);

  std::string id() const override { return base_id_ + "-watermark"; }
  int state_dim() const override { return state_dim_; }
  int action_count() const override { return action_count_; }
  int step_cap() const override { return cap_; }

  State reset(std::uint64_t seed) override;
  StepResult step(ActionId action) override;
  std::unique_ptr<Env> clone() const override;

  Vector state_lower() const override;
  Vector state_upper() const override;

  int index() const { return index_; }
  const WatermarkRules& rules() const { return rules_; }

 private:
  std::string base_id_;
  int state_dim_;
  int action_count_;
  WatermarkRules rules_;
  int cap_;
  int index_ = 0;
};

/// Validates the rules against the base environment and builds the
/// verification environment. Throws DomainError for an invalid rules.
std::unique_ptr<WatermarkEnv> make_watermark_env(const Env& base, const WatermarkRules& rules,
                                                 int cap = WatermarkEnv::kDefaultCap);

/// Registry: "cartpole", "minipong".
std::unique_ptr<Env> make_env(std::string_view id);

struct Transition {
  State state;
  ActionId action = 0;
  double reward = 0.0;
  State next_state;
  bool done = false;
};

struct Trajectory {
  std::vector<Transition> transitions;
  std::uint64_t seed = 0;
  std::string env_id;

  double total_reward() const;
  std::vector<ActionId> actions() const;
};

/// One seeded episode of `policy` in a fresh copy of `env`, capped at
/// max_steps transitions. The policy's sampling stream is derived from seed.
Trajectory rollout(const Env& env, const PolicyOracle& policy, int max_steps, std::uint64_t seed, ActMode mode);

/// CSV with header: t, s0..s{d-1}, action, reward, done.
void write_trajectory_csv(const Trajectory& traj, std::ostream& os);

}  // namespace polex
