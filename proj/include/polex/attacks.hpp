#pragma once

// Downstream attacks enabled by an extracted replica: transferable FGSM
// adversarial examples and watermark removal.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "polex/env.hpp"
#include "polex/gail.hpp"
#include "polex/policy.hpp"
#include "polex/trainers.hpp"

namespace polex {

// ---------------------------------------------------------------------------
// Adversarial examples

struct AdvExample {
  State clean_state;
  State adv_state;
  double eps = 0.0;
  std::string source_model;
};

/// eps * scale * sign(grad), with sign(0) = 0.
Vector fgsm_perturbation(const Vector& grad, double eps, const Vector& scale);

/// Untargeted FGSM on the white model's own greedy action. eps is measured in
/// units of `scale` per coordinate; the result is clipped to [lower, upper].
/// Throws NumericError when the input gradient is not finite.
AdvExample fgsm(const WhitePolicy& white, const State& state, double eps, const Vector& scale, const Vector& lower,
                const Vector& upper, std::string source_model = {});
/// Uses the environment's state scale and bounds.
AdvExample fgsm(const WhitePolicy& white, const State& state, double eps, const Env& env,
                std::string source_model = {});

/// True iff the target's greedy action differs between clean and adversarial state.
bool attack_success(const PolicyOracle& target, const AdvExample& example);

struct TransferConfig {
  double eps = 0.15;
  int n_examples = 1000;  // per cell and repeat
  int repeats = 3;
  int probe_episodes = 20;
  std::uint64_t seed = 0;
  int jobs = 1;
};

/// rates(i, j): success of examples crafted on white model (i, j) against target j,
/// averaged over repeats.
struct TransferMatrix {
  std::vector<std::string> sources;
  std::vector<std::string> targets;
  Matrix rates;
  int n_examples = 0;
  int repeats = 0;
  double eps = 0.0;

  /// Mean of the off-diagonal entries of column j.
  double mismatched_mean(int j) const;
};

/// white[i][j] is the white-box model of row i used against target j. The
/// probe states of column j and repeat r are harvested from target j's own
/// greedy rollouts and shared by every row.
TransferMatrix transfer_matrix(const std::vector<std::vector<std::shared_ptr<const WhitePolicy>>>& white,
                               const std::vector<std::string>& source_labels,
                               const std::vector<PolicyOracle>& targets, const std::vector<std::string>& target_labels,
                               const Env& env, const TransferConfig& config);

/// source,target,rate,n,eps
void write_transfer_csv(const TransferMatrix& m, std::ostream& os);

// ---------------------------------------------------------------------------
// Watermarks

/// Interleaves episodes of the base environment with verification episodes:
/// within every block of `period` episodes the last one is a verification
/// episode. Each instance counts its own episodes.
class MixedEnv final : public Env {
 public:
  MixedEnv(const Env& base, const WatermarkRules& rules, int period = 5);

  std::string id() const override { return base_->id() + "+watermark"; }
  int state_dim() const override { return base_->state_dim(); }
  int action_count() const override { return base_->action_count(); }
  int step_cap() const override;

  State reset(std::uint64_t seed) override;
  StepResult step(ActionId action) override;
  std::unique_ptr<Env> clone() const override;

  Vector state_scale() const override { return base_->state_scale(); }
  Vector state_lower() const override { return base_->state_lower(); }
  Vector state_upper() const override { return base_->state_upper(); }

  bool in_verification() const { return current_ == verify_.get(); }

 private:
  std::unique_ptr<Env> base_;
  std::unique_ptr<WatermarkEnv> verify_;
  WatermarkRules rules_;
  int period_;
  std::int64_t episodes_ = 0;
  Env* current_ = nullptr;
};

struct Verification {
  double reward = 0.0;
  bool passed = false;
};

/// One greedy episode in the verification environment; passed iff the
/// episode never hit the -1 termination.
Verification verify_watermark(const PolicyOracle& policy, const WatermarkEnv& wm_env);

struct WatermarkConfig {
  double reward_target = 195.0;
  int max_attempts = 5;
  int eval_episodes = 30;
  int period = 5;                  // one verification episode per period - 1 normal ones
  std::int64_t check_interval = 5000;  // env steps between embedding checks
  std::map<Family, TrainerConfig> trainer;  // falls back to TrainerConfig::defaults
  std::uint64_t seed = 0;
};

struct WatermarkedModel {
  WhitePolicy policy;
  double normal_reward = 0.0;
  std::uint64_t seed = 0;
  int attempts = 0;
};

/// Trains in MixedEnv until the greedy normal-env reward reaches the target
/// and verification passes. Throws DomainError when every attempt fails.
WatermarkedModel embed_watermark(Family family, const Env& base_env, const WatermarkRules& rules,
                                 const WatermarkConfig& config);

/// Fig-style record for one extraction trial against a watermarked model.
struct WatermarkTrial {
  Family family = Family::DQN;
  int trial = 0;
  double watermarked_normal = 0.0;
  double watermarked_verify = 0.0;
  bool watermarked_passed = false;
  double replica_normal = 0.0;
  double replica_verify = 0.0;
  bool replica_passed = false;
  bool replica_accepted = false;
  int cycles = 0;
};

/// Extracts the watermarked model `trials` times through its oracle with the
/// matched family and verifies every replica.
std::vector<WatermarkTrial> watermark_removal(const WatermarkedModel& model, const Env& base_env,
                                              const WatermarkRules& rules, const GailConfig& gail, int trials,
                                              int eval_episodes = 30);

std::string watermark_json(const std::vector<WatermarkTrial>& trials);

}  // namespace polex
