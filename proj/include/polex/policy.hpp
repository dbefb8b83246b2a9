#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "polex/network.hpp"
#include "polex/oracle.hpp"

namespace polex {

enum class Family { DQN, A2C, PPO };

inline constexpr std::array<Family, 3> kAllFamilies = {Family::DQN, Family::A2C, Family::PPO};

std::string_view to_string(Family f);
Family parse_family(std::string_view s);
inline int family_index(Family f) { return static_cast<int>(f); }

/// A trained policy with full white-box access.
///
/// For DQN the network outputs Q-values and the action distribution is a
/// point mass on the greedy action. For A2C/PPO the actor outputs logits of
/// a categorical distribution and the critic is carried along for
/// persistence only.
class WhitePolicy {
 public:
  WhitePolicy(Family family, NetworkBundle actor, std::optional<NetworkBundle> critic = std::nullopt);

  Family family() const { return family_; }
  const NetworkBundle& actor() const { return actor_; }
  const std::optional<NetworkBundle>& critic() const { return critic_; }
  int state_dim() const { return actor_.arch.input_dim(); }
  int action_count() const { return actor_.arch.output_dim(); }

  /// Raw network output: Q-values (DQN) or logits (A2C/PPO).
  Vector logits(const State& s) const;
  Vector action_distribution(const State& s) const;
  ActionId greedy(const State& s) const;
  ActionId act(const State& s, ActMode mode, Rng& rng) const;

  /// Gradient w.r.t. the input state of the cross-entropy between
  /// softmax(logits(s)) and `label`.
  Vector input_gradient(const State& s, ActionId label) const;

 private:
  Family family_;
  NetworkBundle actor_;
  std::optional<NetworkBundle> critic_;
};

/// Wraps a white policy so only actions are observable.
PolicyOracle as_oracle(std::shared_ptr<const WhitePolicy> policy);
PolicyOracle as_oracle(const WhitePolicy& policy);

/// Sidecar descriptor stored next to a policy's weight files.
struct PolicyDescriptor {
  Family family = Family::DQN;
  std::string env_id;
  std::uint64_t seed = 0;
  double eval_reward = 0.0;
};

/// Writes <stem>.json plus <stem>.actor.bin (and <stem>.critic.bin).
void save_policy(const WhitePolicy& policy, const PolicyDescriptor& desc, const std::filesystem::path& stem);
/// Accepts either the stem or the .json path.
std::pair<WhitePolicy, PolicyDescriptor> load_policy(const std::filesystem::path& path);

}  // namespace polex
