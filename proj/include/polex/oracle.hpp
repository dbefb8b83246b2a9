#pragma once

#include <functional>
#include <utility>

#include "polex/types.hpp"

namespace polex {

/// How a policy picks its action: its argmax, or a draw from its action
/// distribution. Deterministic policies return the same action either way.
enum class ActMode { Greedy, Sample };

/// Black-box access to a policy: a state goes in, an action comes out.
/// Probabilities, weights, and the training family are unreachable through
/// this type. Randomness for sample mode is supplied by the caller so that
/// rollouts are reproducible from their seed.
class PolicyOracle {
 public:
  using ActFn = std::function<ActionId(const State&, ActMode, Rng&)>;

  explicit PolicyOracle(ActFn fn) : fn_(std::move(fn)) {
    if (!fn_) throw DomainError("PolicyOracle: empty action function");
  }

  ActionId act(const State& state, ActMode mode, Rng& rng) const { return fn_(state, mode, rng); }

 private:
  ActFn fn_;
};

inline PolicyOracle constant_oracle(ActionId action) {
  return PolicyOracle([action](const State&, ActMode, Rng&) { return action; });
}

/// Uniform random actions in either mode.
inline PolicyOracle uniform_oracle(int action_count) {
  return PolicyOracle([action_count](const State&, ActMode, Rng& rng) {
    return static_cast<ActionId>(uniform01(rng) * action_count);
  });
}

}  // namespace polex
