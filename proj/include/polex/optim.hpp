#pragma once

#include <deque>
#include <string>

#include "polex/network.hpp"

namespace polex {

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double decay_factor = 0.7;
  int plateau_window = 3;  // 0 disables plateau decay
  double plateau_threshold = 1e-4;  // relative improvement that counts
  double max_grad_norm = 0.0;  // 0 disables clipping
};

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::Adam;
  std::int64_t step_count = 0;
  double learning_rate = 1e-3;
  double decay_factor = 0.7;
  ParamSet first_moment;
  ParamSet second_moment;
};

/// SGD / Adam with learning-rate decay on loss plateaus.
class Optimizer {
 public:
  explicit Optimizer(const OptimizerConfig& config);

  /// Applies one update to `params`. Gradients are clipped in place when
  /// max_grad_norm is set.
  void step(ParamSet& params, ParamSet grads);

  /// Records an epoch-level loss. Returns true when the window of recent
  /// losses shows no improvement and the learning rate was decayed.
  bool observe_loss(double loss);

  double learning_rate() const { return state_.learning_rate; }
  void set_learning_rate(double lr) { state_.learning_rate = lr; }
  const OptimizerState& state() const { return state_; }

 private:
  OptimizerConfig config_;
  OptimizerState state_;
  std::deque<double> recent_;
};

}  // namespace polex
