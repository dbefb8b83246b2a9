#include "polex/optim.hpp"

#include <algorithm>
#include <cmath>

namespace polex {

Optimizer::Optimizer(const OptimizerConfig& config) : config_(config) {
  state_.kind = config.kind;
  state_.learning_rate = config.learning_rate;
  state_.decay_factor = config.decay_factor;
}

void Optimizer::step(ParamSet& params, ParamSet grads) {
  if (config_.max_grad_norm > 0) clip_global_norm(grads, config_.max_grad_norm);
  ++state_.step_count;
  const double lr = state_.learning_rate;
  if (state_.kind == OptimizerKind::Sgd) {
    for (auto& [k, p] : params) {
      auto it = grads.find(k);
      if (it != grads.end()) p -= lr * it->second;
    }
    return;
  }
  if (state_.first_moment.empty()) {
    state_.first_moment = zeros_like(params);
    state_.second_moment = zeros_like(params);
  }
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double t = static_cast<double>(state_.step_count);
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  for (auto& [k, p] : params) {
    auto it = grads.find(k);
    if (it == grads.end()) continue;
    const Matrix& g = it->second;
    if (g.rows() != p.rows() || g.cols() != p.cols()) throw ShapeError("optimizer: gradient shape mismatch for " + k);
    Matrix& m = state_.first_moment.at(k);
    Matrix& v = state_.second_moment.at(k);
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + config_.epsilon);
  }
}

bool Optimizer::observe_loss(double loss) {
  if (config_.plateau_window <= 0) return false;
  recent_.push_back(loss);
  if (static_cast<int>(recent_.size()) < config_.plateau_window) return false;
  while (static_cast<int>(recent_.size()) > config_.plateau_window) recent_.pop_front();
  const double first = recent_.front();
  const double best_after = *std::min_element(recent_.begin() + 1, recent_.end());
  if (best_after < first - config_.plateau_threshold * std::abs(first)) return false;
  state_.learning_rate *= state_.decay_factor;
  recent_.clear();
  return true;
}

}  // namespace polex
