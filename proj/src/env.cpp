#include "polex/env.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

namespace polex {

void EpisodicEnv::check_step(ActionId action) const {
  if (!started_) throw DomainError(id() + ": step before reset");
  if (finished_) throw DomainError(id() + ": step after episode end");
  if (action < 0 || action >= action_count())
    throw DomainError(id() + ": invalid action " + std::to_string(action));
}

// ---------------------------------------------------------------------------

State CartPole::reset(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xca27));
  s_.resize(4);
  for (int i = 0; i < 4; ++i) s_[i] = uniform(rng, -0.05, 0.05);
  begin_episode();
  return s_;
}

void CartPole::reset_to(const State& s) {
  if (s.size() != 4 || !s.allFinite()) throw DomainError("cartpole: reset_to needs 4 finite values");
  s_ = s;
  begin_episode();
}

StepResult CartPole::step(ActionId action) {
  check_step(action);
  const double total_mass = kCartMass + kPoleMass;
  const double pole_mass_length = kPoleMass * kHalfLength;
  const double force = action == 1 ? kForce : -kForce;
  const double x = s_[0], x_dot = s_[1], theta = s_[2], theta_dot = s_[3];
  const double cos_t = std::cos(theta), sin_t = std::sin(theta);
  const double temp = (force + pole_mass_length * theta_dot * theta_dot * sin_t) / total_mass;
  const double theta_acc =
      (kGravity * sin_t - cos_t * temp) / (kHalfLength * (4.0 / 3.0 - kPoleMass * cos_t * cos_t / total_mass));
  const double x_acc = temp - pole_mass_length * theta_acc * cos_t / total_mass;
  s_[0] = x + kTau * x_dot;
  s_[1] = x_dot + kTau * x_acc;
  s_[2] = theta + kTau * theta_dot;
  s_[3] = theta_dot + kTau * theta_acc;
  ++steps_;

  StepResult r;
  r.state = s_;
  r.reward = 1.0;
  const bool failed = std::abs(s_[0]) > kPositionLimit || std::abs(s_[2]) > kAngleLimit;
  r.truncated = !failed && steps_ >= kStepCap;
  r.done = failed || r.truncated;
  finished_ = r.done;
  return r;
}

Vector CartPole::state_scale() const {
  Vector s(4);
  s << kPositionLimit, 3.0, kAngleLimit, 3.5;
  return s;
}

Vector CartPole::state_lower() const {
  Vector s(4);
  s << -2.0 * kPositionLimit, -10.0, -2.0 * kAngleLimit, -10.0;
  return s;
}

Vector CartPole::state_upper() const { return -state_lower(); }

// ---------------------------------------------------------------------------

State MiniPong::reset(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x9019));
  const double angle = uniform(rng, -0.25 * M_PI, 0.25 * M_PI);
  bx_ = 0.0;
  by_ = 0.0;
  vx_ = kBallSpeed * std::cos(angle);
  vy_ = kBallSpeed * std::sin(angle);
  py_ = 0.0;
  begin_episode();
  return observe();
}

State MiniPong::observe() const {
  State s(5);
  s << bx_, by_, vx_ / kBallSpeed, vy_ / kBallSpeed, py_;
  return s;
}

StepResult MiniPong::step(ActionId action) {
  check_step(action);
  if (action == Up) py_ += kPaddleSpeed;
  if (action == Down) py_ -= kPaddleSpeed;
  py_ = std::clamp(py_, -1.0 + kPaddleHalf, 1.0 - kPaddleHalf);

  bx_ += vx_;
  by_ += vy_;
  if (by_ > 1.0) {
    by_ = 2.0 - by_;
    vy_ = -vy_;
  } else if (by_ < -1.0) {
    by_ = -2.0 - by_;
    vy_ = -vy_;
  }
  if (bx_ < -1.0) {
    bx_ = -2.0 - bx_;
    vx_ = -vx_;
  }

  StepResult r;
  ++steps_;
  bool missed = false;
  if (bx_ >= 1.0) {
    const double offset = by_ - py_;
    if (std::abs(offset) <= kPaddleHalf) {
      // Hit: bounce back with an angle set by where the ball met the paddle.
      r.reward = 1.0;
      const double angle = (offset / kPaddleHalf) * 0.25 * M_PI;
      bx_ = 2.0 - bx_;
      vx_ = -kBallSpeed * std::cos(angle);
      vy_ = kBallSpeed * std::sin(angle);
    } else {
      missed = true;
      bx_ = 1.0;
    }
  }
  r.state = observe();
  r.truncated = !missed && steps_ >= kStepCap;
  r.done = missed || r.truncated;
  finished_ = r.done;
  return r;
}

// ---------------------------------------------------------------------------

WatermarkRules WatermarkRules::cartpole_default() {
  auto s = [](double x, double v, double t, double w) {
    State st(4);
    st << x, v, t, w;
    return st;
  };
  WatermarkRules rules;
  rules.states = {s(-5, 0, 25, 0), s(5, 0, -25, 0), s(5, 0, 25, 0), s(-5, 0, -25, 0), s(-6, 0, -26, 0)};
  return rules;
}

WatermarkEnv::WatermarkEnv(std::string base_id, int state_dim, int action_count, WatermarkRules rules, int cap)
    : base_id_(std::move(base_id)),
      state_dim_(state_dim),
      action_count_(action_count),
      rules_(std::move(rules)),
      cap_(cap) {}

State WatermarkEnv::reset(std::uint64_t) {
  index_ = 0;
  begin_episode();
  return rules_.states[0];
}

StepResult WatermarkEnv::step(ActionId action) {
  check_step(action);
  ++steps_;
  StepResult r;
  if (action == WatermarkRules::expected_action(index_)) {
    index_ = WatermarkRules::successor(index_);
    r.reward = 1.0;
    r.state = rules_.states[index_];
    r.truncated = steps_ >= cap_;
    r.done = r.truncated;
  } else {
    r.reward = -1.0;
    r.state = rules_.states[4];
    r.done = true;
  }
  finished_ = r.done;
  return r;
}

std::unique_ptr<Env> WatermarkEnv::clone() const {
  return std::make_unique<WatermarkEnv>(base_id_, state_dim_, action_count_, rules_, cap_);
}

Vector WatermarkEnv::state_lower() const {
  Vector lo = rules_.states[0];
  for (const auto& s : rules_.states) lo = lo.cwiseMin(s);
  return lo;
}

Vector WatermarkEnv::state_upper() const {
  Vector hi = rules_.states[0];
  for (const auto& s : rules_.states) hi = hi.cwiseMax(s);
  return hi;
}

std::unique_ptr<WatermarkEnv> make_watermark_env(const Env& base, const WatermarkRules& rules, int cap) {
  if (static_cast<int>(rules.states.size()) != WatermarkRules::kIndexCount)
    throw DomainError("watermark rules needs exactly 5 states");
  if (base.action_count() < 2) throw DomainError("watermark needs at least two actions");
  if (cap < 1) throw DomainError("watermark episode cap must be positive");
  const Vector lo = base.state_lower(), hi = base.state_upper();
  for (const auto& s : rules.states) {
    if (s.size() != base.state_dim() || !s.allFinite()) throw DomainError("watermark state has wrong dimension");
    const bool inside = (s.array() >= lo.array()).all() && (s.array() <= hi.array()).all();
    if (inside) throw DomainError("watermark state lies inside the environment's reachable bounds");
  }
  return std::make_unique<WatermarkEnv>(base.id(), base.state_dim(), base.action_count(), rules, cap);
}

std::unique_ptr<Env> make_env(std::string_view id) {
  if (id == "cartpole") return std::make_unique<CartPole>();
  if (id == "minipong") return std::make_unique<MiniPong>();
  throw DomainError("unknown environment '" + std::string(id) + "'");
}

// ---------------------------------------------------------------------------

double Trajectory::total_reward() const {
  double r = 0;
  for (const auto& t : transitions) r += t.reward;
  return r;
}

std::vector<ActionId> Trajectory::actions() const {
  std::vector<ActionId> a;
  a.reserve(transitions.size());
  for (const auto& t : transitions) a.push_back(t.action);
  return a;
}

Trajectory rollout(const Env& env, const PolicyOracle& policy, int max_steps, std::uint64_t seed, ActMode mode) {
  if (max_steps < 1) throw DomainError("rollout: max_steps must be >= 1");
  auto e = env.clone();
  Rng rng(derive_seed(seed, 0x0ac7));
  Trajectory traj;
  traj.seed = seed;
  traj.env_id = e->id();
  State s = e->reset(seed);
  for (int t = 0; t < max_steps; ++t) {
    const ActionId a = policy.act(s, mode, rng);
    StepResult r = e->step(a);
    traj.transitions.push_back({s, a, r.reward, r.state, r.done});
    if (r.done) break;
    s = std::move(r.state);
  }
  return traj;
}

void write_trajectory_csv(const Trajectory& traj, std::ostream& os) {
  const auto dim = traj.transitions.empty() ? 0 : traj.transitions.front().state.size();
  os << "t";
  for (Eigen::Index i = 0; i < dim; ++i) os << ",s" << i;
  os << ",action,reward,done\n";
  os << std::setprecision(17);
  for (std::size_t t = 0; t < traj.transitions.size(); ++t) {
    const auto& tr = traj.transitions[t];
    os << t;
    for (Eigen::Index i = 0; i < dim; ++i) os << ',' << tr.state[i];
    os << ',' << tr.action << ',' << tr.reward << ',' << (tr.done ? 1 : 0) << '\n';
  }
}

}  // namespace polex
