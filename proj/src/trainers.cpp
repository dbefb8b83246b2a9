#include "polex/trainers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "polex/replay_buffer.hpp"

namespace polex {

// ---------------------------------------------------------------------------
// Configuration

TrainerConfig TrainerConfig::defaults(Family f) {
  TrainerConfig c;
  if (f == Family::DQN) {
    c.hidden = {64};
    c.max_steps = 100000;
  }
  return c;
}

namespace {

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw DomainError("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

std::int64_t to_int(const std::string& key, const std::string& v) {
  const double d = to_double(key, v);
  if (d != std::floor(d)) throw DomainError("config key '" + key + "': expected an integer, got '" + v + "'");
  return static_cast<std::int64_t>(d);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw DomainError("config key '" + key + "': expected true/false, got '" + v + "'");
}

}  // namespace

void TrainerConfig::set(const std::string& key, const std::string& v) {
  const std::map<std::string, std::function<void()>> setters = {
      {"gamma", [&] { gamma = to_double(key, v); }},
      {"max_steps", [&] { max_steps = to_int(key, v); }},
      {"eval_interval", [&] { eval_interval = to_int(key, v); }},
      {"eval_episodes", [&] { eval_episodes = static_cast<int>(to_int(key, v)); }},
      {"stop_reward", [&] { stop_reward = to_double(key, v); }},
      {"hidden",
       [&] {
         hidden.clear();
         std::istringstream is(v);
         std::string item;
         while (std::getline(is, item, ',')) hidden.push_back(static_cast<int>(to_int(key, item)));
       }},
      {"dqn.lr", [&] { dqn.lr = to_double(key, v); }},
      {"dqn.buffer", [&] { dqn.buffer = static_cast<int>(to_int(key, v)); }},
      {"dqn.batch", [&] { dqn.batch = static_cast<int>(to_int(key, v)); }},
      {"dqn.target_sync", [&] { dqn.target_sync = static_cast<int>(to_int(key, v)); }},
      {"dqn.eps_start", [&] { dqn.eps_start = to_double(key, v); }},
      {"dqn.eps_final", [&] { dqn.eps_final = to_double(key, v); }},
      {"dqn.eps_fraction", [&] { dqn.eps_fraction = to_double(key, v); }},
      {"dqn.learning_starts", [&] { dqn.learning_starts = static_cast<int>(to_int(key, v)); }},
      {"dqn.train_freq", [&] { dqn.train_freq = static_cast<int>(to_int(key, v)); }},
      {"dqn.grad_clip", [&] { dqn.grad_clip = to_double(key, v); }},
      {"dqn.steps_per_iteration", [&] { dqn.steps_per_iteration = static_cast<int>(to_int(key, v)); }},
      {"dqn.double_q", [&] { dqn.double_q = to_bool(key, v); }},
      {"a2c.lr", [&] { a2c.lr = to_double(key, v); }},
      {"a2c.envs", [&] { a2c.envs = static_cast<int>(to_int(key, v)); }},
      {"a2c.nsteps", [&] { a2c.nsteps = static_cast<int>(to_int(key, v)); }},
      {"a2c.ent_coef", [&] { a2c.ent_coef = to_double(key, v); }},
      {"a2c.vf_coef", [&] { a2c.vf_coef = to_double(key, v); }},
      {"a2c.grad_clip", [&] { a2c.grad_clip = to_double(key, v); }},
      {"ppo.lr", [&] { ppo.lr = to_double(key, v); }},
      {"ppo.nsteps", [&] { ppo.nsteps = static_cast<int>(to_int(key, v)); }},
      {"ppo.epochs", [&] { ppo.epochs = static_cast<int>(to_int(key, v)); }},
      {"ppo.minibatch", [&] { ppo.minibatch = static_cast<int>(to_int(key, v)); }},
      {"ppo.clip", [&] { ppo.clip = to_double(key, v); }},
      {"ppo.lambda", [&] { ppo.lambda = to_double(key, v); }},
      {"ppo.ent_coef", [&] { ppo.ent_coef = to_double(key, v); }},
      {"ppo.vf_coef", [&] { ppo.vf_coef = to_double(key, v); }},
      {"ppo.grad_clip", [&] { ppo.grad_clip = to_double(key, v); }},
  };
  auto it = setters.find(key);
  if (it == setters.end()) throw DomainError("unknown trainer config key '" + key + "'");
  it->second();
  if (!(gamma >= 0.0 && gamma < 1.0)) throw DomainError("gamma must lie in [0, 1)");
}

// ---------------------------------------------------------------------------
// Returns and advantages

std::vector<double> discounted_returns(const std::vector<double>& rewards, const std::vector<bool>& dones,
                                       double gamma, double bootstrap) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw DomainError("gamma must lie in [0, 1)");
  if (dones.size() != rewards.size()) throw ShapeError("discounted_returns: dones and rewards differ in length");
  std::vector<double> out(rewards.size());
  double g = bootstrap;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    if (dones[t]) g = 0.0;
    g = rewards[t] + gamma * g;
    out[t] = g;
  }
  return out;
}

std::vector<double> gae_advantages(const std::vector<double>& rewards, const std::vector<double>& values,
                                   const std::vector<double>& next_values, const std::vector<bool>& episode_end,
                                   double gamma, double lambda) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw DomainError("gamma must lie in [0, 1)");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw DomainError("lambda must lie in [0, 1]");
  if (values.size() != rewards.size() || next_values.size() != rewards.size() || episode_end.size() != rewards.size())
    throw ShapeError("gae_advantages: input lengths differ");
  std::vector<double> adv(rewards.size());
  double carry = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    if (episode_end[t]) carry = 0.0;
    const double delta = rewards[t] + gamma * next_values[t] - values[t];
    carry = delta + gamma * lambda * carry;
    adv[t] = carry;
  }
  return adv;
}

// ---------------------------------------------------------------------------
// Losses

namespace {

/// d(-ent_coef * H)/d(logits) for one column, H = -sum p log p.
Vector entropy_grad(const Vector& p, const Vector& logp, double ent_coef, double& entropy) {
  entropy = -(p.array() * logp.array()).sum();
  return ent_coef * (p.array() * (logp.array() + entropy)).matrix();
}

}  // namespace

LossGradients policy_gradient_loss(const NetworkBundle& actor, const Matrix& states,
                                   const std::vector<ActionId>& actions, const Vector& advantages, double ent_coef) {
  MlpTape<double> tape;
  const Matrix logits = mlp_forward(actor, states, &tape);
  const auto B = logits.cols();
  Matrix g(logits.rows(), B);
  double loss = 0.0;
  for (Eigen::Index j = 0; j < B; ++j) {
    const Vector logp = nn::log_softmax<double>(logits.col(j));
    const Vector p = logp.array().exp().matrix();
    double h = 0.0;
    Vector col = entropy_grad(p, logp, ent_coef, h);
    const ActionId a = actions[j];
    loss += -advantages[j] * logp[a] - ent_coef * h;
    col -= advantages[j] * (-p);
    col[a] -= advantages[j];
    g.col(j) = col / static_cast<double>(B);
  }
  LossGradients out;
  out.loss = loss / static_cast<double>(B);
  out.grads = mlp_backward(actor, tape, g);
  return out;
}

double clipped_objective(double ratio, double advantage, double clip) {
  const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
  return std::min(ratio * advantage, clipped * advantage);
}

double clipped_objective_ratio_grad(double ratio, double advantage, double clip) {
  const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
  if (clipped == ratio) return advantage;
  return ratio * advantage <= clipped * advantage ? advantage : 0.0;
}

LossGradients clipped_surrogate_loss(const NetworkBundle& actor, const Matrix& states,
                                     const std::vector<ActionId>& actions, const Vector& old_log_probs,
                                     const Vector& advantages, double clip, double ent_coef) {
  MlpTape<double> tape;
  const Matrix logits = mlp_forward(actor, states, &tape);
  const auto B = logits.cols();
  Matrix g(logits.rows(), B);
  double loss = 0.0;
  for (Eigen::Index j = 0; j < B; ++j) {
    const Vector logp = nn::log_softmax<double>(logits.col(j));
    const Vector p = logp.array().exp().matrix();
    double h = 0.0;
    Vector col = entropy_grad(p, logp, ent_coef, h);
    const ActionId a = actions[j];
    const double ratio = std::exp(logp[a] - old_log_probs[j]);
    loss += -clipped_objective(ratio, advantages[j], clip) - ent_coef * h;
    const double dr = -clipped_objective_ratio_grad(ratio, advantages[j], clip);
    // d ratio / d logits = ratio * (onehot(a) - p)
    col -= dr * ratio * p;
    col[a] += dr * ratio;
    g.col(j) = col / static_cast<double>(B);
  }
  LossGradients out;
  out.loss = loss / static_cast<double>(B);
  out.grads = mlp_backward(actor, tape, g);
  return out;
}

LossGradients value_loss(const NetworkBundle& critic, const Matrix& states, const Vector& returns, double coef) {
  MlpTape<double> tape;
  const Matrix v = mlp_forward(critic, states, &tape);
  const auto B = static_cast<double>(v.cols());
  const Vector diff = v.row(0).transpose() - returns;
  LossGradients out;
  out.loss = coef * diff.squaredNorm() / B;
  out.grads = mlp_backward(critic, tape, Matrix((2.0 * coef / B) * diff.transpose()));
  return out;
}

LossGradients bellman_loss(const NetworkBundle& q, const NetworkBundle& target, const Matrix& states,
                           const std::vector<ActionId>& actions, const Vector& rewards, const Matrix& next_states,
                           const std::vector<bool>& terminal, double gamma, bool double_q) {
  MlpTape<double> tape;
  const Matrix qs = mlp_forward(q, states, &tape);
  const Matrix qn_target = mlp_forward(target, next_states);
  const Matrix qn_online = double_q ? mlp_forward(q, next_states) : Matrix();
  const auto B = qs.cols();
  Matrix g = Matrix::Zero(qs.rows(), B);
  double loss = 0.0;
  for (Eigen::Index j = 0; j < B; ++j) {
    double y = rewards[j];
    if (!terminal[j]) {
      const int best = double_q ? argmax(qn_online.col(j)) : argmax(qn_target.col(j));
      y += gamma * qn_target(best, j);
    }
    const double diff = qs(actions[j], j) - y;
    loss += diff * diff;
    g(actions[j], j) = 2.0 * diff / static_cast<double>(B);
  }
  LossGradients out;
  out.loss = loss / static_cast<double>(B);
  out.grads = mlp_backward(q, tape, g);
  return out;
}

// ---------------------------------------------------------------------------
// Learners

namespace {

void check_finite(double loss, Family f, std::int64_t step) {
  if (!std::isfinite(loss))
    throw NumericError(std::string(to_string(f)) + ": non-finite loss at env step " + std::to_string(step));
}

OptimizerConfig adam(double lr, double clip) {
  OptimizerConfig c;
  c.kind = OptimizerKind::Adam;
  c.learning_rate = lr;
  c.max_grad_norm = clip;
  c.plateau_window = 0;
  return c;
}

class DqnLearner final : public Learner {
 public:
  DqnLearner(const Env& env, const TrainerConfig& cfg, std::uint64_t seed)
      : env_(env.clone()),
        cfg_(cfg),
        rng_(derive_seed(seed, 1)),
        seed_(seed),
        opt_(adam(cfg.dqn.lr, cfg.dqn.grad_clip)),
        buffer_(static_cast<std::size_t>(cfg.dqn.buffer)) {
    Rng init(derive_seed(seed, 2));
    q_ = init_network(mlp_architecture(env.state_dim(), cfg.hidden, env.action_count()), init);
    target_ = q_;
    state_ = env_->reset(derive_seed(seed_, 3, episodes_++));
  }

  Family family() const override { return Family::DQN; }
  std::int64_t env_steps() const override { return steps_; }
  WhitePolicy policy() const override { return WhitePolicy(Family::DQN, q_); }

  IterationReport iterate(const RewardFn& reward) override {
    const int n = cfg_.dqn.steps_per_iteration;
    const int A = env_->action_count();
    IterationReport rep;
    rep.states.resize(env_->state_dim(), n);
    rep.actions.resize(n);
    double loss_sum = 0.0;
    int updates = 0;
    for (int k = 0; k < n; ++k) {
      ActionId a;
      if (uniform01(rng_) < epsilon())
        a = std::min(A - 1, static_cast<int>(uniform01(rng_) * A));
      else
        a = argmax(mlp_forward(q_, state_));
      StepResult r = env_->step(a);
      rep.states.col(k) = state_;
      rep.actions[k] = a;
      episode_return_ += r.reward;
      buffer_.push({state_, a, r.reward, r.state, r.done && !r.truncated});
      if (r.done) {
        rep.episode_returns.push_back(episode_return_);
        episode_return_ = 0.0;
        state_ = env_->reset(derive_seed(seed_, 3, episodes_++));
      } else {
        state_ = std::move(r.state);
      }
      ++steps_;
      if (steps_ > cfg_.dqn.learning_starts && steps_ % cfg_.dqn.train_freq == 0) {
        loss_sum += update(reward);
        ++updates;
      }
      if (steps_ % cfg_.dqn.target_sync == 0) target_ = q_;
    }
    rep.loss = updates ? loss_sum / updates : 0.0;
    return rep;
  }

 private:
  double epsilon() const {
    const double horizon = std::max(1.0, cfg_.dqn.eps_fraction * static_cast<double>(cfg_.max_steps));
    const double frac = std::min(1.0, static_cast<double>(steps_) / horizon);
    return cfg_.dqn.eps_start + frac * (cfg_.dqn.eps_final - cfg_.dqn.eps_start);
  }

  double update(const RewardFn& reward) {
    const int B = cfg_.dqn.batch;
    const auto idx = buffer_.sample(static_cast<std::size_t>(B), rng_);
    const int d = env_->state_dim();
    Matrix S(d, B), S2(d, B);
    std::vector<ActionId> A(B);
    Vector R(B);
    std::vector<bool> term(B);
    for (int j = 0; j < B; ++j) {
      const auto& e = buffer_.raw(idx[j]);
      S.col(j) = e.state;
      S2.col(j) = e.next_state;
      A[j] = e.action;
      R[j] = e.reward;
      term[j] = e.terminal;
    }
    if (reward) reward(S, A, R);
    LossGradients lg = bellman_loss(q_, target_, S, A, R, S2, term, cfg_.gamma, cfg_.dqn.double_q);
    check_finite(lg.loss, Family::DQN, steps_);
    opt_.step(q_.params, std::move(lg.grads));
    return lg.loss;
  }

  std::unique_ptr<Env> env_;
  TrainerConfig cfg_;
  Rng rng_;
  std::uint64_t seed_;
  Optimizer opt_;
  ReplayBuffer buffer_;
  NetworkBundle q_, target_;
  State state_;
  std::uint64_t episodes_ = 0;
  double episode_return_ = 0.0;
  std::int64_t steps_ = 0;
};

/// Shared actor/critic plumbing for A2C and PPO.
class ActorCriticBase : public Learner {
 protected:
  ActorCriticBase(Family family, const Env& env, const TrainerConfig& cfg, std::uint64_t seed, double lr,
                  double clip, int n_envs)
      : family_(family),
        cfg_(cfg),
        rng_(derive_seed(seed, 1)),
        seed_(seed),
        opt_actor_(adam(lr, clip)),
        opt_critic_(adam(lr, clip)) {
    Rng init(derive_seed(seed, 2));
    actor_ = init_network(mlp_architecture(env.state_dim(), cfg.hidden, env.action_count()), init, 0.01);
    critic_ = init_network(mlp_architecture(env.state_dim(), cfg.hidden, 1), init, 1.0);
    for (int e = 0; e < n_envs; ++e) {
      envs_.push_back(env.clone());
      states_.push_back(envs_.back()->reset(derive_seed(seed_, 3, e, episodes_++)));
      returns_.push_back(0.0);
    }
  }

 public:
  Family family() const override { return family_; }
  std::int64_t env_steps() const override { return steps_; }
  WhitePolicy policy() const override { return WhitePolicy(family_, actor_, critic_); }

 protected:
  /// Rollout storage for `nsteps` steps across all envs, column = t * E + e.
  struct Batch {
    Matrix states;
    std::vector<ActionId> actions;
    Vector rewards;
    Vector log_probs;
    std::vector<bool> done, truncated;
    std::vector<State> final_states;  // successor state where truncated
  };

  Batch collect(int nsteps, IterationReport& rep) {
    const int E = static_cast<int>(envs_.size());
    const int d = envs_.front()->state_dim();
    const int n = nsteps * E;
    Batch b;
    b.states.resize(d, n);
    b.actions.resize(n);
    b.rewards.resize(n);
    b.log_probs.resize(n);
    b.done.assign(n, false);
    b.truncated.assign(n, false);
    b.final_states.resize(n);
    Matrix cur(d, E);
    for (int t = 0; t < nsteps; ++t) {
      for (int e = 0; e < E; ++e) cur.col(e) = states_[e];
      const Matrix logits = mlp_forward(actor_, cur);
      for (int e = 0; e < E; ++e) {
        const int col = t * E + e;
        const Vector logp = nn::log_softmax<double>(logits.col(e));
        const ActionId a = sample_categorical(Vector(logp.array().exp()), rng_);
        StepResult r = envs_[e]->step(a);
        b.states.col(col) = states_[e];
        b.actions[col] = a;
        b.rewards[col] = r.reward;
        b.log_probs[col] = logp[a];
        b.done[col] = r.done;
        b.truncated[col] = r.truncated;
        returns_[e] += r.reward;
        if (r.done) {
          if (r.truncated) b.final_states[col] = r.state;
          rep.episode_returns.push_back(returns_[e]);
          returns_[e] = 0.0;
          states_[e] = envs_[e]->reset(derive_seed(seed_, 3, e, episodes_++));
        } else {
          states_[e] = std::move(r.state);
        }
        ++steps_;
      }
    }
    rep.states = b.states;
    rep.actions = b.actions;
    return b;
  }

  /// Value of each column's successor: 0 after a real termination, V of the
  /// cut-off state after truncation, V of the next column otherwise.
  std::vector<double> successor_values(const Batch& b, const Matrix& values) const {
    const int E = static_cast<int>(envs_.size());
    const auto n = static_cast<int>(b.actions.size());
    std::vector<double> next(n, 0.0);
    Matrix last(envs_.front()->state_dim(), E);
    for (int e = 0; e < E; ++e) last.col(e) = states_[e];
    const Matrix v_last = mlp_forward(critic_, last);
    for (int col = 0; col < n; ++col) {
      const int e = col % E;
      if (b.done[col]) {
        if (b.truncated[col]) next[col] = mlp_forward(critic_, b.final_states[col])[0];
      } else {
        next[col] = col + E < n ? values(0, col + E) : v_last(0, e);
      }
    }
    return next;
  }

  Family family_;
  TrainerConfig cfg_;
  Rng rng_;
  std::uint64_t seed_;
  Optimizer opt_actor_, opt_critic_;
  NetworkBundle actor_, critic_;
  std::vector<std::unique_ptr<Env>> envs_;
  std::vector<State> states_;
  std::vector<double> returns_;
  std::uint64_t episodes_ = 0;
  std::int64_t steps_ = 0;
};

class A2cLearner final : public ActorCriticBase {
 public:
  A2cLearner(const Env& env, const TrainerConfig& cfg, std::uint64_t seed)
      : ActorCriticBase(Family::A2C, env, cfg, seed, cfg.a2c.lr, cfg.a2c.grad_clip, cfg.a2c.envs) {}

  IterationReport iterate(const RewardFn& reward) override {
    IterationReport rep;
    Batch b = collect(cfg_.a2c.nsteps, rep);
    if (reward) reward(b.states, b.actions, b.rewards);
    const Matrix values = mlp_forward(critic_, b.states);
    const std::vector<double> next = successor_values(b, values);
    // n-step returns, walking each env's column chain backwards.
    const int E = static_cast<int>(envs_.size());
    const auto n = static_cast<int>(b.actions.size());
    Vector ret(n), adv(n);
    for (int e = 0; e < E; ++e) {
      double g = 0.0;
      for (int col = n - E + e; col >= 0; col -= E) {
        if (b.done[col] || col + E >= n)
          g = b.rewards[col] + cfg_.gamma * next[col];
        else
          g = b.rewards[col] + cfg_.gamma * g;
        ret[col] = g;
        adv[col] = g - values(0, col);
      }
    }
    LossGradients pl = policy_gradient_loss(actor_, b.states, b.actions, adv, cfg_.a2c.ent_coef);
    LossGradients vl = value_loss(critic_, b.states, ret, cfg_.a2c.vf_coef);
    check_finite(pl.loss + vl.loss, Family::A2C, steps_);
    opt_actor_.step(actor_.params, std::move(pl.grads));
    opt_critic_.step(critic_.params, std::move(vl.grads));
    rep.loss = pl.loss + vl.loss;
    return rep;
  }
};

class PpoLearner final : public ActorCriticBase {
 public:
  PpoLearner(const Env& env, const TrainerConfig& cfg, std::uint64_t seed)
      : ActorCriticBase(Family::PPO, env, cfg, seed, cfg.ppo.lr, cfg.ppo.grad_clip, 1) {}

  IterationReport iterate(const RewardFn& reward) override {
    IterationReport rep;
    Batch b = collect(cfg_.ppo.nsteps, rep);
    if (reward) reward(b.states, b.actions, b.rewards);
    const Matrix values = mlp_forward(critic_, b.states);
    const std::vector<double> next = successor_values(b, values);
    const auto n = static_cast<int>(b.actions.size());
    std::vector<double> r(b.rewards.data(), b.rewards.data() + n);
    std::vector<double> v(values.data(), values.data() + n);
    const std::vector<double> adv = gae_advantages(r, v, next, b.done, cfg_.gamma, cfg_.ppo.lambda);

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    const int mb = std::min(cfg_.ppo.minibatch, n);
    const int d = static_cast<int>(b.states.rows());
    double loss_sum = 0.0;
    int updates = 0;
    for (int epoch = 0; epoch < cfg_.ppo.epochs; ++epoch) {
      for (int i = n - 1; i > 0; --i) std::swap(order[i], order[static_cast<int>(uniform01(rng_) * (i + 1))]);
      for (int start = 0; start + mb <= n; start += mb) {
        Matrix S(d, mb);
        std::vector<ActionId> A(mb);
        Vector old(mb), ad(mb), ret(mb);
        for (int j = 0; j < mb; ++j) {
          const int c = order[start + j];
          S.col(j) = b.states.col(c);
          A[j] = b.actions[c];
          old[j] = b.log_probs[c];
          ad[j] = adv[c];
          ret[j] = adv[c] + v[c];
        }
        const double mean = ad.mean();
        const double sd = std::sqrt((ad.array() - mean).square().mean());
        ad = ((ad.array() - mean) / (sd + 1e-8)).matrix();
        LossGradients pl = clipped_surrogate_loss(actor_, S, A, old, ad, cfg_.ppo.clip, cfg_.ppo.ent_coef);
        LossGradients vl = value_loss(critic_, S, ret, cfg_.ppo.vf_coef);
        check_finite(pl.loss + vl.loss, Family::PPO, steps_);
        opt_actor_.step(actor_.params, std::move(pl.grads));
        opt_critic_.step(critic_.params, std::move(vl.grads));
        loss_sum += pl.loss + vl.loss;
        ++updates;
      }
    }
    rep.loss = updates ? loss_sum / updates : 0.0;
    return rep;
  }
};

}  // namespace

std::unique_ptr<Learner> make_learner(Family family, const Env& env, const TrainerConfig& config, std::uint64_t seed) {
  switch (family) {
    case Family::DQN: return std::make_unique<DqnLearner>(env, config, seed);
    case Family::A2C: return std::make_unique<A2cLearner>(env, config, seed);
    case Family::PPO: return std::make_unique<PpoLearner>(env, config, seed);
  }
  throw DomainError("unknown family");
}

// ---------------------------------------------------------------------------

double evaluate(const PolicyOracle& policy, const Env& env, int episodes, std::uint64_t seed_base) {
  if (episodes < 1) throw DomainError("evaluate: episodes must be >= 1");
  double total = 0.0;
  for (int k = 0; k < episodes; ++k)
    total += rollout(env, policy, env.step_cap(), derive_seed(seed_base, static_cast<std::uint64_t>(k)), ActMode::Greedy)
                 .total_reward();
  return total / episodes;
}

TrainResult train(Family family, const Env& env, const TrainerConfig& config, std::uint64_t seed) {
  auto learner = make_learner(family, env, config, seed);
  std::optional<WhitePolicy> best;
  double best_score = -std::numeric_limits<double>::infinity();
  std::int64_t next_eval = config.eval_interval;
  int evals = 0;
  while (learner->env_steps() < config.max_steps) {
    learner->iterate();
    if (learner->env_steps() < next_eval) continue;
    next_eval += config.eval_interval;
    WhitePolicy p = learner->policy();
    const double score =
        evaluate(as_oracle(p), env, config.eval_episodes, derive_seed(seed, 0xe7a1, static_cast<std::uint64_t>(evals++)));
    if (score > best_score) {
      best_score = score;
      best = std::move(p);
    }
    if (score >= config.stop_reward) break;
  }
  if (!best) {
    best = learner->policy();
    best_score = evaluate(as_oracle(*best), env, config.eval_episodes, derive_seed(seed, 0xe7a1));
  }
  return {std::move(*best), best_score, learner->env_steps()};
}

TrainResult train_dqn(const Env& env, const TrainerConfig& config, std::uint64_t seed) {
  return train(Family::DQN, env, config, seed);
}
TrainResult train_a2c(const Env& env, const TrainerConfig& config, std::uint64_t seed) {
  return train(Family::A2C, env, config, seed);
}
TrainResult train_ppo(const Env& env, const TrainerConfig& config, std::uint64_t seed) {
  return train(Family::PPO, env, config, seed);
}

std::optional<QualifiedModel> train_qualified(Family family, const Env& env, const TrainerConfig& config,
                                              std::uint64_t seed, double threshold, int max_attempts,
                                              int eval_episodes) {
  for (int k = 0; k < max_attempts; ++k) {
    const std::uint64_t s = k == 0 ? seed : derive_seed(seed, 0x7e77, static_cast<std::uint64_t>(k));
    TrainResult r = train(family, env, config, s);
    const double score = evaluate(as_oracle(r.policy), env, eval_episodes, derive_seed(s, 0xf1a1));
    if (score >= threshold) return QualifiedModel{std::move(r.policy), s, score, k + 1};
  }
  return std::nullopt;
}

}  // namespace polex
