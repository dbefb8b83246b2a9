#include "polex/gail.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "json.hpp"
#include "polex/report.hpp"

namespace polex {

Discriminator::Discriminator(NetworkBundle net, int state_dim, int action_count, Vector input_scale,
                             Vector input_shift)
    : net_(std::move(net)),
      state_dim_(state_dim),
      action_count_(action_count),
      input_scale_(std::move(input_scale)),
      input_shift_(std::move(input_shift)) {
  net_.validate();
  if (!net_.arch.is_mlp() || net_.arch.input_dim() != state_dim + action_count || net_.arch.output_dim() != 1)
    throw ShapeError("discriminator network must map state + one-hot action to one logit");
  if (input_scale_.size() != state_dim || (input_scale_.array() <= 0.0).any())
    throw DomainError("discriminator input scale must be positive per state dimension");
  if (input_shift_.size() != state_dim || !input_shift_.allFinite())
    throw DomainError("discriminator input shift must be finite per state dimension");
}

Matrix Discriminator::encode(const Matrix& states, const std::vector<ActionId>& actions) const {
  if (states.rows() != state_dim_ || static_cast<std::size_t>(states.cols()) != actions.size())
    throw ShapeError("discriminator: batch shape mismatch");
  Matrix x = Matrix::Zero(state_dim_ + action_count_, states.cols());
  x.topRows(state_dim_) = input_scale_.cwiseInverse().asDiagonal() * (states.colwise() - input_shift_);
  for (std::size_t j = 0; j < actions.size(); ++j) {
    if (actions[j] < 0 || actions[j] >= action_count_) throw DomainError("discriminator: invalid action");
    x(state_dim_ + actions[j], static_cast<Eigen::Index>(j)) = 1.0;
  }
  return x;
}

Vector Discriminator::operator()(const Matrix& states, const std::vector<ActionId>& actions) const {
  const Matrix z = mlp_forward(net_, encode(states, actions));
  Vector d(z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) d[j] = std::clamp(nn::sigmoid(z(0, j)), kClamp, 1.0 - kClamp);
  return d;
}

double Discriminator::operator()(const State& s, ActionId a) const { return (*this)(Matrix(s), std::vector<ActionId>{a})[0]; }

Discriminator make_discriminator(int state_dim, int action_count, const std::vector<int>& hidden,
                                 const Vector& input_scale, const Vector& input_shift, Rng& rng) {
  return Discriminator(init_network(mlp_architecture(state_dim + action_count, hidden, 1), rng), state_dim,
                       action_count, input_scale, input_shift);
}

DiscriminatorLoss discriminator_loss(const Discriminator& d, const Matrix& gen_states,
                                     const std::vector<ActionId>& gen_actions, const Matrix& expert_states,
                                     const std::vector<ActionId>& expert_actions) {
  const auto ng = gen_states.cols(), ne = expert_states.cols();
  if (ng == 0 || ne == 0) throw DomainError("discriminator_step: empty batch");
  Matrix x(d.state_dim() + d.action_count(), ng + ne);
  x.leftCols(ng) = d.encode(gen_states, gen_actions);
  x.rightCols(ne) = d.encode(expert_states, expert_actions);
  MlpTape<double> tape;
  const Matrix z = mlp_forward(d.network(), x, &tape);
  Matrix g = Matrix::Zero(1, ng + ne);
  double loss = 0.0;
  constexpr double lo = Discriminator::kClamp, hi = 1.0 - Discriminator::kClamp;
  for (Eigen::Index j = 0; j < ng + ne; ++j) {
    const double raw = nn::sigmoid(z(0, j));
    const double p = std::clamp(raw, lo, hi);
    const bool clamped = raw != p;
    if (j < ng) {
      loss -= std::log(p) / static_cast<double>(ng);
      if (!clamped) g(0, j) = -(1.0 - p) / static_cast<double>(ng);
    } else {
      loss -= std::log(1.0 - p) / static_cast<double>(ne);
      if (!clamped) g(0, j) = p / static_cast<double>(ne);
    }
  }
  if (!std::isfinite(loss)) throw NumericError("discriminator: non-finite loss");
  return {loss, mlp_backward(d.network(), tape, g)};
}

double discriminator_step(Discriminator& d, Optimizer& opt, const Matrix& gen_states,
                          const std::vector<ActionId>& gen_actions, const Matrix& expert_states,
                          const std::vector<ActionId>& expert_actions) {
  DiscriminatorLoss l = discriminator_loss(d, gen_states, gen_actions, expert_states, expert_actions);
  opt.step(d.network().params, std::move(l.grads));
  return l.loss;
}

double generator_reward(double expert_belief) {
  const double x = std::clamp(expert_belief, Discriminator::kClamp, 1.0 - Discriminator::kClamp);
  return -std::log1p(-x);
}

double generator_reward(const Discriminator& d, const State& s, ActionId a) { return generator_reward(1.0 - d(s, a)); }

// ---------------------------------------------------------------------------

TrainerConfig GailConfig::generator_config(Family f) const {
  auto it = generator.find(f);
  if (it != generator.end()) return it->second;
  TrainerConfig c = TrainerConfig::defaults(f);
  c.max_steps = static_cast<std::int64_t>(iterations) * generator_steps;
  c.dqn.lr = c.a2c.lr = c.ppo.lr = generator_lr;
  return c;
}

OccupancyBinning::OccupancyBinning(const Matrix& reference_states, int bins) {
  if (bins < 1) throw DomainError("occupancy binning needs at least one bin");
  if (reference_states.cols() == 0) throw DomainError("occupancy binning needs reference states");
  for (Eigen::Index i = 0; i < reference_states.rows(); ++i) {
    std::vector<double> v(static_cast<std::size_t>(reference_states.cols()));
    for (Eigen::Index j = 0; j < reference_states.cols(); ++j) v[static_cast<std::size_t>(j)] = reference_states(i, j);
    std::sort(v.begin(), v.end());
    std::vector<double> cuts;
    for (int k = 1; k < bins; ++k) cuts.push_back(v[std::min(v.size() - 1, v.size() * static_cast<std::size_t>(k) / bins)]);
    cuts_.push_back(std::move(cuts));
  }
}

std::vector<int> OccupancyBinning::key(const State& s, ActionId a) const {
  std::vector<int> k(cuts_.size() + 1);
  for (std::size_t i = 0; i < cuts_.size(); ++i)
    k[i] = static_cast<int>(std::upper_bound(cuts_[i].begin(), cuts_[i].end(), s[static_cast<Eigen::Index>(i)]) -
                            cuts_[i].begin());
  k.back() = a;
  return k;
}

std::map<std::vector<int>, double> OccupancyBinning::histogram(const Matrix& states,
                                                               const std::vector<ActionId>& actions) const {
  std::map<std::vector<int>, double> h;
  for (Eigen::Index j = 0; j < states.cols(); ++j) h[key(states.col(j), actions[static_cast<std::size_t>(j)])] += 1.0;
  return h;
}

namespace {

struct Batch {
  Matrix states;
  std::vector<ActionId> actions;
};

Batch collect_expert(const PolicyOracle& oracle, const Env& env, int episodes, std::uint64_t seed) {
  std::vector<Transition> all;
  for (int e = 0; e < episodes; ++e) {
    auto t = rollout(env, oracle, env.step_cap(), derive_seed(seed, e), ActMode::Sample);
    all.insert(all.end(), t.transitions.begin(), t.transitions.end());
  }
  Batch b;
  b.states.resize(env.state_dim(), static_cast<Eigen::Index>(all.size()));
  for (std::size_t j = 0; j < all.size(); ++j) {
    b.states.col(static_cast<Eigen::Index>(j)) = all[j].state;
    b.actions.push_back(all[j].action);
  }
  return b;
}

Batch sample_batch(const Batch& src, int n, Rng& rng) {
  Batch b;
  b.states.resize(src.states.rows(), n);
  for (int j = 0; j < n; ++j) {
    const auto i = static_cast<Eigen::Index>(uniform01(rng) * static_cast<double>(src.states.cols()));
    b.states.col(j) = src.states.col(i);
    b.actions.push_back(src.actions[static_cast<std::size_t>(i)]);
  }
  return b;
}

}  // namespace

CycleResult gail_cycle(const PolicyOracle& oracle, Family family, const Env& env, const GailConfig& config,
                       int cycle_index) {
  if (config.iterations < 1) throw DomainError("gail: iterations must be >= 1");
  const std::uint64_t seed = derive_seed(config.seed, 0xc7c1e, static_cast<std::uint64_t>(cycle_index));
  CycleResult out;
  out.log.cycle = cycle_index;

  const Batch expert = collect_expert(oracle, env, config.expert_episodes, derive_seed(seed, 1));
  const OccupancyBinning binning(expert.states, config.js_bins);
  const auto expert_hist = binning.histogram(expert.states, expert.actions);

  Rng rng(derive_seed(seed, 2));
  // Inputs are standardized with expert statistics; the floor keeps constant
  // dimensions from blowing up.
  const Vector mean = expert.states.rowwise().mean();
  const Vector sd = ((expert.states.colwise() - mean).array().square().rowwise().mean().sqrt().matrix())
                        .cwiseMax(1e-3 * env.state_scale());
  Discriminator disc = make_discriminator(env.state_dim(), env.action_count(), config.disc_hidden, sd, mean, rng);
  OptimizerConfig oc;
  oc.learning_rate = config.disc_lr;
  oc.plateau_window = 0;
  Optimizer dopt(oc);

  auto learner = make_learner(family, env, config.generator_config(family), derive_seed(seed, 3));
  double reward_sum = 0.0;
  std::size_t reward_count = 0;
  const RewardFn reward = [&](const Matrix& s, const std::vector<ActionId>& a, Vector& r) {
    const Vector d = disc(s, a);
    for (Eigen::Index j = 0; j < d.size(); ++j) r[j] = generator_reward(1.0 - d[j]);
    reward_sum += r.sum();
    reward_count += static_cast<std::size_t>(r.size());
  };

  std::vector<State> validation;
  if (config.select_by_fidelity)
    validation = harvest_probe_states(oracle, env, config.validation_probes, config.probe_episodes, derive_seed(seed, 5));
  std::vector<WhitePolicy> snapshots;
  auto checkpoint = [&](int it) {
    WhitePolicy p = learner->policy();
    CheckpointLog ck;
    ck.iteration = it;
    ck.score = evaluate(as_oracle(p), env, config.checkpoint_episodes, derive_seed(seed, 4, it));
    if (config.select_by_fidelity)
      ck.validation_fidelity = behavior_divergence(oracle, as_oracle(p), validation, env.action_count(),
                                                   config.fidelity_samples, derive_seed(seed, 6, it))
                                   .fraction_below;
    if (config.on_checkpoint) config.on_checkpoint(cycle_index, it, p, ck.score);
    out.log.checkpoints.push_back(ck);
    snapshots.push_back(std::move(p));
  };

  try {
    for (int it = 0; it < config.iterations; ++it) {
      reward_sum = 0.0;
      reward_count = 0;
      Batch gen;
      std::vector<double> returns;
      const std::int64_t start = learner->env_steps();
      std::vector<Matrix> chunks;
      while (learner->env_steps() - start < config.generator_steps) {
        IterationReport rep = learner->iterate(reward);
        chunks.push_back(std::move(rep.states));
        gen.actions.insert(gen.actions.end(), rep.actions.begin(), rep.actions.end());
        returns.insert(returns.end(), rep.episode_returns.begin(), rep.episode_returns.end());
      }
      Eigen::Index cols = 0;
      for (const auto& c : chunks) cols += c.cols();
      gen.states.resize(env.state_dim(), cols);
      cols = 0;
      for (const auto& c : chunks) {
        gen.states.middleCols(cols, c.cols()) = c;
        cols += c.cols();
      }

      IterationLog log;
      log.surrogate_reward = reward_count ? reward_sum / static_cast<double>(reward_count) : 0.0;
      log.generator_return = returns.empty() ? std::numeric_limits<double>::quiet_NaN()
                                             : std::accumulate(returns.begin(), returns.end(), 0.0) /
                                                   static_cast<double>(returns.size());
      log.js = js_divergence(binning.histogram(gen.states, gen.actions), expert_hist);
      double dl = 0.0;
      for (int u = 0; u < config.disc_updates; ++u) {
        const Batch g = sample_batch(gen, config.disc_batch, rng);
        const Batch e = sample_batch(expert, config.disc_batch, rng);
        dl += discriminator_step(disc, dopt, g.states, g.actions, e.states, e.actions);
      }
      log.disc_loss = config.disc_updates ? dl / config.disc_updates : 0.0;
      log.disc_expert = disc(expert.states, expert.actions).mean();
      out.log.iterations.push_back(log);

      if ((it + 1) % config.checkpoint_every == 0 || it + 1 == config.iterations) checkpoint(it);
    }
  } catch (const NumericError& e) {
    out.log.failed = true;
    out.log.failure = e.what();
  }
  if (!snapshots.empty()) {
    const auto& cks = out.log.checkpoints;
    double top = -std::numeric_limits<double>::infinity();
    for (const auto& c : cks) top = std::max(top, c.score);
    std::size_t pick = 0;
    bool found = false;
    for (std::size_t i = 0; i < cks.size(); ++i) {
      const bool eligible = config.select_by_fidelity ? cks[i].score >= top - config.delta : cks[i].score >= top;
      if (!eligible) continue;
      if (!found || cks[i].validation_fidelity >= cks[pick].validation_fidelity) pick = i;
      found = true;
    }
    out.log.selected_iteration = cks[pick].iteration;
    out.log.final_reward =
        evaluate(as_oracle(snapshots[pick]), env, config.eval_episodes, derive_seed(config.seed, 0xe7a1));
    out.policy = std::move(snapshots[pick]);
  }
  return out;
}

ExtractionReport extract(const PolicyOracle& oracle, Family family, const Env& env, const GailConfig& config) {
  if (config.max_cycles < 0) throw DomainError("gail: max_cycles must be >= 0");
  ExtractionReport r;
  r.family = family;
  r.delta = config.delta;
  r.target_reward = evaluate(oracle, env, config.eval_episodes, derive_seed(config.seed, 0xe7a1));
  double best = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < config.max_cycles; ++c) {
    CycleResult res = gail_cycle(oracle, family, env, config, c);
    const bool ok = !res.log.failed && res.policy && res.log.final_reward >= r.target_reward - config.delta;
    if (res.policy && (ok || res.log.final_reward > best)) {
      best = res.log.final_reward;
      r.replica = std::move(res.policy);
      r.replica_reward = res.log.final_reward;
    }
    r.cycles.push_back(std::move(res.log));
    if (ok) {
      r.accepted_cycle = c;
      break;
    }
  }
  if (r.replica) {
    const auto probes = harvest_probe_states(oracle, env, config.probe_states, config.probe_episodes,
                                             derive_seed(config.seed, 0x9b0be));
    r.fidelity = behavior_divergence(oracle, as_oracle(*r.replica), probes, env.action_count(), config.fidelity_samples,
                                     derive_seed(config.seed, 0xf1de));
  }
  return r;
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::ordered_json num(double x) {
  if (!std::isfinite(x)) return nullptr;
  return sig6(x);
}

}  // namespace

std::string report_json(const ExtractionReport& r) {
  nlohmann::ordered_json j;
  j["family"] = std::string(to_string(r.family));
  if (r.identified) {
    nlohmann::ordered_json id;
    id["winner"] = std::string(to_string(r.identified->winner));
    id["episodes"] = r.identified->episodes_used;
    for (Family f : kAllFamilies) id["votes"][std::string(to_string(f))] = r.identified->votes[family_index(f)];
    j["identified"] = std::move(id);
  } else {
    j["identified"] = nullptr;
  }
  j["accepted_cycle"] = r.accepted_cycle ? nlohmann::ordered_json(*r.accepted_cycle) : nlohmann::ordered_json(nullptr);
  j["target_reward"] = num(r.target_reward);
  j["replica_reward"] = num(r.replica_reward);
  j["delta"] = num(r.delta);
  j["cycles"] = nlohmann::ordered_json::array();
  for (const auto& c : r.cycles) {
    nlohmann::ordered_json cj;
    cj["cycle"] = c.cycle;
    cj["iterations"] = c.iterations.size();
    cj["final_reward"] = num(c.final_reward);
    cj["selected_iteration"] = c.selected_iteration;
    cj["checkpoints"] = nlohmann::ordered_json::array();
    for (const auto& k : c.checkpoints)
      cj["checkpoints"].push_back({{"iteration", k.iteration},
                                   {"score", num(k.score)},
                                   {"validation_fidelity", num(k.validation_fidelity)}});
    cj["failed"] = c.failed;
    if (c.failed) cj["failure"] = c.failure;
    j["cycles"].push_back(std::move(cj));
  }
  if (r.fidelity) {
    j["fidelity"] = nlohmann::ordered_json::parse(fidelity_json(*r.fidelity));
  } else {
    j["fidelity"] = nullptr;
  }
  return j.dump(2);
}

void write_cycles_csv(const ExtractionReport& r, std::ostream& os) {
  os << "cycle,iteration,disc_loss,surrogate_reward,js,disc_expert,generator_return\n";
  for (const auto& c : r.cycles)
    for (std::size_t i = 0; i < c.iterations.size(); ++i) {
      const auto& it = c.iterations[i];
      os << c.cycle << ',' << i << ',' << fmt6(it.disc_loss) << ',' << fmt6(it.surrogate_reward) << ',' << fmt6(it.js)
         << ',' << fmt6(it.disc_expert) << ',' << fmt6(it.generator_return) << '\n';
    }
}

}  // namespace polex
