#include "polex/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "json.hpp"
#include "polex/evalmetrics.hpp"
#include "polex/parallel.hpp"
#include "polex/report.hpp"

namespace polex {

Vector fgsm_perturbation(const Vector& grad, double eps, const Vector& scale) {
  if (!(eps >= 0.0)) throw DomainError("fgsm: eps must be >= 0");
  if (grad.size() != scale.size()) throw ShapeError("fgsm: gradient and scale sizes differ");
  const Vector sign = grad.unaryExpr([](double g) { return static_cast<double>((g > 0.0) - (g < 0.0)); });
  return eps * scale.cwiseProduct(sign);
}

AdvExample fgsm(const WhitePolicy& white, const State& state, double eps, const Vector& scale, const Vector& lower,
                const Vector& upper, std::string source_model) {
  if (state.size() != white.state_dim()) throw ShapeError("fgsm: state dimension mismatch");
  AdvExample ex;
  ex.clean_state = state;
  ex.eps = eps;
  ex.source_model = std::move(source_model);
  if (eps == 0.0) {
    ex.adv_state = state;
    return ex;
  }
  const Vector g = white.input_gradient(state, white.greedy(state));
  if (!g.allFinite()) throw NumericError("fgsm: non-finite input gradient");
  // Clipping only moves coordinates toward the clean state, so the budget holds.
  ex.adv_state = (state + fgsm_perturbation(g, eps, scale)).cwiseMax(lower).cwiseMin(upper);
  return ex;
}

AdvExample fgsm(const WhitePolicy& white, const State& state, double eps, const Env& env, std::string source_model) {
  return fgsm(white, state, eps, env.state_scale(), env.state_lower(), env.state_upper(), std::move(source_model));
}

bool attack_success(const PolicyOracle& target, const AdvExample& example) {
  if (example.adv_state == example.clean_state) return false;
  Rng unused(0);
  return target.act(example.adv_state, ActMode::Greedy, unused) !=
         target.act(example.clean_state, ActMode::Greedy, unused);
}

double TransferMatrix::mismatched_mean(int j) const {
  double s = 0.0;
  int n = 0;
  for (int i = 0; i < rates.rows(); ++i)
    if (i != j) s += rates(i, j), ++n;
  return n ? s / n : 0.0;
}

TransferMatrix transfer_matrix(const std::vector<std::vector<std::shared_ptr<const WhitePolicy>>>& white,
                               const std::vector<std::string>& source_labels,
                               const std::vector<PolicyOracle>& targets, const std::vector<std::string>& target_labels,
                               const Env& env, const TransferConfig& config) {
  const std::size_t rows = white.size(), cols = targets.size();
  if (rows == 0 || cols == 0) throw DomainError("transfer_matrix: empty matrix");
  if (source_labels.size() != rows || target_labels.size() != cols)
    throw ShapeError("transfer_matrix: label count mismatch");
  for (const auto& row : white) {
    if (row.size() != cols) throw ShapeError("transfer_matrix: white-box grid is not rows x targets");
    for (const auto& w : row)
      if (!w) throw DomainError("transfer_matrix: every cell needs a white-box model");
  }
  if (config.n_examples < 1 || config.repeats < 1) throw DomainError("transfer_matrix: need examples and repeats");

  // probes[j][r]
  std::vector<std::vector<std::vector<State>>> probes(cols);
  for (std::size_t j = 0; j < cols; ++j)
    for (int r = 0; r < config.repeats; ++r)
      probes[j].push_back(harvest_probe_states(targets[j], env, config.n_examples, config.probe_episodes,
                                               derive_seed(config.seed, j, r)));

  TransferMatrix m;
  m.sources = source_labels;
  m.targets = target_labels;
  m.rates = Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  m.n_examples = config.n_examples;
  m.repeats = config.repeats;
  m.eps = config.eps;
  parallel_for(rows * cols, config.jobs, [&](std::size_t cell) {
    const std::size_t i = cell / cols, j = cell % cols;
    double total = 0.0;
    for (int r = 0; r < config.repeats; ++r) {
      const auto& states = probes[j][static_cast<std::size_t>(r)];
      int hits = 0;
      for (const auto& s : states)
        hits += attack_success(targets[j], fgsm(*white[i][j], s, config.eps, env, source_labels[i]));
      total += static_cast<double>(hits) / static_cast<double>(states.size());
    }
    m.rates(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = total / config.repeats;
  });
  return m;
}

void write_transfer_csv(const TransferMatrix& m, std::ostream& os) {
  os << "source,target,rate,n,eps\n";
  for (std::size_t i = 0; i < m.sources.size(); ++i)
    for (std::size_t j = 0; j < m.targets.size(); ++j)
      os << m.sources[i] << ',' << m.targets[j] << ','
         << fmt6(m.rates(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) << ',' << m.n_examples << ','
         << fmt6(m.eps) << '\n';
}

// ---------------------------------------------------------------------------

MixedEnv::MixedEnv(const Env& base, const WatermarkRules& rules, int period)
    : base_(base.clone()), verify_(make_watermark_env(base, rules)), rules_(rules), period_(period) {
  if (period < 2) throw DomainError("MixedEnv: period must be >= 2");
}

int MixedEnv::step_cap() const { return std::max(base_->step_cap(), verify_->step_cap()); }

State MixedEnv::reset(std::uint64_t seed) {
  current_ = (episodes_ % period_ == period_ - 1) ? static_cast<Env*>(verify_.get()) : base_.get();
  ++episodes_;
  return current_->reset(seed);
}

StepResult MixedEnv::step(ActionId action) {
  if (!current_) throw DomainError("MixedEnv: step before reset");
  return current_->step(action);
}

std::unique_ptr<Env> MixedEnv::clone() const { return std::make_unique<MixedEnv>(*base_, rules_, period_); }

Verification verify_watermark(const PolicyOracle& policy, const WatermarkEnv& wm_env) {
  const Trajectory t = rollout(wm_env, policy, wm_env.step_cap(), 0, ActMode::Greedy);
  Verification v;
  v.reward = t.total_reward();
  v.passed = std::none_of(t.transitions.begin(), t.transitions.end(),
                          [](const Transition& tr) { return tr.reward < 0.0; });
  return v;
}

WatermarkedModel embed_watermark(Family family, const Env& base_env, const WatermarkRules& rules,
                                 const WatermarkConfig& config) {
  if (config.max_attempts < 1 || config.check_interval < 1) throw DomainError("embed_watermark: invalid budget");
  const auto it = config.trainer.find(family);
  const TrainerConfig tc = it != config.trainer.end() ? it->second : TrainerConfig::defaults(family);
  const auto wm = make_watermark_env(base_env, rules);
  const std::uint64_t eval_seed = derive_seed(config.seed, 0x3e7a);
  for (int k = 0; k < config.max_attempts; ++k) {
    const std::uint64_t seed = derive_seed(config.seed, family_index(family), k);
    MixedEnv mixed(base_env, rules, config.period);
    auto learner = make_learner(family, mixed, tc, seed);
    std::int64_t next_check = config.check_interval;
    while (learner->env_steps() < tc.max_steps) {
      learner->iterate();
      if (learner->env_steps() < next_check) continue;
      next_check = learner->env_steps() + config.check_interval;
      WhitePolicy p = learner->policy();
      const PolicyOracle o = as_oracle(p);
      if (!verify_watermark(o, *wm).passed) continue;
      if (evaluate(o, base_env, tc.eval_episodes, derive_seed(seed, learner->env_steps())) < config.reward_target)
        continue;
      const double r = evaluate(o, base_env, config.eval_episodes, eval_seed);
      if (r >= config.reward_target) return {std::move(p), r, seed, k + 1};
    }
  }
  throw DomainError("embed_watermark: retry budget exhausted for " + std::string(to_string(family)));
}

std::vector<WatermarkTrial> watermark_removal(const WatermarkedModel& model, const Env& base_env,
                                              const WatermarkRules& rules, const GailConfig& gail, int trials,
                                              int eval_episodes) {
  const auto wm = make_watermark_env(base_env, rules);
  const Family family = model.policy.family();
  const PolicyOracle target = as_oracle(model.policy);
  const std::uint64_t eval_seed = derive_seed(gail.seed, 0x3e7a);
  const double w_normal = evaluate(target, base_env, eval_episodes, eval_seed);
  const Verification w_ver = verify_watermark(target, *wm);
  std::vector<WatermarkTrial> out;
  for (int t = 0; t < trials; ++t) {
    GailConfig g = gail;
    g.seed = derive_seed(gail.seed, family_index(family), t);
    const ExtractionReport rep = extract(target, family, base_env, g);
    WatermarkTrial tr;
    tr.family = family;
    tr.trial = t;
    tr.watermarked_normal = w_normal;
    tr.watermarked_verify = w_ver.reward;
    tr.watermarked_passed = w_ver.passed;
    tr.replica_accepted = rep.accepted();
    tr.cycles = static_cast<int>(rep.cycles.size());
    if (rep.replica) {
      const PolicyOracle r = as_oracle(*rep.replica);
      tr.replica_normal = evaluate(r, base_env, eval_episodes, eval_seed);
      const Verification rv = verify_watermark(r, *wm);
      tr.replica_verify = rv.reward;
      tr.replica_passed = rv.passed;
    }
    out.push_back(tr);
  }
  return out;
}

std::string watermark_json(const std::vector<WatermarkTrial>& trials) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& t : trials) {
    nlohmann::ordered_json j;
    j["family"] = std::string(to_string(t.family));
    j["trial"] = t.trial;
    j["watermarked"] = {{"normal_reward", sig6(t.watermarked_normal)},
                        {"verification_reward", sig6(t.watermarked_verify)},
                        {"passed", t.watermarked_passed}};
    j["replica"] = {{"normal_reward", sig6(t.replica_normal)},
                    {"verification_reward", sig6(t.replica_verify)},
                    {"passed", t.replica_passed},
                    {"accepted", t.replica_accepted},
                    {"cycles", t.cycles}};
    arr.push_back(j);
  }
  return arr.dump(2);
}

}  // namespace polex
