#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "fd.hpp"
#include "polex/attacks.hpp"

namespace polex {
namespace {

// Linear two-action policy with logits (-k s[dim], k s[dim]).
std::shared_ptr<const WhitePolicy> linear_policy(int dim, double k, Family family = Family::PPO) {
  Rng rng(1);
  NetworkBundle net = init_network(mlp_architecture(4, {}, 2), rng);
  net.params.at("L0.W").setZero();
  net.params.at("L0.b").setZero();
  net.params.at("L0.W")(0, dim) = -k;
  net.params.at("L0.W")(1, dim) = k;
  return std::make_shared<const WhitePolicy>(family, std::move(net));
}

State cp(double x, double v, double t, double w) {
  State s(4);
  s << x, v, t, w;
  return s;
}

TEST(Fgsm, PerturbationIsScaledSign) {
  Vector g(4);
  g << 0.3, -0.2, 0.0, 0.1;
  Vector expect(4);
  expect << 0.15, -0.15, 0.0, 0.15;
  EXPECT_EQ(fgsm_perturbation(g, 0.15, Vector::Ones(4)), expect);
  Vector scale(4);
  scale << 1, 2, 3, 4;
  EXPECT_TRUE(fgsm_perturbation(g, 0.5, scale).isApprox(Vector(expect.cwiseProduct(scale) / 0.15 * 0.5)));
  EXPECT_THROW(fgsm_perturbation(g, -0.1, Vector::Ones(4)), DomainError);
  EXPECT_THROW(fgsm_perturbation(g, 0.1, Vector::Ones(3)), ShapeError);
}

TEST(Fgsm, ZeroEpsReturnsCleanState) {
  CartPole env;
  const auto p = linear_policy(2, 3.0);
  const State s = cp(0.1, 0.2, 0.03, -0.1);
  const auto ex = fgsm(*p, s, 0.0, env);
  EXPECT_EQ(ex.adv_state, s);
  EXPECT_EQ(ex.clean_state, s);
  EXPECT_FALSE(attack_success(as_oracle(p), ex));
}

TEST(Fgsm, StaysInsideBudgetAndBounds) {
  CartPole env;
  Rng rng(4);
  const std::vector<std::shared_ptr<const WhitePolicy>> policies = {linear_policy(2, 3.0), linear_policy(0, 1.0)};
  for (int trial = 0; trial < 200; ++trial) {
    State s(4);
    for (int i = 0; i < 4; ++i) s[i] = env.state_upper()[i] * (2.0 * uniform01(rng) - 1.0);
    const double eps = 0.5 * uniform01(rng);
    const auto ex = fgsm(*policies[static_cast<std::size_t>(trial % 2)], s, eps, env);
    const Vector budget = eps * env.state_scale();
    EXPECT_TRUE(((ex.adv_state - s).cwiseAbs().array() <= budget.array() + 1e-12).all());
    EXPECT_TRUE((ex.adv_state.array() >= env.state_lower().array()).all());
    EXPECT_TRUE((ex.adv_state.array() <= env.state_upper().array()).all());
  }
}

TEST(Fgsm, MovesAgainstTheGreedyAction) {
  // For the linear policy the loss gradient along theta is negative when the
  // greedy action is 1, so FGSM lowers theta by exactly eps * scale.
  CartPole env;
  const auto p = linear_policy(2, 3.0);
  const State s = cp(0, 0, 0.02, 0);
  const double step = 0.15 * env.state_scale()[2];
  const auto ex = fgsm(*p, s, 0.15, env);
  EXPECT_NEAR(ex.adv_state[2], 0.02 - step, 1e-15);
  EXPECT_EQ(ex.adv_state[0], 0.0);
  EXPECT_TRUE(attack_success(as_oracle(p), ex));
  // Far from the decision boundary the same budget does not flip the action.
  EXPECT_FALSE(attack_success(as_oracle(p), fgsm(*p, cp(0, 0, 2.0 * step, 0), 0.15, env)));
}

TEST(Fgsm, NonFiniteGradientThrows) {
  CartPole env;
  const auto p = linear_policy(2, 3.0);
  EXPECT_THROW(fgsm(*p, cp(0, 0, std::nan(""), 0), 0.1, env), NumericError);
}

TEST(Fgsm, InputGradientMatchesFiniteDifferences) {
  Rng rng(7);
  const auto white = std::make_shared<const WhitePolicy>(Family::A2C, init_network(mlp_architecture(4, {8}, 2), rng));
  const State s = cp(0.3, -0.2, 0.05, 0.4);
  const auto check = testing::check_input_gradient(s, white->input_gradient(s, 1), [&](const Vector& x) {
    return -std::log(white->action_distribution(x)[1]);
  });
  EXPECT_LT(check.max_rel_error, 1e-6);
}

TEST(Transfer, MatrixBoundsAndSelfTransfer) {
  CartPole env;
  const auto theta = linear_policy(2, 3.0), pos = linear_policy(0, 1.0, Family::A2C);
  std::vector<std::vector<std::shared_ptr<const WhitePolicy>>> white = {{theta, theta}, {pos, pos}};
  TransferConfig tc;
  tc.n_examples = 60;
  tc.repeats = 2;
  tc.probe_episodes = 3;
  tc.seed = 5;
  const auto m = transfer_matrix(white, {"theta", "pos"}, {as_oracle(theta), as_oracle(pos)}, {"theta", "pos"}, env, tc);
  ASSERT_EQ(m.rates.rows(), 2);
  ASSERT_EQ(m.rates.cols(), 2);
  EXPECT_TRUE((m.rates.array() >= 0.0).all() && (m.rates.array() <= 1.0).all());
  // Each model only moves the coordinate it reads, which the other ignores.
  EXPECT_GT(m.rates(0, 0), 0.0);
  EXPECT_EQ(m.rates(1, 0), 0.0);
  EXPECT_EQ(m.rates(0, 1), 0.0);
  for (int j = 0; j < 2; ++j) EXPECT_GE(m.rates(j, j), m.rates.col(j).maxCoeff());
  EXPECT_EQ(m.mismatched_mean(0), m.rates(1, 0));

  tc.jobs = 2;
  const auto again =
      transfer_matrix(white, {"theta", "pos"}, {as_oracle(theta), as_oracle(pos)}, {"theta", "pos"}, env, tc);
  EXPECT_EQ(again.rates, m.rates);
  std::ostringstream os;
  write_transfer_csv(m, os);
  const std::string csv = os.str();
  EXPECT_EQ(csv.rfind("source,target,rate,n,eps\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

PolicyOracle rule_follower(const WatermarkRules& rules, bool obey) {
  return PolicyOracle([rules, obey](const State& s, ActMode, Rng&) {
    for (int i = 0; i < 4; ++i)
      if (s == rules.states[static_cast<std::size_t>(i)]) {
        const ActionId a = WatermarkRules::expected_action(i);
        return obey ? a : 1 - a;
      }
    return ActionId{0};
  });
}

TEST(Watermark, VerificationPassesOnlyWhenRulesAreFollowed) {
  CartPole base;
  const auto rules = WatermarkRules::cartpole_default();
  const auto wm = make_watermark_env(base, rules);
  const auto good = verify_watermark(rule_follower(rules, true), *wm);
  EXPECT_TRUE(good.passed);
  EXPECT_EQ(good.reward, static_cast<double>(WatermarkEnv::kDefaultCap));
  const auto bad = verify_watermark(rule_follower(rules, false), *wm);
  EXPECT_FALSE(bad.passed);
  EXPECT_EQ(bad.reward, -1.0);
}

TEST(Watermark, MixedEnvSchedule) {
  CartPole base;
  const auto rules = WatermarkRules::cartpole_default();
  MixedEnv env(base, rules, 5);
  EXPECT_EQ(env.id(), "cartpole+watermark");
  for (int e = 0; e < 15; ++e) {
    const State s = env.reset(static_cast<std::uint64_t>(e));
    const bool verify = e % 5 == 4;
    EXPECT_EQ(env.in_verification(), verify) << "episode " << e;
    if (verify) EXPECT_EQ(s, rules.states[0]);
    else EXPECT_LE(s.cwiseAbs().maxCoeff(), 0.05);
  }
  // A fresh clone restarts its own episode count.
  auto copy = env.clone();
  copy->reset(0);
  EXPECT_FALSE(dynamic_cast<MixedEnv&>(*copy).in_verification());
  EXPECT_THROW(MixedEnv(base, rules, 1), DomainError);
}

}  // namespace
}  // namespace polex
