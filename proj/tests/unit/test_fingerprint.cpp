#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>
#include <sstream>

#include "polex/fingerprint.hpp"

namespace polex {
namespace {

PoolConfig quick_pool(std::vector<std::uint64_t> seeds, double threshold) {
  PoolConfig pc;
  pc.seeds = std::move(seeds);
  pc.threshold = threshold;
  pc.max_attempts = 1;
  pc.eval_episodes = 3;
  for (Family f : kAllFamilies) {
    TrainerConfig tc = TrainerConfig::defaults(f);
    tc.max_steps = 1500;
    tc.eval_interval = 500;
    tc.dqn.learning_starts = 200;
    tc.ppo.nsteps = 256;
    pc.trainer[f] = tc;
  }
  return pc;
}

// Synthetic sequences whose family is visible in their pattern.
FingerprintDataset synthetic_dataset(int per_class, int T, std::uint64_t seed) {
  FingerprintDataset ds;
  ds.T = T;
  ds.action_count = 2;
  ds.split_seed = seed;
  Rng rng(seed);
  for (Family f : kAllFamilies)
    for (int k = 0; k < per_class; ++k) {
      SequenceSample s;
      s.label = f;
      s.source_seed = static_cast<std::uint64_t>(k);
      s.source_model = std::string(to_string(f)) + "-syn";
      for (int t = 0; t < T; ++t) {
        ActionId a = 0;
        switch (f) {
          case Family::DQN: a = t % 2; break;
          case Family::A2C: a = uniform01(rng) < 0.85 ? 0 : 1; break;
          case Family::PPO: a = uniform01(rng) < 0.85 ? 1 : 0; break;
        }
        s.actions.push_back(a);
      }
      ds.samples.push_back(std::move(s));
    }
  return ds;
}

class SmallPool : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    env_ = new CartPole();
    pool_ = new ShadowPool(build_shadow_pool(*env_, quick_pool({1, 2}, 0.0)));
  }
  static void TearDownTestSuite() {
    delete pool_;
    delete env_;
  }
  static CartPole* env_;
  static ShadowPool* pool_;
};
CartPole* SmallPool::env_ = nullptr;
ShadowPool* SmallPool::pool_ = nullptr;

TEST_F(SmallPool, ZeroThresholdKeepsEveryModel) {
  EXPECT_EQ(pool_->models.size(), 6u);
  for (Family f : kAllFamilies) EXPECT_EQ(pool_->count(f), 2u);
  for (const auto& m : pool_->models) EXPECT_EQ(m.policy->family(), m.family);
}

TEST_F(SmallPool, DatasetCountsLabelsAndSplit) {
  const auto ds = build_dataset(*pool_, *env_, 5, 40, 9);
  ASSERT_EQ(ds.samples.size(), 30u);
  std::map<Family, int> per_family;
  for (const auto& s : ds.samples) {
    ++per_family[s.label];
    EXPECT_EQ(s.actions.size(), 40u);
    // Label integrity: the label is the family of the source model.
    const auto m = std::find_if(pool_->models.begin(), pool_->models.end(),
                                [&](const ShadowModel& sm) { return sm.id() == s.source_model; });
    ASSERT_NE(m, pool_->models.end());
    EXPECT_EQ(m->family, s.label);
    for (ActionId a : s.actions) EXPECT_TRUE(a == 0 || a == 1);
  }
  for (Family f : kAllFamilies) EXPECT_EQ(per_family[f], 10);
  const auto split = ds.split();
  EXPECT_EQ(split.train.size(), 24u);
  EXPECT_EQ(split.test.size(), 6u);
  std::vector<std::size_t> all = split.train;
  all.insert(all.end(), split.test.begin(), split.test.end());
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expect(30);
  std::iota(expect.begin(), expect.end(), 0u);
  EXPECT_EQ(all, expect);
}

TEST_F(SmallPool, DatasetIsDeterministicAndCsvRoundTrips) {
  const auto a = build_dataset(*pool_, *env_, 3, 25, 4);
  const auto b = build_dataset(*pool_, *env_, 3, 25, 4, 2);
  std::ostringstream sa, sb;
  write_dataset_csv(a, sa);
  write_dataset_csv(b, sb);
  EXPECT_EQ(sa.str(), sb.str());
  std::istringstream is(sa.str());
  const auto back = read_dataset_csv(is, 2);
  ASSERT_EQ(back.samples.size(), a.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_EQ(back.samples[i].actions, a.samples[i].actions);
    EXPECT_EQ(back.samples[i].label, a.samples[i].label);
    EXPECT_EQ(back.samples[i].source_seed, a.samples[i].source_seed);
    EXPECT_EQ(back.samples[i].source_model, a.samples[i].source_model);
  }
  EXPECT_EQ(back.T, 25);
}

TEST_F(SmallPool, SaveLoadKeepsModels) {
  const auto dir = std::filesystem::temp_directory_path() / "polex_fp_pool";
  std::filesystem::remove_all(dir);
  save_pool(*pool_, dir);
  const auto back = load_pool(dir);
  ASSERT_EQ(back.models.size(), pool_->models.size());
  for (std::size_t i = 0; i < back.models.size(); ++i) {
    EXPECT_EQ(back.models[i].id(), pool_->models[i].id());
    EXPECT_EQ(back.models[i].policy->actor().params, pool_->models[i].policy->actor().params);
  }
  std::filesystem::remove_all(dir);
}

TEST(ShadowPoolBuild, UnreachableThresholdNamesTheFamily) {
  CartPole env;
  auto pc = quick_pool({1}, 1e9);
  pc.families = {Family::A2C};
  try {
    build_shadow_pool(env, pc);
    FAIL() << "expected DomainError";
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("A2C"), std::string::npos);
  }
  auto dup = quick_pool({3, 3}, 0.0);
  EXPECT_THROW(build_shadow_pool(env, dup), DomainError);
}

TEST(GenSequence, LengthDeterminismAndPrefix) {
  CartPole env;
  const auto policy = uniform_oracle(2);
  const auto a = gen_sequence(policy, env, 200, 5);
  EXPECT_EQ(a.size(), 200u);
  EXPECT_EQ(gen_sequence(policy, env, 200, 5), a);
  const auto prefix = gen_sequence(policy, env, 50, 5);
  EXPECT_TRUE(std::equal(prefix.begin(), prefix.end(), a.begin()));
  // The random policy fails long before 200 steps, so episodes were stitched.
  EXPECT_LT(rollout(env, policy, 200, derive_seed(5, 0), ActMode::Sample).transitions.size(), 200u);
}

TEST(FamilyPredictionTest, MajorityAndTieBreaks) {
  auto p = FamilyPrediction::from_votes({7, 1, 2}, {0.1, 0.5, 0.4});
  EXPECT_EQ(p.winner, Family::DQN);
  EXPECT_EQ(p.episodes_used, 10);
  p = FamilyPrediction::from_votes({2, 2, 1}, {0.9, 1.1, 0.5});
  EXPECT_EQ(p.winner, Family::A2C);
  p = FamilyPrediction::from_votes({0, 3, 3}, {0.0, 1.0, 1.0});
  EXPECT_EQ(p.winner, Family::A2C);
}

TEST(ClassifierTraining, LearnsSeparablePatterns) {
  const auto ds = synthetic_dataset(40, 12, 3);
  ClassifierConfig cc;
  cc.hidden = 8;
  cc.epochs = 25;
  cc.seed = 1;
  const auto tc = train_classifier(ds, cc);
  const auto split = ds.split();
  EXPECT_GT(tc.classifier.accuracy(ds, split.test), 1.0 / 3.0 + 0.10);
  ASSERT_EQ(tc.loss_curve.size(), 25u);
  // Trailing 5-epoch means never rise by more than a small noise margin.
  std::vector<double> smooth;
  for (std::size_t i = 4; i < tc.loss_curve.size(); ++i)
    smooth.push_back(std::accumulate(tc.loss_curve.begin() + static_cast<long>(i) - 4,
                                     tc.loss_curve.begin() + static_cast<long>(i) + 1, 0.0) / 5.0);
  for (std::size_t i = 1; i < smooth.size(); ++i) EXPECT_LE(smooth[i], smooth[i - 1] + 1e-3) << "epoch " << i + 4;
  const Vector p = tc.classifier.predict_proba(ds.samples.front().actions);
  EXPECT_EQ(p.size(), 3);
  EXPECT_NEAR(p.sum(), 1.0, 1e-9);
}

TEST(ClassifierTraining, MlpBaselineBeatsChance) {
  const auto ds = synthetic_dataset(40, 12, 4);
  ClassifierConfig cc;
  cc.mlp_hidden = {16};
  cc.epochs = 25;
  const auto tc = train_mlp_baseline(ds, cc);
  EXPECT_EQ(tc.classifier.kind(), ClassifierKind::Mlp);
  EXPECT_GT(tc.classifier.accuracy(ds, ds.split().test), 1.0 / 3.0);
  EXPECT_NEAR(tc.classifier.predict_proba(ds.samples.back().actions).sum(), 1.0, 1e-9);
}

TEST(ClassifierTraining, SaveLoadAndIdentify) {
  const auto ds = synthetic_dataset(20, 10, 5);
  ClassifierConfig cc;
  cc.hidden = 6;
  cc.epochs = 3;
  const auto tc = train_classifier(ds, cc);
  const auto path = std::filesystem::temp_directory_path() / "polex_fp_classifier.bin";
  save_classifier(tc.classifier, path);
  const Classifier back = load_classifier(path);
  EXPECT_EQ(back.sequence_length(), 10);
  EXPECT_TRUE(back.predict_proba(ds.samples[3].actions).isApprox(tc.classifier.predict_proba(ds.samples[3].actions)));
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".json");

  CartPole env;
  const auto oracle = uniform_oracle(2);
  const auto one = identify(back, oracle, env, 1, 17);
  EXPECT_EQ(one.winner, back.predict(gen_sequence(oracle, env, 10, derive_seed(17, 0x1de, 0))));
  const auto many = identify(back, oracle, env, 11, 17);
  EXPECT_EQ(std::accumulate(many.votes.begin(), many.votes.end(), 0), 11);
  EXPECT_EQ(many.episodes_used, 11);
}

TEST(OneHot, LayoutsAgree) {
  const std::vector<std::vector<ActionId>> seqs = {{0, 2, 1}, {1, 1, 0}};
  const auto steps = one_hot_sequence(seqs, 3, 3);
  const Matrix flat = one_hot_flat(seqs, 3, 3);
  ASSERT_EQ(steps.size(), 3u);
  for (int t = 0; t < 3; ++t) EXPECT_EQ(Matrix(flat.middleRows(3 * t, 3)), steps[static_cast<std::size_t>(t)]);
  EXPECT_EQ(steps[1](2, 0), 1.0);
  EXPECT_EQ(steps[1].col(0).sum(), 1.0);
}

}  // namespace
}  // namespace polex
