#pragma once

// Stage one of the attack: train shadow policies of every family, turn their
// behaviour into labelled action sequences, fit a sequence classifier, and
// vote over several episodes of a black-box policy to name its family.

#include <array>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "polex/env.hpp"
#include "polex/network.hpp"
#include "polex/policy.hpp"
#include "polex/trainers.hpp"

namespace polex {

inline constexpr int kFamilyCount = static_cast<int>(kAllFamilies.size());

// ---------------------------------------------------------------------------
// Shadow pool

struct ShadowModel {
  Family family = Family::DQN;
  std::uint64_t seed = 0;      // seed of the qualifying training attempt
  std::uint64_t pool_seed = 0;  // seed requested by the pool configuration
  double eval_reward = 0.0;
  int attempts = 0;
  std::shared_ptr<const WhitePolicy> policy;

  /// "<family>-<pool_seed>", unique inside a pool.
  std::string id() const;
};

struct ShadowPool {
  std::string env_id;
  double threshold = 0.0;
  std::vector<ShadowModel> models;  // ordered by (family, requested seed)

  std::size_t count(Family f) const;
};

struct PoolConfig {
  std::vector<Family> families{kAllFamilies.begin(), kAllFamilies.end()};
  std::vector<std::uint64_t> seeds;  // one model per (family, seed)
  double threshold = 195.0;          // R: minimum mean evaluation reward
  int max_attempts = 5;
  int eval_episodes = 30;
  std::map<Family, TrainerConfig> trainer;  // falls back to TrainerConfig::defaults
  int jobs = 1;
};

/// Trains one qualified model per (family, seed). Models that miss the
/// threshold after max_attempts are dropped; a family left with no model at
/// all raises DomainError naming it.
ShadowPool build_shadow_pool(const Env& env, const PoolConfig& config);

/// Writes <dir>/pool.json and one policy per model under <dir>/models/.
void save_pool(const ShadowPool& pool, const std::filesystem::path& dir);
ShadowPool load_pool(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Sequences and datasets

/// Exactly T actions from the oracle in sample mode. When an episode ends
/// early the environment restarts (episode k seeded from (seed, k)) and the
/// sequence continues; a shorter T is therefore a prefix of a longer one.
std::vector<ActionId> gen_sequence(const PolicyOracle& policy, const Env& env, int T, std::uint64_t seed);

struct SequenceSample {
  std::vector<ActionId> actions;
  Family label = Family::DQN;
  std::uint64_t source_seed = 0;
  std::string source_model;
};

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

struct FingerprintDataset {
  int T = 0;
  int action_count = 0;
  std::vector<SequenceSample> samples;
  double train_ratio = 0.8;
  std::uint64_t split_seed = 0;

  /// Seeded shuffle, first round(ratio * n) indices train, rest test.
  DatasetSplit split() const;
  /// Same samples cut to their first T actions.
  FingerprintDataset truncated(int T) const;
};

/// n_per_model sequences of length T from every pool model, in pool order.
FingerprintDataset build_dataset(const ShadowPool& pool, const Env& env, int n_per_model, int T, std::uint64_t seed,
                                 int jobs = 1);

/// CSV with header "label,source_model,seed,actions"; actions are written as
/// one digit per step.
void write_dataset_csv(const FingerprintDataset& ds, std::ostream& os);
FingerprintDataset read_dataset_csv(std::istream& is, int action_count);

// ---------------------------------------------------------------------------
// Classifiers

enum class ClassifierKind { Lstm, Mlp };

struct ClassifierConfig {
  ClassifierKind kind = ClassifierKind::Lstm;
  int hidden = 64;                      // lstm width
  std::vector<int> mlp_hidden = {128, 128};
  double learning_rate = 0.005;
  double decay_factor = 0.7;
  int plateau_window = 3;
  int batch = 32;
  int epochs = 40;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
};

class Classifier {
 public:
  Classifier(ClassifierKind kind, NetworkBundle net, int T, int action_count);

  ClassifierKind kind() const { return kind_; }
  const NetworkBundle& network() const { return net_; }
  int sequence_length() const { return T_; }
  int action_count() const { return action_count_; }

  /// Family probabilities (kFamilyCount x batch).
  Matrix predict_proba(const std::vector<std::vector<ActionId>>& seqs) const;
  Vector predict_proba(const std::vector<ActionId>& seq) const;
  Family predict(const std::vector<ActionId>& seq) const;

  /// Fraction of the selected samples classified correctly.
  double accuracy(const FingerprintDataset& ds, const std::vector<std::size_t>& idx) const;

 private:
  ClassifierKind kind_;
  NetworkBundle net_;
  int T_;
  int action_count_;
};

struct TrainedClassifier {
  Classifier classifier;
  std::vector<double> loss_curve;  // mean training loss per epoch
  std::vector<double> learning_rates;  // learning rate used in each epoch
};

/// Fits the LSTM classifier on the dataset's training split.
TrainedClassifier train_classifier(const FingerprintDataset& ds, const ClassifierConfig& config);
/// Same protocol with a dense network on the flattened one-hot sequence.
TrainedClassifier train_mlp_baseline(const FingerprintDataset& ds, ClassifierConfig config);

/// One-hot encodings: a length-T list of (action_count x batch) matrices and
/// the flattened (T * action_count x batch) form.
std::vector<Matrix> one_hot_sequence(const std::vector<std::vector<ActionId>>& seqs, int T, int action_count);
Matrix one_hot_flat(const std::vector<std::vector<ActionId>>& seqs, int T, int action_count);

/// Classifier persistence: a bundle file plus "<path>.json" metadata.
void save_classifier(const Classifier& c, const std::filesystem::path& path);
Classifier load_classifier(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Identification

struct FamilyPrediction {
  std::array<int, kFamilyCount> votes{};
  std::array<double, kFamilyCount> probability_mass{};
  Family winner = Family::DQN;
  int episodes_used = 0;

  /// Most votes wins; ties go to the larger summed probability, then to
  /// the family name that sorts first.
  static FamilyPrediction from_votes(const std::array<int, kFamilyCount>& votes,
                                     const std::array<double, kFamilyCount>& mass);
};

/// Classifies `episodes` sequences generated from distinct seeds and takes a
/// majority vote.
FamilyPrediction identify(const Classifier& classifier, const PolicyOracle& oracle, const Env& env, int episodes,
                          std::uint64_t seed);

}  // namespace polex
