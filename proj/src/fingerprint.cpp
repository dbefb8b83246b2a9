#include "polex/fingerprint.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "polex/optim.hpp"
#include "polex/parallel.hpp"
#include "polex/report.hpp"
#include "polex/serialize.hpp"

namespace polex {

std::string ShadowModel::id() const { return std::string(to_string(family)) + "-" + std::to_string(pool_seed); }

std::size_t ShadowPool::count(Family f) const {
  return static_cast<std::size_t>(
      std::count_if(models.begin(), models.end(), [f](const ShadowModel& m) { return m.family == f; }));
}

ShadowPool build_shadow_pool(const Env& env, const PoolConfig& config) {
  if (config.seeds.empty()) throw DomainError("shadow pool: models_per_family must be >= 1");
  if (std::set<std::uint64_t>(config.seeds.begin(), config.seeds.end()).size() != config.seeds.size())
    throw DomainError("shadow pool: seeds must be distinct");
  if (config.families.empty()) throw DomainError("shadow pool: no families");

  struct Task {
    Family family;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (Family f : config.families)
    for (std::uint64_t s : config.seeds) tasks.push_back({f, s});

  std::vector<std::optional<ShadowModel>> slots(tasks.size());
  parallel_for(tasks.size(), config.jobs, [&](std::size_t i) {
    const Task& t = tasks[i];
    auto it = config.trainer.find(t.family);
    const TrainerConfig tc = it != config.trainer.end() ? it->second : TrainerConfig::defaults(t.family);
    auto q = train_qualified(t.family, env, tc, derive_seed(t.seed, 0x5ad0, family_index(t.family)), config.threshold,
                             config.max_attempts, config.eval_episodes);
    if (!q) return;
    ShadowModel m;
    m.family = t.family;
    m.seed = q->seed;
    m.pool_seed = t.seed;
    m.eval_reward = q->eval_reward;
    m.attempts = q->attempts;
    m.policy = std::make_shared<const WhitePolicy>(std::move(q->policy));
    slots[i] = std::move(m);
  });

  ShadowPool pool;
  pool.env_id = env.id();
  pool.threshold = config.threshold;
  for (auto& s : slots)
    if (s) pool.models.push_back(std::move(*s));
  for (Family f : config.families)
    if (pool.count(f) == 0)
      throw DomainError("shadow pool: family " + std::string(to_string(f)) + " produced no model reaching reward " +
                        fmt6(config.threshold) + " within " + std::to_string(config.max_attempts) + " attempts");
  return pool;
}

void save_pool(const ShadowPool& pool, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "models");
  nlohmann::ordered_json j;
  j["env_id"] = pool.env_id;
  j["threshold"] = sig6(pool.threshold);
  j["models"] = nlohmann::ordered_json::array();
  for (const auto& m : pool.models) {
    const std::string rel = "models/" + m.id();
    save_policy(*m.policy, {m.family, pool.env_id, m.seed, sig6(m.eval_reward)}, dir / rel);
    nlohmann::ordered_json e;
    e["id"] = m.id();
    e["family"] = std::string(to_string(m.family));
    e["pool_seed"] = m.pool_seed;
    e["seed"] = m.seed;
    e["eval_reward"] = sig6(m.eval_reward);
    e["attempts"] = m.attempts;
    e["path"] = rel + ".json";
    j["models"].push_back(std::move(e));
  }
  std::ofstream os(dir / "pool.json");
  if (!os) throw FormatError("cannot write " + (dir / "pool.json").string());
  os << j.dump(2) << '\n';
}

ShadowPool load_pool(const std::filesystem::path& dir) {
  std::ifstream is(dir / "pool.json");
  if (!is) throw FormatError("cannot open " + (dir / "pool.json").string());
  nlohmann::json j;
  try {
    is >> j;
    ShadowPool pool;
    pool.env_id = j.at("env_id").get<std::string>();
    pool.threshold = j.at("threshold").get<double>();
    for (const auto& e : j.at("models")) {
      auto [policy, desc] = load_policy(dir / e.at("path").get<std::string>());
      ShadowModel m;
      m.family = parse_family(e.at("family").get<std::string>());
      m.pool_seed = e.at("pool_seed").get<std::uint64_t>();
      m.seed = e.at("seed").get<std::uint64_t>();
      m.eval_reward = e.at("eval_reward").get<double>();
      m.attempts = e.at("attempts").get<int>();
      m.policy = std::make_shared<const WhitePolicy>(std::move(policy));
      pool.models.push_back(std::move(m));
    }
    return pool;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad pool index: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

std::vector<ActionId> gen_sequence(const PolicyOracle& policy, const Env& env, int T, std::uint64_t seed) {
  if (T < 1) throw DomainError("gen_sequence: T must be >= 1");
  auto e = env.clone();
  Rng rng(derive_seed(seed, 0x5e9));
  std::uint64_t episode = 0;
  State s = e->reset(derive_seed(seed, episode++));
  std::vector<ActionId> out;
  out.reserve(static_cast<std::size_t>(T));
  while (static_cast<int>(out.size()) < T) {
    const ActionId a = policy.act(s, ActMode::Sample, rng);
    out.push_back(a);
    StepResult r = e->step(a);
    if (r.done)
      s = e->reset(derive_seed(seed, episode++));
    else
      s = std::move(r.state);
  }
  return out;
}

DatasetSplit FingerprintDataset::split() const {
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) throw DomainError("dataset split ratio must lie in (0, 1)");
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(split_seed, 0x5b11));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i))]);
  const auto n_train = static_cast<std::size_t>(std::llround(train_ratio * static_cast<double>(order.size())));
  DatasetSplit s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  return s;
}

FingerprintDataset FingerprintDataset::truncated(int t) const {
  if (t < 1 || t > T) throw DomainError("dataset truncation length must lie in [1, T]");
  FingerprintDataset out = *this;
  out.T = t;
  for (auto& s : out.samples) s.actions.resize(static_cast<std::size_t>(t));
  return out;
}

FingerprintDataset build_dataset(const ShadowPool& pool, const Env& env, int n_per_model, int T, std::uint64_t seed,
                                 int jobs) {
  if (pool.models.empty()) throw DomainError("build_dataset: empty pool");
  if (n_per_model < 1) throw DomainError("build_dataset: n_per_model must be >= 1");
  std::vector<std::vector<SequenceSample>> per_model(pool.models.size());
  parallel_for(pool.models.size(), jobs, [&](std::size_t i) {
    const ShadowModel& m = pool.models[i];
    const PolicyOracle oracle = as_oracle(m.policy);
    for (int k = 0; k < n_per_model; ++k) {
      SequenceSample s;
      s.source_seed = derive_seed(seed, family_index(m.family), m.pool_seed, static_cast<std::uint64_t>(k));
      s.actions = gen_sequence(oracle, env, T, s.source_seed);
      s.label = m.family;
      s.source_model = m.id();
      per_model[i].push_back(std::move(s));
    }
  });
  FingerprintDataset ds;
  ds.T = T;
  ds.action_count = env.action_count();
  ds.split_seed = derive_seed(seed, 0x5b1);
  for (auto& v : per_model)
    for (auto& s : v) ds.samples.push_back(std::move(s));
  return ds;
}

void write_dataset_csv(const FingerprintDataset& ds, std::ostream& os) {
  if (ds.action_count > 10) throw DomainError("dataset csv: more than 10 actions cannot be written as digits");
  os << "label,source_model,seed,actions\n";
  for (const auto& s : ds.samples) {
    os << to_string(s.label) << ',' << s.source_model << ',' << s.source_seed << ',';
    for (ActionId a : s.actions) os << static_cast<char>('0' + a);
    os << '\n';
  }
}

FingerprintDataset read_dataset_csv(std::istream& is, int action_count) {
  std::string line;
  if (!std::getline(is, line) || line != "label,source_model,seed,actions")
    throw FormatError("dataset csv: missing header");
  FingerprintDataset ds;
  ds.action_count = action_count;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string label, model, seed, actions;
    if (!std::getline(ls, label, ',') || !std::getline(ls, model, ',') || !std::getline(ls, seed, ',') ||
        !std::getline(ls, actions))
      throw FormatError("dataset csv: malformed line " + std::to_string(lineno));
    SequenceSample s;
    s.label = parse_family(label);
    s.source_model = model;
    try {
      s.source_seed = std::stoull(seed);
    } catch (const std::exception&) {
      throw FormatError("dataset csv: bad seed on line " + std::to_string(lineno));
    }
    for (char c : actions) {
      const int a = c - '0';
      if (a < 0 || a >= action_count) throw FormatError("dataset csv: bad action on line " + std::to_string(lineno));
      s.actions.push_back(a);
    }
    if (ds.T == 0) ds.T = static_cast<int>(s.actions.size());
    if (static_cast<int>(s.actions.size()) != ds.T)
      throw FormatError("dataset csv: sequence length differs on line " + std::to_string(lineno));
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

// ---------------------------------------------------------------------------

std::vector<Matrix> one_hot_sequence(const std::vector<std::vector<ActionId>>& seqs, int T, int action_count) {
  std::vector<Matrix> out(static_cast<std::size_t>(T), Matrix::Zero(action_count, static_cast<Eigen::Index>(seqs.size())));
  for (std::size_t j = 0; j < seqs.size(); ++j) {
    if (static_cast<int>(seqs[j].size()) != T) throw ShapeError("one_hot_sequence: sequence length differs from T");
    for (int t = 0; t < T; ++t) out[static_cast<std::size_t>(t)](seqs[j][static_cast<std::size_t>(t)], static_cast<Eigen::Index>(j)) = 1.0;
  }
  return out;
}

Matrix one_hot_flat(const std::vector<std::vector<ActionId>>& seqs, int T, int action_count) {
  Matrix out = Matrix::Zero(T * action_count, static_cast<Eigen::Index>(seqs.size()));
  for (std::size_t j = 0; j < seqs.size(); ++j) {
    if (static_cast<int>(seqs[j].size()) != T) throw ShapeError("one_hot_flat: sequence length differs from T");
    for (int t = 0; t < T; ++t) out(t * action_count + seqs[j][static_cast<std::size_t>(t)], static_cast<Eigen::Index>(j)) = 1.0;
  }
  return out;
}

Classifier::Classifier(ClassifierKind kind, NetworkBundle net, int T, int action_count)
    : kind_(kind), net_(std::move(net)), T_(T), action_count_(action_count) {
  net_.validate();
  if (net_.arch.output_dim() != kFamilyCount) throw ShapeError("classifier must output one score per family");
  if (kind_ == ClassifierKind::Lstm && (!net_.arch.is_lstm_classifier() || net_.arch.input_dim() != action_count))
    throw ShapeError("lstm classifier architecture does not match the action count");
  if (kind_ == ClassifierKind::Mlp && (!net_.arch.is_mlp() || net_.arch.input_dim() != T * action_count))
    throw ShapeError("mlp classifier architecture does not match T * action_count");
}

Matrix Classifier::predict_proba(const std::vector<std::vector<ActionId>>& seqs) const {
  if (seqs.empty()) return Matrix(kFamilyCount, 0);
  if (kind_ == ClassifierKind::Lstm) return lstm_forward(net_, one_hot_sequence(seqs, T_, action_count_));
  return nn::softmax_columns(mlp_forward(net_, one_hot_flat(seqs, T_, action_count_)));
}

Vector Classifier::predict_proba(const std::vector<ActionId>& seq) const {
  return predict_proba(std::vector<std::vector<ActionId>>{seq}).col(0);
}

Family Classifier::predict(const std::vector<ActionId>& seq) const { return kAllFamilies[argmax(predict_proba(seq))]; }

double Classifier::accuracy(const FingerprintDataset& ds, const std::vector<std::size_t>& idx) const {
  if (idx.empty()) return 0.0;
  std::size_t correct = 0;
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < idx.size(); start += kChunk) {
    std::vector<std::vector<ActionId>> seqs;
    for (std::size_t i = start; i < std::min(idx.size(), start + kChunk); ++i) seqs.push_back(ds.samples[idx[i]].actions);
    const Matrix p = predict_proba(seqs);
    for (Eigen::Index j = 0; j < p.cols(); ++j)
      if (argmax(p.col(j)) == family_index(ds.samples[idx[start + static_cast<std::size_t>(j)]].label)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

namespace {

TrainedClassifier fit(const FingerprintDataset& ds, const ClassifierConfig& config) {
  std::set<Family> classes;
  for (const auto& s : ds.samples) classes.insert(s.label);
  if (classes.size() < 2) throw DomainError("train_classifier: dataset needs at least two classes");
  if (config.batch < 1 || config.epochs < 1) throw DomainError("train_classifier: batch and epochs must be >= 1");

  const int A = ds.action_count;
  Rng init(derive_seed(config.seed, 0xc1a5));
  const Architecture arch = config.kind == ClassifierKind::Lstm
                                ? lstm_classifier_architecture(A, config.hidden, kFamilyCount)
                                : mlp_architecture(ds.T * A, config.mlp_hidden, kFamilyCount);
  NetworkBundle net = init_network(arch, init);

  OptimizerConfig oc;
  oc.kind = OptimizerKind::Adam;
  oc.learning_rate = config.learning_rate;
  oc.decay_factor = config.decay_factor;
  oc.plateau_window = config.plateau_window;
  oc.max_grad_norm = config.grad_clip;
  Optimizer opt(oc);

  std::vector<std::size_t> train = ds.split().train;
  std::vector<double> curve, rates;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, 0xe90c, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = train.size(); i > 1; --i)
      std::swap(train[i - 1], train[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i))]);
    rates.push_back(opt.learning_rate());
    double total = 0.0;
    for (std::size_t start = 0; start < train.size(); start += static_cast<std::size_t>(config.batch)) {
      const std::size_t end = std::min(train.size(), start + static_cast<std::size_t>(config.batch));
      std::vector<std::vector<ActionId>> seqs;
      std::vector<int> labels;
      for (std::size_t i = start; i < end; ++i) {
        seqs.push_back(ds.samples[train[i]].actions);
        labels.push_back(family_index(ds.samples[train[i]].label));
      }
      auto loss_fn = [&](const Matrix& logits) {
        LossGrad<double> lg;
        lg.loss = nn::softmax_cross_entropy(logits, labels, &lg.grad);
        return lg;
      };
      Gradients<double> g = config.kind == ClassifierKind::Lstm
                                ? gradients(net, one_hot_sequence(seqs, ds.T, A), loss_fn)
                                : gradients(net, one_hot_flat(seqs, ds.T, A), loss_fn);
      total += g.loss * static_cast<double>(end - start);
      opt.step(net.params, std::move(g.params));
    }
    const double mean = total / static_cast<double>(train.size());
    if (!std::isfinite(mean)) throw NumericError("train_classifier: non-finite loss in epoch " + std::to_string(epoch));
    curve.push_back(mean);
    opt.observe_loss(mean);
  }
  return {Classifier(config.kind, std::move(net), ds.T, A), std::move(curve), std::move(rates)};
}

}  // namespace

TrainedClassifier train_classifier(const FingerprintDataset& ds, const ClassifierConfig& config) {
  if (config.kind != ClassifierKind::Lstm) throw DomainError("train_classifier expects an lstm configuration");
  return fit(ds, config);
}

TrainedClassifier train_mlp_baseline(const FingerprintDataset& ds, ClassifierConfig config) {
  config.kind = ClassifierKind::Mlp;
  return fit(ds, config);
}

void save_classifier(const Classifier& c, const std::filesystem::path& path) {
  save_bundle(c.network(), path);
  nlohmann::ordered_json j;
  j["kind"] = c.kind() == ClassifierKind::Lstm ? "lstm" : "mlp";
  j["T"] = c.sequence_length();
  j["action_count"] = c.action_count();
  j["weights"] = path.filename().string();
  std::ofstream os(path.string() + ".json");
  if (!os) throw FormatError("cannot write classifier metadata for " + path.string());
  os << j.dump(2) << '\n';
}

Classifier load_classifier(const std::filesystem::path& path) {
  std::ifstream is(path.string() + ".json");
  if (!is) throw FormatError("cannot open classifier metadata " + path.string() + ".json");
  nlohmann::json j;
  try {
    is >> j;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind != "lstm" && kind != "mlp") throw FormatError("unknown classifier kind '" + kind + "'");
    return Classifier(kind == "lstm" ? ClassifierKind::Lstm : ClassifierKind::Mlp, load_bundle(path), j.at("T").get<int>(),
                      j.at("action_count").get<int>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad classifier metadata: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

FamilyPrediction FamilyPrediction::from_votes(const std::array<int, kFamilyCount>& votes,
                                              const std::array<double, kFamilyCount>& mass) {
  FamilyPrediction p;
  p.votes = votes;
  p.probability_mass = mass;
  p.episodes_used = std::accumulate(votes.begin(), votes.end(), 0);
  int best = -1;
  for (int k = 0; k < kFamilyCount; ++k) {
    if (votes[k] < 0) throw DomainError("vote counts must be non-negative");
    if (best < 0 || votes[k] > votes[best]) {
      best = k;
      continue;
    }
    if (votes[k] < votes[best]) continue;
    if (mass[k] > mass[best] || (mass[k] == mass[best] && to_string(kAllFamilies[k]) < to_string(kAllFamilies[best])))
      best = k;
  }
  p.winner = kAllFamilies[best];
  return p;
}

FamilyPrediction identify(const Classifier& classifier, const PolicyOracle& oracle, const Env& env, int episodes,
                          std::uint64_t seed) {
  if (episodes < 1) throw DomainError("identify: episodes must be >= 1");
  std::array<int, kFamilyCount> votes{};
  std::array<double, kFamilyCount> mass{};
  for (int e = 0; e < episodes; ++e) {
    const auto seq = gen_sequence(oracle, env, classifier.sequence_length(), derive_seed(seed, 0x1de, e));
    const Vector p = classifier.predict_proba(seq);
    ++votes[argmax(p)];
    for (int k = 0; k < kFamilyCount; ++k) mass[k] += p[k];
  }
  return FamilyPrediction::from_votes(votes, mass);
}

}  // namespace polex
