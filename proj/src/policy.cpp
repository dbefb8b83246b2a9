#include "polex/policy.hpp"

#include <fstream>

#include "json.hpp"
#include "polex/serialize.hpp"

namespace polex {

std::string_view to_string(Family f) {
  switch (f) {
    case Family::DQN: return "DQN";
    case Family::A2C: return "A2C";
    case Family::PPO: return "PPO";
  }
  return "DQN";
}

Family parse_family(std::string_view s) {
  std::string up(s);
  for (auto& c : up) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (up == "DQN") return Family::DQN;
  if (up == "A2C") return Family::A2C;
  if (up == "PPO") return Family::PPO;
  throw DomainError("unknown algorithm family '" + std::string(s) + "'");
}

WhitePolicy::WhitePolicy(Family family, NetworkBundle actor, std::optional<NetworkBundle> critic)
    : family_(family), actor_(std::move(actor)), critic_(std::move(critic)) {
  actor_.validate();
  if (!actor_.arch.is_mlp()) throw ShapeError("policy network must be a dense stack");
  if (critic_) critic_->validate();
}

Vector WhitePolicy::logits(const State& s) const { return mlp_forward(actor_, s); }

Vector WhitePolicy::action_distribution(const State& s) const {
  const Vector out = logits(s);
  if (family_ == Family::DQN) {
    Vector p = Vector::Zero(out.size());
    p[argmax(out)] = 1.0;
    return p;
  }
  return nn::softmax(out);
}

ActionId WhitePolicy::greedy(const State& s) const { return argmax(logits(s)); }

ActionId WhitePolicy::act(const State& s, ActMode mode, Rng& rng) const {
  if (mode == ActMode::Greedy || family_ == Family::DQN) return greedy(s);
  return sample_categorical(nn::softmax(logits(s)), rng);
}

Vector WhitePolicy::input_gradient(const State& s, ActionId label) const {
  MlpTape<double> tape;
  const Matrix out = mlp_forward(actor_, Matrix(s), &tape);
  Matrix g = nn::softmax_columns(out);
  g(label, 0) -= 1.0;
  Matrix gin;
  mlp_backward(actor_, tape, g, &gin);
  return gin.col(0);
}

PolicyOracle as_oracle(std::shared_ptr<const WhitePolicy> policy) {
  return PolicyOracle([p = std::move(policy)](const State& s, ActMode mode, Rng& rng) { return p->act(s, mode, rng); });
}

PolicyOracle as_oracle(const WhitePolicy& policy) { return as_oracle(std::make_shared<const WhitePolicy>(policy)); }

namespace {

std::filesystem::path stem_of(const std::filesystem::path& p) {
  if (p.extension() == ".json") return p.parent_path() / p.stem();
  return p;
}

std::filesystem::path with_suffix(const std::filesystem::path& stem, const std::string& suffix) {
  return stem.parent_path() / (stem.filename().string() + suffix);
}

}  // namespace

void save_policy(const WhitePolicy& policy, const PolicyDescriptor& desc, const std::filesystem::path& path) {
  const auto stem = stem_of(path);
  save_bundle(policy.actor(), with_suffix(stem, ".actor.bin"));
  if (policy.critic()) save_bundle(*policy.critic(), with_suffix(stem, ".critic.bin"));
  nlohmann::ordered_json j;
  j["family"] = std::string(to_string(desc.family));
  j["env_id"] = desc.env_id;
  j["seed"] = desc.seed;
  j["eval_reward"] = desc.eval_reward;
  j["actor"] = stem.filename().string() + ".actor.bin";
  if (policy.critic()) j["critic"] = stem.filename().string() + ".critic.bin";
  std::ofstream os(with_suffix(stem, ".json"));
  if (!os) throw FormatError("cannot write policy descriptor for '" + stem.string() + "'");
  os << j.dump(2) << '\n';
}

std::pair<WhitePolicy, PolicyDescriptor> load_policy(const std::filesystem::path& path) {
  const auto stem = stem_of(path);
  std::ifstream is(with_suffix(stem, ".json"));
  if (!is) throw FormatError("cannot open policy descriptor '" + with_suffix(stem, ".json").string() + "'");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad policy descriptor: ") + e.what());
  }
  PolicyDescriptor d;
  d.family = parse_family(j.at("family").get<std::string>());
  d.env_id = j.at("env_id").get<std::string>();
  d.seed = j.at("seed").get<std::uint64_t>();
  d.eval_reward = j.at("eval_reward").get<double>();
  const auto dir = stem.parent_path();
  NetworkBundle actor = load_bundle(dir / j.at("actor").get<std::string>());
  std::optional<NetworkBundle> critic;
  if (j.contains("critic")) critic = load_bundle(dir / j.at("critic").get<std::string>());
  return {WhitePolicy(d.family, std::move(actor), std::move(critic)), d};
}

}  // namespace polex
