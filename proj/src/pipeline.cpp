#include "polex/pipeline.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "CLI11.hpp"
#include "json.hpp"
#include "polex/evalmetrics.hpp"
#include "polex/report.hpp"

namespace polex {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Config

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& v, T lo, T hi) {
  T x{};
  std::istringstream is(v);
  if (!(is >> x) || !(is >> std::ws).eof()) throw FormatError(key + ": cannot parse '" + v + "'");
  if (x < lo || x > hi) {
    std::ostringstream msg;
    msg << key << ": " << v << " outside [" << lo << ", " << hi << "]";
    throw FormatError(msg.str());
  }
  return x;
}

std::uint64_t parse_seed(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw FormatError(key + ": seed must be a non-negative integer, got '" + v + "'");
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw FormatError(key + ": seed out of range");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw FormatError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<int> parse_widths(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& s : split_list(v)) out.push_back(parse_number<int>(key, s, 1, 4096));
  if (out.empty()) throw FormatError(key + ": empty layer list");
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

/// "a..b" inclusive range or a comma list.
std::vector<std::uint64_t> parse_seed_list(const std::string& key, const std::string& v) {
  std::vector<std::uint64_t> out;
  const auto dots = v.find("..");
  if (dots != std::string::npos) {
    const auto a = parse_seed(key, v.substr(0, dots)), b = parse_seed(key, v.substr(dots + 2));
    if (b < a || b - a >= 10000) throw FormatError(key + ": bad seed range '" + v + "'");
    for (auto s = a; s <= b; ++s) out.push_back(s);
  } else {
    for (const auto& s : split_list(v)) out.push_back(parse_seed(key, s));
  }
  if (out.empty()) throw FormatError(key + ": no seeds");
  std::set<std::uint64_t> uniq(out.begin(), out.end());
  if (uniq.size() != out.size()) throw FormatError(key + ": duplicate seeds");
  return out;
}

std::string g6(double x) { return fmt6(x); }

struct Setting {
  std::function<void(PipelineConfig&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

#define POLEX_INT(KEY, FIELD, LO, HI)                                                                  \
  {                                                                                                    \
    KEY, {                                                                                             \
      [](PipelineConfig& c, const std::string& v) { c.FIELD = parse_number<int>(KEY, v, LO, HI); },   \
          [](const PipelineConfig& c) { return std::to_string(c.FIELD); }                              \
    }                                                                                                  \
  }
#define POLEX_REAL(KEY, FIELD, LO, HI)                                                                  \
  {                                                                                                     \
    KEY, {                                                                                              \
      [](PipelineConfig& c, const std::string& v) { c.FIELD = parse_number<double>(KEY, v, LO, HI); }, \
          [](const PipelineConfig& c) { return g6(c.FIELD); }                                           \
    }                                                                                                   \
  }
#define POLEX_BOOL(KEY, FIELD)                                                          \
  {                                                                                     \
    KEY, {                                                                              \
      [](PipelineConfig& c, const std::string& v) { c.FIELD = parse_bool(KEY, v); },    \
          [](const PipelineConfig& c) { return std::string(c.FIELD ? "true" : "false"); } \
    }                                                                                   \
  }

const std::map<std::string, Setting>& settings() {
  static const std::map<std::string, Setting> table = {
      {"run.env",
       {[](PipelineConfig& c, const std::string& v) {
          try {
            make_env(v);
          } catch (const DomainError& e) {
            throw FormatError(std::string("run.env: ") + e.what());
          }
          c.env_id = v;
        },
        [](const PipelineConfig& c) { return c.env_id; }}},
      {"run.out", {[](PipelineConfig& c, const std::string& v) { c.out = v; },
                   [](const PipelineConfig& c) { return c.out.string(); }}},
      POLEX_INT("run.jobs", jobs, 1, 256),
      {"pool.families",
       {[](PipelineConfig& c, const std::string& v) {
          std::vector<Family> fs;
          for (const auto& s : split_list(v)) {
            try {
              fs.push_back(parse_family(s));
            } catch (const DomainError& e) {
              throw FormatError(std::string("pool.families: ") + e.what());
            }
          }
          if (fs.empty()) throw FormatError("pool.families: empty");
          c.pool.families = fs;
        },
        [](const PipelineConfig& c) {
          std::string s;
          for (std::size_t i = 0; i < c.pool.families.size(); ++i)
            s += (i ? "," : "") + std::string(to_string(c.pool.families[i]));
          return s;
        }}},
      {"pool.seeds", {[](PipelineConfig& c, const std::string& v) { c.pool.seeds = parse_seed_list("pool.seeds", v); },
                      [](const PipelineConfig& c) {
                        std::string s;
                        for (std::size_t i = 0; i < c.pool.seeds.size(); ++i)
                          s += (i ? "," : "") + std::to_string(c.pool.seeds[i]);
                        return s;
                      }}},
      POLEX_REAL("pool.threshold", pool.threshold, -1e9, 1e9),
      POLEX_INT("pool.max_attempts", pool.max_attempts, 1, 100),
      POLEX_INT("pool.eval_episodes", pool.eval_episodes, 1, 10000),
      POLEX_INT("dataset.T", T, 1, 100000),
      POLEX_INT("dataset.n_per_model", n_per_model, 1, 1000000),
      {"classifier.kind",
       {[](PipelineConfig& c, const std::string& v) {
          if (v == "lstm") c.classifier.kind = ClassifierKind::Lstm;
          else if (v == "mlp") c.classifier.kind = ClassifierKind::Mlp;
          else throw FormatError("classifier.kind: expected lstm or mlp, got '" + v + "'");
        },
        [](const PipelineConfig& c) { return std::string(c.classifier.kind == ClassifierKind::Lstm ? "lstm" : "mlp"); }}},
      POLEX_INT("classifier.hidden", classifier.hidden, 1, 4096),
      {"classifier.mlp_hidden",
       {[](PipelineConfig& c, const std::string& v) { c.classifier.mlp_hidden = parse_widths("classifier.mlp_hidden", v); },
        [](const PipelineConfig& c) { return join_ints(c.classifier.mlp_hidden); }}},
      POLEX_REAL("classifier.learning_rate", classifier.learning_rate, 1e-8, 10.0),
      POLEX_REAL("classifier.decay_factor", classifier.decay_factor, 1e-3, 1.0),
      POLEX_INT("classifier.plateau_window", classifier.plateau_window, 0, 1000),
      POLEX_INT("classifier.batch", classifier.batch, 1, 100000),
      POLEX_INT("classifier.epochs", classifier.epochs, 1, 100000),
      POLEX_REAL("classifier.grad_clip", classifier.grad_clip, 0.0, 1e9),
      POLEX_BOOL("classifier.mlp_baseline", mlp_baseline),
      POLEX_INT("identify.episodes", identify_episodes, 1, 100000),
      POLEX_INT("gail.iterations", gail.iterations, 1, 100000),
      POLEX_INT("gail.max_cycles", gail.max_cycles, 0, 1000),
      POLEX_REAL("gail.delta", gail.delta, 0.0, 1e9),
      POLEX_INT("gail.expert_episodes", gail.expert_episodes, 1, 100000),
      POLEX_INT("gail.eval_episodes", gail.eval_episodes, 1, 100000),
      POLEX_INT("gail.generator_steps", gail.generator_steps, 1, 10000000),
      {"gail.disc_hidden", {[](PipelineConfig& c, const std::string& v) { c.gail.disc_hidden = parse_widths("gail.disc_hidden", v); },
                            [](const PipelineConfig& c) { return join_ints(c.gail.disc_hidden); }}},
      POLEX_REAL("gail.disc_lr", gail.disc_lr, 1e-8, 10.0),
      POLEX_INT("gail.disc_updates", gail.disc_updates, 0, 100000),
      POLEX_INT("gail.disc_batch", gail.disc_batch, 1, 1000000),
      POLEX_INT("gail.js_bins", gail.js_bins, 1, 1000),
      POLEX_INT("gail.checkpoint_every", gail.checkpoint_every, 1, 100000),
      POLEX_INT("gail.checkpoint_episodes", gail.checkpoint_episodes, 1, 100000),
      POLEX_INT("gail.probe_states", gail.probe_states, 1, 1000000),
      POLEX_INT("gail.probe_episodes", gail.probe_episodes, 1, 100000),
      POLEX_INT("gail.fidelity_samples", gail.fidelity_samples, 1, 1000000),
      POLEX_REAL("gail.generator_lr", gail.generator_lr, 1e-8, 10.0),
      POLEX_BOOL("gail.select_by_fidelity", gail.select_by_fidelity),
      POLEX_INT("gail.validation_probes", gail.validation_probes, 1, 1000000),
      POLEX_REAL("attack.eps", transfer.eps, 0.0, 1e6),
      POLEX_INT("attack.n_examples", transfer.n_examples, 1, 10000000),
      POLEX_INT("attack.repeats", transfer.repeats, 1, 1000),
      POLEX_INT("attack.probe_episodes", transfer.probe_episodes, 1, 100000),
      POLEX_INT("watermark.trials", watermark_trials, 1, 1000),
      POLEX_INT("watermark.period", watermark.period, 2, 1000),
      POLEX_INT("watermark.max_attempts", watermark.max_attempts, 1, 100),
      POLEX_INT("watermark.eval_episodes", watermark.eval_episodes, 1, 100000),
      POLEX_REAL("watermark.reward_target", watermark.reward_target, -1e9, 1e9),
      {"watermark.check_interval",
       {[](PipelineConfig& c, const std::string& v) {
          c.watermark.check_interval = parse_number<std::int64_t>("watermark.check_interval", v, 1, 1000000000);
        },
        [](const PipelineConfig& c) { return std::to_string(c.watermark.check_interval); }}},
  };
  return table;
}

#undef POLEX_INT
#undef POLEX_REAL
#undef POLEX_BOOL

// Stage seeds: [section] seed when given, else derived from the base seed.
std::uint64_t& stage_field(PipelineConfig& c, const std::string& key) {
  if (key == "dataset.seed") return c.dataset_seed;
  if (key == "classifier.seed") return c.classifier.seed;
  if (key == "identify.seed") return c.identify_seed;
  if (key == "gail.seed") return c.gail.seed;
  if (key == "attack.seed") return c.transfer.seed;
  return c.watermark.seed;
}

const std::vector<std::pair<std::string, std::uint64_t>> kStageSeeds = {
    {"dataset.seed", 0xd5}, {"classifier.seed", 0xc1}, {"identify.seed", 0x1d},
    {"gail.seed", 0x6a},    {"attack.seed", 0xa7},     {"watermark.seed", 0x3a},
};

void sync_trainers(PipelineConfig& c) {
  c.watermark.trainer = c.pool.trainer;
  c.transfer.jobs = c.pool.jobs = c.jobs;
}

}  // namespace

PipelineConfig PipelineConfig::defaults(std::uint64_t seed) {
  PipelineConfig c;
  c.seed = seed;
  for (std::uint64_t s = 1; s <= 10; ++s) c.pool.seeds.push_back(s);
  for (const auto& [key, stream] : kStageSeeds) stage_field(c, key) = derive_seed(seed, stream);
  sync_trainers(c);
  return c;
}

std::map<std::string, std::string> PipelineConfig::snapshot() const {
  std::map<std::string, std::string> m;
  for (const auto& [key, s] : settings()) m[key] = s.get(*this);
  m["run.seed"] = std::to_string(seed);
  auto& self = const_cast<PipelineConfig&>(*this);
  for (const auto& [key, _] : kStageSeeds) m[key] = std::to_string(stage_field(self, key));
  for (const auto& [f, kv] : trainer_overrides)
    for (const auto& [k, v] : kv) m["trainer." + std::string(to_string(f)) + "." + k] = v;
  return m;
}

PipelineConfig PipelineConfig::parse(std::istream& is, std::optional<std::uint64_t> seed_override) {
  boost::property_tree::ptree pt;
  try {
    boost::property_tree::ini_parser::read_ini(is, pt);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  std::uint64_t base = 0;
  std::map<std::string, std::string> values;
  for (const auto& [section, body] : pt) {
    if (body.empty() && !body.data().empty()) throw FormatError("config: key '" + section + "' outside a section");
    for (const auto& [key, leaf] : body) values[section + "." + key] = leaf.data();
  }
  if (auto it = values.find("run.seed"); it != values.end()) base = parse_seed("run.seed", it->second);
  if (seed_override) base = *seed_override;

  PipelineConfig c = defaults(base);
  for (const auto& [full, v] : values) {
    if (full == "run.seed") continue;
    if (full.rfind("trainer.", 0) == 0) {
      const auto dot = full.find('.', 8);
      if (dot == std::string::npos) throw FormatError("config: bad trainer key '" + full + "'");
      Family f;
      try {
        f = parse_family(full.substr(8, dot - 8));
      } catch (const DomainError& e) {
        throw FormatError(std::string("config: ") + e.what());
      }
      c.trainer_overrides[f][full.substr(dot + 1)] = v;
      continue;
    }
    if (std::any_of(kStageSeeds.begin(), kStageSeeds.end(), [&](const auto& s) { return s.first == full; })) {
      stage_field(c, full) = parse_seed(full, v);
      continue;
    }
    const auto it = settings().find(full);
    if (it == settings().end()) throw FormatError("config: unknown key '" + full + "'");
    it->second.set(c, v);
  }
  for (const auto& [f, kv] : c.trainer_overrides) {
    TrainerConfig t = TrainerConfig::defaults(f);
    try {
      t.apply(kv);
    } catch (const DomainError& e) {
      throw FormatError(std::string("config: trainer.") + std::string(to_string(f)) + ": " + e.what());
    }
    c.pool.trainer[f] = t;
  }
  sync_trainers(c);
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path, std::optional<std::uint64_t> seed_override) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open config " + path.string());
  return parse(is, seed_override);
}

// ---------------------------------------------------------------------------
// Digests and manifests

std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw NumericError("sha256 failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

std::string file_sha256(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot read " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return sha256_hex(buf.str());
}

std::string RunManifest::input_hash() const {
  ojson j;
  j["command"] = command;
  ojson cfg(config);
  cfg.erase("run.out");
  cfg.erase("run.jobs");
  j["config"] = cfg;
  j["inputs"] = ojson::array();
  for (const auto& d : inputs) j["inputs"].push_back(d.sha256);
  return sha256_hex(j.dump());
}

std::string RunManifest::to_json() const {
  ojson j;
  j["command"] = command;
  j["args"] = args;
  j["config"] = config;
  j["seeds"] = seeds;
  auto digests = [](const std::vector<FileDigest>& v) {
    ojson a = ojson::array();
    for (const auto& d : v) a.push_back({{"path", d.path}, {"sha256", d.sha256}});
    return a;
  };
  j["inputs"] = digests(inputs);
  j["artifacts"] = digests(artifacts);
  j["input_hash"] = input_hash();
  j["started"] = started;
  j["finished"] = finished;
  j["exit_code"] = exit_code;
  return j.dump(2);
}

DirectoryLock::DirectoryLock(const fs::path& dir) {
  const fs::path p = dir / ".polex.lock";
  fd_ = ::open(p.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
  if (fd_ < 0) throw FormatError("cannot open lock file " + p.string());
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw DomainError("output directory " + dir.string() + " is locked by another command");
  }
}

DirectoryLock::~DirectoryLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

// ---------------------------------------------------------------------------
// Commands

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Input or precondition problem: exit code 2, nothing written.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string policy_stem(const fs::path& p) {
  return p.extension() == ".json" ? p.stem().string() : p.filename().string();
}

fs::path policy_json(const fs::path& p) {
  return p.extension() == ".json" ? p : fs::path(p.string() + ".json");
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw UsageError(what + " not found: " + p.string());
}

class Run {
 public:
  Run(std::string command, const PipelineConfig& cfg, std::vector<std::string> args, std::ostream& out)
      : cfg_(cfg), out_(out) {
    m_.command = std::move(command);
    m_.args = std::move(args);
    m_.config = cfg.snapshot();
    m_.seeds["run"] = cfg.seed;
    for (const auto& [k, _] : kStageSeeds) m_.seeds[k] = std::stoull(m_.config.at(k));
  }

  const PipelineConfig& cfg() const { return cfg_; }
  std::ostream& out() { return out_; }
  fs::path dir() const { return cfg_.out; }

  void input(const fs::path& p) { m_.inputs.push_back({p.string(), file_sha256(p)}); }
  /// Declares an output; fails before anything is written if it exists.
  fs::path plan(const std::string& rel) {
    const fs::path p = dir() / rel;
    if (fs::exists(p)) throw UsageError("refusing to overwrite existing artifact " + p.string());
    planned_.push_back(rel);
    return p;
  }

  int execute(const std::string& manifest_tag, const std::function<int()>& body) {
    const std::string manifest = "manifest-" + m_.command + (manifest_tag.empty() ? "" : "-" + manifest_tag) + ".json";
    plan(manifest);
    fs::create_directories(dir());
    DirectoryLock lock(dir());
    m_.started = utc_now();
    int code = kExitOk;
    std::string failure;
    try {
      code = body();
    } catch (const DomainError& e) {
      failure = e.what();
      code = kExitDomain;
    } catch (const NumericError& e) {
      failure = e.what();
      code = kExitDomain;
    }
    m_.finished = utc_now();
    m_.exit_code = code;
    for (const auto& rel : planned_) collect(rel);
    std::ofstream os(dir() / manifest);
    os << m_.to_json() << '\n';
    if (!failure.empty()) throw DomainError(failure);
    return code;
  }

 private:
  void collect(const fs::path& rel) {
    const fs::path p = dir() / rel;
    if (fs::is_regular_file(p)) {
      m_.artifacts.push_back({rel.generic_string(), file_sha256(p)});
    } else if (fs::is_directory(p)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::recursive_directory_iterator(p))
        if (e.is_regular_file()) files.push_back(fs::relative(e.path(), dir()));
      std::sort(files.begin(), files.end());
      for (const auto& f : files) m_.artifacts.push_back({f.generic_string(), file_sha256(dir() / f)});
    }
  }

  const PipelineConfig& cfg_;
  std::ostream& out_;
  RunManifest m_;
  std::vector<std::string> planned_;
};

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream os(p);
  if (!os) throw FormatError("cannot write " + p.string());
  os << text;
  if (text.empty() || text.back() != '\n') os << '\n';
}

std::pair<WhitePolicy, PolicyDescriptor> load_target(const fs::path& p, const PipelineConfig& cfg) {
  require_file(policy_json(p), "policy");
  try {
    auto loaded = load_policy(p);
    if (loaded.second.env_id != cfg.env_id)
      throw UsageError("policy " + p.string() + " was trained on '" + loaded.second.env_id + "', config uses '" +
                       cfg.env_id + "'");
    return loaded;
  } catch (const FormatError& e) {
    throw UsageError(e.what());
  }
}

ShadowPool load_checked_pool(Run& run) {
  const fs::path index = run.dir() / "pool" / "pool.json";
  require_file(index, "pool index (run train-shadows first)");
  run.input(index);
  ShadowPool pool = load_pool(run.dir() / "pool");
  if (pool.env_id != run.cfg().env_id) throw UsageError("pool environment differs from config");
  return pool;
}

Classifier load_checked_classifier(Run& run) {
  const fs::path p = run.dir() / "classifier.bin";
  require_file(p, "classifier (run train-classifier first)");
  require_file(fs::path(p.string() + ".json"), "classifier metadata");
  run.input(p);
  return load_classifier(p);
}

ojson prediction_json(const FamilyPrediction& p) {
  ojson j;
  j["winner"] = std::string(to_string(p.winner));
  j["episodes"] = p.episodes_used;
  for (Family f : kAllFamilies) {
    j["votes"][std::string(to_string(f))] = p.votes[static_cast<std::size_t>(family_index(f))];
    j["probability_mass"][std::string(to_string(f))] = sig6(p.probability_mass[static_cast<std::size_t>(family_index(f))]);
  }
  return j;
}

void print_votes(std::ostream& os, const FamilyPrediction& p) {
  os << "family  votes  mass\n";
  for (Family f : kAllFamilies) {
    const auto i = static_cast<std::size_t>(family_index(f));
    os << std::left << std::setw(8) << to_string(f) << std::setw(7) << p.votes[i] << fmt6(p.probability_mass[i])
       << '\n';
  }
  os << "winner: " << to_string(p.winner) << '\n';
}

int cmd_train_shadows(Run& run) {
  const fs::path pool_dir = run.plan("pool");
  return run.execute("", [&] {
    const auto env = make_env(run.cfg().env_id);
    const ShadowPool pool = build_shadow_pool(*env, run.cfg().pool);
    save_pool(pool, pool_dir);
    for (const auto& m : pool.models)
      run.out() << m.id() << " reward " << fmt6(m.eval_reward) << " attempts " << m.attempts << '\n';
    return kExitOk;
  });
}

int cmd_build_dataset(Run& run) {
  const ShadowPool pool = load_checked_pool(run);
  const fs::path csv = run.plan("dataset.csv");
  return run.execute("", [&] {
    const auto env = make_env(run.cfg().env_id);
    const auto ds = build_dataset(pool, *env, run.cfg().n_per_model, run.cfg().T, run.cfg().dataset_seed, run.cfg().jobs);
    std::ostringstream os;
    write_dataset_csv(ds, os);
    write_text(csv, os.str());
    run.out() << ds.samples.size() << " sequences of length " << ds.T << '\n';
    return kExitOk;
  });
}

ojson classifier_json(const TrainedClassifier& tc, const FingerprintDataset& ds, const DatasetSplit& split) {
  ojson j;
  j["train_accuracy"] = sig6(tc.classifier.accuracy(ds, split.train));
  j["test_accuracy"] = sig6(tc.classifier.accuracy(ds, split.test));
  ojson curve = ojson::array(), lrs = ojson::array();
  for (double x : tc.loss_curve) curve.push_back(sig6(x));
  for (double x : tc.learning_rates) lrs.push_back(sig6(x));
  j["loss_curve"] = curve;
  j["learning_rates"] = lrs;
  return j;
}

int cmd_train_classifier(Run& run) {
  const fs::path csv = run.dir() / "dataset.csv";
  require_file(csv, "dataset (run build-dataset first)");
  run.input(csv);
  const auto env = make_env(run.cfg().env_id);
  std::ifstream is(csv);
  FingerprintDataset ds = read_dataset_csv(is, env->action_count());
  if (run.cfg().T > ds.T)
    throw UsageError("dataset.T = " + std::to_string(run.cfg().T) + " exceeds the dataset's sequence length " +
                     std::to_string(ds.T));
  // The csv does not carry the split seed; it is rebuilt exactly as build_dataset derives it.
  ds.split_seed = derive_seed(run.cfg().dataset_seed, 0x5b1);
  if (run.cfg().T < ds.T) ds = ds.truncated(run.cfg().T);
  const fs::path model = run.plan("classifier.bin");
  run.plan("classifier.bin.json");
  const fs::path report = run.plan("classifier-report.json");
  const bool baseline = run.cfg().mlp_baseline;
  const fs::path mlp = baseline ? run.plan("mlp.bin") : fs::path();
  if (baseline) run.plan("mlp.bin.json");
  return run.execute("", [&] {
    const DatasetSplit split = ds.split();
    ojson j;
    j["T"] = ds.T;
    j["train_size"] = split.train.size();
    j["test_size"] = split.test.size();
    ClassifierConfig cc = run.cfg().classifier;
    const TrainedClassifier primary =
        cc.kind == ClassifierKind::Lstm ? train_classifier(ds, cc) : train_mlp_baseline(ds, cc);
    save_classifier(primary.classifier, model);
    j["classifier"] = classifier_json(primary, ds, split);
    run.out() << "classifier test accuracy " << fmt6(primary.classifier.accuracy(ds, split.test)) << '\n';
    if (baseline) {
      const TrainedClassifier base = train_mlp_baseline(ds, cc);
      save_classifier(base.classifier, mlp);
      j["mlp_baseline"] = classifier_json(base, ds, split);
      run.out() << "mlp baseline test accuracy " << fmt6(base.classifier.accuracy(ds, split.test)) << '\n';
    }
    write_text(report, j.dump(2));
    return kExitOk;
  });
}

int cmd_fingerprint(Run& run, const fs::path& target) {
  auto [policy, desc] = load_target(target, run.cfg());
  run.input(policy_json(target));
  const Classifier clf = load_checked_classifier(run);
  const std::string stem = policy_stem(target);
  const fs::path record = run.plan("fingerprint-" + stem + ".json");
  return run.execute(stem, [&] {
    const auto env = make_env(run.cfg().env_id);
    const FamilyPrediction p =
        identify(clf, as_oracle(policy), *env, run.cfg().identify_episodes, run.cfg().identify_seed);
    ojson j;
    j["target"] = stem;
    j["env_id"] = run.cfg().env_id;
    j["prediction"] = prediction_json(p);
    write_text(record, j.dump(2));
    print_votes(run.out(), p);
    return kExitOk;
  });
}

int cmd_extract(Run& run, const fs::path& target, const std::string& family_flag) {
  auto [policy, desc] = load_target(target, run.cfg());
  run.input(policy_json(target));
  std::optional<Family> forced;
  if (!family_flag.empty()) {
    try {
      forced = parse_family(family_flag);
    } catch (const DomainError& e) {
      throw UsageError(e.what());
    }
  }
  std::optional<Classifier> clf;
  if (!forced) clf = load_checked_classifier(run);
  const std::string stem = policy_stem(target);
  const std::string sub = "extract-" + stem;
  const fs::path dir = run.plan(sub);
  return run.execute(stem, [&] {
    const auto env = make_env(run.cfg().env_id);
    const PolicyOracle oracle = as_oracle(policy);
    std::optional<FamilyPrediction> pred;
    if (clf) {
      pred = identify(*clf, oracle, *env, run.cfg().identify_episodes, run.cfg().identify_seed);
      print_votes(run.out(), *pred);
    }
    const Family family = forced ? *forced : pred->winner;
    ExtractionReport rep = extract(oracle, family, *env, run.cfg().gail);
    rep.identified = pred;
    write_text(dir / "report.json", report_json(rep));
    std::ostringstream cycles;
    write_cycles_csv(rep, cycles);
    write_text(dir / "cycles.csv", cycles.str());
    run.out() << "generator " << to_string(family) << " target " << fmt6(rep.target_reward) << " replica "
              << fmt6(rep.replica_reward) << " cycles " << rep.cycles.size() << '\n';
    if (!rep.accepted()) {
      run.out() << "no replica within delta after " << rep.cycles.size() << " cycles\n";
      return static_cast<int>(kExitDomain);
    }
    fs::create_directories(dir);
    save_policy(*rep.replica, {family, run.cfg().env_id, run.cfg().gail.seed, sig6(rep.replica_reward)},
                dir / "replica");
    return static_cast<int>(kExitOk);
  });
}

int cmd_evaluate(Run& run, const fs::path& target, const fs::path& replica) {
  auto t = load_target(target, run.cfg());
  auto r = load_target(replica, run.cfg());
  run.input(policy_json(target));
  run.input(policy_json(replica));
  const std::string tag = policy_stem(target) + "-" + policy_stem(replica);
  const fs::path record = run.plan("evaluate-" + tag + ".json");
  const fs::path cdf = run.plan("evaluate-" + tag + "-cdf.csv");
  return run.execute(tag, [&] {
    const auto env = make_env(run.cfg().env_id);
    const auto& g = run.cfg().gail;
    const PolicyOracle to = as_oracle(t.first), ro = as_oracle(r.first);
    const std::uint64_t eval_seed = derive_seed(run.cfg().seed, 0xe7a1);
    const double tr = evaluate(to, *env, g.eval_episodes, eval_seed);
    const double rr = evaluate(ro, *env, g.eval_episodes, eval_seed);
    const auto probes =
        harvest_probe_states(to, *env, g.probe_states, g.probe_episodes, derive_seed(run.cfg().seed, 0x9b0be));
    const FidelitySummary fid =
        behavior_divergence(to, ro, probes, env->action_count(), g.fidelity_samples, derive_seed(run.cfg().seed, 0xf1de));
    ojson j;
    j["target"] = policy_stem(target);
    j["replica"] = policy_stem(replica);
    j["target_reward"] = sig6(tr);
    j["replica_reward"] = sig6(rr);
    j["reward_gap"] = sig6(std::abs(tr - rr));
    j["fidelity"] = ojson::parse(fidelity_json(fid));
    write_text(record, j.dump(2));
    std::ostringstream os;
    write_cdf_csv(fid.cdf, os);
    write_text(cdf, os.str());
    run.out() << "reward gap " << fmt6(std::abs(tr - rr)) << " fraction below " << fmt6(fid.threshold) << ": "
              << fmt6(fid.fraction_below) << '\n';
    return kExitOk;
  });
}

int cmd_casestudy_transfer(Run& run, const std::vector<std::string>& pairs) {
  if (pairs.empty()) throw UsageError("casestudy-transfer needs at least one --pair TARGET:REPLICA");
  const ShadowPool pool = load_checked_pool(run);
  std::vector<std::shared_ptr<const WhitePolicy>> replicas;
  std::vector<PolicyOracle> targets;
  std::vector<std::string> rows, cols;
  for (const auto& p : pairs) {
    const auto colon = p.find(':');
    if (colon == std::string::npos) throw UsageError("--pair expects TARGET:REPLICA, got '" + p + "'");
    const fs::path tp = p.substr(0, colon), rp = p.substr(colon + 1);
    auto t = load_target(tp, run.cfg());
    auto r = load_target(rp, run.cfg());
    run.input(policy_json(tp));
    run.input(policy_json(rp));
    targets.push_back(as_oracle(t.first));
    cols.emplace_back(to_string(t.second.family));
    rows.emplace_back(to_string(r.first.family()));
    replicas.push_back(std::make_shared<const WhitePolicy>(std::move(r.first)));
  }
  std::vector<std::vector<std::shared_ptr<const WhitePolicy>>> white(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) {
      if (i == j) {
        white[i].push_back(replicas[i]);
        continue;
      }
      const Family f = replicas[i]->family();
      const auto m = std::find_if(pool.models.begin(), pool.models.end(), [&](const auto& s) { return s.family == f; });
      if (m == pool.models.end()) throw UsageError("pool has no shadow model of family " + std::string(to_string(f)));
      white[i].push_back(m->policy);
    }
  const fs::path csv = run.plan("transfer.csv");
  return run.execute("", [&] {
    const auto env = make_env(run.cfg().env_id);
    const TransferMatrix m = transfer_matrix(white, rows, targets, cols, *env, run.cfg().transfer);
    std::ostringstream os;
    write_transfer_csv(m, os);
    write_text(csv, os.str());
    run.out() << os.str();
    return kExitOk;
  });
}

int cmd_casestudy_watermark(Run& run) {
  if (run.cfg().env_id != "cartpole") throw UsageError("no watermark states defined for " + run.cfg().env_id);
  const fs::path models = run.plan("watermark");
  const fs::path json = run.plan("watermark.json");
  const fs::path csv = run.plan("watermark.csv");
  return run.execute("", [&] {
    const auto env = make_env(run.cfg().env_id);
    const WatermarkRules rules = WatermarkRules::cartpole_default();
    fs::create_directories(models);
    std::vector<WatermarkTrial> all;
    for (Family f : run.cfg().pool.families) {
      const WatermarkedModel w = embed_watermark(f, *env, rules, run.cfg().watermark);
      save_policy(w.policy, {f, run.cfg().env_id, w.seed, sig6(w.normal_reward)}, models / std::string(to_string(f)));
      const auto trials = watermark_removal(w, *env, rules, run.cfg().gail, run.cfg().watermark_trials);
      all.insert(all.end(), trials.begin(), trials.end());
    }
    write_text(json, watermark_json(all));
    std::ostringstream os;
    os << "family,trial,wmodel_nenv,wmodel_venv,rmodel_nenv,rmodel_venv,replica_passed\n";
    for (const auto& t : all)
      os << to_string(t.family) << ',' << t.trial << ',' << fmt6(t.watermarked_normal) << ','
         << fmt6(t.watermarked_verify) << ',' << fmt6(t.replica_normal) << ',' << fmt6(t.replica_verify) << ','
         << (t.replica_passed ? 1 : 0) << '\n';
    write_text(csv, os.str());
    run.out() << os.str();
    return kExitOk;
  });
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Black-box policy extraction laboratory"};
  app.require_subcommand(1);
  std::string config_path, out_dir, family;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  app.add_option("--config", config_path, "INI configuration file");
  app.add_option("--out", out_dir, "output directory (overrides run.out)");
  app.add_option("--seed", seed, "base seed (overrides run.seed)");
  app.add_option("--jobs", jobs, "worker threads")->check(CLI::Range(1, 256));
  app.fallthrough();

  std::string target, replica;
  std::vector<std::string> pairs;
  auto* s_train = app.add_subcommand("train-shadows", "train the shadow pool");
  auto* s_data = app.add_subcommand("build-dataset", "sample labelled action sequences from the pool");
  auto* s_clf = app.add_subcommand("train-classifier", "fit the sequence classifier");
  auto* s_fp = app.add_subcommand("fingerprint", "identify a target's training family");
  s_fp->add_option("target", target, "target policy")->required();
  auto* s_ex = app.add_subcommand("extract", "replicate a target by adversarial imitation");
  s_ex->add_option("target", target, "target policy")->required();
  s_ex->add_option("--family", family, "generator family; skips fingerprinting");
  auto* s_ev = app.add_subcommand("evaluate", "reward gap and fidelity of a replica");
  s_ev->add_option("target", target, "target policy")->required();
  s_ev->add_option("replica", replica, "replica policy")->required();
  auto* s_tr = app.add_subcommand("casestudy-transfer", "adversarial-example transfer matrix");
  s_tr->add_option("--pair", pairs, "TARGET:REPLICA, one per target family");
  auto* s_wm = app.add_subcommand("casestudy-watermark", "watermark embedding and removal");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    PipelineConfig cfg = config_path.empty() ? PipelineConfig::defaults(seed.value_or(0))
                                             : PipelineConfig::load(config_path, seed);
    if (!out_dir.empty()) cfg.out = out_dir;
    if (jobs) cfg.jobs = *jobs;
    cfg.pool.jobs = cfg.transfer.jobs = cfg.jobs;

    auto make_run = [&](const CLI::App* sub) { return Run(sub->get_name(), cfg, args, out); };
    if (s_train->parsed()) {
      auto run = make_run(s_train);
      return cmd_train_shadows(run);
    }
    if (s_data->parsed()) {
      auto run = make_run(s_data);
      return cmd_build_dataset(run);
    }
    if (s_clf->parsed()) {
      auto run = make_run(s_clf);
      return cmd_train_classifier(run);
    }
    if (s_fp->parsed()) {
      auto run = make_run(s_fp);
      return cmd_fingerprint(run, target);
    }
    if (s_ex->parsed()) {
      auto run = make_run(s_ex);
      return cmd_extract(run, target, family);
    }
    if (s_ev->parsed()) {
      auto run = make_run(s_ev);
      return cmd_evaluate(run, target, replica);
    }
    if (s_tr->parsed()) {
      auto run = make_run(s_tr);
      return cmd_casestudy_transfer(run, pairs);
    }
    if (s_wm->parsed()) {
      auto run = make_run(s_wm);
      return cmd_casestudy_watermark(run);
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << '\n';
    return kExitDomain;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitDomain;
  }
  return kExitUsage;
}

}  // namespace polex
