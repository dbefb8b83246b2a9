#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "polex/pipeline.hpp"

namespace polex {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Pool that trains in well under a second: any model qualifies.
const char* kTinyConfig = R"(
[run]
seed = 5

[pool]
seeds = 1..2
threshold = 0
max_attempts = 1
eval_episodes = 3

[trainer.DQN]
max_steps = 1500
eval_interval = 500
dqn.learning_starts = 200

[trainer.A2C]
max_steps = 1500
eval_interval = 500

[trainer.PPO]
max_steps = 1500
eval_interval = 500
ppo.nsteps = 256

[dataset]
T = 20
n_per_model = 5

[classifier]
hidden = 8
mlp_hidden = 16
epochs = 2

[identify]
episodes = 3

[gail]
iterations = 2
max_cycles = 1
delta = 1000
expert_episodes = 3
eval_episodes = 3
generator_steps = 128
disc_hidden = 8
disc_updates = 2
checkpoint_every = 1
checkpoint_episodes = 2
probe_states = 10
probe_episodes = 2
fidelity_samples = 10
validation_probes = 10
)";

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "polex");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

json read_json(const fs::path& p) {
  std::ifstream is(p);
  return json::parse(is);
}

std::size_t file_count(const fs::path& dir) {
  if (!fs::exists(dir)) return 0;
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != ".polex.lock") ++n;
  return n;
}

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("polex_pipeline_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    config_ = root_ / "tiny.ini";
    std::ofstream(config_) << kTinyConfig;
  }
  void TearDown() override { fs::remove_all(root_); }

  std::vector<std::string> base(const std::string& out) const {
    return {"--config", config_.string(), "--out", (root_ / out).string()};
  }
  CliResult run(const std::string& out, std::vector<std::string> tail) const {
    auto args = base(out);
    args.insert(args.end(), tail.begin(), tail.end());
    return cli(args);
  }

  fs::path root_;
  fs::path config_;
};

// ---------------------------------------------------------------------------
// Configuration

TEST(PipelineConfigTest, DefaultsDeriveStageSeedsFromBase) {
  const auto a = PipelineConfig::defaults(7), b = PipelineConfig::defaults(8);
  EXPECT_EQ(a.pool.seeds, (std::vector<std::uint64_t>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10}));
  EXPECT_EQ(a.dataset_seed, derive_seed(7, 0xd5));
  EXPECT_EQ(a.gail.seed, derive_seed(7, 0x6a));
  EXPECT_NE(a.dataset_seed, b.dataset_seed);
  EXPECT_NE(a.dataset_seed, a.classifier.seed);
}

TEST(PipelineConfigTest, ParsesSectionsAndOverrides) {
  std::istringstream is(kTinyConfig);
  const auto c = PipelineConfig::parse(is);
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.pool.seeds, (std::vector<std::uint64_t>{1, 2}));
  EXPECT_EQ(c.pool.threshold, 0.0);
  EXPECT_EQ(c.T, 20);
  EXPECT_EQ(c.gail.disc_hidden, (std::vector<int>{8}));
  EXPECT_EQ(c.pool.trainer.at(Family::PPO).ppo.nsteps, 256);
  EXPECT_EQ(c.pool.trainer.at(Family::DQN).dqn.learning_starts, 200);
  EXPECT_EQ(c.watermark.trainer.at(Family::A2C).max_steps, 1500);
  EXPECT_EQ(c.dataset_seed, derive_seed(5, 0xd5));

  std::istringstream again(kTinyConfig);
  const auto o = PipelineConfig::parse(again, 9);
  EXPECT_EQ(o.seed, 9u);
  EXPECT_EQ(o.dataset_seed, derive_seed(9, 0xd5));

  std::istringstream explicit_seed("[dataset]\nseed = 42\n");
  EXPECT_EQ(PipelineConfig::parse(explicit_seed).dataset_seed, 42u);
}

TEST(PipelineConfigTest, SeedListSyntax) {
  std::istringstream range("[pool]\nseeds = 3..6\n");
  EXPECT_EQ(PipelineConfig::parse(range).pool.seeds, (std::vector<std::uint64_t>{3, 4, 5, 6}));
  std::istringstream list("[pool]\nseeds = 9, 2,4\n");
  EXPECT_EQ(PipelineConfig::parse(list).pool.seeds, (std::vector<std::uint64_t>{9, 2, 4}));
  for (const char* bad : {"[pool]\nseeds = 5..3\n", "[pool]\nseeds = 1,1\n", "[pool]\nseeds = -1\n",
                          "[pool]\nseeds = a\n"}) {
    std::istringstream is(bad);
    EXPECT_THROW(PipelineConfig::parse(is), FormatError) << bad;
  }
}

TEST(PipelineConfigTest, RejectsUnknownKeysAndBadValues) {
  for (const char* bad : {"[pool]\nthreshhold = 1\n", "[nope]\nx = 1\n", "[dataset]\nT = 0\n",
                          "[gail]\nmax_cycles = 1001\n", "[classifier]\nkind = gru\n", "[run]\nenv = pong\n",
                          "[trainer.XYZ]\nmax_steps = 1\n", "[trainer.PPO]\nppo.nope = 1\n",
                          "[classifier]\nmlp_baseline = maybe\n", "[dataset]\nT = 12abc\n"}) {
    std::istringstream is(bad);
    EXPECT_THROW(PipelineConfig::parse(is), FormatError) << bad;
  }
}

TEST(PipelineConfigTest, SnapshotListsEffectiveSettings) {
  std::istringstream is(kTinyConfig);
  const auto snap = PipelineConfig::parse(is).snapshot();
  EXPECT_EQ(snap.at("dataset.T"), "20");
  EXPECT_EQ(snap.at("run.seed"), "5");
  EXPECT_EQ(snap.at("trainer.PPO.ppo.nsteps"), "256");
  EXPECT_EQ(snap.at("pool.seeds"), "1,2");
}

// ---------------------------------------------------------------------------
// Digests and manifests

TEST(Digest, KnownSha256Vectors) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Digest, ManifestHashIgnoresOutputLocation) {
  RunManifest a;
  a.command = "build-dataset";
  a.config = {{"dataset.T", "200"}, {"run.out", "x"}, {"run.jobs", "1"}};
  a.inputs = {{"pool/pool.json", "ab"}};
  RunManifest b = a;
  b.config["run.out"] = "y";
  b.config["run.jobs"] = "4";
  b.args = {"--out", "y"};
  EXPECT_EQ(a.input_hash(), b.input_hash());
  b.config["dataset.T"] = "100";
  EXPECT_NE(a.input_hash(), b.input_hash());
  const json j = json::parse(a.to_json());
  for (const char* key : {"command", "args", "config", "seeds", "inputs", "artifacts", "input_hash", "started",
                          "finished", "exit_code"})
    EXPECT_TRUE(j.contains(key)) << key;
}

TEST_F(TempDir, DirectoryLockIsExclusive) {
  {
    DirectoryLock held(root_);
    EXPECT_THROW(DirectoryLock second(root_), DomainError);
    // A command on a locked directory stops before writing anything.
    const auto r = run("", {"train-shadows"});
    EXPECT_EQ(r.code, kExitDomain);
    EXPECT_FALSE(fs::exists(root_ / "pool"));
  }
  EXPECT_NO_THROW(DirectoryLock again(root_));
}

// ---------------------------------------------------------------------------
// Command line

TEST_F(TempDir, UsageErrorsExitTwoAndWriteNothing) {
  EXPECT_EQ(cli({}).code, kExitUsage);
  EXPECT_EQ(cli({"no-such-verb"}).code, kExitUsage);
  EXPECT_EQ(cli({"--jobs", "0", "train-shadows"}).code, kExitUsage);
  EXPECT_EQ(cli({"--config", (root_ / "missing.ini").string(), "train-shadows"}).code, kExitUsage);

  const auto r = run("out", {"fingerprint", (root_ / "nonexistent").string()});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("not found"), std::string::npos);
  EXPECT_EQ(file_count(root_ / "out"), 0u);

  EXPECT_EQ(run("out", {"build-dataset"}).code, kExitUsage);
  EXPECT_EQ(run("out", {"train-classifier"}).code, kExitUsage);
  EXPECT_EQ(run("out", {"casestudy-transfer"}).code, kExitUsage);
  EXPECT_EQ(file_count(root_ / "out"), 0u);
}

TEST_F(TempDir, EndToEndChain) {
  ASSERT_EQ(run("a", {"train-shadows"}).code, kExitOk);
  const fs::path a = root_ / "a";
  const json pool = read_json(a / "pool" / "pool.json");
  EXPECT_EQ(pool.at("models").size(), 6u);

  // Existing artifacts are never overwritten.
  const auto again = run("a", {"train-shadows"});
  EXPECT_EQ(again.code, kExitUsage);
  EXPECT_NE(again.err.find("refusing to overwrite"), std::string::npos);

  ASSERT_EQ(run("a", {"build-dataset"}).code, kExitOk);
  ASSERT_EQ(run("a", {"train-classifier"}).code, kExitOk);
  for (const char* f : {"dataset.csv", "classifier.bin", "classifier.bin.json", "classifier-report.json", "mlp.bin"})
    EXPECT_TRUE(fs::is_regular_file(a / f)) << f;
  const json report = read_json(a / "classifier-report.json");
  EXPECT_EQ(report.at("classifier").at("loss_curve").size(), 2u);
  EXPECT_EQ(report.at("train_size").get<int>() + report.at("test_size").get<int>(), 30);

  const std::string target = (a / "pool" / "models" / "PPO-1.json").string();
  const auto fp = run("a", {"fingerprint", target});
  ASSERT_EQ(fp.code, kExitOk) << fp.err;
  const json fpj = read_json(a / "fingerprint-PPO-1.json");
  int votes = 0;
  for (const auto& [_, v] : fpj.at("prediction").at("votes").items()) votes += v.get<int>();
  EXPECT_EQ(votes, 3);

  // --family skips the classifier entirely.
  const auto ex = run("b", {"extract", target, "--family", "PPO"});
  ASSERT_EQ(ex.code, kExitOk) << ex.err;
  const fs::path exdir = root_ / "b" / "extract-PPO-1";
  EXPECT_TRUE(fs::is_regular_file(exdir / "replica.json"));
  EXPECT_TRUE(fs::is_regular_file(exdir / "cycles.csv"));
  const json manifest = read_json(root_ / "b" / "manifest-extract-PPO-1.json");
  EXPECT_EQ(manifest.at("exit_code"), 0);
  EXPECT_EQ(manifest.at("inputs").size(), 1u);
  bool saw_replica = false;
  for (const auto& d : manifest.at("artifacts")) {
    EXPECT_EQ(d.at("sha256"), file_sha256(root_ / "b" / d.at("path").get<std::string>()));
    saw_replica = saw_replica || d.at("path") == "extract-PPO-1/replica.json";
  }
  EXPECT_TRUE(saw_replica);
  EXPECT_EQ(run("b", {"extract", target, "--family", "SAC"}).code, kExitUsage);

  // A deterministic policy evaluated against itself has no gap and full agreement.
  const std::string dqn = (a / "pool" / "models" / "DQN-1.json").string();
  const auto ev = run("a", {"evaluate", dqn, dqn});
  ASSERT_EQ(ev.code, kExitOk) << ev.err;
  const json evj = read_json(a / "evaluate-DQN-1-DQN-1.json");
  EXPECT_EQ(evj.at("reward_gap").get<double>(), 0.0);
  EXPECT_EQ(evj.at("fidelity").at("fraction_below").get<double>(), 1.0);
}

TEST_F(TempDir, RerunWithSameSeedReproducesArtifacts) {
  ASSERT_EQ(run("x", {"train-shadows"}).code, kExitOk);
  ASSERT_EQ(run("y", {"--jobs", "2", "train-shadows"}).code, kExitOk);
  const json mx = read_json(root_ / "x" / "manifest-train-shadows.json");
  const json my = read_json(root_ / "y" / "manifest-train-shadows.json");
  EXPECT_EQ(mx.at("artifacts"), my.at("artifacts"));
  EXPECT_EQ(mx.at("input_hash"), my.at("input_hash"));
  const auto other = run("z", {"--seed", "6", "build-dataset"});
  EXPECT_EQ(other.code, kExitUsage);  // no pool yet in z
}

}  // namespace
}  // namespace polex
