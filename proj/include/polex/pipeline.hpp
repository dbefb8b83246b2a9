#pragma once

// Configuration, run manifests and the command-line verbs that chain the
// stages: shadow pool, dataset, classifier, identification, extraction,
// evaluation and the two case studies.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "polex/attacks.hpp"
#include "polex/fingerprint.hpp"
#include "polex/gail.hpp"

namespace polex {

/// Every stage setting in one place. The pool symbols map to keys:
/// families [pool] families, seeds [pool] seeds, reward threshold
/// [pool] threshold, sequence length [dataset] T.
struct PipelineConfig {
  std::string env_id = "cartpole";
  std::uint64_t seed = 0;  // base seed; stage seeds derive from it unless set explicitly
  std::filesystem::path out = "runs/default";
  int jobs = 1;

  PoolConfig pool;
  int T = 200;
  int n_per_model = 50;
  std::uint64_t dataset_seed = 0;
  ClassifierConfig classifier;
  bool mlp_baseline = true;
  int identify_episodes = 11;
  std::uint64_t identify_seed = 0;
  GailConfig gail;
  TransferConfig transfer;
  WatermarkConfig watermark;
  int watermark_trials = 5;
  /// [trainer.<FAMILY>] keys as written; applied on top of the family defaults.
  std::map<Family, std::map<std::string, std::string>> trainer_overrides;

  /// Effective settings as flat "section.key" -> value, for manifests.
  std::map<std::string, std::string> snapshot() const;

  /// Built-in defaults with stage seeds derived from `seed`.
  static PipelineConfig defaults(std::uint64_t seed = 0);
  /// INI-style sections. Unknown keys and out-of-range values raise
  /// FormatError. A seed override replaces [run] seed before stage seeds
  /// are derived.
  static PipelineConfig parse(std::istream& is, std::optional<std::uint64_t> seed_override = std::nullopt);
  static PipelineConfig load(const std::filesystem::path& path,
                             std::optional<std::uint64_t> seed_override = std::nullopt);
};

std::string sha256_hex(std::string_view data);
std::string file_sha256(const std::filesystem::path& path);

struct FileDigest {
  std::string path;
  std::string sha256;
};

/// Record of one command run. Timestamps are the only fields that differ
/// between reruns of a deterministic stage.
struct RunManifest {
  std::string command;
  std::vector<std::string> args;
  std::map<std::string, std::string> config;
  std::map<std::string, std::uint64_t> seeds;
  std::vector<FileDigest> inputs;
  std::vector<FileDigest> artifacts;
  std::string started;
  std::string finished;
  int exit_code = 0;

  /// Hash over command, args, config and input digests.
  std::string input_hash() const;
  std::string to_json() const;
};

/// Exclusive advisory lock on <dir>/.polex.lock, released on destruction.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  int fd_ = -1;
};

enum ExitCode : int { kExitOk = 0, kExitDomain = 1, kExitUsage = 2 };

/// Entry point of the command-line tool; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace polex
