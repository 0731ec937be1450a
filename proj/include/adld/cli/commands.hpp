#pragma once

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "adld/cli/config.hpp"

namespace adld::cli {

// Provenance record of one command run, written atomically when it ends.
struct RunManifest {
  struct File {
    std::string role;  // empty for outputs
    std::string path;
    std::string sha256;
  };
  std::string command;
  std::string config_hash;
  std::string build;
  std::string started, finished;  // UTC, ISO 8601
  std::vector<File> inputs;
  std::vector<File> outputs;

  std::string to_json() const;
  static RunManifest from_json(const std::string& text);
};

std::string build_id();

// Output directory bookkeeping for one command: resolved-config echo,
// hashed inputs, atomic outputs and the closing manifest.
class Run {
 public:
  Run(std::string command, const ResolvedConfig& cfg);

  const ResolvedConfig& cfg() const { return cfg_; }
  std::filesystem::path path(std::string_view name) const { return cfg_.out_dir / name; }
  // Hashes the file; the hash is returned for cache keys.
  std::string input(std::string role, const std::filesystem::path& p);
  void output(std::string_view name, std::string_view bytes);
  // Writes the manifest and returns its path.
  std::filesystem::path finish();

 private:
  ResolvedConfig cfg_;
  RunManifest manifest_;
};

// Ablation flags of train-stage2, applied on top of [stage2].
struct Stage2Flags {
  bool no_refine = false;
  bool no_zigzag = false;
  std::optional<std::string> schedule;
};
void apply(const Stage2Flags& f, diff::Stage2Config& c);

// Each command returns the manifest path.
std::filesystem::path cmd_gen_data(const ResolvedConfig& cfg);
std::filesystem::path cmd_train_stage1(const ResolvedConfig& cfg,
                                       const std::filesystem::path& data);
std::filesystem::path cmd_train_stage2(const ResolvedConfig& cfg,
                                       const std::filesystem::path& data,
                                       const std::optional<std::filesystem::path>& stage1);
std::filesystem::path cmd_eval(const ResolvedConfig& cfg, const std::filesystem::path& stage2,
                               const std::optional<std::filesystem::path>& against);
std::filesystem::path cmd_verify(const ResolvedConfig& cfg,
                                 const std::optional<std::filesystem::path>& data);
std::filesystem::path cmd_probe(const ResolvedConfig& cfg, const std::filesystem::path& data,
                                const std::optional<std::filesystem::path>& stage1,
                                const std::vector<std::size_t>& sizes);
std::filesystem::path cmd_ablate(const ResolvedConfig& cfg, const std::filesystem::path& data,
                                 const std::optional<std::filesystem::path>& stage1,
                                 const std::vector<std::string>& variants);

// Command-line entry point. Exit codes: 0 success, 2 config or contract
// error, 3 numeric error, 4 file or format error, 1 anything else.
int run(int argc, const char* const* argv);

}  // namespace adld::cli
