#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "adld/causaldiff/model.hpp"
#include "adld/envsim/env.hpp"
#include "adld/latentid/stage1.hpp"
#include "adld/numerics/kv.hpp"
#include "adld/verify/diagnostics.hpp"

namespace adld::cli {

// Config file grammar, one item per line:
//   # comment             (also after a value)
//   key = value           before any header: seed, out_dir
//   [section]             one of env, stage1, stage2, eval, verify
//   key = value           inside a section
// Keys may not repeat within a section. Unknown sections and keys are errors.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "out";
  KeyValues env, stage1, stage2, eval, verify;
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

struct EvalSettings {
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t episodes = 5;  // per seed
  std::size_t first_episode = 100000;
  bool refresh = true;
};

struct VerifySettings {
  enum class Model { kAnalytic, kFitted };
  Model model = Model::kAnalytic;
  // Unset grid bounds follow the env's context offset and amplitude.
  std::optional<double> grid_offset, grid_amplitude;
  std::size_t grid_points = 5;
  std::size_t k_samples = 600;
  std::size_t inj_samples = 1000;
  std::size_t probes = 16;
  verify::Thresholds thresholds;
  verify::FitConfig fit;
  // Reward-drop sweep: "m:n" pairs, empty to skip.
  std::vector<std::pair<double, double>> drop_grid;
  std::size_t drop_episodes = 20;
};

// Every section with defaults filled in and keys checked.
struct ResolvedConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
  env::EnvSpec spec;
  std::size_t episodes = 50;
  latent::Stage1Config stage1;
  diff::Stage2Config stage2;
  EvalSettings eval;
  VerifySettings verify;
};

// Section seeds default to the global seed.
ResolvedConfig resolve(const ExperimentConfig& cfg);

KeyValues env_kv(const ResolvedConfig& r);
KeyValues eval_kv(const EvalSettings& e);
KeyValues verify_kv(const VerifySettings& v);

// The resolved config in the input grammar, every key explicit.
std::string echo(const ResolvedConfig& r);

std::vector<std::uint64_t> parse_seed_list(const std::string& key, const std::string& v);
std::vector<std::size_t> parse_count_list(const std::string& key, const std::string& v);

}  // namespace adld::cli
