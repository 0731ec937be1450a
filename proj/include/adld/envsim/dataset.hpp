#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "adld/envsim/env.hpp"

namespace adld::env {

struct StepRecord {
  std::size_t t = 0;
  std::vector<double> s;
  std::vector<double> a;
  double r = 0.0;
  std::vector<double> c;  // empty when ground truth is unavailable
  bool done = false;

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

using Episode = std::vector<StepRecord>;

struct Dataset {
  EnvSpec spec;
  std::vector<Episode> episodes;
  std::uint64_t seed = 0;

  bool has_context() const;
  std::size_t num_steps() const;
};

// Expert rollouts; episode i uses seed derive_seed(seed, i). Worker count is
// capped by ADLD_THREADS and never changes the output.
Dataset generate_dataset(const EnvSpec& spec, std::size_t n_episodes,
                         std::uint64_t seed);
Episode rollout_expert(const EnvSpec& spec, std::size_t episode, std::uint64_t seed);

std::string dataset_to_text(const Dataset& d);
Dataset dataset_from_text(const std::string& text);
void dataset_save(const Dataset& d, const std::filesystem::path& path);
Dataset dataset_load(const std::filesystem::path& path);

// Worker count from ADLD_THREADS (default: hardware concurrency, at least 1).
std::size_t worker_count();

}  // namespace adld::env
