#pragma once

#include <cstdint>
#include <vector>

#include "adld/causaldiff/model.hpp"
#include "adld/causaldiff/sample.hpp"
#include "adld/envsim/dataset.hpp"
#include "adld/evalprobe/probe.hpp"

namespace adld::diff {

struct RolloutOptions {
  std::size_t episodes = 5;
  std::uint64_t seed = 0;
  bool refresh = true;  // posterior refresh inside the sampler
  bool record_states = false;
  // Env episode index of the first evaluation episode, kept clear of the
  // indices used for training data.
  std::size_t first_episode = 100000;
};

struct RolloutResult {
  std::vector<double> returns;
  eval::RolloutStats stats;
  std::vector<std::vector<std::vector<double>>> states;  // per episode, when recorded
};

// Closed-loop control: sample a block from the observed history, execute the
// first exec_horizon actions, slide. Episodes run in parallel, each with its
// own env and sampler seed.
RolloutResult plan_and_act(const Stage2Model& m, const env::EnvSpec& spec,
                           const RolloutOptions& opt);
RolloutResult policy_act(const Stage2Model& m, const env::EnvSpec& spec,
                         const RolloutOptions& opt);

// Teacher-forced walk over recorded episodes: at every step the sampler runs
// on the true history and the latent it settles on for the first frame is
// kept, next to the true context at that frame's step.
struct LatentWalk {
  eval::Rows estimates;  // posterior mean if refreshed, else prior mean
  eval::Rows truth;
};

LatentWalk latent_walk(const Stage2Model& m, const env::Dataset& d, bool refresh,
                       std::uint64_t seed);

}  // namespace adld::diff
