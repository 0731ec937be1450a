#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adld/causaldiff/model.hpp"
#include "adld/cli/config.hpp"
#include "adld/envsim/dataset.hpp"
#include "adld/evalprobe/probe.hpp"
#include "adld/latentid/stage1.hpp"
#include "adld/verify/diagnostics.hpp"

namespace adld::cli {

// Stage-1 posterior means at every usable anchor, next to the true context
// at the anchor step.
struct LatentTargets {
  eval::Rows latents;
  eval::Rows targets;
};
LatentTargets stage1_latents(const latent::Stage1Nets& nets, const env::Dataset& d);

// Held-out linear probe of the sampler's settled latents against the truth.
eval::ProbeResult walk_probe(const diff::Stage2Model& m, const env::Dataset& d,
                             std::uint64_t seed);

// Variant names of the ablation matrix, in table order.
const std::vector<std::string>& ablation_variants();
// full, no-zigzag, no-refine, same-schedule, no-latent (zeroed latents with
// refinement and zig-zag off).
diff::Stage2Config ablation_config(diff::Stage2Config base, const std::string& variant);

struct SeedReturns {
  std::uint64_t seed = 0;
  std::vector<double> returns;
  eval::RolloutStats stats;
};

// Closed-loop returns per evaluation seed; policy or planner by mode.
std::vector<SeedReturns> evaluate(const diff::Stage2Model& m, const env::EnvSpec& spec,
                                  const EvalSettings& e);

// Dynamics model the diagnostics run on. The fitted model trains on `d`
// when it carries contexts, else on fresh data from the spec.
std::unique_ptr<verify::DynamicsModel> dynamics_for(const VerifySettings& v,
                                                    const env::EnvSpec& spec,
                                                    const env::Dataset& d,
                                                    std::size_t episodes);

verify::Rows verify_grid(const VerifySettings& v, const env::EnvSpec& spec);

// One (amplitude, frequency) setting of the reward-drop sweep: the
// diagnostics on its dynamics plus returns of an oracle-latent and a
// zero-latent model trained on the same data.
verify::RewardDropInput reward_drop_setting(const env::EnvSpec& base, double amplitude,
                                            double frequency, const diff::Stage2Config& s2,
                                            const VerifySettings& v, const EvalSettings& e,
                                            std::uint64_t seed);

// Content-addressed store of derived artifacts.
class Cache {
 public:
  explicit Cache(std::filesystem::path dir) : dir_(std::move(dir)) {}
  static std::string key(std::string_view kind, const KeyValues& section,
                         std::span<const std::string> input_hashes);
  std::optional<std::string> get(const std::string& key) const;
  void put(const std::string& key, std::string_view bytes) const;

 private:
  std::filesystem::path dir_;
};

}  // namespace adld::cli
