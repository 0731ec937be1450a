#include "adld/cli/experiments.hpp"

#include <filesystem>

#include "adld/causaldiff/rollout.hpp"
#include "adld/causaldiff/train.hpp"
#include "adld/numerics/errors.hpp"
#include "adld/numerics/io.hpp"

namespace adld::cli {

LatentTargets stage1_latents(const latent::Stage1Nets& nets, const env::Dataset& d) {
  if (!d.has_context()) throw ContractError("probing needs the true context in the dataset");
  LatentTargets out;
  for (const auto& ep : d.episodes) {
    const auto b = latent::episode_posteriors(nets, ep);
    for (std::size_t i = 0; i < b.beliefs.size(); ++i) {
      const auto& m = b.beliefs[i].mean;
      out.latents.emplace_back(m.begin(), m.end());
      out.targets.push_back(ep[b.first_anchor + i].c);
    }
  }
  return out;
}

eval::ProbeResult walk_probe(const diff::Stage2Model& m, const env::Dataset& d,
                             std::uint64_t seed) {
  const auto walk = diff::latent_walk(m, d, true, seed);
  return eval::linear_probe(walk.estimates, walk.truth, seed);
}

const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> names{"full", "no-zigzag", "no-refine", "same-schedule",
                                              "no-latent"};
  return names;
}

diff::Stage2Config ablation_config(diff::Stage2Config c, const std::string& variant) {
  if (variant == "full") {
  } else if (variant == "no-zigzag") {
    c.zigzag = false;
  } else if (variant == "no-refine") {
    c.refine = false;
  } else if (variant == "same-schedule") {
    c.schedule = diff::LevelSchedule::kSame;
  } else if (variant == "no-latent") {
    c.latent = diff::LatentSource::kZero;
    c.refine = false;
    c.zigzag = false;
  } else {
    throw ConfigError("unknown ablation variant '" + variant + "'");
  }
  return c;
}

std::vector<SeedReturns> evaluate(const diff::Stage2Model& m, const env::EnvSpec& spec,
                                  const EvalSettings& e) {
  if (e.seeds.empty()) throw ConfigError("key seeds: the seed list is empty");
  std::vector<SeedReturns> out;
  for (auto seed : e.seeds) {
    diff::RolloutOptions opt;
    opt.episodes = e.episodes;
    opt.seed = seed;
    opt.refresh = e.refresh;
    opt.first_episode = e.first_episode;
    auto r = m.cfg.mode == diff::GenMode::kPolicy ? diff::policy_act(m, spec, opt)
                                                  : diff::plan_and_act(m, spec, opt);
    out.push_back({seed, std::move(r.returns), r.stats});
  }
  return out;
}

std::unique_ptr<verify::DynamicsModel> dynamics_for(const VerifySettings& v,
                                                    const env::EnvSpec& spec,
                                                    const env::Dataset& d,
                                                    std::size_t episodes) {
  if (v.model == VerifySettings::Model::kAnalytic) {
    return std::make_unique<verify::AnalyticDynamics>(spec);
  }
  if (d.has_context()) {
    return std::make_unique<verify::FittedDynamics>(verify::FittedDynamics::fit(d, v.fit));
  }
  const auto fresh = env::generate_dataset(spec, episodes, derive_seed(v.fit.seed, 0xF17));
  return std::make_unique<verify::FittedDynamics>(verify::FittedDynamics::fit(fresh, v.fit));
}

verify::Rows verify_grid(const VerifySettings& v, const env::EnvSpec& spec) {
  const double offset = v.grid_offset.value_or(spec.context.offset);
  const double amplitude = v.grid_amplitude.value_or(spec.context.amplitude);
  verify::Rows grid = verify::context_grid(offset, amplitude, v.grid_points);
  const std::size_t dc = spec.context_dim();
  for (auto& row : grid) row.assign(dc, row[0]);
  return grid;
}

verify::RewardDropInput reward_drop_setting(const env::EnvSpec& base, double amplitude,
                                            double frequency, const diff::Stage2Config& s2,
                                            const VerifySettings& v, const EvalSettings& e,
                                            std::uint64_t seed) {
  env::EnvSpec spec = base;
  spec.context.amplitude = amplitude;
  spec.context.frequency = frequency;
  const auto d = env::generate_dataset(spec, v.drop_episodes, derive_seed(seed, 0xD50));

  verify::RewardDropInput in;
  in.m = amplitude;
  in.n = frequency;
  const auto model = dynamics_for(v, spec, d, v.drop_episodes);
  const auto grid = verify_grid(v, spec);
  Rng rng(derive_seed(seed, 0xD51));
  const std::vector<double> action(spec.action_dim, 0.0);
  in.sep = verify::k_separability(*model, grid, d, v.k_samples, action, rng).sep;
  if (grid.size() >= 2) {
    const auto probes = verify::probe_points(d, v.probes, rng);
    in.inj = verify::injectivity_matrix(*model, grid, probes, v.inj_samples, rng);
  } else {
    in.inj = Tensor({1, 1});
  }

  const auto returns_of = [&](diff::LatentSource source) {
    diff::Stage2Config cfg = s2;
    cfg.latent = source;
    cfg.refine = false;
    cfg.zigzag = false;
    const auto trained = diff::train_stage2(d, cfg, std::nullopt);
    std::vector<double> all;
    for (const auto& r : evaluate(trained.model, spec, e)) {
      all.insert(all.end(), r.returns.begin(), r.returns.end());
    }
    return all;
  };
  in.returns_with = returns_of(diff::LatentSource::kOracle);
  in.returns_without = returns_of(diff::LatentSource::kZero);
  return in;
}

std::string Cache::key(std::string_view kind, const KeyValues& section,
                       std::span<const std::string> input_hashes) {
  std::string text(kind);
  text += "\n" + format_kv_lines(section);
  for (const auto& h : input_hashes) text += h + "\n";
  return sha256_hex(text);
}

std::optional<std::string> Cache::get(const std::string& key) const {
  const auto p = dir_ / key;
  if (!std::filesystem::exists(p)) return std::nullopt;
  return read_file(p);
}

void Cache::put(const std::string& key, std::string_view bytes) const {
  std::filesystem::create_directories(dir_);
  write_file_atomic(dir_ / key, bytes);
}

}  // namespace adld::cli
