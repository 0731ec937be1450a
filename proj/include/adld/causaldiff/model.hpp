#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adld/causaldiff/schedule.hpp"
#include "adld/latentid/stage1.hpp"
#include "adld/numerics/checkpoint.hpp"
#include "adld/numerics/kv.hpp"
#include "adld/numerics/layers.hpp"

namespace adld::diff {

// What the denoiser generates per frame j of a block starting at step t:
//   planner-joint:     [a_{t+j}, s_{t+j+1}]
//   planner-state-idm: s_{t+1+j}, actions recovered by the inverse dynamics net
//   policy:            a_{t+j}
enum class GenMode { kPlannerJoint, kPlannerStateIdm, kPolicy };

// Where per-frame latents come from.
//   posterior: Stage-1 prior/posterior, refined during training and sampling
//   zero:      latent inputs held at zero (no-latent ablation)
//   oracle:    ground-truth context, normalized
enum class LatentSource { kPosterior, kZero, kOracle };

enum class ConditionKind { kNone, kReturn };

std::string to_string(GenMode m);
std::string to_string(LatentSource s);
std::string to_string(ConditionKind c);
std::string to_string(LevelSchedule s);
GenMode gen_mode_from(const std::string& s);
LatentSource latent_source_from(const std::string& s);
ConditionKind condition_from(const std::string& s);
LevelSchedule level_schedule_from(const std::string& s);

struct Stage2Config {
  GenMode mode = GenMode::kPlannerJoint;
  std::size_t horizon = 4;       // frames per generated block
  std::size_t exec_horizon = 1;  // frames executed before replanning
  std::size_t obs_horizon = 1;   // observed steps fed to the denoiser, current included
  std::size_t K = 100;
  double beta_min = 1e-4;
  double beta_max = 2e-2;
  double lambda_prior = 0.1;
  double lambda_rel = 0.1;
  double margin_scale = 0.05;  // margin = scale * running mean of the prior loss
  bool refine = true;
  bool zigzag = true;
  LevelSchedule schedule = LevelSchedule::kCausal;
  LatentSource latent = LatentSource::kPosterior;
  ConditionKind condition = ConditionKind::kNone;
  double cond_dropout = 0.1;
  double target_quantile = 0.9;
  bool noise_matched_posterior = false;
  std::size_t max_jump = 10;  // largest level decrement per denoiser call when sampling
  std::size_t hidden = 256;
  std::size_t history_hidden = 32;
  std::size_t idm_hidden = 64;
  bool idm_latent = true;
  std::size_t epochs = 20;
  std::size_t idm_epochs = 20;
  std::size_t batch = 64;
  double lr = 1e-3;
  std::uint64_t seed = 0;

  KeyValues to_kv() const;
  static Stage2Config from_kv(const KeyValues& kv);
  void validate() const;
};

// Observed prefix of one rollout: states s_0..s_tau, actions and rewards
// for steps 0..tau-1.
struct History {
  std::vector<std::vector<double>> states;
  std::vector<std::vector<double>> actions;
  std::vector<double> rewards;

  std::size_t tau() const { return states.size() - 1; }
};

struct FrameLayout {
  GenMode mode = GenMode::kPlannerJoint;
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;

  std::size_t dim() const;
  bool has_actions() const { return mode != GenMode::kPlannerStateIdm; }
  bool has_states() const { return mode != GenMode::kPolicy; }
  // Offset of the first latent step relative to the block start.
  std::size_t time_offset() const { return mode == GenMode::kPlannerStateIdm ? 1 : 0; }
};

// Inputs of one denoiser call, batched over rows.
struct DenoiseInput {
  Var x;                                   // rows x (T * frame_dim), normalized
  std::vector<std::vector<std::size_t>> levels;  // rows x T
  Var latents;                             // rows x (T * latent_dim)
  std::vector<Var> history;                // oldest first, rows x (ds + da) each, normalized
  Var state;                               // rows x ds, normalized current state
  Var cond;                                // rows x 2: [y, has_y]
};

class Denoiser {
 public:
  Denoiser() = default;
  Denoiser(const FrameLayout& layout, std::size_t T, std::size_t K, std::size_t latent_dim,
           const Stage2Config& cfg, Rng& rng);

  std::size_t horizon() const { return T_; }
  std::size_t frame_dim() const { return frame_dim_; }
  std::size_t latent_dim() const { return latent_dim_; }

  // Clean-frame estimates for every frame, rows x (T * frame_dim).
  Var predict(Tape& tape, const DenoiseInput& in, Grad g) const;
  void collect(const std::string& prefix, ParamRefs& out);

 private:
  std::size_t T_ = 0, K_ = 0, frame_dim_ = 0, latent_dim_ = 0, state_dim_ = 0;
  bool use_history_ = false;
  Gru history_;
  Mlp net_;
};

// a_t from (s_t, s_{t+1} [, c]); inputs and output in raw units.
class IdmNet {
 public:
  IdmNet() = default;
  IdmNet(std::size_t state_dim, std::size_t action_dim, std::size_t latent_dim,
         std::size_t hidden, Rng& rng);

  std::size_t latent_dim() const { return latent_dim_; }
  Var forward(Tape& tape, Var s, Var s_next, Var c, Grad g) const;
  std::vector<double> infer(std::span<const double> s, std::span<const double> s_next,
                            std::span<const double> c) const;
  void fit_normalizers(const latent::Normalizer& state, const latent::Normalizer& action);
  void collect(const std::string& prefix, ParamRefs& out);

 private:
  std::size_t latent_dim_ = 0;
  latent::Normalizer state_norm_, action_norm_;
  Mlp net_;
};

struct Stage2Model {
  Stage2Config cfg;
  FrameLayout layout;
  NoiseSchedule schedule;
  std::size_t latent_dim = 0;
  std::optional<latent::Stage1Nets> stage1;  // required for the posterior source
  Denoiser theta;
  std::optional<IdmNet> idm;
  latent::Normalizer state_norm, action_norm, context_norm;
  double y_mean = 0.0, y_scale = 1.0, y_target = 0.0;
  std::size_t obs_block = 0;  // Stage-1 history frames, 0 without Stage 1
  bool obs_future = true;
  std::string stage1_path, stage1_hash;

  static Stage2Model create(const Stage2Config& cfg, std::size_t state_dim,
                            std::size_t action_dim, std::size_t context_dim,
                            std::optional<latent::Stage1Nets> stage1);

  latent::Normalizer frame_norm() const;
  // Parameters updated by Stage-2 training.
  ParamRefs trainable();
  ParamRefs theta_params();
  ParamRefs posterior_params();
  ParamRefs prior_params();

  Checkpoint to_checkpoint() const;
  static Stage2Model from_checkpoint(const Checkpoint& c);
};

}  // namespace adld::diff
