#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "adld/causaldiff/model.hpp"
#include "adld/envsim/dataset.hpp"

namespace adld::diff {

struct BlockItem {
  std::size_t episode = 0;
  std::size_t tau = 0;  // block start; s_tau is the observed state
};

// Block starts with room for the Stage-1 windows, the observed history and
// one frame past the block.
std::vector<BlockItem> block_items(const env::Dataset& d, const Stage2Model& m);

// Fits normalizers, condition statistics and target on the dataset.
void fit_stage2_statistics(Stage2Model& m, const env::Dataset& d);

// Mean reward from tau to the end of the episode.
double reward_to_go(const env::Episode& ep, std::size_t tau);

struct BlockBatch {
  std::vector<BlockItem> items;
  std::uint64_t noise_seed = 0;  // levels, noise, latent samples and dropout
};

// Loss terms of one denoise-and-refine step. Without refinement only `diff`
// and `total` are set.
//   diff:  denoiser tracked, posterior latents held constant
//   post:  denoiser frozen, posterior latents live
//   prior: denoiser frozen, prior latents live (previous latent held constant)
//   rel:   softplus(log post - log sg(prior) + margin), per block
//   dr:    post + lambda_prior prior + lambda_rel rel
struct RefineLosses {
  Var diff, post, prior, rel, dr, total;
  bool refined = false;
};

// softplus(log post - log sg(prior) + margin), rows guarded against log 0.
Var relative_loss(Var post_rows, Var prior_rows, double margin);

RefineLosses refine_losses(Tape& tape, const Stage2Model& m, const env::Dataset& d,
                           const BlockBatch& batch, double margin);

struct LossReport {
  double diff = 0, post = 0, prior = 0, rel = 0, dr = 0, total = 0;
};

struct Stage2Result {
  Stage2Model model;
  std::vector<LossReport> history;  // per epoch
  std::vector<double> idm_history;
};

Stage2Result train_stage2(const env::Dataset& d, const Stage2Config& cfg,
                          std::optional<latent::Stage1Nets> stage1);

// Per-episode, per-step latents used as IDM inputs for the transition t -> t+1.
using StepLatents = std::vector<std::vector<std::vector<double>>>;

// Latents for the arrival step of every transition under the model's source.
StepLatents transition_latents(const Stage2Model& m, const env::Dataset& d);

struct IdmTraining {
  std::size_t hidden = 64;
  std::size_t epochs = 20;
  std::size_t batch = 64;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

// Regresses a_t on (s_t, s_{t+1}[, latent]). Empty latents train without them.
IdmNet train_idm(const env::Dataset& d, const StepLatents& latents, const IdmTraining& opt,
                 std::vector<double>* history = nullptr);
double idm_mse(const IdmNet& idm, const env::Dataset& d, const StepLatents& latents);

}  // namespace adld::diff
