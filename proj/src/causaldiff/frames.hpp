#pragma once

// Frame plumbing shared by training and sampling.

#include <vector>

#include "adld/causaldiff/model.hpp"
#include "adld/envsim/dataset.hpp"

namespace adld::diff::detail {

using Vec = std::vector<double>;

// Generated frame j of the block starting at tau, raw units.
Vec block_frame(const FrameLayout& layout, const env::Episode& ep, std::size_t tau,
                std::size_t j);

using Observed = History;

Observed observed_prefix(const env::Episode& ep, std::size_t tau);

// One block in flight: raw frames and the latent attached to each frame.
struct RowBlock {
  const Observed* obs = nullptr;
  std::vector<Vec> frames;   // T raw frames
  std::vector<Vec> latents;  // T latents
};

// Stage-1 observation frames for steps u in [from, to] of a row, filling
// steps at or after tau from the block. Missing modalities come from the
// inverse dynamics net (actions) or the Stage-1 decoders (states, rewards).
std::vector<Vec> stage1_frames(const Stage2Model& m, const RowBlock& row, long from, long to);

// Normalized [s, a] history frames for steps tau-T_o+1 .. tau-1.
std::vector<Vec> history_frames(const Stage2Model& m, const Observed& obs);

// Denoiser inputs for rows that share nothing but shapes.
struct ConditionRows {
  std::vector<std::vector<Vec>> history;  // per row, oldest first
  std::vector<Vec> state;                 // normalized s_tau
  std::vector<Vec> cond;                  // [y, has_y]
};

DenoiseInput denoise_input(Tape& tape, const Tensor& x,
                           const std::vector<std::vector<std::size_t>>& levels, Var latents,
                           const ConditionRows& c);

Tensor stack_rows(const std::vector<Vec>& rows);
Vec row_of(const Tensor& t, std::size_t r);

}  // namespace adld::diff::detail
