#pragma once

#include <span>
#include <vector>

#include "adld/causaldiff/model.hpp"

namespace adld::diff {

using Frames = std::vector<std::vector<double>>;

// One block to generate. All rows of a call share tau.
struct SampleRow {
  const History* history = nullptr;
  std::vector<double> c_prev;  // latent of the last executed frame, zeros at start
  std::vector<double> oracle;  // ground-truth context for the oracle source
};

struct SampleOptions {
  bool refresh = true;  // posterior refresh between the two descents of a frame
  bool record_trace = false;
};

struct SampleResult {
  std::vector<Frames> frames;           // rows x T, raw units
  std::vector<Frames> latents;          // rows x T, latents in force at the end
  std::vector<Frames> posterior_means;  // rows x T, empty where not refreshed
  std::vector<Frames> prior_means;      // rows x T, last prior belief per frame
  std::vector<std::vector<std::size_t>> trace;  // level configuration after every call
};

// All frames start at level K. For frame j: descend to k_1 (later frames
// drop to the staircase behind it) with prior latents, refresh frame j's
// latent from the Stage-1 posterior over the partially denoised frames j and
// j+1, then descend frame j to 0. The last frame keeps its prior latent.
SampleResult zigzag_sample(const Stage2Model& m, std::span<const SampleRow> rows, Rng& rng,
                           const SampleOptions& opt = {});

// Blocks given at the causal levels (normalized, rows x T*D) denoised with
// fixed latents: at step j frame j reaches 0 and later frames drop a notch.
Tensor ar_denoise_block(const Stage2Model& m, Tensor x, const Tensor& latents,
                        std::span<const SampleRow> rows,
                        std::vector<std::vector<std::size_t>>* trace = nullptr);

}  // namespace adld::diff
