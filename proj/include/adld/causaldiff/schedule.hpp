#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "adld/numerics/rng.hpp"

namespace adld::diff {

// Forward-noising schedule. Arrays are indexed 0..K with alpha_bar[0] = 1.
struct NoiseSchedule {
  std::size_t K = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
};

// Linear beta ramp from beta_min (step 1) to beta_max (step K).
NoiseSchedule make_schedule(std::size_t K, double beta_min, double beta_max);

// k_i = round(i K / T) for i = 1..T.
std::vector<std::size_t> causal_levels(std::size_t T, std::size_t K);

// sqrt(abar_k) x0 + sqrt(1 - abar_k) eps.
std::vector<double> forward_noise(std::span<const double> x0, std::size_t k,
                                  const NoiseSchedule& s, Rng& rng);
std::vector<double> forward_noise(std::span<const double> x0, std::size_t k,
                                  const NoiseSchedule& s, std::span<const double> eps);

// Deterministic move from level ka to kb < ka holding the clean estimate fixed.
std::vector<double> level_jump(std::span<const double> x_ka, std::span<const double> x0_hat,
                               std::size_t ka, std::size_t kb, const NoiseSchedule& s);
void level_jump_inplace(std::span<double> x, std::span<const double> x0_hat, std::size_t ka,
                        std::size_t kb, const NoiseSchedule& s);

enum class LevelSchedule { kCausal, kSame, kRandom };

// Per-frame training levels for one block.
//   causal: frames before a random offset are clean; the rest climb a
//           staircase of K/T per frame starting in (0, K/T]. One block in
//           ten blends the flat level K with the causal levels instead.
//   same:   every frame at K/2.
//   random: independent uniform levels in [0, K].
std::vector<std::size_t> training_levels(LevelSchedule kind, std::size_t T, std::size_t K,
                                         Rng& rng);

// Sinusoidal features of k / K, width 8.
inline constexpr std::size_t kLevelEmbedDim = 8;
std::vector<double> level_embedding(std::size_t k, std::size_t K);

}  // namespace adld::diff
