#pragma once

#include <vector>

#include "adld/numerics/rng.hpp"
#include "adld/numerics/tape.hpp"

namespace adld {

inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 10.0;

// Diagonal Gaussian over a latent vector.
struct LatentBelief {
  std::vector<double> mean;
  std::vector<double> logvar;

  std::size_t dim() const { return mean.size(); }
};

// Batched belief on a tape; one row per item.
struct BeliefVar {
  Var mean;
  Var logvar;
};

std::vector<double> reparam_sample(const LatentBelief& b, Rng& rng);
// mean + exp(logvar / 2) * eps with eps drawn per row.
Var reparam_sample(Tape& tape, const BeliefVar& b, Rng& rng);

// KL(q || p), summed over dimensions.
double gaussian_kl(const LatentBelief& q, const LatentBelief& p);
// Per-row KL(q || p) as an (n x 1) column.
Var gaussian_kl(const BeliefVar& q, const BeliefVar& p);

// Splits a head output of width 2d into mean and clamped logvar.
BeliefVar split_belief(Var head);
// Row r of a batched belief.
LatentBelief belief_row(const BeliefVar& b, std::size_t r);

}  // namespace adld
