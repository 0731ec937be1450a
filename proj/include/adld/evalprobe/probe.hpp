#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "adld/numerics/tensor.hpp"

namespace adld::eval {

using Rows = std::vector<std::vector<double>>;

struct ProbeResult {
  double mse = 0.0;        // mean squared error per target entry, test split
  double r2 = 0.0;         // 1 - SS_res / SS_tot over all target dims, test split
  bool r2_defined = true;  // false when test targets have zero variance
  double train_r2 = 0.0;
  Tensor weights;  // (latent_dim + 1) x target_dim, last row is the intercept
  std::uint64_t split_seed = 0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
};

// Ridge least squares on a seeded 80/20 split.
ProbeResult linear_probe(const Rows& latents, const Rows& targets,
                         std::uint64_t split_seed, double ridge = 1e-6);

struct ClusterResult {
  std::size_t k = 0;
  std::vector<std::size_t> assignments;
  double purity = 0.0;
};

// Labels are equal-frequency bins of a scalar ground truth.
std::vector<std::size_t> equal_frequency_bins(std::span<const double> values,
                                              std::size_t bins);

// k-means++ seeding and Lloyd iterations (at most 100), scored by purity
// against equal-frequency bins of c_true.
ClusterResult kmeans_purity(const Rows& latents, std::span<const double> c_true,
                            std::size_t k, std::uint64_t seed, std::size_t bins = 5);

struct RolloutStats {
  double mean = 0.0;
  double std = 0.0;     // population
  double std_err = 0.0;  // sample std / sqrt(n); 0 when n == 1
  std::size_t n = 0;
  bool single = false;
};

RolloutStats rollout_stats(std::span<const double> returns);
// Welch t score of mean(a) - mean(b).
double welch_t(const RolloutStats& a, const RolloutStats& b);
// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);
double pearson(std::span<const double> x, std::span<const double> y);

}  // namespace adld::eval
