#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "adld/envsim/dataset.hpp"
#include "adld/latentid/stage1.hpp"
#include "adld/numerics/layers.hpp"

namespace adld::verify {

using Vec = std::vector<double>;
using Rows = std::vector<Vec>;

// Exact 1-D W1: both sets resampled to a common size on the quantile grid,
// then the mean absolute difference of the sorted values.
double w1_empirical(std::span<const double> a, std::span<const double> b);
// Sliced W1: mean 1-D W1 over fixed-seed random unit projections.
double w1_sliced(const Rows& a, const Rows& b, std::size_t projections = 64,
                 std::uint64_t seed = 0x511CED);
// 1-D exact when the rows have one entry, sliced otherwise.
double w1(const Rows& a, const Rows& b);

// Conditional transition density p(x' | x, a, c) with a sampler.
class DynamicsModel {
 public:
  virtual ~DynamicsModel() = default;
  virtual std::size_t state_dim() const = 0;
  virtual std::size_t action_dim() const = 0;
  virtual std::size_t context_dim() const = 0;
  virtual double log_density(std::span<const double> x_next, std::span<const double> x,
                             std::span<const double> a, std::span<const double> c) const = 0;
  virtual Vec sample(std::span<const double> x, std::span<const double> a,
                     std::span<const double> c, Rng& rng) const = 0;
};

// Gaussian densities read off an env spec. Point-mass position is a
// deterministic integral of velocity, so its density covers velocity only.
class AnalyticDynamics final : public DynamicsModel {
 public:
  explicit AnalyticDynamics(env::EnvSpec spec);
  std::size_t state_dim() const override { return spec_.state_dim; }
  std::size_t action_dim() const override { return spec_.action_dim; }
  std::size_t context_dim() const override { return spec_.context_dim(); }
  double log_density(std::span<const double> x_next, std::span<const double> x,
                     std::span<const double> a, std::span<const double> c) const override;
  Vec sample(std::span<const double> x, std::span<const double> a, std::span<const double> c,
             Rng& rng) const override;

 private:
  env::EnvSpec spec_;
};

struct FitConfig {
  std::size_t hidden = 64;
  std::size_t epochs = 30;
  std::size_t batch = 128;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

// Mean net on normalized [x, a, c] predicting the normalized state change,
// plus one learned log-variance per state dimension. Trained by Gaussian NLL.
class FittedDynamics final : public DynamicsModel {
 public:
  static FittedDynamics fit(const env::Dataset& d, const FitConfig& cfg,
                            std::vector<double>* nll_history = nullptr);

  std::size_t state_dim() const override { return ds_; }
  std::size_t action_dim() const override { return da_; }
  std::size_t context_dim() const override { return dc_; }
  double log_density(std::span<const double> x_next, std::span<const double> x,
                     std::span<const double> a, std::span<const double> c) const override;
  Vec sample(std::span<const double> x, std::span<const double> a, std::span<const double> c,
             Rng& rng) const override;
  // Raw-unit mean and per-dim log-variance.
  std::pair<Vec, Vec> predict(std::span<const double> x, std::span<const double> a,
                              std::span<const double> c) const;

 private:
  std::size_t ds_ = 0, da_ = 0, dc_ = 0;
  latent::Normalizer in_norm_, delta_norm_;
  Mlp net_;
  Tensor logvar_;  // normalized units
};

struct Probe {
  Vec x;
  Vec a;
};

// Transitions drawn uniformly from a dataset.
std::vector<Probe> probe_points(const env::Dataset& d, std::size_t n, Rng& rng);

// Inj(c_i, c_j) = W1 between next-state samples under c_i and c_j, averaged
// over probe points. Symmetric with a zero diagonal.
Tensor injectivity_matrix(const DynamicsModel& model, const Rows& grid,
                          std::span<const Probe> probes, std::size_t n_samples, Rng& rng);

// log k for the four points under context c, all with the same action.
double spectral_ratio_log_k(const DynamicsModel& model, std::span<const double> x_t,
                            std::span<const double> xbar_t, std::span<const double> x_prev,
                            std::span<const double> xbar_prev, std::span<const double> a,
                            std::span<const double> c);

struct KSampleSet {
  Rows grid;
  std::vector<Vec> log_k;  // per context, one entry per pair
  std::size_t pairs = 0;
};

struct Separability {
  KSampleSet samples;
  Tensor sep;  // W1 between the per-context log k samples
};

// Pairs (x_{t-1}, x_t) and (xbar_{t-1}, xbar_t) come from transitions of two
// different trajectories; the same pairs are scored under every context.
// With fewer than two trajectories xbar is x plus Gaussian jitter at 0.1 of
// the per-dim state std.
Separability k_separability(const DynamicsModel& model, const Rows& grid, const env::Dataset& d,
                            std::size_t n_pairs, std::span<const double> action, Rng& rng);

// Evenly spaced grid offset + amplitude * [-1, 1]; one point when amplitude is 0.
Rows context_grid(double offset, double amplitude, std::size_t m);

struct RewardDropInput {
  double m = 0.0;  // context amplitude
  double n = 0.0;  // context frequency
  Tensor sep;
  Tensor inj;
  std::vector<double> returns_with;
  std::vector<double> returns_without;
};

struct RewardDropRow {
  double m = 0.0, n = 0.0;
  double sep = 0.0;  // mean off-diagonal entry, 0 for a single-point grid
  double inj = 0.0;
  double with_mean = 0.0, without_mean = 0.0;
  double gap = 0.0;  // (with - without) / |with|
  double gap_se = 0.0;
};

std::vector<RewardDropRow> reward_drop_analysis(std::span<const RewardDropInput> settings);
double sep_gap_spearman(std::span<const RewardDropRow> rows);

double mean_off_diagonal(const Tensor& m);
double max_off_diagonal(const Tensor& m);
double min_off_diagonal(const Tensor& m);

struct Thresholds {
  double k_independent = 0.05;  // every Sep entry below this
  double separable = 0.1;       // every off-diagonal Sep entry above this
  double injective = 0.05;      // every off-diagonal Inj entry above this
};

struct Report {
  std::string inj_tsv, sep_tsv, k_samples_tsv, reward_drop_tsv, summary;
};

std::string matrix_tsv(const Tensor& m, const Rows& grid);
std::string k_samples_tsv(const KSampleSet& k);
std::string reward_drop_tsv(std::span<const RewardDropRow> rows);
std::string summary_text(const Tensor& inj, const Tensor& sep, std::span<const RewardDropRow> drop,
                         const Thresholds& th);

}  // namespace adld::verify
