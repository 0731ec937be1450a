#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "adld/envsim/dataset.hpp"
#include "adld/numerics/checkpoint.hpp"
#include "adld/numerics/gaussian.hpp"
#include "adld/numerics/layers.hpp"

namespace adld::latent {

enum class Modality { kState, kStateAction, kStateActionReward };
enum class PriorInput { kSample, kMean };

std::string to_string(Modality m);
Modality modality_from(const std::string& s);

struct Stage1Config {
  std::size_t block = 6;  // history frames before the anchor
  std::size_t latent_dim = 4;
  double kl_weight = 0.01;
  double lr = 3e-4;
  std::size_t batch = 16;   // segments per minibatch
  std::size_t chain = 8;    // consecutive anchors per segment
  std::size_t epochs = 50;
  Modality modality = Modality::kStateAction;
  PriorInput prior_input = PriorInput::kSample;
  bool use_future = true;
  std::size_t embed = 32;
  std::size_t hidden = 64;
  std::size_t gru = 32;
  std::size_t prior_hidden = 32;
  std::size_t decoder_hidden = 64;
  std::uint64_t seed = 0;

  std::map<std::string, std::string> to_kv() const;
  // Unknown keys raise ConfigError naming the key.
  static Stage1Config from_kv(const std::map<std::string, std::string>& kv);
  void validate() const;
};

// Observation frame of one step under the modality: [s, a, r] prefix.
std::vector<double> frame_of(const env::StepRecord& r, Modality m);
std::size_t frame_dim(std::size_t state_dim, std::size_t action_dim, Modality m);

// Frames x_{t-T..t+1} around anchor t (x_{t-T..t} without the future frame).
struct BlockWindow {
  std::vector<std::vector<double>> frames;
  std::size_t anchor = 0;
  std::size_t episode = 0;
  std::size_t block = 0;
};

struct BlockExtraction {
  std::vector<BlockWindow> windows;
  std::size_t skipped_episodes = 0;
};

BlockExtraction extract_blocks(const env::Dataset& d, std::size_t block,
                               Modality m = Modality::kStateAction,
                               bool use_future = true);

// Anchors usable in an episode of length n: [block, n - 2] with the future
// frame, [block, n - 1] without.
std::pair<std::size_t, std::size_t> anchor_range(std::size_t n, std::size_t block,
                                                 bool use_future);

// Per-dimension standardization.
struct Normalizer {
  Tensor mean;
  Tensor scale;  // standard deviation, floored

  static Normalizer fit(const std::vector<std::vector<double>>& rows);
  static Normalizer identity(std::size_t dim);
  // The first n dimensions.
  Normalizer head(std::size_t n) const;
  std::size_t dim() const { return mean.size(); }
  Var normalize(Tape& tape, Var x) const;
  Var denormalize(Tape& tape, Var x) const;
  std::vector<double> normalize(std::span<const double> x) const;
  void collect(const std::string& prefix, ParamRefs& out);
};

class Stage1Nets {
 public:
  Stage1Nets() = default;
  Stage1Nets(const Stage1Config& cfg, std::size_t state_dim, std::size_t action_dim,
             Rng& rng);

  const Stage1Config& config() const { return cfg_; }
  std::size_t state_dim() const { return state_dim_; }
  std::size_t action_dim() const { return action_dim_; }
  std::size_t latent_dim() const { return cfg_.latent_dim; }
  std::size_t frame_dim() const;
  bool uses_actions() const { return cfg_.modality != Modality::kState; }
  bool uses_reward() const { return cfg_.modality == Modality::kStateActionReward; }

  // Per-frame encoder features of raw frames (rows = batch).
  Var frame_features(Tape& tape, Var raw_frame, Grad g) const;
  // GRU over features oldest to newest, Gaussian head on the last state.
  BeliefVar posterior_from_features(Tape& tape, std::span<const Var> features,
                                    Grad g) const;
  BeliefVar posterior(Tape& tape, std::span<const Var> raw_frames, Grad g) const;
  BeliefVar prior(Tape& tape, Var c_prev, Grad g) const;
  // Raw state prediction for s_t given raw s_{t-1}, a_{t-1} and c_t.
  Var decode_state(Tape& tape, Var s_prev, Var a_prev, Var c, Grad g) const;
  // Normalized state-change prediction; the training target space.
  Var decode_state_delta(Tape& tape, Var s_prev, Var a_prev, Var c, Grad g) const;
  Var decode_reward(Tape& tape, Var s, Var a, Var c, Grad g) const;
  Var decode_reward_normalized(Tape& tape, Var s, Var a, Var c, Grad g) const;

  LatentBelief posterior_infer(const BlockWindow& w) const;
  LatentBelief prior_predict(std::span<const double> c_prev) const;
  std::vector<double> decode_recon(std::span<const double> s_prev,
                                   std::span<const double> a_prev,
                                   std::span<const double> c) const;
  double decode_reward_value(std::span<const double> s, std::span<const double> a,
                             std::span<const double> c) const;

  void fit_normalizers(const env::Dataset& d);
  const Normalizer& delta_norm() const { return delta_norm_; }
  const Normalizer& reward_norm() const { return reward_norm_; }

  void collect_posterior(ParamRefs& out);
  void collect_prior(ParamRefs& out);
  void collect_decoder(ParamRefs& out);
  ParamRefs params();

  Checkpoint to_checkpoint() const;
  static Stage1Nets from_checkpoint(const Checkpoint& c);

 private:
  Stage1Config cfg_;
  std::size_t state_dim_ = 0;
  std::size_t action_dim_ = 0;
  Normalizer frame_norm_;
  Normalizer delta_norm_;
  Normalizer reward_norm_;
  std::vector<Mlp> embeds_;  // state, action, reward
  Mlp trunk_;
  Gru gru_;
  Dense head_;
  Mlp prior_;
  Mlp state_dec_;
  Mlp reward_dec_;
};

// Consecutive anchors of one episode processed as a chain.
struct Segment {
  std::size_t episode = 0;
  std::size_t first = 0;  // first anchor
  std::size_t length = 0;
};

std::vector<Segment> make_segments(const env::Dataset& d, const Stage1Config& cfg);

struct ElboTerms {
  Var total;
  Var recon;  // unweighted, mean over anchors
  Var kl;     // unweighted, mean over anchors
};

// ELBO over a batch of equal-length segments.
ElboTerms elbo_loss(Tape& tape, const Stage1Nets& nets, const env::Dataset& d,
                    std::span<const Segment> batch, double kl_weight, Rng& rng);

struct Stage1Result {
  Stage1Nets nets;
  std::vector<double> loss_history;
  std::vector<double> recon_history;
  std::vector<double> kl_history;
  std::size_t skipped_episodes = 0;
};

Stage1Result train_stage1(const env::Dataset& d, const Stage1Config& cfg);

// Posterior beliefs for every usable anchor of an episode, in anchor order.
struct EpisodeBeliefs {
  std::size_t first_anchor = 0;
  std::vector<LatentBelief> beliefs;
};
EpisodeBeliefs episode_posteriors(const Stage1Nets& nets, const env::Episode& ep);

}  // namespace adld::latent
