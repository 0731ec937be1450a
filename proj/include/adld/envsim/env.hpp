#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "adld/numerics/rng.hpp"
#include "adld/numerics/tensor.hpp"

namespace adld::env {

enum class EnvKind {
  kPointmassWind,
  kPointmassDir,
  kLinearGaussAdditive,
  kLinearGaussMultiplicative,
};

enum class ContextKind { kStepwiseSinusoid, kEpisodicSinusoid, kAr1 };

enum class RewardKind { kVelocityTracking, kDirection };

struct ContextProcess {
  ContextKind kind = ContextKind::kStepwiseSinusoid;
  double offset = 5.0;
  double amplitude = 5.0;
  double frequency = 0.5;
  double rho = 0.9;    // ar1 only
  double sigma = 0.1;  // ar1 only
  std::size_t dim = 1;
};

// Context at step t of the given episode. `prev` is ignored by the sinusoid
// kinds; an empty `prev` for ar1 draws from the stationary distribution.
std::vector<double> context_next(const ContextProcess& proc, std::size_t t,
                                 std::size_t episode, std::span<const double> prev,
                                 Rng& rng);

struct EnvSpec {
  EnvKind kind = EnvKind::kPointmassWind;
  std::size_t state_dim = 2;
  std::size_t action_dim = 1;

  // Point mass.
  double dt = 0.1;
  double drag = 0.1;
  double kp = 1.0;
  double target_velocity = 2.0;

  // Linear-Gaussian: x' = A x + B a + Bc c (additive) or
  // x' = (A0 + c A1) x + B a (multiplicative, scalar c).
  Tensor A, A0, A1, B, Bc;
  Tensor gain;  // expert feedback gain, action_dim x state_dim
  bool expert_feedforward = false;

  double sigma_s = 0.05;
  double sigma_r = 0.0;
  double expert_noise = 0.05;
  std::size_t horizon = 200;
  RewardKind reward = RewardKind::kVelocityTracking;

  ContextProcess context;
  // Optional second channel carrying the tracked velocity for point mass.
  bool reward_context = false;
  ContextProcess reward_process{ContextKind::kStepwiseSinusoid, 2.0, 1.0, 0.1};

  std::size_t context_dim() const;
  bool is_pointmass() const {
    return kind == EnvKind::kPointmassWind || kind == EnvKind::kPointmassDir;
  }
};

// Default constants for each env kind.
EnvSpec make_spec(EnvKind kind);
// Shape and range checks; throws ConfigError.
void validate(const EnvSpec& spec);

// Flat key=value view used by dataset headers and config files.
std::map<std::string, std::string> spec_to_kv(const EnvSpec& spec);
// Starts from make_spec(kind) and applies the remaining keys. Unknown keys
// raise ConfigError naming the key.
EnvSpec spec_from_kv(const std::map<std::string, std::string>& kv);

std::string to_string(EnvKind k);
EnvKind env_kind_from(const std::string& s);

// Noisy transition s -> s' under context c.
std::vector<double> transition(const EnvSpec& spec, std::span<const double> s,
                               std::span<const double> a, std::span<const double> c,
                               Rng& rng);
// Mean of the transition (noise-free part).
std::vector<double> transition_mean(const EnvSpec& spec, std::span<const double> s,
                                    std::span<const double> a,
                                    std::span<const double> c);
double reward_of(const EnvSpec& spec, std::span<const double> s,
                 std::span<const double> a, std::span<const double> c, std::size_t t);

struct StepOutcome {
  std::vector<double> next_state;
  double reward = 0.0;
};
// One step with a single context for both the transition and the reward.
StepOutcome env_step(const EnvSpec& spec, std::span<const double> s,
                     std::span<const double> a, std::span<const double> c,
                     std::size_t t, Rng& rng);

// Velocity the expert tracks at this step.
double tracked_velocity(const EnvSpec& spec, std::span<const double> c, std::size_t t);

std::vector<double> expert_action(const EnvSpec& spec, std::span<const double> s,
                                  std::span<const double> c, double target,
                                  double noise_scale, Rng& rng);

// Stateful episode. The context for step t is drawn before the state at t, so
// c_t shapes the transition into s_t:
//   c_t ~ p(c_t | c_{t-1}),  s_t = f(s_{t-1}, a_{t-1}, c_t),  r_t = g(s_t, a_t, c_t)
class Env {
 public:
  Env(EnvSpec spec, std::size_t episode, std::uint64_t seed);

  const EnvSpec& spec() const { return spec_; }
  std::size_t t() const { return t_; }
  const std::vector<double>& state() const { return state_; }
  const std::vector<double>& context() const { return context_; }
  bool done() const { return t_ >= spec_.horizon; }

  // Applies a_t, returns r_t and advances to t+1.
  double step(std::span<const double> action);
  Rng& rng() { return rng_; }

 private:
  std::vector<double> draw_context();

  EnvSpec spec_;
  std::size_t episode_;
  Rng rng_;
  std::size_t t_ = 0;
  std::vector<double> state_;
  std::vector<double> context_;
};

}  // namespace adld::env
