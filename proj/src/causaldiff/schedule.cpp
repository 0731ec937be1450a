#include "adld/causaldiff/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "adld/numerics/errors.hpp"

namespace adld::diff {

NoiseSchedule make_schedule(std::size_t K, double beta_min, double beta_max) {
  if (K == 0) throw ConfigError("noise schedule needs K >= 1");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
    throw ConfigError("noise schedule needs 0 < beta_min <= beta_max < 1");
  }
  NoiseSchedule s;
  s.K = K;
  s.beta.assign(K + 1, 0.0);
  s.alpha.assign(K + 1, 1.0);
  s.alpha_bar.assign(K + 1, 1.0);
  for (std::size_t k = 1; k <= K; ++k) {
    const double f = K == 1 ? 0.0 : double(k - 1) / double(K - 1);
    s.beta[k] = beta_min + (beta_max - beta_min) * f;
    s.alpha[k] = 1.0 - s.beta[k];
    s.alpha_bar[k] = s.alpha_bar[k - 1] * s.alpha[k];
  }
  return s;
}

std::vector<std::size_t> causal_levels(std::size_t T, std::size_t K) {
  if (T == 0) throw ConfigError("block length must be positive");
  if (T > K) {
    throw ConfigError("block length " + std::to_string(T) + " exceeds K = " +
                      std::to_string(K));
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 1; i <= T; ++i) {
    auto k = static_cast<std::size_t>(std::llround(double(i) * double(K) / double(T)));
    k = std::max<std::size_t>(k, 1);
    if (out.empty() || k > out.back()) out.push_back(k);
  }
  return out;
}

std::vector<double> forward_noise(std::span<const double> x0, std::size_t k,
                                  const NoiseSchedule& s, std::span<const double> eps) {
  if (k > s.K) throw ContractError("noise level above K");
  if (eps.size() != x0.size()) throw ShapeError("noise and frame sizes differ");
  const double a = std::sqrt(s.alpha_bar[k]);
  const double b = std::sqrt(1.0 - s.alpha_bar[k]);
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

std::vector<double> forward_noise(std::span<const double> x0, std::size_t k,
                                  const NoiseSchedule& s, Rng& rng) {
  auto eps = rng.normal_vector(x0.size());
  return forward_noise(x0, k, s, eps);
}

void level_jump_inplace(std::span<double> x, std::span<const double> x0_hat, std::size_t ka,
                        std::size_t kb, const NoiseSchedule& s) {
  if (kb >= ka) {
    throw ContractError("level jump must decrease the level (" + std::to_string(ka) + " -> " +
                        std::to_string(kb) + ")");
  }
  if (ka > s.K) throw ContractError("noise level above K");
  if (x.size() != x0_hat.size()) throw ShapeError("level jump sizes differ");
  if (kb == 0) {
    std::copy(x0_hat.begin(), x0_hat.end(), x.begin());
    return;
  }
  const double ra = std::sqrt(s.alpha_bar[ka]), na = std::sqrt(1.0 - s.alpha_bar[ka]);
  const double rb = std::sqrt(s.alpha_bar[kb]), nb = std::sqrt(1.0 - s.alpha_bar[kb]);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double eps = (x[i] - ra * x0_hat[i]) / na;
    x[i] = rb * x0_hat[i] + nb * eps;
  }
}

std::vector<double> level_jump(std::span<const double> x_ka, std::span<const double> x0_hat,
                               std::size_t ka, std::size_t kb, const NoiseSchedule& s) {
  std::vector<double> out(x_ka.begin(), x_ka.end());
  level_jump_inplace(out, x0_hat, ka, kb, s);
  return out;
}

std::vector<std::size_t> training_levels(LevelSchedule kind, std::size_t T, std::size_t K,
                                         Rng& rng) {
  std::vector<std::size_t> lv(T, 0);
  switch (kind) {
    case LevelSchedule::kSame:
      std::fill(lv.begin(), lv.end(), std::max<std::size_t>(K / 2, 1));
      return lv;
    case LevelSchedule::kRandom:
      for (auto& k : lv) k = rng.index(K + 1);
      if (std::all_of(lv.begin(), lv.end(), [](std::size_t k) { return k == 0; })) {
        lv[rng.index(T)] = 1 + rng.index(K);
      }
      return lv;
    case LevelSchedule::kCausal:
      break;
  }
  // The configurations the samplers pass through: a staircase whose leading
  // noisy frame sits anywhere in (0, K/T], or, for the first descent from
  // pure noise, a blend of the flat block at K and the causal levels.
  const double step = double(K) / double(T);
  const double u = rng.uniform();
  if (rng.uniform() < 0.1) {
    for (std::size_t i = 0; i < T; ++i) {
      const double stair = double(i + 1) * step;
      lv[i] = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(K - u * (K - stair))), 1, K);
    }
    return lv;
  }
  const std::size_t offset = rng.index(T);
  for (std::size_t i = offset; i < T; ++i) {
    const double pos = (double(i - offset) + u) * step;
    lv[i] = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(pos)), 1, K);
  }
  return lv;
}

std::vector<double> level_embedding(std::size_t k, std::size_t K) {
  std::vector<double> out(kLevelEmbedDim);
  const double r = double(k) / double(std::max<std::size_t>(K, 1));
  for (std::size_t i = 0; i < kLevelEmbedDim / 2; ++i) {
    const double w = std::numbers::pi * std::pow(2.0, double(i)) * r / 2.0;
    out[2 * i] = std::sin(w);
    out[2 * i + 1] = std::cos(w);
  }
  return out;
}

}  // namespace adld::diff
