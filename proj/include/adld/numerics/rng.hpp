#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "adld/numerics/tensor.hpp"

namespace adld {

// splitmix64 mix of (master, index); used for per-episode and per-worker seeds.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  // Uniform in [0, 1).
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  std::uint64_t bits() { return engine_(); }

  Tensor normal_tensor(std::vector<std::size_t> shape);
  std::vector<double> normal_vector(std::size_t n);

  template <class It>
  void shuffle(It first, It last) {
    for (auto n = last - first; n > 1; --n) {
      std::swap(first[n - 1], first[index(static_cast<std::size_t>(n))]);
    }
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace adld
