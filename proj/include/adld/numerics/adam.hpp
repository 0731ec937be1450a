#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "adld/numerics/layers.hpp"
#include "adld/numerics/tape.hpp"

namespace adld {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig cfg;
  std::int64_t step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

// Gradients for each parameter, in the order of `params`.
std::vector<Tensor> gather(const Gradients& grads, const ParamRefs& params);

// One bias-corrected Adam update applied in place.
void adam_step(const ParamRefs& params, std::span<const Tensor> grads,
               AdamState& state, double lr);

}  // namespace adld
