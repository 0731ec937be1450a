#include "adld/numerics/adam.hpp"

#include <cmath>

#include "adld/numerics/errors.hpp"

namespace adld {

std::vector<Tensor> gather(const Gradients& grads, const ParamRefs& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(grads.of(*p.tensor));
  return out;
}

void adam_step(const ParamRefs& params, std::span<const Tensor> grads,
               AdamState& state, double lr) {
  if (!(lr > 0.0)) throw ContractError("adam learning rate must be positive");
  if (params.size() != grads.size()) {
    throw ShapeError("adam: " + std::to_string(params.size()) + " params but " +
                     std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i].all_finite()) {
      throw NumericError("non-finite gradient for " + params[i].name);
    }
    if (grads[i].size() != params[i].tensor->size()) {
      throw ShapeError("adam: gradient shape mismatch for " + params[i].name);
    }
  }
  ++state.step;
  const auto& c = state.cfg;
  const double t = static_cast<double>(state.step);
  const double corr1 = 1.0 - std::pow(c.beta1, t);
  const double corr2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i].tensor;
    const Tensor& g = grads[i];
    auto [mit, m_new] = state.m.try_emplace(params[i].name, p.shape());
    auto [vit, v_new] = state.v.try_emplace(params[i].name, p.shape());
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double mh = m[j] / corr1;
      const double vh = v[j] / corr2;
      p[j] -= lr * mh / (std::sqrt(vh) + c.eps);
    }
  }
}

}  // namespace adld
