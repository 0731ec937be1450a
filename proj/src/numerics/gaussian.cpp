#include "adld/numerics/gaussian.hpp"

#include <cmath>

#include "adld/numerics/errors.hpp"

namespace adld {

std::vector<double> reparam_sample(const LatentBelief& b, Rng& rng) {
  if (b.mean.size() != b.logvar.size()) {
    throw ShapeError("belief mean and logvar lengths differ");
  }
  std::vector<double> z(b.dim());
  for (std::size_t i = 0; i < z.size(); ++i) {
    z[i] = b.mean[i] + std::exp(0.5 * b.logvar[i]) * rng.normal();
  }
  return z;
}

Var reparam_sample(Tape& tape, const BeliefVar& b, Rng& rng) {
  const Tensor& m = b.mean.value();
  Var eps = tape.constant(rng.normal_tensor({m.rows(), m.cols()}));
  return b.mean + exp(0.5 * b.logvar) * eps;
}

double gaussian_kl(const LatentBelief& q, const LatentBelief& p) {
  if (q.dim() != p.dim() || q.logvar.size() != q.dim() ||
      p.logvar.size() != p.dim()) {
    throw ShapeError("gaussian_kl dimension mismatch");
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < q.dim(); ++i) {
    const double d = q.mean[i] - p.mean[i];
    kl += p.logvar[i] - q.logvar[i] +
          (std::exp(q.logvar[i]) + d * d) / std::exp(p.logvar[i]) - 1.0;
  }
  return 0.5 * kl;
}

Var gaussian_kl(const BeliefVar& q, const BeliefVar& p) {
  Var d = q.mean - p.mean;
  Var terms = p.logvar - q.logvar + exp(q.logvar - p.logvar) +
              square(d) * exp(-p.logvar) - 1.0;
  return 0.5 * sum_cols(terms);
}

BeliefVar split_belief(Var head) {
  const std::size_t w = head.cols();
  if (w % 2 != 0) throw ShapeError("belief head width must be even");
  return {slice(head, 0, w / 2), clamp(slice(head, w / 2, w), kLogvarMin, kLogvarMax)};
}

LatentBelief belief_row(const BeliefVar& b, std::size_t r) {
  auto m = b.mean.value().row_span(r);
  auto lv = b.logvar.value().row_span(r);
  return {{m.begin(), m.end()}, {lv.begin(), lv.end()}};
}

}  // namespace adld
