#include "adld/evalprobe/probe.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "adld/numerics/errors.hpp"
#include "adld/numerics/rng.hpp"

namespace adld::eval {
namespace {

Eigen::MatrixXd design(const Rows& x, std::span<const std::size_t> idx) {
  const std::size_t d = x.front().size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(d + 1));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = x[idx[i]][j];
    m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = 1.0;
  }
  return m;
}

Eigen::MatrixXd targets_of(const Rows& y, std::span<const std::size_t> idx) {
  const std::size_t d = y.front().size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = y[idx[i]][j];
  }
  return m;
}

// Returns {r2, defined}.
std::pair<double, bool> r_squared(const Eigen::MatrixXd& y, const Eigen::MatrixXd& pred) {
  const Eigen::RowVectorXd mu = y.colwise().mean();
  const double ss_tot = (y.rowwise() - mu).squaredNorm();
  const double ss_res = (y - pred).squaredNorm();
  if (ss_tot <= 1e-300) return {std::numeric_limits<double>::quiet_NaN(), false};
  return {1.0 - ss_res / ss_tot, true};
}

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j);
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

double sqdist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

ProbeResult linear_probe(const Rows& latents, const Rows& targets, std::uint64_t split_seed,
                         double ridge) {
  if (latents.size() != targets.size()) {
    throw ShapeError("probe: " + std::to_string(latents.size()) + " latents vs " +
                     std::to_string(targets.size()) + " targets");
  }
  if (latents.size() < 10) throw ContractError("probe needs at least 10 samples");
  const std::size_t n = latents.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(split_seed);
  rng.shuffle(order.begin(), order.end());
  const std::size_t n_train = (n * 4) / 5;
  std::span<const std::size_t> train(order.data(), n_train);
  std::span<const std::size_t> test(order.data() + n_train, n - n_train);

  const Eigen::MatrixXd xtr = design(latents, train);
  const Eigen::MatrixXd ytr = targets_of(targets, train);
  Eigen::MatrixXd gram = xtr.transpose() * xtr;
  gram.diagonal().array() += ridge;
  const Eigen::MatrixXd w = gram.ldlt().solve(xtr.transpose() * ytr);

  const Eigen::MatrixXd xte = design(latents, test);
  const Eigen::MatrixXd yte = targets_of(targets, test);
  const Eigen::MatrixXd pred = xte * w;

  ProbeResult out;
  out.split_seed = split_seed;
  out.n_train = n_train;
  out.n_test = n - n_train;
  out.mse = (yte - pred).squaredNorm() / static_cast<double>(yte.size());
  auto [r2, defined] = r_squared(yte, pred);
  out.r2 = r2;
  out.r2_defined = defined;
  out.train_r2 = r_squared(ytr, xtr * w).first;
  out.weights = Tensor({static_cast<std::size_t>(w.rows()), static_cast<std::size_t>(w.cols())});
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      out.weights.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = w(i, j);
    }
  }
  return out;
}

std::vector<std::size_t> equal_frequency_bins(std::span<const double> values,
                                              std::size_t bins) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  std::vector<std::size_t> label(values.size());
  for (std::size_t r = 0; r < idx.size(); ++r) label[idx[r]] = r * bins / idx.size();
  return label;
}

ClusterResult kmeans_purity(const Rows& latents, std::span<const double> c_true,
                            std::size_t k, std::uint64_t seed, std::size_t bins) {
  const std::size_t n = latents.size();
  if (n != c_true.size()) throw ShapeError("kmeans: latents and labels differ in count");
  if (k == 0 || n < k) throw ContractError("kmeans needs n >= k >= 1");
  Rng rng(seed);
  // k-means++ seeding.
  std::vector<std::vector<double>> centers;
  centers.push_back(latents[rng.index(n)]);
  std::vector<double> d2(n, std::numeric_limits<double>::max());
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sqdist(latents[i], centers.back()));
      total += d2[i];
    }
    std::size_t pick = rng.index(n);
    if (total > 0) {
      double u = rng.uniform() * total;
      for (std::size_t i = 0; i < n; ++i) {
        u -= d2[i];
        if (u <= 0) {
          pick = i;
          break;
        }
      }
    }
    centers.push_back(latents[pick]);
  }
  ClusterResult out;
  out.k = k;
  out.assignments.assign(n, 0);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = iter == 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double bd = std::numeric_limits<double>::max();
      for (std::size_t c = 0; c < k; ++c) {
        const double dd = sqdist(latents[i], centers[c]);
        if (dd < bd) {
          bd = dd;
          best = c;
        }
      }
      if (out.assignments[i] != best) changed = true;
      out.assignments[i] = best;
    }
    if (!changed) break;
    const std::size_t dim = latents.front().size();
    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[out.assignments[i]];
      for (std::size_t j = 0; j < dim; ++j) sums[out.assignments[i]][j] += latents[i][j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t j = 0; j < dim; ++j) centers[c][j] = sums[c][j] / static_cast<double>(counts[c]);
    }
  }
  const auto labels = equal_frequency_bins(c_true, bins);
  std::vector<std::vector<std::size_t>> table(k, std::vector<std::size_t>(bins, 0));
  for (std::size_t i = 0; i < n; ++i) ++table[out.assignments[i]][labels[i]];
  std::size_t hits = 0;
  for (const auto& row : table) hits += *std::max_element(row.begin(), row.end());
  out.purity = static_cast<double>(hits) / static_cast<double>(n);
  return out;
}

RolloutStats rollout_stats(std::span<const double> returns) {
  if (returns.empty()) throw ContractError("rollout_stats needs at least one return");
  RolloutStats s;
  s.n = returns.size();
  s.single = s.n == 1;
  s.mean = std::accumulate(returns.begin(), returns.end(), 0.0) / static_cast<double>(s.n);
  double ss = 0.0;
  for (double r : returns) ss += (r - s.mean) * (r - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(s.n));
  s.std_err = s.n > 1 ? std::sqrt(ss / static_cast<double>(s.n - 1)) / std::sqrt(static_cast<double>(s.n)) : 0.0;
  return s;
}

double welch_t(const RolloutStats& a, const RolloutStats& b) {
  const double se = std::sqrt(a.std_err * a.std_err + b.std_err * b.std_err);
  if (se == 0.0) {
    if (a.mean == b.mean) return 0.0;
    return a.mean > b.mean ? std::numeric_limits<double>::infinity()
                           : -std::numeric_limits<double>::infinity();
  }
  return (a.mean - b.mean) / se;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ContractError("pearson needs paired samples");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  return pearson(rx, ry);
}

}  // namespace adld::eval
