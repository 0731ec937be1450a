#include "adld/verify/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <limits>
#include <numbers>
#include <sstream>

#include "adld/evalprobe/probe.hpp"
#include "adld/numerics/adam.hpp"
#include "adld/numerics/errors.hpp"

namespace adld::verify {
namespace {

constexpr double kLog2Pi = 1.8378770664093453;

Vec sorted_copy(std::span<const double> v) {
  Vec s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  return s;
}

double quantile_at(const Vec& sorted, std::size_t i, std::size_t n) {
  if (sorted.size() == n) return sorted[i];
  const auto j = static_cast<std::size_t>((double(i) + 0.5) * double(sorted.size()) / double(n));
  return sorted[std::min(j, sorted.size() - 1)];
}

double w1_sorted(const Vec& a, const Vec& b) {
  const std::size_t n = std::max(a.size(), b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::abs(quantile_at(a, i, n) - quantile_at(b, i, n));
  return s / double(n);
}

void check_rows(const Rows& a, const Rows& b) {
  if (a.empty() || b.empty()) throw ContractError("W1 needs nonempty sample sets");
  const std::size_t d = a.front().size();
  for (const auto& r : a) {
    if (r.size() != d) throw ShapeError("ragged samples");
  }
  for (const auto& r : b) {
    if (r.size() != d) throw ShapeError("sample sets differ in dimension");
  }
}

Tensor ones_column(std::size_t n) { return Tensor({n, 1}, 1.0); }

}  // namespace

double w1_empirical(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw ContractError("W1 needs nonempty sample sets");
  return w1_sorted(sorted_copy(a), sorted_copy(b));
}

double w1_sliced(const Rows& a, const Rows& b, std::size_t projections, std::uint64_t seed) {
  check_rows(a, b);
  const std::size_t d = a.front().size();
  Rng rng(seed);
  double total = 0.0;
  Vec pa(a.size()), pb(b.size());
  for (std::size_t p = 0; p < projections; ++p) {
    Vec dir = rng.normal_vector(d);
    double norm = 0.0;
    for (double v : dir) norm += v * v;
    norm = std::sqrt(norm);
    for (auto& v : dir) v /= norm;
    auto project = [&](const Rows& rows, Vec& out) {
      for (std::size_t i = 0; i < rows.size(); ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += rows[i][k] * dir[k];
        out[i] = s;
      }
      std::sort(out.begin(), out.end());
    };
    project(a, pa);
    project(b, pb);
    total += w1_sorted(pa, pb);
  }
  return total / double(projections);
}

double w1(const Rows& a, const Rows& b) {
  check_rows(a, b);
  if (a.front().size() != 1) return w1_sliced(a, b);
  Vec fa, fb;
  for (const auto& r : a) fa.push_back(r[0]);
  for (const auto& r : b) fb.push_back(r[0]);
  return w1_empirical(fa, fb);
}

AnalyticDynamics::AnalyticDynamics(env::EnvSpec spec) : spec_(std::move(spec)) {
  env::validate(spec_);
  if (!(spec_.sigma_s > 0)) throw DomainError("analytic dynamics need a positive state noise");
}

double AnalyticDynamics::log_density(std::span<const double> x_next, std::span<const double> x,
                                     std::span<const double> a,
                                     std::span<const double> c) const {
  if (x_next.size() != spec_.state_dim) throw ShapeError("next state has the wrong width");
  const Vec mu = env::transition_mean(spec_, x, a, c);
  const double var = spec_.sigma_s * spec_.sigma_s;
  const std::size_t first = spec_.is_pointmass() ? 1 : 0;
  double lp = 0.0;
  for (std::size_t i = first; i < mu.size(); ++i) {
    const double r = x_next[i] - mu[i];
    lp += -0.5 * (r * r / var + std::log(var) + kLog2Pi);
  }
  return lp;
}

Vec AnalyticDynamics::sample(std::span<const double> x, std::span<const double> a,
                             std::span<const double> c, Rng& rng) const {
  return env::transition(spec_, x, a, c, rng);
}

FittedDynamics FittedDynamics::fit(const env::Dataset& d, const FitConfig& cfg,
                                   std::vector<double>* nll_history) {
  if (!d.has_context()) throw ContractError("fitting dynamics needs ground-truth contexts");
  Rows inputs, deltas;
  for (const auto& ep : d.episodes) {
    for (std::size_t t = 0; t + 1 < ep.size(); ++t) {
      Vec in = ep[t].s;
      in.insert(in.end(), ep[t].a.begin(), ep[t].a.end());
      // The context that shapes s_{t+1} is the one recorded with it.
      in.insert(in.end(), ep[t + 1].c.begin(), ep[t + 1].c.end());
      inputs.push_back(std::move(in));
      Vec dl(ep[t].s.size());
      for (std::size_t i = 0; i < dl.size(); ++i) dl[i] = ep[t + 1].s[i] - ep[t].s[i];
      deltas.push_back(std::move(dl));
    }
  }
  if (inputs.empty()) throw ContractError("fitting dynamics needs at least one transition");
  FittedDynamics f;
  const auto& r0 = d.episodes.front().front();
  f.ds_ = r0.s.size();
  f.da_ = r0.a.size();
  f.dc_ = r0.c.size();
  f.in_norm_ = latent::Normalizer::fit(inputs);
  f.delta_norm_ = latent::Normalizer::fit(deltas);
  Rng rng(cfg.seed);
  f.net_ = Mlp(inputs.front().size(), {cfg.hidden, cfg.hidden}, f.ds_, rng);
  f.logvar_ = Tensor({1, f.ds_});
  for (auto& r : inputs) r = f.in_norm_.normalize(r);
  for (auto& r : deltas) r = f.delta_norm_.normalize(r);

  ParamRefs params;
  f.net_.collect("net.", params);
  params.push_back({"logvar", &f.logvar_});
  AdamState adam;
  std::vector<std::size_t> idx(inputs.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(idx.begin(), idx.end());
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t i = 0; i < idx.size(); i += cfg.batch) {
      const std::size_t n = std::min(cfg.batch, idx.size() - i);
      Tensor xin({n, inputs.front().size()}), y({n, f.ds_});
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t k = 0; k < xin.cols(); ++k) xin.at(r, k) = inputs[idx[i + r]][k];
        for (std::size_t k = 0; k < f.ds_; ++k) y.at(r, k) = deltas[idx[i + r]][k];
      }
      Tape tape;
      Var pred = f.net_.forward(tape, tape.constant(std::move(xin)), Grad::kTrack);
      Var lv = matmul(tape.constant(ones_column(n)), tape.param(f.logvar_));
      Var nll = 0.5 * mean(sum_cols(square(pred - tape.constant(std::move(y))) * exp(-lv) + lv));
      auto grads = gather(tape.backward(nll), params);
      adam_step(params, grads, adam, cfg.lr);
      total += nll.value().item();
      ++batches;
    }
    if (nll_history) nll_history->push_back(total / double(std::max<std::size_t>(batches, 1)));
  }
  return f;
}

std::pair<Vec, Vec> FittedDynamics::predict(std::span<const double> x, std::span<const double> a,
                                            std::span<const double> c) const {
  if (x.size() != ds_ || a.size() != da_ || c.size() != dc_) {
    throw ShapeError("fitted dynamics input has the wrong width");
  }
  Vec in(x.begin(), x.end());
  in.insert(in.end(), a.begin(), a.end());
  in.insert(in.end(), c.begin(), c.end());
  in = in_norm_.normalize(in);
  Tape tape;
  Tensor row({1, in.size()}, in);
  const Tensor out = net_.forward(tape, tape.constant(std::move(row)), Grad::kFrozen).value();
  Vec mean(ds_), logvar(ds_);
  for (std::size_t i = 0; i < ds_; ++i) {
    const double s = delta_norm_.scale[i];
    mean[i] = x[i] + delta_norm_.mean[i] + s * out[i];
    logvar[i] = std::max(logvar_[i], -18.0) + 2.0 * std::log(s);
  }
  return {mean, logvar};
}

double FittedDynamics::log_density(std::span<const double> x_next, std::span<const double> x,
                                   std::span<const double> a, std::span<const double> c) const {
  if (x_next.size() != ds_) throw ShapeError("next state has the wrong width");
  auto [mu, lv] = predict(x, a, c);
  double lp = 0.0;
  for (std::size_t i = 0; i < ds_; ++i) {
    const double r = x_next[i] - mu[i];
    lp += -0.5 * (r * r * std::exp(-lv[i]) + lv[i] + kLog2Pi);
  }
  return lp;
}

Vec FittedDynamics::sample(std::span<const double> x, std::span<const double> a,
                           std::span<const double> c, Rng& rng) const {
  auto [mu, lv] = predict(x, a, c);
  for (std::size_t i = 0; i < ds_; ++i) mu[i] += std::exp(0.5 * lv[i]) * rng.normal();
  return mu;
}

std::vector<Probe> probe_points(const env::Dataset& d, std::size_t n, Rng& rng) {
  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t e = 0; e < d.episodes.size(); ++e) {
    for (std::size_t t = 0; t < d.episodes[e].size(); ++t) all.push_back({e, t});
  }
  if (all.empty()) throw ContractError("probe points need a nonempty dataset");
  std::vector<Probe> out;
  for (std::size_t i = 0; i < n; ++i) {
    auto [e, t] = all[rng.index(all.size())];
    out.push_back({d.episodes[e][t].s, d.episodes[e][t].a});
  }
  return out;
}

Tensor injectivity_matrix(const DynamicsModel& model, const Rows& grid,
                          std::span<const Probe> probes, std::size_t n_samples, Rng& rng) {
  const std::size_t M = grid.size();
  if (M < 2) throw ContractError("injectivity needs at least two contexts");
  if (probes.empty() || n_samples == 0) throw ContractError("injectivity needs samples");
  Tensor inj({M, M});
  for (const auto& p : probes) {
    std::vector<Rows> samples(M);
    for (std::size_t i = 0; i < M; ++i) {
      for (std::size_t s = 0; s < n_samples; ++s) samples[i].push_back(model.sample(p.x, p.a, grid[i], rng));
    }
    for (std::size_t i = 0; i < M; ++i) {
      for (std::size_t j = i + 1; j < M; ++j) {
        const double w = w1(samples[i], samples[j]) / double(probes.size());
        inj.at(i, j) += w;
        inj.at(j, i) += w;
      }
    }
  }
  return inj;
}

double spectral_ratio_log_k(const DynamicsModel& model, std::span<const double> x_t,
                            std::span<const double> xbar_t, std::span<const double> x_prev,
                            std::span<const double> xbar_prev, std::span<const double> a,
                            std::span<const double> c) {
  const double terms[4] = {model.log_density(x_t, x_prev, a, c),
                           model.log_density(xbar_t, xbar_prev, a, c),
                           model.log_density(xbar_t, x_prev, a, c),
                           model.log_density(x_t, xbar_prev, a, c)};
  for (double t : terms) {
    if (!std::isfinite(t)) throw DomainError("zero transition density in the spectral ratio");
  }
  return (terms[0] + terms[1]) - (terms[2] + terms[3]);
}

Rows context_grid(double offset, double amplitude, std::size_t m) {
  if (m == 0) throw ContractError("context grid needs at least one point");
  if (amplitude == 0.0 || m == 1) return {{offset}};
  Rows g;
  for (std::size_t i = 0; i < m; ++i) {
    g.push_back({offset + amplitude * (-1.0 + 2.0 * double(i) / double(m - 1))});
  }
  return g;
}

Separability k_separability(const DynamicsModel& model, const Rows& grid, const env::Dataset& d,
                            std::size_t n_pairs, std::span<const double> action, Rng& rng) {
  if (grid.empty()) throw ContractError("separability needs a context grid");
  if (n_pairs < 2) throw ContractError("separability needs at least two pairs");
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> trans(d.episodes.size());
  std::size_t usable = 0;
  for (std::size_t e = 0; e < d.episodes.size(); ++e) {
    for (std::size_t t = 1; t < d.episodes[e].size(); ++t) trans[e].push_back({e, t});
    if (!trans[e].empty()) ++usable;
  }
  if (usable == 0) throw ContractError("separability needs transitions");
  std::vector<std::size_t> with;
  for (std::size_t e = 0; e < trans.size(); ++e) {
    if (!trans[e].empty()) with.push_back(e);
  }
  Vec jitter;
  if (with.size() < 2) {
    Rows states;
    for (const auto& ep : d.episodes) {
      for (const auto& r : ep) states.push_back(r.s);
    }
    const auto n = latent::Normalizer::fit(states);
    for (double s : n.scale.values()) jitter.push_back(0.1 * s);
  }

  Separability out;
  out.samples.grid = grid;
  out.samples.pairs = n_pairs;
  out.samples.log_k.assign(grid.size(), Vec());
  for (std::size_t p = 0; p < n_pairs; ++p) {
    const std::size_t e1 = with[rng.index(with.size())];
    auto [ea, ta] = trans[e1][rng.index(trans[e1].size())];
    const Vec& x_prev = d.episodes[ea][ta - 1].s;
    const Vec& x_t = d.episodes[ea][ta].s;
    Vec xbar_prev, xbar_t;
    if (jitter.empty()) {
      std::size_t e2 = with[rng.index(with.size() - 1)];
      if (e2 == e1) e2 = with.back();
      auto [eb, tb] = trans[e2][rng.index(trans[e2].size())];
      xbar_prev = d.episodes[eb][tb - 1].s;
      xbar_t = d.episodes[eb][tb].s;
    } else {
      xbar_prev = x_prev;
      xbar_t = x_t;
      for (std::size_t i = 0; i < jitter.size(); ++i) {
        xbar_prev[i] += jitter[i] * rng.normal();
        xbar_t[i] += jitter[i] * rng.normal();
      }
    }
    for (std::size_t i = 0; i < grid.size(); ++i) {
      out.samples.log_k[i].push_back(
          spectral_ratio_log_k(model, x_t, xbar_t, x_prev, xbar_prev, action, grid[i]));
    }
  }
  const std::size_t M = grid.size();
  out.sep = Tensor({M, M});
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t j = i + 1; j < M; ++j) {
      const double w = w1_empirical(out.samples.log_k[i], out.samples.log_k[j]);
      out.sep.at(i, j) = w;
      out.sep.at(j, i) = w;
    }
  }
  return out;
}

double mean_off_diagonal(const Tensor& m) {
  const std::size_t M = m.rows();
  if (M < 2) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t j = 0; j < M; ++j) {
      if (i != j) s += m.at(i, j);
    }
  }
  return s / double(M * (M - 1));
}

double max_off_diagonal(const Tensor& m) {
  double best = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (i != j) best = std::max(best, m.at(i, j));
    }
  }
  return best;
}

double min_off_diagonal(const Tensor& m) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (i != j) best = std::min(best, m.at(i, j));
    }
  }
  return std::isfinite(best) ? best : 0.0;
}

std::vector<RewardDropRow> reward_drop_analysis(std::span<const RewardDropInput> settings) {
  std::vector<RewardDropRow> out;
  for (const auto& s : settings) {
    if (s.returns_with.empty() || s.returns_without.empty()) {
      throw ContractError("reward drop needs returns for both planners");
    }
    const auto w = eval::rollout_stats(s.returns_with);
    const auto wo = eval::rollout_stats(s.returns_without);
    RewardDropRow r;
    r.m = s.m;
    r.n = s.n;
    r.sep = s.sep.size() > 0 ? mean_off_diagonal(s.sep) : 0.0;
    r.inj = s.inj.size() > 0 ? mean_off_diagonal(s.inj) : 0.0;
    r.with_mean = w.mean;
    r.without_mean = wo.mean;
    const double denom = std::max(std::abs(w.mean), 1e-12);
    r.gap = (w.mean - wo.mean) / denom;
    r.gap_se = std::sqrt(w.std_err * w.std_err + wo.std_err * wo.std_err) / denom;
    out.push_back(r);
  }
  return out;
}

double sep_gap_spearman(std::span<const RewardDropRow> rows) {
  Vec sep, gap;
  for (const auto& r : rows) {
    sep.push_back(r.sep);
    gap.push_back(r.gap);
  }
  return eval::spearman(sep, gap);
}

std::string matrix_tsv(const Tensor& m, const Rows& grid) {
  if (m.rows() != grid.size() || m.cols() != grid.size()) throw ShapeError("matrix and grid disagree");
  auto label = [](const Vec& c) {
    std::string s;
    for (std::size_t i = 0; i < c.size(); ++i) s += (i ? "," : "") + fmt::format("{:.6g}", c[i]);
    return s;
  };
  std::ostringstream os;
  os << "context";
  for (const auto& c : grid) os << '\t' << label(c);
  os << '\n';
  for (std::size_t i = 0; i < grid.size(); ++i) {
    os << label(grid[i]);
    for (std::size_t j = 0; j < grid.size(); ++j) os << '\t' << fmt::format("{:.17g}", m.at(i, j));
    os << '\n';
  }
  return os.str();
}

std::string k_samples_tsv(const KSampleSet& k) {
  std::ostringstream os;
  os << "context_index\tpair\tlog_k\n";
  for (std::size_t i = 0; i < k.log_k.size(); ++i) {
    for (std::size_t p = 0; p < k.log_k[i].size(); ++p) {
      os << i << '\t' << p << '\t' << fmt::format("{:.17g}", k.log_k[i][p]) << '\n';
    }
  }
  return os.str();
}

std::string reward_drop_tsv(std::span<const RewardDropRow> rows) {
  std::ostringstream os;
  os << "m\tn\tsep\tinj\treturn_with\treturn_without\tgap\tgap_se\n";
  for (const auto& r : rows) {
    os << fmt::format("{:.6g}\t{:.6g}\t{:.17g}\t{:.17g}\t{:.17g}\t{:.17g}\t{:.17g}\t{:.17g}\n", r.m,
                      r.n, r.sep, r.inj, r.with_mean, r.without_mean, r.gap, r.gap_se);
  }
  return os.str();
}

std::string summary_text(const Tensor& inj, const Tensor& sep, std::span<const RewardDropRow> drop,
                         const Thresholds& th) {
  std::ostringstream os;
  const auto verdict = [](bool ok) { return ok ? "yes" : "no"; };
  if (inj.size() > 0) {
    const double lo = min_off_diagonal(inj);
    os << fmt::format("injective (min off-diagonal Inj {:.4g} > {:.4g}): {}\n", lo, th.injective,
                      verdict(lo > th.injective));
  }
  if (sep.size() > 0) {
    double hi = 0.0;
    for (double v : sep.values()) hi = std::max(hi, v);
    const double lo = min_off_diagonal(sep);
    os << fmt::format("k context-independent (max Sep {:.4g} < {:.4g}): {}\n", hi, th.k_independent,
                      verdict(hi < th.k_independent));
    os << fmt::format("separable (min off-diagonal Sep {:.4g} > {:.4g}): {}\n", lo, th.separable,
                      verdict(sep.rows() > 1 && lo > th.separable));
  }
  if (drop.size() >= 2) {
    os << fmt::format("reward drop: spearman(Sep, gap) = {:.4f} over {} settings\n",
                      sep_gap_spearman(drop), drop.size());
  }
  return os.str();
}

}  // namespace adld::verify
