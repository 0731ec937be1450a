#include "adld/causaldiff/sample.hpp"

#include <algorithm>

#include "adld/causaldiff/train.hpp"
#include "adld/numerics/errors.hpp"
#include "frames.hpp"

namespace adld::diff {
namespace {

using detail::Vec;

class Sampler {
 public:
  Sampler(const Stage2Model& m, std::span<const SampleRow> rows,
          std::vector<std::vector<std::size_t>>* trace)
      : m_(m), rows_(rows), trace_(trace), T_(m.cfg.horizon), D_(m.layout.dim()) {
    if (rows.empty()) throw ContractError("sampling needs at least one row");
    const std::size_t tau = rows.front().history ? rows.front().history->tau() : 0;
    for (const auto& r : rows) {
      if (!r.history || r.history->states.empty()) throw ContractError("row without history");
      if (r.history->tau() != tau) throw ContractError("rows must share tau");
      if (r.history->actions.size() != tau || r.history->rewards.size() != tau) {
        throw ShapeError("history needs one action and reward per past step");
      }
      if (r.history->states.back().size() != m.layout.state_dim) {
        throw ShapeError("history state width does not match the model");
      }
      cond_.history.push_back(detail::history_frames(m, *r.history));
      cond_.state.push_back(m.state_norm.normalize(r.history->states.back()));
      if (m.cfg.condition == ConditionKind::kReturn) {
        cond_.cond.push_back({m.y_target, 1.0});
      } else {
        cond_.cond.push_back({0.0, 0.0});
      }
    }
  }

  Tensor& x() { return x_; }
  std::vector<std::size_t>& levels() { return levels_; }

  void start(Tensor x, std::vector<std::size_t> levels) {
    x_ = std::move(x);
    levels_ = std::move(levels);
    record();
  }

  // Moves every frame from its level to its target in calls that lower no
  // frame by more than max_jump, keeping the gaps proportional.
  void descend(const std::vector<std::size_t>& targets, const Tensor& latents) {
    std::size_t gap = 0;
    for (std::size_t i = 0; i < T_; ++i) {
      if (targets[i] > levels_[i]) throw ContractError("descend cannot raise a level");
      gap = std::max(gap, levels_[i] - targets[i]);
    }
    if (gap == 0) return;
    const std::size_t jump = std::max<std::size_t>(m_.cfg.max_jump, 1);
    const std::size_t n = (gap + jump - 1) / jump;
    const std::vector<std::size_t> from = levels_;
    for (std::size_t s = 1; s <= n; ++s) {
      std::vector<std::size_t> next(T_);
      for (std::size_t i = 0; i < T_; ++i) {
        const std::size_t d = from[i] - targets[i];
        next[i] = targets[i] + (d * (n - s) + n / 2) / n;
      }
      step(next, latents);
    }
  }

 private:
  void step(const std::vector<std::size_t>& next, const Tensor& latents) {
    Tape tape;
    std::vector<std::vector<std::size_t>> lv(rows_.size(), levels_);
    Var pred = m_.theta.predict(
        tape, detail::denoise_input(tape, x_, lv, tape.constant(latents), cond_), Grad::kFrozen);
    const Tensor& x0_hat = pred.value();
    auto xs = x_.values();
    auto ps = x0_hat.values();
    for (std::size_t r = 0; r < rows_.size(); ++r) {
      for (std::size_t i = 0; i < T_; ++i) {
        if (next[i] >= levels_[i]) continue;
        const std::size_t o = r * T_ * D_ + i * D_;
        level_jump_inplace(xs.subspan(o, D_), ps.subspan(o, D_), levels_[i], next[i], m_.schedule);
      }
    }
    levels_ = next;
    record();
  }

  void record() {
    if (trace_) trace_->push_back(levels_);
  }

  const Stage2Model& m_;
  std::span<const SampleRow> rows_;
  std::vector<std::vector<std::size_t>>* trace_;
  std::size_t T_, D_;
  detail::ConditionRows cond_;
  Tensor x_;
  std::vector<std::size_t> levels_;
};

Tensor latent_tensor(const std::vector<Frames>& lat) {
  std::vector<Vec> rows;
  for (const auto& per_frame : lat) {
    Vec row;
    for (const auto& c : per_frame) row.insert(row.end(), c.begin(), c.end());
    rows.push_back(std::move(row));
  }
  return detail::stack_rows(rows);
}

Vec raw_frame(const Stage2Model& m, const Tensor& x, std::size_t r, std::size_t j) {
  const std::size_t D = m.layout.dim();
  const auto fn = m.frame_norm();
  Vec f(D);
  for (std::size_t i = 0; i < D; ++i) f[i] = fn.mean[i] + fn.scale[i] * x.at(r, j * D + i);
  return f;
}

}  // namespace

SampleResult zigzag_sample(const Stage2Model& m, std::span<const SampleRow> rows, Rng& rng,
                           const SampleOptions& opt) {
  const auto& cfg = m.cfg;
  const std::size_t T = cfg.horizon, D = m.layout.dim(), dc = m.latent_dim, K = cfg.K;
  const std::size_t n = rows.size();
  SampleResult out;
  Sampler sp(m, rows, opt.record_trace ? &out.trace : nullptr);

  out.latents.assign(n, Frames(T, Vec(dc, 0.0)));
  out.posterior_means.assign(n, Frames(T));
  out.prior_means.assign(n, Frames(T));
  for (const auto& r : rows) {
    if (cfg.latent == LatentSource::kPosterior && r.c_prev.size() != dc) {
      throw ShapeError("previous latent width does not match the model");
    }
  }

  const bool posterior = cfg.latent == LatentSource::kPosterior;
  if (posterior && !m.stage1) throw ContractError("posterior latents need Stage-1 nets");
  if (cfg.latent == LatentSource::kOracle) {
    for (std::size_t r = 0; r < n; ++r) {
      const Vec c = m.context_norm.normalize(rows[r].oracle);
      for (std::size_t j = 0; j < T; ++j) out.latents[r][j] = c;
    }
  }

  // Prior chain for frames from..T-1, each conditioned on the latent before it.
  auto prior_chain = [&](std::size_t from) {
    if (!posterior) return;
    for (std::size_t j = from; j < T; ++j) {
      std::vector<Vec> prev;
      for (std::size_t r = 0; r < n; ++r) prev.push_back(j == 0 ? rows[r].c_prev : out.latents[r][j - 1]);
      Tape tape;
      BeliefVar p = m.stage1->prior(tape, tape.constant(detail::stack_rows(prev)), Grad::kFrozen);
      Var z = reparam_sample(tape, p, rng);
      for (std::size_t r = 0; r < n; ++r) {
        out.latents[r][j] = detail::row_of(z.value(), r);
        out.prior_means[r][j] = detail::row_of(p.mean.value(), r);
      }
    }
  };

  // Posterior over the window around frame j, read off the partially denoised
  // block: frame j at k_1, its successor at whatever level it holds now.
  auto refresh = [&](std::size_t j) {
    const long Tx = static_cast<long>(m.obs_block);
    const long fut = m.obs_future ? 1 : 0;
    const long tj = static_cast<long>(rows.front().history->tau() + m.layout.time_offset() + j);
    std::vector<std::vector<Vec>> win(n);
    for (std::size_t r = 0; r < n; ++r) {
      detail::RowBlock rb;
      rb.obs = rows[r].history;
      for (std::size_t i = 0; i < T; ++i) rb.frames.push_back(raw_frame(m, sp.x(), r, i));
      rb.latents = out.latents[r];
      win[r] = detail::stage1_frames(m, rb, tj - Tx, tj + fut);
    }
    Tape tape;
    std::vector<Var> frames;
    for (std::size_t u = 0; u < win.front().size(); ++u) {
      std::vector<Vec> col;
      for (std::size_t r = 0; r < n; ++r) col.push_back(win[r][u]);
      frames.push_back(tape.constant(detail::stack_rows(col)));
    }
    BeliefVar q = m.stage1->posterior(tape, frames, Grad::kFrozen);
    Var z = reparam_sample(tape, q, rng);
    for (std::size_t r = 0; r < n; ++r) {
      out.latents[r][j] = detail::row_of(z.value(), r);
      out.posterior_means[r][j] = detail::row_of(q.mean.value(), r);
    }
  };

  if (cfg.schedule == LevelSchedule::kSame) {
    const std::size_t k0 = std::max<std::size_t>(K / 2, 1);
    sp.start(rng.normal_tensor({n, T * D}), std::vector<std::size_t>(T, k0));
    prior_chain(0);
    sp.descend(std::vector<std::size_t>(T, 0), latent_tensor(out.latents));
  } else {
    const auto kc = causal_levels(T, K);
    const bool do_refresh = opt.refresh && posterior && cfg.refine && cfg.zigzag;
    sp.start(rng.normal_tensor({n, T * D}), std::vector<std::size_t>(T, K));
    prior_chain(0);
    for (std::size_t j = 0; j < T; ++j) {
      auto targets = sp.levels();
      targets[j] = std::min(targets[j], kc[0]);
      for (std::size_t i = j + 1; i < T; ++i) targets[i] = std::min(targets[i], kc[i - j]);
      sp.descend(targets, latent_tensor(out.latents));
      if (do_refresh && j + 1 < T) {
        refresh(j);
        prior_chain(j + 1);
      }
      targets = sp.levels();
      targets[j] = 0;
      sp.descend(targets, latent_tensor(out.latents));
    }
  }

  out.frames.assign(n, Frames(T));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < T; ++j) out.frames[r][j] = raw_frame(m, sp.x(), r, j);
  }
  return out;
}

Tensor ar_denoise_block(const Stage2Model& m, Tensor x, const Tensor& latents,
                        std::span<const SampleRow> rows,
                        std::vector<std::vector<std::size_t>>* trace) {
  const std::size_t T = m.cfg.horizon;
  if (x.rows() != rows.size() || x.cols() != T * m.layout.dim()) {
    throw ShapeError("block shape does not match the model");
  }
  if (latents.rows() != rows.size() || latents.cols() != T * m.latent_dim) {
    throw ShapeError("latent shape does not match the model");
  }
  const auto kc = causal_levels(T, m.cfg.K);
  Sampler sp(m, rows, trace);
  sp.start(std::move(x), kc);
  for (std::size_t j = 0; j < T; ++j) {
    auto targets = sp.levels();
    targets[j] = 0;
    for (std::size_t i = j + 1; i < T; ++i) targets[i] = kc[i - j - 1];
    sp.descend(targets, latents);
  }
  return sp.x();
}

}  // namespace adld::diff
