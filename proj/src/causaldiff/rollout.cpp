#include "adld/causaldiff/rollout.hpp"

#include <algorithm>
#include <optional>
#include <thread>

#include "adld/numerics/errors.hpp"
#include "frames.hpp"

namespace adld::diff {
namespace {

using detail::Vec;

template <class F>
void parallel_for(std::size_t n, F&& f) {
  const std::size_t workers = std::min(env::worker_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) f(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void check_dims(const Stage2Model& m, const env::EnvSpec& spec) {
  if (spec.state_dim != m.layout.state_dim || spec.action_dim != m.layout.action_dim) {
    throw ConfigError("env dimensions do not match the model");
  }
  if (m.cfg.latent == LatentSource::kOracle && spec.context_dim() != m.context_norm.dim()) {
    throw ConfigError("env context width does not match the oracle latents");
  }
}

// Latent before frame 0 of the block at h.tau(). The Stage-1 posterior mean
// on the last window that is fully observed, carried forward by prior means
// to the anchor just before the block. Empty when no such window exists.
std::optional<Vec> previous_latent(const Stage2Model& m, const History& h) {
  if (m.cfg.latent != LatentSource::kPosterior || !m.stage1) return std::nullopt;
  const long Tx = static_cast<long>(m.obs_block);
  const long fut = m.obs_future ? 1 : 0;
  const long tau = static_cast<long>(h.tau());
  const long last = tau - 1 - fut;
  if (last < 0) return std::nullopt;
  detail::RowBlock rb;
  rb.obs = &h;
  const auto win = detail::stage1_frames(m, rb, last - Tx, last + fut);
  Tape tape;
  std::vector<Var> frames;
  for (const auto& f : win) frames.push_back(tape.constant(detail::stack_rows({f})));
  Var z = m.stage1->posterior(tape, frames, Grad::kFrozen).mean;
  const long target = tau + static_cast<long>(m.layout.time_offset()) - 1;
  for (long a = last; a < target; ++a) z = m.stage1->prior(tape, z, Grad::kFrozen).mean;
  return detail::row_of(z.value(), 0);
}

Vec action_from(const Stage2Model& m, const SampleResult& res, std::size_t j, const History& h) {
  const Vec& f = res.frames[0][j];
  switch (m.layout.mode) {
    case GenMode::kPlannerJoint:
      return Vec(f.begin(), f.begin() + static_cast<long>(m.layout.action_dim));
    case GenMode::kPolicy: return f;
    case GenMode::kPlannerStateIdm: break;
  }
  const Vec none;
  const Vec& c = m.idm->latent_dim() > 0 ? res.latents[0][j] : none;
  return m.idm->infer(h.states.back(), f, c);
}

struct EpisodeOutcome {
  double ret = 0.0;
  std::vector<Vec> states;
};

EpisodeOutcome run_episode(const Stage2Model& m, const env::EnvSpec& spec, std::size_t e,
                           const RolloutOptions& opt) {
  env::Env env(spec, opt.first_episode + e, derive_seed(opt.seed, e));
  Rng rng(derive_seed(opt.seed, 0x5A3E0000ULL + e));
  History h;
  h.states.push_back(env.state());
  Vec c_prev(m.latent_dim, 0.0);
  const std::size_t exec = std::min(m.cfg.exec_horizon, m.cfg.horizon);
  SampleOptions so;
  so.refresh = opt.refresh;
  EpisodeOutcome out;
  while (!env.done()) {
    if (auto c = previous_latent(m, h)) c_prev = std::move(*c);
    SampleRow row{&h, c_prev, env.context()};
    SampleResult res = zigzag_sample(m, std::span(&row, 1), rng, so);
    std::size_t done = 0;
    for (std::size_t j = 0; j < exec && !env.done(); ++j) {
      Vec a = action_from(m, res, j, h);
      const double r = env.step(a);
      out.ret += r;
      h.actions.push_back(std::move(a));
      h.rewards.push_back(r);
      h.states.push_back(env.state());
      ++done;
    }
    c_prev = res.latents[0][done - 1];
  }
  if (opt.record_states) out.states = h.states;
  return out;
}

RolloutResult evaluate(const Stage2Model& m, const env::EnvSpec& spec, const RolloutOptions& opt) {
  check_dims(m, spec);
  if (opt.episodes == 0) throw ConfigError("evaluation needs at least one episode");
  if (m.layout.mode == GenMode::kPlannerStateIdm && !m.idm) {
    throw ConfigError("state-only planning needs an inverse dynamics net");
  }
  std::vector<EpisodeOutcome> eps(opt.episodes);
  parallel_for(opt.episodes, [&](std::size_t e) { eps[e] = run_episode(m, spec, e, opt); });
  RolloutResult out;
  for (auto& e : eps) {
    out.returns.push_back(e.ret);
    if (opt.record_states) out.states.push_back(std::move(e.states));
  }
  out.stats = eval::rollout_stats(out.returns);
  return out;
}

}  // namespace

RolloutResult plan_and_act(const Stage2Model& m, const env::EnvSpec& spec,
                           const RolloutOptions& opt) {
  if (m.layout.mode == GenMode::kPolicy) throw ConfigError("plan_and_act needs a planner mode");
  return evaluate(m, spec, opt);
}

RolloutResult policy_act(const Stage2Model& m, const env::EnvSpec& spec,
                         const RolloutOptions& opt) {
  if (m.layout.mode != GenMode::kPolicy) throw ConfigError("policy_act needs policy mode");
  return evaluate(m, spec, opt);
}

LatentWalk latent_walk(const Stage2Model& m, const env::Dataset& d, bool refresh,
                       std::uint64_t seed) {
  const std::size_t off = m.layout.time_offset();
  const std::size_t lo = m.obs_block + 1;
  std::vector<LatentWalk> per(d.episodes.size());
  parallel_for(d.episodes.size(), [&](std::size_t e) {
    const auto& ep = d.episodes[e];
    if (ep.size() < lo + off + 1) return;
    Rng rng(derive_seed(seed, 0x3A1C0000ULL + e));
    SampleOptions so;
    so.refresh = refresh;
    Vec c_prev(m.latent_dim, 0.0);
    for (std::size_t tau = lo; tau + off < ep.size(); ++tau) {
      const History h = detail::observed_prefix(ep, tau);
      if (auto c = previous_latent(m, h)) c_prev = std::move(*c);
      SampleRow row{&h, c_prev, ep[tau].c};
      SampleResult res = zigzag_sample(m, std::span(&row, 1), rng, so);
      const Vec& est = res.posterior_means[0][0].empty() ? res.prior_means[0][0]
                                                         : res.posterior_means[0][0];
      if (!est.empty()) {
        per[e].estimates.push_back(est);
        per[e].truth.push_back(ep[tau + off].c);
      }
      c_prev = res.latents[0][0];
    }
  });
  LatentWalk out;
  for (auto& w : per) {
    for (std::size_t i = 0; i < w.estimates.size(); ++i) {
      out.estimates.push_back(std::move(w.estimates[i]));
      out.truth.push_back(std::move(w.truth[i]));
    }
  }
  return out;
}

}  // namespace adld::diff
