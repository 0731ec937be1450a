#include "frames.hpp"

#include <algorithm>

#include "adld/numerics/errors.hpp"

namespace adld::diff::detail {

Vec block_frame(const FrameLayout& layout, const env::Episode& ep, std::size_t tau,
                std::size_t j) {
  switch (layout.mode) {
    case GenMode::kPlannerJoint: {
      Vec f = ep.at(tau + j).a;
      const auto& s = ep.at(tau + j + 1).s;
      f.insert(f.end(), s.begin(), s.end());
      return f;
    }
    case GenMode::kPlannerStateIdm: return ep.at(tau + 1 + j).s;
    case GenMode::kPolicy: return ep.at(tau + j).a;
  }
  return {};
}

Observed observed_prefix(const env::Episode& ep, std::size_t tau) {
  Observed o;
  for (std::size_t u = 0; u <= tau; ++u) {
    o.states.push_back(ep.at(u).s);
    if (u < tau) {
      o.actions.push_back(ep[u].a);
      o.rewards.push_back(ep[u].r);
    }
  }
  return o;
}

namespace {

Vec head(const Vec& v, std::size_t n) { return Vec(v.begin(), v.begin() + static_cast<long>(n)); }
Vec tail(const Vec& v, std::size_t n) { return Vec(v.end() - static_cast<long>(n), v.end()); }

class RowFiller {
 public:
  RowFiller(const Stage2Model& m, const RowBlock& row) : m_(m), row_(row) {}

  Vec frame(long u) {
    const auto& s1 = *m_.stage1;
    const long tau = static_cast<long>(row_.obs->tau());
    if (u < 0) u = 0;
    Vec f;
    Vec s, a;
    double r = 0.0;
    if (u < tau) {
      s = row_.obs->states[u];
      a = row_.obs->actions[u];
      r = row_.obs->rewards[u];
    } else {
      s = state(u);
      a = action(u);
      if (s1.uses_reward()) r = s1.decode_reward_value(s, a, latent_at(u));
    }
    f = s;
    if (s1.uses_actions()) f.insert(f.end(), a.begin(), a.end());
    if (s1.uses_reward()) f.push_back(r);
    return f;
  }

 private:
  const Vec& latent_at(long u) const {
    const long tau = static_cast<long>(row_.obs->tau());
    long j = u - tau - static_cast<long>(m_.layout.time_offset());
    j = std::clamp<long>(j, 0, static_cast<long>(row_.frames.size()) - 1);
    return row_.latents[j];
  }

  const Vec& frame_at(long j) const {
    j = std::clamp<long>(j, 0, static_cast<long>(row_.frames.size()) - 1);
    return row_.frames[j];
  }

  Vec state(long u) {
    const long tau = static_cast<long>(row_.obs->tau());
    if (u <= tau) return row_.obs->states[u];
    const std::size_t ds = m_.layout.state_dim;
    switch (m_.layout.mode) {
      case GenMode::kPlannerJoint: return tail(frame_at(u - tau - 1), ds);
      case GenMode::kPlannerStateIdm: return frame_at(u - tau - 1);
      case GenMode::kPolicy: break;
    }
    // Roll the Stage-1 state decoder forward from the last observed state.
    const long last = std::min<long>(u, tau + static_cast<long>(row_.frames.size()));
    while (static_cast<long>(decoded_.size()) < last - tau) {
      const long v = tau + static_cast<long>(decoded_.size()) + 1;
      const Vec prev = v - 1 == tau ? row_.obs->states[tau] : decoded_.back();
      decoded_.push_back(m_.stage1->decode_recon(prev, action(v - 1), latent_at(v)));
    }
    return decoded_[static_cast<std::size_t>(last - tau - 1)];
  }

  Vec action(long u) {
    const long tau = static_cast<long>(row_.obs->tau());
    if (u < tau) return row_.obs->actions[u];
    const std::size_t da = m_.layout.action_dim;
    switch (m_.layout.mode) {
      case GenMode::kPlannerJoint: return head(frame_at(u - tau), da);
      case GenMode::kPolicy: return frame_at(u - tau);
      case GenMode::kPlannerStateIdm: break;
    }
    const long nxt = std::min<long>(u + 1, tau + static_cast<long>(row_.frames.size()));
    if (nxt <= u) return action(u - 1);
    const Vec& c = latent_at(nxt);
    const Vec none;
    return m_.idm->infer(state(u), state(nxt), m_.idm->latent_dim() > 0 ? c : none);
  }

  const Stage2Model& m_;
  const RowBlock& row_;
  std::vector<Vec> decoded_;
};

}  // namespace

std::vector<Vec> stage1_frames(const Stage2Model& m, const RowBlock& row, long from, long to) {
  if (!m.stage1) throw ContractError("stage-1 frames need Stage-1 nets");
  if (m.layout.mode == GenMode::kPlannerStateIdm && !m.idm) {
    throw ContractError("state-only generation needs an inverse dynamics net");
  }
  RowFiller fill(m, row);
  std::vector<Vec> out;
  for (long u = from; u <= to; ++u) out.push_back(fill.frame(u));
  return out;
}

std::vector<Vec> history_frames(const Stage2Model& m, const Observed& obs) {
  std::vector<Vec> out;
  const long tau = static_cast<long>(obs.tau());
  const long n = static_cast<long>(m.cfg.obs_horizon) - 1;
  for (long u = tau - n; u < tau; ++u) {
    const long v = std::max<long>(u, 0);
    Vec f = m.state_norm.normalize(obs.states[v]);
    Vec a = v < tau ? m.action_norm.normalize(obs.actions[v])
                    : Vec(m.layout.action_dim, 0.0);
    f.insert(f.end(), a.begin(), a.end());
    out.push_back(std::move(f));
  }
  return out;
}

Tensor stack_rows(const std::vector<Vec>& rows) {
  if (rows.empty()) throw ContractError("cannot stack zero rows");
  const std::size_t c = rows.front().size();
  Tensor t({rows.size(), c});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != c) throw ShapeError("ragged rows");
    std::copy(rows[r].begin(), rows[r].end(), t.values().begin() + static_cast<long>(r * c));
  }
  return t;
}

Vec row_of(const Tensor& t, std::size_t r) {
  const std::size_t c = t.cols();
  auto v = t.values();
  return Vec(v.begin() + static_cast<long>(r * c), v.begin() + static_cast<long>((r + 1) * c));
}

DenoiseInput denoise_input(Tape& tape, const Tensor& x,
                           const std::vector<std::vector<std::size_t>>& levels, Var latents,
                           const ConditionRows& c) {
  DenoiseInput in;
  in.x = tape.constant(x);
  in.levels = levels;
  in.latents = latents;
  const std::size_t steps = c.history.empty() ? 0 : c.history.front().size();
  for (std::size_t i = 0; i < steps; ++i) {
    std::vector<Vec> rows;
    for (const auto& h : c.history) rows.push_back(h[i]);
    in.history.push_back(tape.constant(stack_rows(rows)));
  }
  in.state = tape.constant(stack_rows(c.state));
  in.cond = tape.constant(stack_rows(c.cond));
  return in;
}

}  // namespace adld::diff::detail
