#include "adld/causaldiff/train.hpp"

#include <algorithm>
#include <cmath>

#include "adld/numerics/adam.hpp"
#include "adld/numerics/errors.hpp"
#include "frames.hpp"

namespace adld::diff {
namespace {

using detail::Vec;

constexpr double kLogGuard = 1e-12;

Var zeros(Tape& tape, std::size_t rows, std::size_t cols) {
  return tape.constant(Tensor({rows, cols}));
}

// Squared error over frames with a positive level, averaged over those
// frames; one value per row.
Var masked_row_loss(Tape& tape, Var pred, const Tensor& x0,
                    const std::vector<std::vector<std::size_t>>& levels, std::size_t D) {
  Tensor w = Tensor::zeros_like(x0);
  for (std::size_t r = 0; r < levels.size(); ++r) {
    std::size_t active = 0;
    for (auto k : levels[r]) active += k > 0 ? 1 : 0;
    if (active == 0) continue;
    for (std::size_t j = 0; j < levels[r].size(); ++j) {
      if (levels[r][j] == 0) continue;
      for (std::size_t i = 0; i < D; ++i) w.at(r, j * D + i) = 1.0 / double(active);
    }
  }
  return sum_cols(square(pred - tape.constant(x0)) * tape.constant(w));
}

Var cat_latents(const std::vector<Var>& per_frame) { return concat(per_frame); }

}  // namespace

double reward_to_go(const env::Episode& ep, std::size_t tau) {
  double s = 0.0;
  for (std::size_t u = tau; u < ep.size(); ++u) s += ep[u].r;
  return s / double(std::max<std::size_t>(ep.size() - tau, 1));
}

std::vector<BlockItem> block_items(const env::Dataset& d, const Stage2Model& m) {
  const std::size_t T = m.cfg.horizon;
  const std::size_t lo =
      std::max<std::size_t>({m.obs_block + 1, m.cfg.obs_horizon > 0 ? m.cfg.obs_horizon - 1 : 0,
                             std::size_t{1}});
  std::vector<BlockItem> out;
  for (std::size_t e = 0; e < d.episodes.size(); ++e) {
    const std::size_t n = d.episodes[e].size();
    if (n < T + 2 + lo) continue;
    for (std::size_t tau = lo; tau + T + 2 <= n; ++tau) out.push_back({e, tau});
  }
  return out;
}

void fit_stage2_statistics(Stage2Model& m, const env::Dataset& d) {
  std::vector<Vec> states, actions, contexts;
  for (const auto& ep : d.episodes) {
    for (const auto& r : ep) {
      states.push_back(r.s);
      actions.push_back(r.a);
      if (!r.c.empty()) contexts.push_back(r.c);
    }
  }
  if (states.empty()) throw ContractError("stage2 needs a nonempty dataset");
  m.state_norm = latent::Normalizer::fit(states);
  m.action_norm = latent::Normalizer::fit(actions);
  if (!contexts.empty() && contexts.front().size() == m.context_norm.dim()) {
    m.context_norm = latent::Normalizer::fit(contexts);
  }
  if (m.cfg.latent == LatentSource::kOracle && contexts.empty()) {
    throw ConfigError("oracle latents need ground-truth contexts in the dataset");
  }
  if (m.idm) m.idm->fit_normalizers(m.state_norm, m.action_norm);

  std::vector<double> ys;
  for (const auto& it : block_items(d, m)) ys.push_back(reward_to_go(d.episodes[it.episode], it.tau));
  if (ys.empty()) return;
  double mean = 0.0;
  for (double y : ys) mean += y;
  mean /= double(ys.size());
  double var = 0.0;
  for (double y : ys) var += (y - mean) * (y - mean);
  const double sd = std::sqrt(var / double(ys.size()));
  m.y_mean = mean;
  m.y_scale = sd > 1e-9 ? sd : 1.0;
  std::sort(ys.begin(), ys.end());
  const auto q = static_cast<std::size_t>(
      std::floor(m.cfg.target_quantile * double(ys.size() - 1)));
  m.y_target = (ys[q] - m.y_mean) / m.y_scale;
}

Var relative_loss(Var post_rows, Var prior_rows, double margin) {
  return softplus(log(post_rows + kLogGuard) - log(stop_gradient(prior_rows) + kLogGuard) + margin);
}

RefineLosses refine_losses(Tape& tape, const Stage2Model& m, const env::Dataset& d,
                           const BlockBatch& batch, double margin) {
  const auto& cfg = m.cfg;
  const std::size_t rows = batch.items.size();
  if (rows == 0) throw ContractError("refine batch is empty");
  const std::size_t T = cfg.horizon, D = m.layout.dim(), dc = m.latent_dim;
  const std::size_t off = m.layout.time_offset();
  Rng rng(batch.noise_seed);

  std::vector<std::vector<std::size_t>> levels;
  Tensor x0({rows, T * D}), xk({rows, T * D});
  const auto fnorm = m.frame_norm();
  detail::ConditionRows cond;
  std::vector<detail::Observed> observed;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& it = batch.items[r];
    const auto& ep = d.episodes.at(it.episode);
    levels.push_back(training_levels(cfg.schedule, T, cfg.K, rng));
    for (std::size_t j = 0; j < T; ++j) {
      Vec clean = fnorm.normalize(detail::block_frame(m.layout, ep, it.tau, j));
      Vec noisy = forward_noise(clean, levels[r][j], m.schedule, rng);
      for (std::size_t i = 0; i < D; ++i) {
        x0.at(r, j * D + i) = clean[i];
        xk.at(r, j * D + i) = noisy[i];
      }
    }
    observed.push_back(detail::observed_prefix(ep, it.tau));
    cond.history.push_back(detail::history_frames(m, observed.back()));
    cond.state.push_back(m.state_norm.normalize(ep[it.tau].s));
    const bool keep = cfg.condition == ConditionKind::kReturn && rng.uniform() >= cfg.cond_dropout;
    const double y = (reward_to_go(ep, it.tau) - m.y_mean) / m.y_scale;
    cond.cond.push_back({keep ? y : 0.0, keep ? 1.0 : 0.0});
  }

  auto denoise = [&](Var latents, Grad g) {
    return m.theta.predict(tape, detail::denoise_input(tape, xk, levels, latents, cond), g);
  };

  RefineLosses out;
  if (cfg.latent != LatentSource::kPosterior) {
    Var lat;
    if (cfg.latent == LatentSource::kZero) {
      lat = zeros(tape, rows, T * dc);
    } else {
      std::vector<Vec> lrows;
      for (const auto& it : batch.items) {
        Vec row;
        for (std::size_t j = 0; j < T; ++j) {
          Vec c = m.context_norm.normalize(d.episodes[it.episode][it.tau + off + j].c);
          row.insert(row.end(), c.begin(), c.end());
        }
        lrows.push_back(std::move(row));
      }
      lat = tape.constant(detail::stack_rows(lrows));
    }
    out.diff = mean(masked_row_loss(tape, denoise(lat, Grad::kTrack), x0, levels, D));
    out.total = out.diff;
    return out;
  }

  // Stage-1 windows on clean (or, optionally, noisy) observation frames.
  const auto& s1 = *m.stage1;
  const long Tx = static_cast<long>(m.obs_block);
  const long fut = m.obs_future ? 1 : 0;
  const Grad g_psi = cfg.refine ? Grad::kTrack : Grad::kFrozen;
  const Grad g_phi = cfg.refine ? Grad::kTrack : Grad::kFrozen;
  const long first = -1 - Tx;  // relative to t_0
  const long last = static_cast<long>(T) - 1 + fut;
  std::vector<std::vector<Vec>> raw(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& it = batch.items[r];
    const auto& ep = d.episodes[it.episode];
    const long t0 = static_cast<long>(it.tau + off);
    if (cfg.noise_matched_posterior) {
      detail::RowBlock rb;
      rb.obs = &observed[r];
      for (std::size_t j = 0; j < T; ++j) {
        Vec f(xk.values().begin() + static_cast<long>(r * T * D + j * D),
              xk.values().begin() + static_cast<long>(r * T * D + (j + 1) * D));
        for (std::size_t i = 0; i < D; ++i) f[i] = fnorm.mean[i] + fnorm.scale[i] * f[i];
        rb.frames.push_back(std::move(f));
        rb.latents.push_back(Vec(dc, 0.0));
      }
      raw[r] = detail::stage1_frames(m, rb, t0 + first, t0 + last);
    } else {
      for (long u = t0 + first; u <= t0 + last; ++u) {
        raw[r].push_back(latent::frame_of(ep.at(static_cast<std::size_t>(u)),
                                          s1.config().modality));
      }
    }
  }
  std::vector<Var> feats;
  for (long o = first; o <= last; ++o) {
    std::vector<Vec> col;
    for (std::size_t r = 0; r < rows; ++r) col.push_back(raw[r][static_cast<std::size_t>(o - first)]);
    feats.push_back(s1.frame_features(tape, tape.constant(detail::stack_rows(col)), g_psi));
  }
  auto window = [&](long rel) {
    const auto b = feats.begin() + (rel - Tx - first);
    const auto e = feats.begin() + (rel + fut - first) + 1;
    return std::vector<Var>(b, e);
  };

  BeliefVar q_start = s1.posterior_from_features(tape, window(-1), g_psi);
  Var c_prev = stop_gradient(reparam_sample(tape, q_start, rng));
  std::vector<Var> post, prior;
  for (long j = 0; j < static_cast<long>(T); ++j) {
    BeliefVar q = s1.posterior_from_features(tape, window(j), g_psi);
    Var zq = reparam_sample(tape, q, rng);
    BeliefVar p = s1.prior(tape, c_prev, g_phi);
    Var zp = reparam_sample(tape, p, rng);
    post.push_back(zq);
    prior.push_back(zp);
    c_prev = stop_gradient(zq);
  }
  Var post_lat = cat_latents(post);
  Var prior_lat = cat_latents(prior);

  if (!cfg.refine) {
    out.diff = mean(masked_row_loss(tape, denoise(stop_gradient(prior_lat), Grad::kTrack), x0,
                                    levels, D));
    out.total = out.diff;
    return out;
  }

  Var diff_row = masked_row_loss(tape, denoise(stop_gradient(post_lat), Grad::kTrack), x0, levels, D);
  Var post_row = masked_row_loss(tape, denoise(post_lat, Grad::kFrozen), x0, levels, D);
  Var prior_row = masked_row_loss(tape, denoise(prior_lat, Grad::kFrozen), x0, levels, D);
  Var rel_row = relative_loss(post_row, prior_row, margin);
  out.refined = true;
  out.diff = mean(diff_row);
  out.post = mean(post_row);
  out.prior = mean(prior_row);
  out.rel = mean(rel_row);
  out.dr = out.post + cfg.lambda_prior * out.prior + cfg.lambda_rel * out.rel;
  out.total = out.diff + out.dr;
  return out;
}

StepLatents transition_latents(const Stage2Model& m, const env::Dataset& d) {
  StepLatents out;
  if (!m.idm || m.idm->latent_dim() == 0) return out;
  for (const auto& ep : d.episodes) {
    std::vector<Vec> lat;
    if (m.cfg.latent == LatentSource::kOracle) {
      for (std::size_t t = 0; t + 1 < ep.size(); ++t) lat.push_back(m.context_norm.normalize(ep[t + 1].c));
    } else {
      auto beliefs = latent::episode_posteriors(*m.stage1, ep);
      for (std::size_t t = 0; t + 1 < ep.size(); ++t) {
        if (beliefs.beliefs.empty()) {
          lat.push_back(Vec(m.latent_dim, 0.0));
          continue;
        }
        const long i = std::clamp<long>(static_cast<long>(t + 1) - static_cast<long>(beliefs.first_anchor),
                                        0, static_cast<long>(beliefs.beliefs.size()) - 1);
        lat.push_back(beliefs.beliefs[static_cast<std::size_t>(i)].mean);
      }
    }
    out.push_back(std::move(lat));
  }
  return out;
}

namespace {

struct IdmRows {
  Tensor s, s_next, a, c;
};

IdmRows idm_rows(const env::Dataset& d, const StepLatents& lat,
                 std::span<const std::pair<std::size_t, std::size_t>> idx) {
  std::vector<Vec> s, sn, a, c;
  for (auto [e, t] : idx) {
    const auto& ep = d.episodes[e];
    s.push_back(ep[t].s);
    sn.push_back(ep[t + 1].s);
    a.push_back(ep[t].a);
    if (!lat.empty()) c.push_back(lat[e][t]);
  }
  IdmRows r{detail::stack_rows(s), detail::stack_rows(sn), detail::stack_rows(a), Tensor()};
  if (!c.empty()) r.c = detail::stack_rows(c);
  return r;
}

std::vector<std::pair<std::size_t, std::size_t>> transitions(const env::Dataset& d) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t e = 0; e < d.episodes.size(); ++e) {
    for (std::size_t t = 0; t + 1 < d.episodes[e].size(); ++t) out.push_back({e, t});
  }
  return out;
}

}  // namespace

IdmNet train_idm(const env::Dataset& d, const StepLatents& latents, const IdmTraining& opt,
                 std::vector<double>* history) {
  auto idx = transitions(d);
  if (idx.empty()) throw ContractError("idm needs at least one transition");
  const auto& r0 = d.episodes[idx[0].first][0];
  const std::size_t dc = latents.empty() ? 0 : latents[0].at(0).size();
  Rng rng(opt.seed);
  IdmNet net(r0.s.size(), r0.a.size(), dc, opt.hidden, rng);
  std::vector<Vec> states, actions;
  for (const auto& ep : d.episodes) {
    for (const auto& r : ep) {
      states.push_back(r.s);
      actions.push_back(r.a);
    }
  }
  net.fit_normalizers(latent::Normalizer::fit(states), latent::Normalizer::fit(actions));
  ParamRefs params;
  net.collect("idm.", params);
  AdamState adam;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(idx.begin(), idx.end());
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t i = 0; i < idx.size(); i += opt.batch) {
      const std::size_t n = std::min(opt.batch, idx.size() - i);
      IdmRows b = idm_rows(d, latents, std::span(idx).subspan(i, n));
      Tape tape;
      Var c = dc > 0 ? tape.constant(b.c) : Var{};
      Var pred = net.forward(tape, tape.constant(b.s), tape.constant(b.s_next), c, Grad::kTrack);
      Var loss = mean(sum_cols(square(pred - tape.constant(b.a))));
      auto grads = gather(tape.backward(loss), params);
      adam_step(params, grads, adam, opt.lr);
      total += loss.value().item();
      ++batches;
    }
    if (history) history->push_back(total / double(std::max<std::size_t>(batches, 1)));
  }
  return net;
}

double idm_mse(const IdmNet& idm, const env::Dataset& d, const StepLatents& latents) {
  auto idx = transitions(d);
  if (idx.empty()) return 0.0;
  IdmRows b = idm_rows(d, latents, idx);
  Tape tape;
  Var c = idm.latent_dim() > 0 ? tape.constant(b.c) : Var{};
  Var pred = idm.forward(tape, tape.constant(b.s), tape.constant(b.s_next), c, Grad::kFrozen);
  const Tensor& p = pred.value();
  double se = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double e = p[i] - b.a[i];
    se += e * e;
  }
  return se / double(p.size());
}

Stage2Result train_stage2(const env::Dataset& d, const Stage2Config& cfg,
                          std::optional<latent::Stage1Nets> stage1) {
  cfg.validate();
  if (d.episodes.empty() || d.episodes[0].empty()) throw ContractError("stage2 needs data");
  const auto& r0 = d.episodes[0][0];
  Stage2Result out;
  out.model = Stage2Model::create(cfg, r0.s.size(), r0.a.size(), std::max<std::size_t>(r0.c.size(), 1),
                                  std::move(stage1));
  Stage2Model& m = out.model;
  fit_stage2_statistics(m, d);

  if (m.idm) {
    IdmTraining opt;
    opt.hidden = cfg.idm_hidden;
    opt.epochs = cfg.idm_epochs;
    opt.batch = cfg.batch;
    opt.lr = cfg.lr;
    opt.seed = derive_seed(cfg.seed, 0x1D4);
    StepLatents lat = transition_latents(m, d);
    m.idm = train_idm(d, lat, opt, &out.idm_history);
  }

  auto items = block_items(d, m);
  if (items.empty() && cfg.epochs > 0) throw ContractError("no episode is long enough for stage2");
  ParamRefs params = m.trainable();
  AdamState adam;
  Rng rng(derive_seed(cfg.seed, 0x5732));
  double margin = 0.0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(items.begin(), items.end());
    LossReport rep;
    std::size_t batches = 0;
    try {
      for (std::size_t i = 0; i < items.size(); i += cfg.batch) {
        BlockBatch b;
        b.items.assign(items.begin() + static_cast<long>(i),
                       items.begin() + static_cast<long>(std::min(items.size(), i + cfg.batch)));
        b.noise_seed = rng.bits();
        Tape tape;
        RefineLosses l = refine_losses(tape, m, d, b, margin);
        auto grads = gather(tape.backward(l.total), params);
        adam_step(params, grads, adam, cfg.lr);
        rep.diff += l.diff.value().item();
        rep.total += l.total.value().item();
        if (l.refined) {
          rep.post += l.post.value().item();
          rep.prior += l.prior.value().item();
          rep.rel += l.rel.value().item();
          rep.dr += l.dr.value().item();
        }
        ++batches;
      }
    } catch (const NumericError& e) {
      throw NumericError("stage2 diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    const double n = double(std::max<std::size_t>(batches, 1));
    rep.diff /= n;
    rep.post /= n;
    rep.prior /= n;
    rep.rel /= n;
    rep.dr /= n;
    rep.total /= n;
    out.history.push_back(rep);
    margin = cfg.margin_scale * rep.prior;
  }
  return out;
}

}  // namespace adld::diff
