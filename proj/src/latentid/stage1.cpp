#include "adld/latentid/stage1.hpp"

#include <algorithm>
#include <cmath>

#include "adld/numerics/adam.hpp"
#include "adld/numerics/errors.hpp"
#include "adld/numerics/io.hpp"
#include "adld/numerics/kv.hpp"

namespace adld::latent {
namespace {

Tensor broadcast_rows(const Tensor& row, std::size_t rows) {
  Tensor out({rows, row.size()});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(row.values().begin(), row.values().end(),
              out.values().begin() + static_cast<long>(r * row.size()));
  }
  return out;
}

// Raw frames for time offsets of a batch of segments; times outside the
// episode are clamped (their rows are masked by the caller).
Tensor frame_batch(const env::Dataset& d, std::span<const Segment> batch, long offset,
                   Modality m, std::size_t dim) {
  Tensor out({batch.size(), dim});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& ep = d.episodes[batch[b].episode];
    const long t = std::clamp<long>(static_cast<long>(batch[b].first) + offset, 0,
                                    static_cast<long>(ep.size()) - 1);
    auto f = frame_of(ep[static_cast<std::size_t>(t)], m);
    std::copy(f.begin(), f.end(), out.values().begin() + static_cast<long>(b * dim));
  }
  return out;
}

Tensor field_batch(const env::Dataset& d, std::span<const Segment> batch, long offset,
                   int which) {
  const auto& first = d.episodes[batch[0].episode][0];
  const std::size_t dim = which == 0 ? first.s.size() : which == 1 ? first.a.size() : 1;
  Tensor out({batch.size(), dim});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& ep = d.episodes[batch[b].episode];
    const long t = std::clamp<long>(static_cast<long>(batch[b].first) + offset, 0,
                                    static_cast<long>(ep.size()) - 1);
    const auto& rec = ep[static_cast<std::size_t>(t)];
    for (std::size_t j = 0; j < dim; ++j) {
      out.at(b, j) = which == 0 ? rec.s[j] : which == 1 ? rec.a[j] : rec.r;
    }
  }
  return out;
}

}  // namespace

std::string to_string(Modality m) {
  switch (m) {
    case Modality::kState: return "s";
    case Modality::kStateAction: return "s,a";
    case Modality::kStateActionReward: return "s,a,r";
  }
  return "";
}

Modality modality_from(const std::string& s) {
  if (s == "s") return Modality::kState;
  if (s == "s,a") return Modality::kStateAction;
  if (s == "s,a,r") return Modality::kStateActionReward;
  throw ConfigError("unknown modality '" + s + "'");
}

std::map<std::string, std::string> Stage1Config::to_kv() const {
  return {
      {"block", std::to_string(block)},
      {"latent_dim", std::to_string(latent_dim)},
      {"kl_weight", format_double(kl_weight)},
      {"lr", format_double(lr)},
      {"batch", std::to_string(batch)},
      {"chain", std::to_string(chain)},
      {"epochs", std::to_string(epochs)},
      {"modality", to_string(modality)},
      {"prior_input", prior_input == PriorInput::kSample ? "sample" : "mean"},
      {"use_future", use_future ? "true" : "false"},
      {"embed", std::to_string(embed)},
      {"hidden", std::to_string(hidden)},
      {"gru", std::to_string(gru)},
      {"prior_hidden", std::to_string(prior_hidden)},
      {"decoder_hidden", std::to_string(decoder_hidden)},
      {"seed", std::to_string(seed)},
  };
}

Stage1Config Stage1Config::from_kv(const std::map<std::string, std::string>& kv) {
  Stage1Config c;
  for (const auto& [k, v] : kv) {
    if (k == "block") c.block = kv_count(k, v);
    else if (k == "latent_dim") c.latent_dim = kv_count(k, v);
    else if (k == "kl_weight") c.kl_weight = kv_number(k, v);
    else if (k == "lr") c.lr = kv_number(k, v);
    else if (k == "batch") c.batch = kv_count(k, v);
    else if (k == "chain") c.chain = kv_count(k, v);
    else if (k == "epochs") c.epochs = kv_count(k, v);
    else if (k == "modality") c.modality = modality_from(v);
    else if (k == "prior_input") {
      if (v == "sample") c.prior_input = PriorInput::kSample;
      else if (v == "mean") c.prior_input = PriorInput::kMean;
      else throw ConfigError("prior_input must be sample or mean, got '" + v + "'");
    }
    else if (k == "use_future") c.use_future = kv_bool(k, v);
    else if (k == "embed") c.embed = kv_count(k, v);
    else if (k == "hidden") c.hidden = kv_count(k, v);
    else if (k == "gru") c.gru = kv_count(k, v);
    else if (k == "prior_hidden") c.prior_hidden = kv_count(k, v);
    else if (k == "decoder_hidden") c.decoder_hidden = kv_count(k, v);
    else if (k == "seed") c.seed = kv_count(k, v);
    else throw ConfigError("unknown stage1 key '" + k + "'");
  }
  c.validate();
  return c;
}

void Stage1Config::validate() const {
  if (block < 2) throw ConfigError("stage1 block must be at least 2");
  if (latent_dim == 0) throw ConfigError("stage1 latent_dim must be positive");
  if (!(kl_weight > 0)) throw ConfigError("stage1 kl_weight must be positive");
  if (!(lr > 0)) throw ConfigError("stage1 lr must be positive");
  if (batch == 0 || chain == 0) throw ConfigError("stage1 batch and chain must be positive");
}

std::vector<double> frame_of(const env::StepRecord& r, Modality m) {
  std::vector<double> f = r.s;
  if (m != Modality::kState) f.insert(f.end(), r.a.begin(), r.a.end());
  if (m == Modality::kStateActionReward) f.push_back(r.r);
  return f;
}

std::size_t frame_dim(std::size_t ds, std::size_t da, Modality m) {
  return ds + (m != Modality::kState ? da : 0) + (m == Modality::kStateActionReward ? 1 : 0);
}

std::pair<std::size_t, std::size_t> anchor_range(std::size_t n, std::size_t block,
                                                 bool use_future) {
  const std::size_t need = block + (use_future ? 2 : 1);
  if (n < need) return {1, 0};
  return {block, n - (use_future ? 2 : 1)};
}

BlockExtraction extract_blocks(const env::Dataset& d, std::size_t block, Modality m,
                               bool use_future) {
  BlockExtraction out;
  for (std::size_t e = 0; e < d.episodes.size(); ++e) {
    const auto& ep = d.episodes[e];
    auto [lo, hi] = anchor_range(ep.size(), block, use_future);
    if (lo > hi) {
      ++out.skipped_episodes;
      continue;
    }
    for (std::size_t t = lo; t <= hi; ++t) {
      BlockWindow w;
      w.anchor = t;
      w.episode = e;
      w.block = block;
      const std::size_t end = t + (use_future ? 1 : 0);
      for (std::size_t j = t - block; j <= end; ++j) w.frames.push_back(frame_of(ep[j], m));
      out.windows.push_back(std::move(w));
    }
  }
  return out;
}

Normalizer Normalizer::fit(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw ContractError("cannot fit normalizer on no rows");
  const std::size_t dim = rows.front().size();
  Normalizer n;
  n.mean = Tensor(std::vector<std::size_t>{dim});
  n.scale = Tensor(std::vector<std::size_t>{dim});
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < dim; ++j) n.mean[j] += r[j];
  }
  for (std::size_t j = 0; j < dim; ++j) n.mean[j] /= static_cast<double>(rows.size());
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double dv = r[j] - n.mean[j];
      n.scale[j] += dv * dv;
    }
  }
  for (std::size_t j = 0; j < dim; ++j) {
    const double sd = std::sqrt(n.scale[j] / static_cast<double>(rows.size()));
    n.scale[j] = sd > 1e-6 ? sd : 1.0;
  }
  return n;
}

Normalizer Normalizer::head(std::size_t n) const {
  if (n > dim()) throw ShapeError("normalizer head wider than normalizer");
  Normalizer out;
  out.mean = Tensor(std::vector<std::size_t>{n},
                    std::vector<double>(mean.values().begin(), mean.values().begin() + static_cast<long>(n)));
  out.scale = Tensor(std::vector<std::size_t>{n},
                     std::vector<double>(scale.values().begin(), scale.values().begin() + static_cast<long>(n)));
  return out;
}

Normalizer Normalizer::identity(std::size_t dim) {
  Normalizer n;
  n.mean = Tensor(std::vector<std::size_t>{dim});
  n.scale = Tensor(std::vector<std::size_t>{dim}, 1.0);
  return n;
}

Var Normalizer::normalize(Tape& tape, Var x) const {
  Tensor inv = scale;
  for (auto& v : inv.values()) v = 1.0 / v;
  Tensor shift = mean;
  for (auto& v : shift.values()) v = -v;
  return add_row(x, tape.constant(shift)) * tape.constant(broadcast_rows(inv, x.rows()));
}

Var Normalizer::denormalize(Tape& tape, Var x) const {
  return add_row(x * tape.constant(broadcast_rows(scale, x.rows())), tape.constant(mean));
}

std::vector<double> Normalizer::normalize(std::span<const double> x) const {
  std::vector<double> out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - mean[j]) / scale[j];
  return out;
}

void Normalizer::collect(const std::string& prefix, ParamRefs& out) {
  out.push_back({prefix + "mean", &mean});
  out.push_back({prefix + "scale", &scale});
}

Stage1Nets::Stage1Nets(const Stage1Config& cfg, std::size_t ds, std::size_t da, Rng& rng)
    : cfg_(cfg), state_dim_(ds), action_dim_(da) {
  cfg_.validate();
  const std::size_t e = cfg.embed;
  embeds_.emplace_back(ds, std::vector<std::size_t>{e}, e, rng);
  if (uses_actions()) embeds_.emplace_back(da, std::vector<std::size_t>{e}, e, rng);
  if (uses_reward()) embeds_.emplace_back(1, std::vector<std::size_t>{e}, e, rng);
  trunk_ = Mlp(e * embeds_.size(), {cfg.hidden}, cfg.hidden, rng);
  gru_ = Gru(cfg.hidden, cfg.gru, rng);
  head_ = Dense(cfg.gru, 2 * cfg.latent_dim, rng);
  prior_ = Mlp(cfg.latent_dim, {cfg.prior_hidden, cfg.prior_hidden}, 2 * cfg.latent_dim, rng);
  const std::size_t dec_in = ds + (uses_actions() ? da : 0) + cfg.latent_dim;
  state_dec_ = Mlp(dec_in, {cfg.decoder_hidden, cfg.decoder_hidden}, ds, rng);
  if (uses_reward()) {
    reward_dec_ = Mlp(ds + da + cfg.latent_dim, {cfg.decoder_hidden, cfg.decoder_hidden}, 1, rng);
  }
  frame_norm_ = Normalizer::identity(frame_dim());
  delta_norm_ = Normalizer::identity(ds);
  reward_norm_ = Normalizer::identity(1);
}

std::size_t Stage1Nets::frame_dim() const {
  return latent::frame_dim(state_dim_, action_dim_, cfg_.modality);
}

void Stage1Nets::fit_normalizers(const env::Dataset& d) {
  std::vector<std::vector<double>> frames, deltas, rewards;
  for (const auto& ep : d.episodes) {
    for (std::size_t t = 0; t < ep.size(); ++t) {
      frames.push_back(frame_of(ep[t], cfg_.modality));
      rewards.push_back({ep[t].r});
      if (t > 0) {
        std::vector<double> dv(state_dim_);
        for (std::size_t j = 0; j < state_dim_; ++j) dv[j] = ep[t].s[j] - ep[t - 1].s[j];
        deltas.push_back(std::move(dv));
      }
    }
  }
  frame_norm_ = Normalizer::fit(frames);
  if (!deltas.empty()) delta_norm_ = Normalizer::fit(deltas);
  reward_norm_ = Normalizer::fit(rewards);
}

Var Stage1Nets::frame_features(Tape& tape, Var raw, Grad g) const {
  if (raw.cols() != frame_dim()) {
    throw ShapeError("stage1 frame has " + std::to_string(raw.cols()) +
                     " values, modality " + to_string(cfg_.modality) + " needs " +
                     std::to_string(frame_dim()));
  }
  Var x = frame_norm_.normalize(tape, raw);
  std::vector<Var> parts;
  std::size_t offset = 0;
  const std::size_t widths[3] = {state_dim_, action_dim_, 1};
  for (std::size_t i = 0; i < embeds_.size(); ++i) {
    Var piece = slice(x, offset, offset + widths[i]);
    parts.push_back(relu(embeds_[i].forward(tape, piece, g)));
    offset += widths[i];
  }
  Var joined = parts.size() == 1 ? parts[0] : concat(parts);
  return relu(trunk_.forward(tape, joined, g));
}

BeliefVar Stage1Nets::posterior_from_features(Tape& tape, std::span<const Var> features,
                                              Grad g) const {
  if (features.empty()) throw ContractError("posterior needs at least one frame");
  Var h = tape.constant(Tensor({features[0].rows(), cfg_.gru}));
  for (Var f : features) h = gru_.step(tape, f, h, g);
  return split_belief(head_.forward(tape, h, g));
}

BeliefVar Stage1Nets::posterior(Tape& tape, std::span<const Var> raw_frames, Grad g) const {
  std::vector<Var> feats;
  feats.reserve(raw_frames.size());
  for (Var f : raw_frames) feats.push_back(frame_features(tape, f, g));
  return posterior_from_features(tape, feats, g);
}

BeliefVar Stage1Nets::prior(Tape& tape, Var c_prev, Grad g) const {
  if (c_prev.cols() != cfg_.latent_dim) throw ShapeError("prior input has wrong latent dim");
  return split_belief(prior_.forward(tape, c_prev, g));
}

Var Stage1Nets::decode_state_delta(Tape& tape, Var s_prev, Var a_prev, Var c, Grad g) const {
  const std::size_t width = state_dim_ + (uses_actions() ? action_dim_ : 0);
  Var sn = frame_norm_.head(width).normalize(tape, uses_actions() ? concat({s_prev, a_prev}) : s_prev);
  return state_dec_.forward(tape, concat({sn, c}), g);
}

Var Stage1Nets::decode_state(Tape& tape, Var s_prev, Var a_prev, Var c, Grad g) const {
  return s_prev + delta_norm_.denormalize(tape, decode_state_delta(tape, s_prev, a_prev, c, g));
}

Var Stage1Nets::decode_reward_normalized(Tape& tape, Var s, Var a, Var c, Grad g) const {
  if (!uses_reward()) throw ContractError("reward head is inactive for this modality");
  Var sa = frame_norm_.head(state_dim_ + action_dim_).normalize(tape, concat({s, a}));
  return reward_dec_.forward(tape, concat({sa, c}), g);
}

Var Stage1Nets::decode_reward(Tape& tape, Var s, Var a, Var c, Grad g) const {
  return reward_norm_.denormalize(tape, decode_reward_normalized(tape, s, a, c, g));
}

LatentBelief Stage1Nets::posterior_infer(const BlockWindow& w) const {
  Tape tape;
  std::vector<Var> frames;
  for (const auto& f : w.frames) {
    if (f.size() != frame_dim()) {
      throw ShapeError("block frame has " + std::to_string(f.size()) + " values, expected " +
                       std::to_string(frame_dim()));
    }
    frames.push_back(tape.constant(Tensor::row(f)));
  }
  return belief_row(posterior(tape, frames, Grad::kFrozen), 0);
}

LatentBelief Stage1Nets::prior_predict(std::span<const double> c_prev) const {
  Tape tape;
  return belief_row(prior(tape, tape.constant(Tensor::row(c_prev)), Grad::kFrozen), 0);
}

std::vector<double> Stage1Nets::decode_recon(std::span<const double> s_prev,
                                             std::span<const double> a_prev,
                                             std::span<const double> c) const {
  Tape tape;
  Var a = uses_actions() ? tape.constant(Tensor::row(a_prev)) : Var{};
  Var out = decode_state(tape, tape.constant(Tensor::row(s_prev)), a,
                         tape.constant(Tensor::row(c)), Grad::kFrozen);
  auto v = out.value().values();
  return {v.begin(), v.end()};
}

double Stage1Nets::decode_reward_value(std::span<const double> s, std::span<const double> a,
                                       std::span<const double> c) const {
  Tape tape;
  return decode_reward(tape, tape.constant(Tensor::row(s)), tape.constant(Tensor::row(a)),
                       tape.constant(Tensor::row(c)), Grad::kFrozen)
      .value()
      .item();
}

void Stage1Nets::collect_posterior(ParamRefs& out) {
  static const char* names[3] = {"state", "action", "reward"};
  for (std::size_t i = 0; i < embeds_.size(); ++i) {
    embeds_[i].collect(std::string("psi.embed.") + names[i] + ".", out);
  }
  trunk_.collect("psi.trunk.", out);
  gru_.collect("psi.gru.", out);
  head_.collect("psi.head.", out);
}

void Stage1Nets::collect_prior(ParamRefs& out) { prior_.collect("phi.net.", out); }

void Stage1Nets::collect_decoder(ParamRefs& out) {
  state_dec_.collect("dec.state.", out);
  if (uses_reward()) reward_dec_.collect("dec.reward.", out);
}

ParamRefs Stage1Nets::params() {
  ParamRefs out;
  collect_posterior(out);
  collect_prior(out);
  collect_decoder(out);
  return out;
}

Checkpoint Stage1Nets::to_checkpoint() const {
  auto& self = const_cast<Stage1Nets&>(*this);
  ParamRefs refs = self.params();
  self.frame_norm_.collect("psi.norm.frame.", refs);
  self.delta_norm_.collect("dec.norm.delta.", refs);
  self.reward_norm_.collect("dec.norm.reward.", refs);
  std::string trailer;
  for (const auto& [k, v] : cfg_.to_kv()) trailer += k + "=" + v + "\n";
  trailer += "state_dim=" + std::to_string(state_dim_) + "\n";
  trailer += "action_dim=" + std::to_string(action_dim_) + "\n";
  return Checkpoint::from(refs, trailer);
}

Stage1Nets Stage1Nets::from_checkpoint(const Checkpoint& c) {
  auto kv = parse_kv_lines(c.trailer);
  std::size_t ds = 0, da = 0;
  try {
    ds = kv_count("state_dim", kv.at("state_dim"));
    da = kv_count("action_dim", kv.at("action_dim"));
  } catch (const std::out_of_range&) {
    throw FormatError("stage1 checkpoint trailer lacks dims");
  }
  kv.erase("state_dim");
  kv.erase("action_dim");
  Stage1Config cfg = Stage1Config::from_kv(kv);
  Rng rng(0);
  Stage1Nets nets(cfg, ds, da, rng);
  ParamRefs refs = nets.params();
  nets.frame_norm_.collect("psi.norm.frame.", refs);
  nets.delta_norm_.collect("dec.norm.delta.", refs);
  nets.reward_norm_.collect("dec.norm.reward.", refs);
  c.load_into(refs);
  return nets;
}

std::vector<Segment> make_segments(const env::Dataset& d, const Stage1Config& cfg) {
  std::vector<Segment> out;
  for (std::size_t e = 0; e < d.episodes.size(); ++e) {
    auto [lo, hi] = anchor_range(d.episodes[e].size(), cfg.block, cfg.use_future);
    if (lo > hi) continue;
    const std::size_t count = hi - lo + 1;
    const std::size_t len = std::min(cfg.chain, count);
    for (std::size_t start = lo; start + len <= hi + 1; start += len) {
      out.push_back({e, start, len});
    }
    if (count % len != 0) out.push_back({e, hi + 1 - len, len});
  }
  return out;
}

ElboTerms elbo_loss(Tape& tape, const Stage1Nets& nets, const env::Dataset& d,
                    std::span<const Segment> batch, double kl_weight, Rng& rng) {
  if (batch.empty()) throw ContractError("elbo batch is empty");
  const std::size_t len = batch[0].length;
  for (const auto& s : batch) {
    if (s.length != len) throw ContractError("elbo batch segments differ in length");
  }
  const auto& cfg = nets.config();
  const long block = static_cast<long>(cfg.block);
  const long future = cfg.use_future ? 1 : 0;
  const std::size_t rows = batch.size();
  const Grad g = Grad::kTrack;

  // Features for offsets [-1 - block, len - 1 + future] relative to the first anchor.
  const long lo = -1 - block;
  const long hi = static_cast<long>(len) - 1 + future;
  std::vector<Var> feats;
  for (long o = lo; o <= hi; ++o) {
    Var raw = tape.constant(frame_batch(d, batch, o, cfg.modality, nets.frame_dim()));
    feats.push_back(nets.frame_features(tape, raw, g));
  }
  auto window = [&](long anchor) {
    const auto begin = feats.begin() + (anchor - block - lo);
    const auto end = feats.begin() + (anchor + future - lo) + 1;
    return std::vector<Var>(begin, end);
  };

  // Chain start: the previous anchor's sample when it exists, else zeros.
  Tensor mask({rows, cfg.latent_dim});
  for (std::size_t b = 0; b < rows; ++b) {
    const bool has_prev = batch[b].first >= cfg.block + 1;
    for (std::size_t j = 0; j < cfg.latent_dim; ++j) mask.at(b, j) = has_prev ? 1.0 : 0.0;
  }
  BeliefVar q0 = nets.posterior_from_features(tape, window(-1), g);
  Var c0 = cfg.prior_input == PriorInput::kMean ? q0.mean : reparam_sample(tape, q0, rng);
  Var c_prev = c0 * tape.constant(mask);

  Var recon_sum, kl_sum;
  for (long i = 0; i < static_cast<long>(len); ++i) {
    BeliefVar q = nets.posterior_from_features(tape, window(i), g);
    Var z = reparam_sample(tape, q, rng);
    BeliefVar p = nets.prior(tape, c_prev, g);
    Var kl = gaussian_kl(q, p);

    Var s_prev = tape.constant(field_batch(d, batch, i - 1, 0));
    Var a_prev = tape.constant(field_batch(d, batch, i - 1, 1));
    Tensor s_now = field_batch(d, batch, i, 0);
    Tensor delta = s_now;
    const Tensor& sp = s_prev.value();
    const auto& dn = nets.delta_norm();
    for (std::size_t b = 0; b < rows; ++b) {
      for (std::size_t j = 0; j < delta.cols(); ++j) {
        delta.at(b, j) = (s_now.at(b, j) - sp.at(b, j) - dn.mean[j]) / dn.scale[j];
      }
    }
    Var pred = nets.decode_state_delta(tape, s_prev, a_prev, z, g);
    Var recon = sum_cols(square(pred - tape.constant(delta)));
    if (nets.uses_reward()) {
      Var s_t = tape.constant(s_now);
      Var a_t = tape.constant(field_batch(d, batch, i, 1));
      Tensor r = field_batch(d, batch, i, 2);
      const auto& rn = nets.reward_norm();
      for (auto& v : r.values()) v = (v - rn.mean[0]) / rn.scale[0];
      recon = recon + square(nets.decode_reward_normalized(tape, s_t, a_t, z, g) - tape.constant(r));
    }
    recon_sum = recon_sum.valid() ? recon_sum + recon : recon;
    kl_sum = kl_sum.valid() ? kl_sum + kl : kl;
    c_prev = cfg.prior_input == PriorInput::kMean ? q.mean : z;
  }
  const double scale = 1.0 / static_cast<double>(len);
  ElboTerms t;
  t.recon = scale * mean(recon_sum);
  t.kl = scale * mean(kl_sum);
  t.total = t.recon + kl_weight * t.kl;
  return t;
}

Stage1Result train_stage1(const env::Dataset& d, const Stage1Config& cfg) {
  cfg.validate();
  if (d.episodes.empty()) throw ContractError("stage1 needs a nonempty dataset");
  const auto& r0 = d.episodes[0][0];
  Rng rng(cfg.seed);
  Stage1Result out;
  out.nets = Stage1Nets(cfg, r0.s.size(), r0.a.size(), rng);
  out.nets.fit_normalizers(d);
  for (const auto& ep : d.episodes) {
    auto [lo, hi] = anchor_range(ep.size(), cfg.block, cfg.use_future);
    if (lo > hi) ++out.skipped_episodes;
  }
  auto segments = make_segments(d, cfg);
  if (segments.empty() && cfg.epochs > 0) {
    throw ContractError("no episode is long enough for block " + std::to_string(cfg.block));
  }
  ParamRefs params = out.nets.params();
  AdamState adam;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(segments.begin(), segments.end());
    std::stable_sort(segments.begin(), segments.end(),
                     [](const Segment& a, const Segment& b) { return a.length > b.length; });
    double total = 0, recon = 0, kl = 0;
    std::size_t batches = 0;
    try {
      for (std::size_t i = 0; i < segments.size();) {
        std::size_t j = i;
        while (j < segments.size() && j - i < cfg.batch &&
               segments[j].length == segments[i].length) {
          ++j;
        }
        std::span<const Segment> batch(segments.data() + i, j - i);
        Tape tape;
        ElboTerms terms = elbo_loss(tape, out.nets, d, batch, cfg.kl_weight, rng);
        auto grads = gather(tape.backward(terms.total), params);
        adam_step(params, grads, adam, cfg.lr);
        total += terms.total.value().item();
        recon += terms.recon.value().item();
        kl += terms.kl.value().item();
        ++batches;
        i = j;
      }
    } catch (const NumericError& e) {
      throw NumericError("stage1 diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    const double n = static_cast<double>(std::max<std::size_t>(batches, 1));
    out.loss_history.push_back(total / n);
    out.recon_history.push_back(recon / n);
    out.kl_history.push_back(kl / n);
  }
  return out;
}

EpisodeBeliefs episode_posteriors(const Stage1Nets& nets, const env::Episode& ep) {
  const auto& cfg = nets.config();
  auto [lo, hi] = anchor_range(ep.size(), cfg.block, cfg.use_future);
  EpisodeBeliefs out;
  out.first_anchor = lo;
  if (lo > hi) return out;
  const std::size_t n = hi - lo + 1;
  const std::size_t dim = nets.frame_dim();
  Tape tape;
  std::vector<Var> feats;
  const long future = cfg.use_future ? 1 : 0;
  for (long o = -static_cast<long>(cfg.block); o <= future; ++o) {
    Tensor raw({n, dim});
    for (std::size_t i = 0; i < n; ++i) {
      auto f = frame_of(ep[static_cast<std::size_t>(static_cast<long>(lo + i) + o)], cfg.modality);
      std::copy(f.begin(), f.end(), raw.values().begin() + static_cast<long>(i * dim));
    }
    feats.push_back(nets.frame_features(tape, tape.constant(std::move(raw)), Grad::kFrozen));
  }
  BeliefVar q = nets.posterior_from_features(tape, feats, Grad::kFrozen);
  for (std::size_t i = 0; i < n; ++i) out.beliefs.push_back(belief_row(q, i));
  return out;
}

}  // namespace adld::latent
