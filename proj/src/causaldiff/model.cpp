#include "adld/causaldiff/model.hpp"

#include <algorithm>

#include "adld/numerics/errors.hpp"
#include "adld/numerics/io.hpp"

namespace adld::diff {
namespace {

template <class E>
E from_table(const std::string& what, const std::string& s,
             std::initializer_list<std::pair<const char*, E>> table) {
  for (const auto& [name, value] : table) {
    if (s == name) return value;
  }
  throw ConfigError("unknown " + what + " '" + s + "'");
}

Tensor vector_tensor(std::span<const double> v) {
  return Tensor(std::vector<std::size_t>{v.size()}, std::vector<double>(v.begin(), v.end()));
}

}  // namespace

std::string to_string(GenMode m) {
  switch (m) {
    case GenMode::kPlannerJoint: return "planner-joint";
    case GenMode::kPlannerStateIdm: return "planner-state-idm";
    case GenMode::kPolicy: return "policy";
  }
  return "?";
}

std::string to_string(LatentSource s) {
  switch (s) {
    case LatentSource::kPosterior: return "posterior";
    case LatentSource::kZero: return "zero";
    case LatentSource::kOracle: return "oracle";
  }
  return "?";
}

std::string to_string(ConditionKind c) { return c == ConditionKind::kNone ? "none" : "return"; }

std::string to_string(LevelSchedule s) {
  switch (s) {
    case LevelSchedule::kCausal: return "causal";
    case LevelSchedule::kSame: return "same";
    case LevelSchedule::kRandom: return "random";
  }
  return "?";
}

GenMode gen_mode_from(const std::string& s) {
  return from_table<GenMode>("mode", s,
                             {{"planner-joint", GenMode::kPlannerJoint},
                              {"planner-state-idm", GenMode::kPlannerStateIdm},
                              {"planner-state+idm", GenMode::kPlannerStateIdm},
                              {"policy", GenMode::kPolicy}});
}

LatentSource latent_source_from(const std::string& s) {
  return from_table<LatentSource>("latent source", s,
                                  {{"posterior", LatentSource::kPosterior},
                                   {"zero", LatentSource::kZero},
                                   {"oracle", LatentSource::kOracle}});
}

ConditionKind condition_from(const std::string& s) {
  return from_table<ConditionKind>("condition", s,
                                   {{"none", ConditionKind::kNone},
                                    {"return", ConditionKind::kReturn}});
}

LevelSchedule level_schedule_from(const std::string& s) {
  return from_table<LevelSchedule>("schedule", s,
                                   {{"causal", LevelSchedule::kCausal},
                                    {"same", LevelSchedule::kSame},
                                    {"random", LevelSchedule::kRandom}});
}

KeyValues Stage2Config::to_kv() const {
  KeyValues kv;
  kv["mode"] = to_string(mode);
  kv["horizon"] = std::to_string(horizon);
  kv["exec_horizon"] = std::to_string(exec_horizon);
  kv["obs_horizon"] = std::to_string(obs_horizon);
  kv["K"] = std::to_string(K);
  kv["beta_min"] = format_double(beta_min);
  kv["beta_max"] = format_double(beta_max);
  kv["lambda_prior"] = format_double(lambda_prior);
  kv["lambda_rel"] = format_double(lambda_rel);
  kv["margin_scale"] = format_double(margin_scale);
  kv["refine"] = refine ? "true" : "false";
  kv["zigzag"] = zigzag ? "true" : "false";
  kv["schedule"] = to_string(schedule);
  kv["latent"] = to_string(latent);
  kv["condition"] = to_string(condition);
  kv["cond_dropout"] = format_double(cond_dropout);
  kv["target_quantile"] = format_double(target_quantile);
  kv["noise_matched_posterior"] = noise_matched_posterior ? "true" : "false";
  kv["max_jump"] = std::to_string(max_jump);
  kv["hidden"] = std::to_string(hidden);
  kv["history_hidden"] = std::to_string(history_hidden);
  kv["idm_hidden"] = std::to_string(idm_hidden);
  kv["idm_latent"] = idm_latent ? "true" : "false";
  kv["epochs"] = std::to_string(epochs);
  kv["idm_epochs"] = std::to_string(idm_epochs);
  kv["batch"] = std::to_string(batch);
  kv["lr"] = format_double(lr);
  kv["seed"] = std::to_string(seed);
  return kv;
}

Stage2Config Stage2Config::from_kv(const KeyValues& kv) {
  Stage2Config c;
  for (const auto& [k, v] : kv) {
    if (k == "mode") c.mode = gen_mode_from(v);
    else if (k == "horizon") c.horizon = kv_count(k, v);
    else if (k == "exec_horizon") c.exec_horizon = kv_count(k, v);
    else if (k == "obs_horizon") c.obs_horizon = kv_count(k, v);
    else if (k == "K") c.K = kv_count(k, v);
    else if (k == "beta_min") c.beta_min = kv_number(k, v);
    else if (k == "beta_max") c.beta_max = kv_number(k, v);
    else if (k == "lambda_prior") c.lambda_prior = kv_number(k, v);
    else if (k == "lambda_rel") c.lambda_rel = kv_number(k, v);
    else if (k == "margin_scale") c.margin_scale = kv_number(k, v);
    else if (k == "refine") c.refine = kv_bool(k, v);
    else if (k == "zigzag") c.zigzag = kv_bool(k, v);
    else if (k == "schedule") c.schedule = level_schedule_from(v);
    else if (k == "latent") c.latent = latent_source_from(v);
    else if (k == "condition") c.condition = condition_from(v);
    else if (k == "cond_dropout") c.cond_dropout = kv_number(k, v);
    else if (k == "target_quantile") c.target_quantile = kv_number(k, v);
    else if (k == "noise_matched_posterior") c.noise_matched_posterior = kv_bool(k, v);
    else if (k == "max_jump") c.max_jump = kv_count(k, v);
    else if (k == "hidden") c.hidden = kv_count(k, v);
    else if (k == "history_hidden") c.history_hidden = kv_count(k, v);
    else if (k == "idm_hidden") c.idm_hidden = kv_count(k, v);
    else if (k == "idm_latent") c.idm_latent = kv_bool(k, v);
    else if (k == "epochs") c.epochs = kv_count(k, v);
    else if (k == "idm_epochs") c.idm_epochs = kv_count(k, v);
    else if (k == "batch") c.batch = kv_count(k, v);
    else if (k == "lr") c.lr = kv_number(k, v);
    else if (k == "seed") c.seed = static_cast<std::uint64_t>(kv_count(k, v));
    else throw ConfigError("unknown stage2 key '" + k + "'");
  }
  return c;
}

void Stage2Config::validate() const {
  if (horizon < 1) throw ConfigError("stage2 horizon must be at least 1");
  if (exec_horizon < 1 || exec_horizon > horizon) {
    throw ConfigError("exec_horizon must be in [1, horizon]");
  }
  if (obs_horizon < 1) throw ConfigError("obs_horizon must be at least 1");
  if (horizon > K) throw ConfigError("horizon exceeds K");
  if (lambda_prior < 0 || lambda_rel < 0) throw ConfigError("loss weights must be >= 0");
  if (margin_scale < 0) throw ConfigError("margin_scale must be >= 0");
  if (cond_dropout < 0 || cond_dropout > 1) throw ConfigError("cond_dropout must be in [0, 1]");
  if (target_quantile < 0 || target_quantile > 1) {
    throw ConfigError("target_quantile must be in [0, 1]");
  }
  if (max_jump < 1) throw ConfigError("max_jump must be at least 1");
  if (batch < 1) throw ConfigError("batch must be at least 1");
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (hidden < 1 || idm_hidden < 1) throw ConfigError("hidden sizes must be positive");
  (void)make_schedule(K, beta_min, beta_max);
}

std::size_t FrameLayout::dim() const {
  switch (mode) {
    case GenMode::kPlannerJoint: return action_dim + state_dim;
    case GenMode::kPlannerStateIdm: return state_dim;
    case GenMode::kPolicy: return action_dim;
  }
  return 0;
}

Denoiser::Denoiser(const FrameLayout& layout, std::size_t T, std::size_t K,
                   std::size_t latent_dim, const Stage2Config& cfg, Rng& rng)
    : T_(T), K_(K), frame_dim_(layout.dim()), latent_dim_(latent_dim),
      state_dim_(layout.state_dim), use_history_(cfg.obs_horizon > 1) {
  const std::size_t hist = use_history_ ? cfg.history_hidden : 0;
  if (use_history_) {
    history_ = Gru(layout.state_dim + layout.action_dim, cfg.history_hidden, rng);
  }
  const std::size_t in = T * (frame_dim_ + kLevelEmbedDim + latent_dim) + hist + state_dim_ + 2;
  net_ = Mlp(in, {cfg.hidden, cfg.hidden}, T * frame_dim_, rng);
}

Var Denoiser::predict(Tape& tape, const DenoiseInput& in, Grad g) const {
  const std::size_t rows = in.x.rows();
  if (in.x.cols() != T_ * frame_dim_) {
    throw ShapeError("denoiser block has " + std::to_string(in.x.cols()) + " columns, expected " +
                     std::to_string(T_ * frame_dim_));
  }
  if (in.latents.cols() != T_ * latent_dim_ || in.latents.rows() != rows) {
    throw ShapeError("denoiser latents have shape " + in.latents.value().shape_string());
  }
  if (in.levels.size() != rows) throw ShapeError("denoiser levels need one row per item");
  if (in.state.cols() != state_dim_ || in.cond.cols() != 2) {
    throw ShapeError("denoiser conditioning has the wrong width");
  }
  Tensor emb({rows, T_ * kLevelEmbedDim});
  for (std::size_t r = 0; r < rows; ++r) {
    if (in.levels[r].size() != T_) throw ShapeError("denoiser levels need one entry per frame");
    for (std::size_t j = 0; j < T_; ++j) {
      auto e = level_embedding(in.levels[r][j], K_);
      for (std::size_t i = 0; i < kLevelEmbedDim; ++i) emb.at(r, j * kLevelEmbedDim + i) = e[i];
    }
  }
  Var embv = tape.constant(std::move(emb));
  std::vector<Var> parts;
  for (std::size_t j = 0; j < T_; ++j) {
    parts.push_back(slice(in.x, j * frame_dim_, (j + 1) * frame_dim_));
    parts.push_back(slice(embv, j * kLevelEmbedDim, (j + 1) * kLevelEmbedDim));
    if (latent_dim_ > 0) {
      parts.push_back(slice(in.latents, j * latent_dim_, (j + 1) * latent_dim_));
    }
  }
  if (use_history_) {
    Var h = tape.constant(Tensor({rows, history_.hidden_dim()}));
    for (Var f : in.history) h = history_.step(tape, f, h, g);
    parts.push_back(h);
  }
  parts.push_back(in.state);
  parts.push_back(in.cond);
  return net_.forward(tape, concat(parts), g);
}

void Denoiser::collect(const std::string& prefix, ParamRefs& out) {
  if (use_history_) history_.collect(prefix + "history.", out);
  net_.collect(prefix + "net.", out);
}

IdmNet::IdmNet(std::size_t ds, std::size_t da, std::size_t dc, std::size_t hidden, Rng& rng)
    : latent_dim_(dc),
      state_norm_(latent::Normalizer::identity(ds)),
      action_norm_(latent::Normalizer::identity(da)),
      net_(2 * ds + dc, {hidden, hidden}, da, rng) {}

void IdmNet::fit_normalizers(const latent::Normalizer& state, const latent::Normalizer& action) {
  state_norm_ = state;
  action_norm_ = action;
}

Var IdmNet::forward(Tape& tape, Var s, Var s_next, Var c, Grad g) const {
  std::vector<Var> parts = {state_norm_.normalize(tape, s), state_norm_.normalize(tape, s_next)};
  if (latent_dim_ > 0) {
    if (c.cols() != latent_dim_) throw ShapeError("idm latent has the wrong width");
    parts.push_back(c);
  }
  return action_norm_.denormalize(tape, net_.forward(tape, concat(parts), g));
}

std::vector<double> IdmNet::infer(std::span<const double> s, std::span<const double> s_next,
                                  std::span<const double> c) const {
  Tape tape;
  Var cv = latent_dim_ > 0 ? tape.constant(Tensor::row(c)) : Var{};
  Var out = forward(tape, tape.constant(Tensor::row(s)), tape.constant(Tensor::row(s_next)), cv,
                    Grad::kFrozen);
  auto v = out.value().values();
  return {v.begin(), v.end()};
}

void IdmNet::collect(const std::string& prefix, ParamRefs& out) {
  net_.collect(prefix + "net.", out);
}

Stage2Model Stage2Model::create(const Stage2Config& cfg, std::size_t ds, std::size_t da,
                                std::size_t dc, std::optional<latent::Stage1Nets> stage1) {
  cfg.validate();
  Stage2Model m;
  m.cfg = cfg;
  m.layout = FrameLayout{cfg.mode, ds, da};
  m.schedule = make_schedule(cfg.K, cfg.beta_min, cfg.beta_max);
  if (cfg.latent == LatentSource::kPosterior) {
    if (!stage1) throw ConfigError("posterior latents need Stage-1 nets");
    if (stage1->state_dim() != ds || stage1->action_dim() != da) {
      throw ConfigError("Stage-1 nets were trained on different state/action dims");
    }
    m.latent_dim = stage1->latent_dim();
    m.obs_block = stage1->config().block;
    m.obs_future = stage1->config().use_future;
  } else if (cfg.latent == LatentSource::kOracle) {
    m.latent_dim = dc;
  } else {
    m.latent_dim = stage1 ? stage1->latent_dim() : 1;
  }
  m.stage1 = std::move(stage1);
  Rng rng(derive_seed(cfg.seed, 0x5747));
  m.theta = Denoiser(m.layout, cfg.horizon, cfg.K, m.latent_dim, cfg, rng);
  if (cfg.mode == GenMode::kPlannerStateIdm) {
    const std::size_t idm_dc = cfg.idm_latent && cfg.latent != LatentSource::kZero ? m.latent_dim : 0;
    m.idm = IdmNet(ds, da, idm_dc, cfg.idm_hidden, rng);
  }
  m.state_norm = latent::Normalizer::identity(ds);
  m.action_norm = latent::Normalizer::identity(da);
  m.context_norm = latent::Normalizer::identity(std::max<std::size_t>(dc, 1));
  return m;
}

latent::Normalizer Stage2Model::frame_norm() const {
  switch (layout.mode) {
    case GenMode::kPlannerStateIdm: return state_norm;
    case GenMode::kPolicy: return action_norm;
    case GenMode::kPlannerJoint: break;
  }
  latent::Normalizer n;
  std::vector<double> mean, scale;
  for (double v : action_norm.mean.values()) mean.push_back(v);
  for (double v : state_norm.mean.values()) mean.push_back(v);
  for (double v : action_norm.scale.values()) scale.push_back(v);
  for (double v : state_norm.scale.values()) scale.push_back(v);
  n.mean = vector_tensor(mean);
  n.scale = vector_tensor(scale);
  return n;
}

ParamRefs Stage2Model::theta_params() {
  ParamRefs out;
  theta.collect("theta.", out);
  return out;
}

ParamRefs Stage2Model::posterior_params() {
  ParamRefs out;
  if (stage1) stage1->collect_posterior(out);
  return out;
}

ParamRefs Stage2Model::prior_params() {
  ParamRefs out;
  if (stage1) stage1->collect_prior(out);
  return out;
}

ParamRefs Stage2Model::trainable() {
  ParamRefs out = theta_params();
  if (cfg.latent == LatentSource::kPosterior && cfg.refine) {
    for (auto& p : posterior_params()) out.push_back(p);
    for (auto& p : prior_params()) out.push_back(p);
  }
  return out;
}

Checkpoint Stage2Model::to_checkpoint() const {
  auto& self = const_cast<Stage2Model&>(*this);
  ParamRefs refs = self.theta_params();
  if (self.idm) self.idm->collect("idm.", refs);
  self.state_norm.collect("norm.state.", refs);
  self.action_norm.collect("norm.action.", refs);
  self.context_norm.collect("norm.context.", refs);
  // The idm normalizers mirror the stage-2 ones and are rebuilt on load.
  Checkpoint c = Checkpoint::from(refs);
  KeyValues kv = cfg.to_kv();
  kv["state_dim"] = std::to_string(layout.state_dim);
  kv["action_dim"] = std::to_string(layout.action_dim);
  kv["context_dim"] = std::to_string(context_norm.dim());
  kv["y_mean"] = format_double(y_mean);
  kv["y_scale"] = format_double(y_scale);
  kv["y_target"] = format_double(y_target);
  kv["stage1_path"] = stage1_path;
  kv["stage1_hash"] = stage1_hash;
  kv["has_stage1"] = stage1 ? "true" : "false";
  if (stage1) {
    Checkpoint s1 = stage1->to_checkpoint();
    for (auto& [name, t] : s1.tensors) c.add(name, t);
    for (const auto& [k, v] : parse_kv_lines(s1.trailer)) kv["stage1." + k] = v;
  }
  c.trailer = format_kv_lines(kv);
  return c;
}

Stage2Model Stage2Model::from_checkpoint(const Checkpoint& c) {
  KeyValues kv = parse_kv_lines(c.trailer);
  KeyValues s2, s1;
  std::size_t ds = 0, da = 0, dc = 0;
  double y_mean = 0, y_scale = 1, y_target = 0;
  std::string path, hash;
  bool has_stage1 = false;
  for (const auto& [k, v] : kv) {
    if (k.starts_with("stage1.")) s1[k.substr(7)] = v;
    else if (k == "state_dim") ds = kv_count(k, v);
    else if (k == "action_dim") da = kv_count(k, v);
    else if (k == "context_dim") dc = kv_count(k, v);
    else if (k == "y_mean") y_mean = kv_number(k, v);
    else if (k == "y_scale") y_scale = kv_number(k, v);
    else if (k == "y_target") y_target = kv_number(k, v);
    else if (k == "stage1_path") path = v;
    else if (k == "stage1_hash") hash = v;
    else if (k == "has_stage1") has_stage1 = kv_bool(k, v);
    else s2[k] = v;
  }
  if (ds == 0 || da == 0) throw FormatError("stage2 checkpoint trailer lacks dims");
  std::optional<latent::Stage1Nets> stage1;
  if (has_stage1) {
    Checkpoint sub;
    for (const auto& [name, t] : c.tensors) {
      if (name.starts_with("psi.") || name.starts_with("phi.") || name.starts_with("dec.")) {
        sub.add(name, t);
      }
    }
    sub.trailer = format_kv_lines(s1);
    stage1 = latent::Stage1Nets::from_checkpoint(sub);
  }
  Stage2Model m = create(Stage2Config::from_kv(s2), ds, da, dc, std::move(stage1));
  ParamRefs refs = m.theta_params();
  if (m.idm) m.idm->collect("idm.", refs);
  m.state_norm.collect("norm.state.", refs);
  m.action_norm.collect("norm.action.", refs);
  m.context_norm.collect("norm.context.", refs);
  c.load_into(refs);
  if (m.idm) m.idm->fit_normalizers(m.state_norm, m.action_norm);
  m.y_mean = y_mean;
  m.y_scale = y_scale;
  m.y_target = y_target;
  m.stage1_path = path;
  m.stage1_hash = hash;
  return m;
}

}  // namespace adld::diff
