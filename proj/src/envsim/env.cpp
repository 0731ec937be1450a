#include "adld/envsim/env.hpp"

#include <cmath>
#include <sstream>

#include "adld/numerics/errors.hpp"
#include "adld/numerics/io.hpp"

namespace adld::env {
namespace {

constexpr double kPi = 3.14159265358979323846;

Tensor identity(std::size_t n, double scale) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = scale;
  return t;
}

void matvec_add(const Tensor& m, std::span<const double> x, double scale,
                std::vector<double>& out) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < m.cols(); ++c) acc += m.at(r, c) * x[c];
    out[r] += scale * acc;
  }
}

void require_dims(const EnvSpec& spec, std::span<const double> s,
                  std::span<const double> a, std::span<const double> c) {
  if (s.size() != spec.state_dim || a.size() != spec.action_dim ||
      c.size() != spec.context_dim()) {
    throw ShapeError("env dims: state " + std::to_string(s.size()) + "/" +
                     std::to_string(spec.state_dim) + ", action " +
                     std::to_string(a.size()) + "/" + std::to_string(spec.action_dim) +
                     ", context " + std::to_string(c.size()) + "/" +
                     std::to_string(spec.context_dim()));
  }
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

double direction_at(std::size_t t) {
  return sigmoid(5.0 * std::sin(2.0 * kPi * static_cast<double>(t) / 200.0));
}

void check_shape(const Tensor& m, std::size_t rows, std::size_t cols,
                 const char* name) {
  if (m.rank() != 2 || m.rows() != rows || m.cols() != cols) {
    throw ConfigError(std::string("env matrix ") + name + " must be " +
                      std::to_string(rows) + "x" + std::to_string(cols) + ", got " +
                      m.shape_string());
  }
}

std::string matrix_text(const Tensor& m) {
  std::string out;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (i) out += ',';
    out += format_double(m[i]);
  }
  return out;
}

Tensor matrix_from(const std::string& text, std::size_t rows, std::size_t cols,
                   const std::string& key) {
  std::vector<double> vals;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      vals.push_back(parse_double(item));
    } catch (const FormatError&) {
      throw ConfigError("bad number in " + key + ": '" + item + "'");
    }
  }
  if (vals.size() != rows * cols) {
    throw ConfigError(key + " needs " + std::to_string(rows * cols) + " values, got " +
                      std::to_string(vals.size()));
  }
  return Tensor({rows, cols}, std::move(vals));
}

std::string context_kind_name(ContextKind k) {
  switch (k) {
    case ContextKind::kStepwiseSinusoid: return "stepwise-sinusoid";
    case ContextKind::kEpisodicSinusoid: return "episodic-sinusoid";
    case ContextKind::kAr1: return "ar1";
  }
  return "";
}

ContextKind context_kind_from(const std::string& s) {
  if (s == "stepwise-sinusoid") return ContextKind::kStepwiseSinusoid;
  if (s == "episodic-sinusoid") return ContextKind::kEpisodicSinusoid;
  if (s == "ar1") return ContextKind::kAr1;
  throw ConfigError("unknown context kind '" + s + "'");
}

double to_number(const std::string& key, const std::string& v) {
  try {
    return parse_double(v);
  } catch (const FormatError&) {
    throw ConfigError("key " + key + " expects a number, got '" + v + "'");
  }
}

std::size_t to_count(const std::string& key, const std::string& v) {
  const double d = to_number(key, v);
  if (d < 0 || d != std::floor(d)) {
    throw ConfigError("key " + key + " expects a non-negative integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(d);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key " + key + " expects true/false, got '" + v + "'");
}

}  // namespace

std::vector<double> context_next(const ContextProcess& proc, std::size_t t,
                                 std::size_t episode, std::span<const double> prev,
                                 Rng& rng) {
  std::vector<double> c(proc.dim);
  switch (proc.kind) {
    case ContextKind::kStepwiseSinusoid:
      for (auto& v : c) {
        v = proc.offset + proc.amplitude * std::sin(proc.frequency * static_cast<double>(t));
      }
      break;
    case ContextKind::kEpisodicSinusoid:
      for (auto& v : c) {
        v = proc.offset +
            proc.amplitude * std::sin(proc.frequency * static_cast<double>(episode));
      }
      break;
    case ContextKind::kAr1:
      if (prev.empty()) {
        const double sd = std::abs(proc.rho) < 1.0
                              ? proc.sigma / std::sqrt(1.0 - proc.rho * proc.rho)
                              : proc.sigma;
        for (auto& v : c) v = sd * rng.normal();
      } else {
        if (prev.size() != proc.dim) throw ShapeError("ar1 previous context has wrong dim");
        for (std::size_t i = 0; i < c.size(); ++i) {
          c[i] = proc.rho * prev[i] + proc.sigma * rng.normal();
        }
      }
      break;
  }
  return c;
}

std::size_t EnvSpec::context_dim() const {
  switch (kind) {
    case EnvKind::kPointmassWind: return 1 + (reward_context ? 1 : 0);
    case EnvKind::kPointmassDir: return 1;
    case EnvKind::kLinearGaussAdditive: return context.dim;
    case EnvKind::kLinearGaussMultiplicative: return 1;
  }
  return 0;
}

EnvSpec make_spec(EnvKind kind) {
  EnvSpec s;
  s.kind = kind;
  switch (kind) {
    case EnvKind::kPointmassWind:
      break;
    case EnvKind::kPointmassDir:
      s.reward = RewardKind::kDirection;
      break;
    case EnvKind::kLinearGaussAdditive:
    case EnvKind::kLinearGaussMultiplicative: {
      const std::size_t d = 2;
      s.state_dim = d;
      s.action_dim = d;
      s.A = identity(d, 0.8);
      s.A0 = identity(d, 0.5);
      s.A1 = identity(d, 0.3);
      s.B = identity(d, 0.5);
      s.Bc = Tensor({d, 1}, 0.5);
      s.gain = identity(d, 0.3);
      s.target_velocity = 0.0;
      s.context = ContextProcess{ContextKind::kStepwiseSinusoid, 0.0, 1.0, 0.5};
      break;
    }
  }
  return s;
}

void validate(const EnvSpec& s) {
  if (s.horizon < 4) {
    throw ConfigError("horizon must be at least 4, got " + std::to_string(s.horizon));
  }
  if (s.sigma_s < 0 || s.sigma_r < 0 || s.expert_noise < 0) {
    throw ConfigError("noise scales must be non-negative");
  }
  if (s.context.kind == ContextKind::kAr1 && s.context.sigma < 0) {
    throw ConfigError("context sigma must be non-negative");
  }
  if (s.context.dim == 0) throw ConfigError("context dim must be positive");
  if (s.is_pointmass()) {
    if (s.state_dim != 2 || s.action_dim != 1) {
      throw ConfigError("point mass needs state_dim 2 and action_dim 1");
    }
    if (!(s.dt > 0)) throw ConfigError("dt must be positive");
    if (s.context.dim != 1) throw ConfigError("point mass context dim must be 1");
    return;
  }
  if (s.state_dim == 0 || s.action_dim == 0) throw ConfigError("dims must be positive");
  check_shape(s.B, s.state_dim, s.action_dim, "B");
  check_shape(s.gain, s.action_dim, s.state_dim, "K");
  if (s.kind == EnvKind::kLinearGaussAdditive) {
    check_shape(s.A, s.state_dim, s.state_dim, "A");
    check_shape(s.Bc, s.state_dim, s.context.dim, "Bc");
  } else {
    check_shape(s.A0, s.state_dim, s.state_dim, "A0");
    check_shape(s.A1, s.state_dim, s.state_dim, "A1");
    if (s.context.dim != 1) throw ConfigError("multiplicative context must be scalar");
    if (s.expert_feedforward && s.action_dim != s.state_dim) {
      throw ConfigError("expert feedforward needs action_dim == state_dim");
    }
  }
}

std::string to_string(EnvKind k) {
  switch (k) {
    case EnvKind::kPointmassWind: return "pointmass-wind";
    case EnvKind::kPointmassDir: return "pointmass-dir";
    case EnvKind::kLinearGaussAdditive: return "lineargauss-additive";
    case EnvKind::kLinearGaussMultiplicative: return "lineargauss-multiplicative";
  }
  return "";
}

EnvKind env_kind_from(const std::string& s) {
  for (EnvKind k : {EnvKind::kPointmassWind, EnvKind::kPointmassDir,
                    EnvKind::kLinearGaussAdditive, EnvKind::kLinearGaussMultiplicative}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown env kind '" + s + "'");
}

std::map<std::string, std::string> spec_to_kv(const EnvSpec& s) {
  std::map<std::string, std::string> kv;
  auto num = [&](const std::string& k, double v) { kv[k] = format_double(v); };
  kv["kind"] = to_string(s.kind);
  kv["state_dim"] = std::to_string(s.state_dim);
  kv["action_dim"] = std::to_string(s.action_dim);
  num("dt", s.dt);
  num("drag", s.drag);
  num("kp", s.kp);
  num("target_velocity", s.target_velocity);
  num("sigma_s", s.sigma_s);
  num("sigma_r", s.sigma_r);
  num("expert_noise", s.expert_noise);
  kv["expert_feedforward"] = s.expert_feedforward ? "true" : "false";
  kv["horizon"] = std::to_string(s.horizon);
  kv["reward"] = s.reward == RewardKind::kDirection ? "direction" : "velocity-tracking";
  kv["context.kind"] = context_kind_name(s.context.kind);
  num("context.offset", s.context.offset);
  num("context.amplitude", s.context.amplitude);
  num("context.frequency", s.context.frequency);
  num("context.rho", s.context.rho);
  num("context.sigma", s.context.sigma);
  kv["context.dim"] = std::to_string(s.context.dim);
  kv["reward_context"] = s.reward_context ? "true" : "false";
  kv["reward_context.kind"] = context_kind_name(s.reward_process.kind);
  num("reward_context.offset", s.reward_process.offset);
  num("reward_context.amplitude", s.reward_process.amplitude);
  num("reward_context.frequency", s.reward_process.frequency);
  if (!s.is_pointmass()) {
    kv["B"] = matrix_text(s.B);
    kv["K"] = matrix_text(s.gain);
    if (s.kind == EnvKind::kLinearGaussAdditive) {
      kv["A"] = matrix_text(s.A);
      kv["Bc"] = matrix_text(s.Bc);
    } else {
      kv["A0"] = matrix_text(s.A0);
      kv["A1"] = matrix_text(s.A1);
    }
  }
  return kv;
}

EnvSpec spec_from_kv(const std::map<std::string, std::string>& kv) {
  EnvKind kind = EnvKind::kPointmassWind;
  if (auto it = kv.find("kind"); it != kv.end()) kind = env_kind_from(it->second);
  EnvSpec s = make_spec(kind);
  // Dims first so matrices can be sized.
  if (auto it = kv.find("state_dim"); it != kv.end()) s.state_dim = to_count("state_dim", it->second);
  if (auto it = kv.find("action_dim"); it != kv.end()) s.action_dim = to_count("action_dim", it->second);
  if (auto it = kv.find("context.dim"); it != kv.end()) s.context.dim = to_count("context.dim", it->second);
  if (!s.is_pointmass()) {
    const std::size_t ds = s.state_dim, da = s.action_dim;
    if (s.A.rows() != ds) {
      s.A = identity(ds, 0.8);
      s.A0 = identity(ds, 0.5);
      s.A1 = identity(ds, 0.3);
    }
    if (s.B.rows() != ds || s.B.cols() != da) {
      s.B = Tensor({ds, da});
      for (std::size_t i = 0; i < std::min(ds, da); ++i) s.B.at(i, i) = 0.5;
      s.gain = Tensor({da, ds});
      for (std::size_t i = 0; i < std::min(ds, da); ++i) s.gain.at(i, i) = 0.3;
    }
    if (s.Bc.rows() != ds || s.Bc.cols() != s.context.dim) s.Bc = Tensor({ds, s.context.dim}, 0.5);
  }
  for (const auto& [key, v] : kv) {
    if (key == "kind" || key == "state_dim" || key == "action_dim" || key == "context.dim") continue;
    if (key == "dt") s.dt = to_number(key, v);
    else if (key == "drag") s.drag = to_number(key, v);
    else if (key == "kp") s.kp = to_number(key, v);
    else if (key == "target_velocity") s.target_velocity = to_number(key, v);
    else if (key == "sigma_s") s.sigma_s = to_number(key, v);
    else if (key == "sigma_r") s.sigma_r = to_number(key, v);
    else if (key == "expert_noise") s.expert_noise = to_number(key, v);
    else if (key == "expert_feedforward") s.expert_feedforward = to_bool(key, v);
    else if (key == "horizon") s.horizon = to_count(key, v);
    else if (key == "reward") {
      if (v == "direction") s.reward = RewardKind::kDirection;
      else if (v == "velocity-tracking") s.reward = RewardKind::kVelocityTracking;
      else throw ConfigError("unknown reward variant '" + v + "'");
    }
    else if (key == "context.kind") s.context.kind = context_kind_from(v);
    else if (key == "context.offset") s.context.offset = to_number(key, v);
    else if (key == "context.amplitude") s.context.amplitude = to_number(key, v);
    else if (key == "context.frequency") s.context.frequency = to_number(key, v);
    else if (key == "context.rho") s.context.rho = to_number(key, v);
    else if (key == "context.sigma") s.context.sigma = to_number(key, v);
    else if (key == "reward_context") s.reward_context = to_bool(key, v);
    else if (key == "reward_context.kind") s.reward_process.kind = context_kind_from(v);
    else if (key == "reward_context.offset") s.reward_process.offset = to_number(key, v);
    else if (key == "reward_context.amplitude") s.reward_process.amplitude = to_number(key, v);
    else if (key == "reward_context.frequency") s.reward_process.frequency = to_number(key, v);
    else if (key == "A") s.A = matrix_from(v, s.state_dim, s.state_dim, key);
    else if (key == "A0") s.A0 = matrix_from(v, s.state_dim, s.state_dim, key);
    else if (key == "A1") s.A1 = matrix_from(v, s.state_dim, s.state_dim, key);
    else if (key == "B") s.B = matrix_from(v, s.state_dim, s.action_dim, key);
    else if (key == "Bc") s.Bc = matrix_from(v, s.state_dim, s.context.dim, key);
    else if (key == "K") s.gain = matrix_from(v, s.action_dim, s.state_dim, key);
    else throw ConfigError("unknown env key '" + key + "'");
  }
  validate(s);
  return s;
}

std::vector<double> transition_mean(const EnvSpec& spec, std::span<const double> s,
                                    std::span<const double> a,
                                    std::span<const double> c) {
  require_dims(spec, s, a, c);
  std::vector<double> out(spec.state_dim, 0.0);
  switch (spec.kind) {
    case EnvKind::kPointmassWind:
    case EnvKind::kPointmassDir: {
      const double wind = spec.kind == EnvKind::kPointmassWind ? c[0] : 0.0;
      const double p = s[0], v = s[1];
      out[0] = p + v * spec.dt;
      out[1] = v + (a[0] - wind - spec.drag * v) * spec.dt;
      break;
    }
    case EnvKind::kLinearGaussAdditive:
      matvec_add(spec.A, s, 1.0, out);
      matvec_add(spec.B, a, 1.0, out);
      matvec_add(spec.Bc, c, 1.0, out);
      break;
    case EnvKind::kLinearGaussMultiplicative:
      matvec_add(spec.A0, s, 1.0, out);
      matvec_add(spec.A1, s, c[0], out);
      matvec_add(spec.B, a, 1.0, out);
      break;
  }
  return out;
}

std::vector<double> transition(const EnvSpec& spec, std::span<const double> s,
                               std::span<const double> a, std::span<const double> c,
                               Rng& rng) {
  auto out = transition_mean(spec, s, a, c);
  if (spec.is_pointmass()) {
    // Position integrates velocity; only velocity is perturbed.
    out[1] += spec.sigma_s * rng.normal();
  } else {
    for (auto& v : out) v += spec.sigma_s * rng.normal();
  }
  for (double v : out) {
    if (!std::isfinite(v)) throw NumericError("non-finite state in env transition");
  }
  return out;
}

double tracked_velocity(const EnvSpec& spec, std::span<const double> c, std::size_t t) {
  switch (spec.kind) {
    case EnvKind::kPointmassWind:
      return spec.reward_context ? c[1] : spec.target_velocity;
    case EnvKind::kPointmassDir:
      return spec.target_velocity * direction_at(t);
    default:
      return spec.target_velocity;
  }
}

double reward_of(const EnvSpec& spec, std::span<const double> s,
                 std::span<const double> a, std::span<const double> c, std::size_t t) {
  double effort = 0.0;
  for (double v : a) effort += v * v;
  const double v = spec.is_pointmass() ? s[1] : s[0];
  if (spec.reward == RewardKind::kDirection) {
    return direction_at(t) * v - 0.1 * effort;
  }
  const double target = spec.kind == EnvKind::kPointmassWind && spec.reward_context
                            ? c[1]
                            : spec.target_velocity;
  return -(v - target) * (v - target) - 0.1 * effort;
}

StepOutcome env_step(const EnvSpec& spec, std::span<const double> s,
                     std::span<const double> a, std::span<const double> c,
                     std::size_t t, Rng& rng) {
  StepOutcome out;
  out.next_state = transition(spec, s, a, c, rng);
  out.reward = reward_of(spec, s, a, c, t);
  if (spec.sigma_r > 0) out.reward += spec.sigma_r * rng.normal();
  return out;
}

std::vector<double> expert_action(const EnvSpec& spec, std::span<const double> s,
                                  std::span<const double> c, double target,
                                  double noise_scale, Rng& rng) {
  std::vector<double> a(spec.action_dim, 0.0);
  if (spec.is_pointmass()) {
    const double wind = spec.kind == EnvKind::kPointmassWind ? c[0] : 0.0;
    a[0] = spec.kp * (target - s[1]) + wind + spec.drag * s[1];
  } else {
    matvec_add(spec.gain, s, -1.0, a);
    if (spec.kind == EnvKind::kLinearGaussMultiplicative && spec.expert_feedforward) {
      // Cancel the context-dependent part of the dynamics, assuming B = I.
      matvec_add(spec.A1, s, -c[0], a);
    }
  }
  for (auto& v : a) v += noise_scale * rng.normal();
  return a;
}

Env::Env(EnvSpec spec, std::size_t episode, std::uint64_t seed)
    : spec_(std::move(spec)), episode_(episode), rng_(seed) {
  context_ = draw_context();
  if (spec_.is_pointmass()) {
    state_ = {0.0, tracked_velocity(spec_, context_, 0) + 0.1 * rng_.normal()};
  } else {
    state_.resize(spec_.state_dim);
    for (auto& v : state_) v = 0.5 * rng_.normal();
  }
}

std::vector<double> Env::draw_context() {
  if (spec_.kind == EnvKind::kPointmassDir) return {direction_at(t_)};
  std::span<const double> prev;
  std::vector<double> head;
  if (t_ > 0) {
    head.assign(context_.begin(), context_.begin() + static_cast<long>(spec_.context.dim));
    prev = head;
  }
  auto c = context_next(spec_.context, t_, episode_, prev, rng_);
  if (spec_.kind == EnvKind::kPointmassWind && spec_.reward_context) {
    c.push_back(context_next(spec_.reward_process, t_, episode_, {}, rng_)[0]);
  }
  return c;
}

double Env::step(std::span<const double> action) {
  if (done()) throw ContractError("step past the end of the episode");
  double r = reward_of(spec_, state_, action, context_, t_);
  if (spec_.sigma_r > 0) r += spec_.sigma_r * rng_.normal();
  ++t_;
  context_ = draw_context();
  state_ = transition(spec_, state_, action, context_, rng_);
  return r;
}

}  // namespace adld::env
