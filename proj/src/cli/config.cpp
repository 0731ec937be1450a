#include "adld/cli/config.hpp"

#include <charconv>
#include <sstream>

#include "adld/numerics/errors.hpp"
#include "adld/numerics/io.hpp"

namespace adld::cli {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& v, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("key " + key + " expects an unsigned integer, got '" + v + "'");
  }
  return out;
}

KeyValues* section_of(ExperimentConfig& c, const std::string& name) {
  if (name == "env") return &c.env;
  if (name == "stage1") return &c.stage1;
  if (name == "stage2") return &c.stage2;
  if (name == "eval") return &c.eval;
  if (name == "verify") return &c.verify;
  return nullptr;
}

EvalSettings eval_from(const KeyValues& kv) {
  EvalSettings e;
  for (const auto& [k, v] : kv) {
    if (k == "seeds") e.seeds = parse_seed_list(k, v);
    else if (k == "episodes") e.episodes = kv_count(k, v);
    else if (k == "first_episode") e.first_episode = kv_count(k, v);
    else if (k == "refresh") e.refresh = kv_bool(k, v);
    else throw ConfigError("unknown key [eval] " + k);
  }
  if (e.seeds.empty()) throw ConfigError("key seeds: the seed list is empty");
  if (e.episodes < 1) throw ConfigError("key episodes must be at least 1");
  return e;
}

VerifySettings verify_from(const KeyValues& kv, std::uint64_t seed) {
  VerifySettings s;
  s.fit.seed = seed;
  for (const auto& [k, v] : kv) {
    if (k == "model") {
      if (v == "analytic") s.model = VerifySettings::Model::kAnalytic;
      else if (v == "fitted") s.model = VerifySettings::Model::kFitted;
      else throw ConfigError("key model expects analytic or fitted, got '" + v + "'");
    }
    else if (k == "grid_offset") s.grid_offset = kv_number(k, v);
    else if (k == "grid_amplitude") s.grid_amplitude = kv_number(k, v);
    else if (k == "grid_points") s.grid_points = kv_count(k, v);
    else if (k == "k_samples") s.k_samples = kv_count(k, v);
    else if (k == "inj_samples") s.inj_samples = kv_count(k, v);
    else if (k == "probes") s.probes = kv_count(k, v);
    else if (k == "k_independent") s.thresholds.k_independent = kv_number(k, v);
    else if (k == "separable") s.thresholds.separable = kv_number(k, v);
    else if (k == "injective") s.thresholds.injective = kv_number(k, v);
    else if (k == "fit_hidden") s.fit.hidden = kv_count(k, v);
    else if (k == "fit_epochs") s.fit.epochs = kv_count(k, v);
    else if (k == "fit_batch") s.fit.batch = kv_count(k, v);
    else if (k == "fit_lr") s.fit.lr = kv_number(k, v);
    else if (k == "fit_seed") s.fit.seed = parse_u64(k, v);
    else if (k == "drop_episodes") s.drop_episodes = kv_count(k, v);
    else if (k == "drop_grid") {
      for (const auto& item : split(v, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) {
          throw ConfigError("key drop_grid expects m:n pairs, got '" + item + "'");
        }
        s.drop_grid.emplace_back(kv_number(k, trim(item.substr(0, colon))),
                                 kv_number(k, trim(item.substr(colon + 1))));
      }
    }
    else throw ConfigError("unknown key [verify] " + k);
  }
  if (s.grid_points < 1) throw ConfigError("key grid_points must be at least 1");
  return s;
}

}  // namespace

std::vector<std::uint64_t> parse_seed_list(const std::string& key, const std::string& v) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split(v, ',')) {
    const auto dots = item.find("..");
    if (dots == std::string::npos) {
      out.push_back(parse_u64(key, item));
      continue;
    }
    const auto lo = parse_u64(key, trim(item.substr(0, dots)));
    const auto hi = parse_u64(key, trim(item.substr(dots + 2)));
    if (hi < lo) throw ConfigError("key " + key + ": empty range '" + item + "'");
    for (auto s = lo; s <= hi; ++s) out.push_back(s);
  }
  return out;
}

std::vector<std::size_t> parse_count_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& item : split(v, ',')) out.push_back(kv_count(key, item));
  return out;
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig c;
  KeyValues top;
  KeyValues* current = &top;
  std::string current_name = "top level";
  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": bad header");
      current_name = trim(std::string_view(line).substr(1, line.size() - 2));
      current = section_of(c, current_name);
      if (!current) throw ConfigError("unknown section [" + current_name + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(std::string_view(line).substr(0, eq));
    std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (!current->emplace(key, value).second) {
      throw ConfigError("key " + key + " repeated in " + current_name);
    }
  }
  for (const auto& [k, v] : top) {
    if (k == "seed") c.seed = parse_u64(k, v);
    else if (k == "out_dir") c.out_dir = v;
    else throw ConfigError("unknown top-level key " + k);
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_file(path));
}

ResolvedConfig resolve(const ExperimentConfig& c) {
  ResolvedConfig r;
  r.seed = c.seed;
  r.out_dir = c.out_dir;

  KeyValues env = c.env;
  if (auto it = env.find("episodes"); it != env.end()) {
    r.episodes = kv_count("episodes", it->second);
    env.erase(it);
  }
  if (r.episodes < 1) throw ConfigError("key episodes must be at least 1");
  r.spec = env::spec_from_kv(env);
  env::validate(r.spec);

  KeyValues s1 = c.stage1;
  s1.try_emplace("seed", std::to_string(c.seed));
  r.stage1 = latent::Stage1Config::from_kv(s1);
  r.stage1.validate();

  KeyValues s2 = c.stage2;
  s2.try_emplace("seed", std::to_string(c.seed));
  r.stage2 = diff::Stage2Config::from_kv(s2);
  r.stage2.validate();

  r.eval = eval_from(c.eval);
  r.verify = verify_from(c.verify, c.seed);
  return r;
}

KeyValues env_kv(const ResolvedConfig& r) {
  KeyValues kv = env::spec_to_kv(r.spec);
  kv["episodes"] = std::to_string(r.episodes);
  return kv;
}

KeyValues eval_kv(const EvalSettings& e) {
  std::string seeds;
  for (auto s : e.seeds) seeds += (seeds.empty() ? "" : ",") + std::to_string(s);
  return {{"seeds", seeds},
          {"episodes", std::to_string(e.episodes)},
          {"first_episode", std::to_string(e.first_episode)},
          {"refresh", e.refresh ? "true" : "false"}};
}

KeyValues verify_kv(const VerifySettings& v) {
  KeyValues kv{
      {"model", v.model == VerifySettings::Model::kAnalytic ? "analytic" : "fitted"},
      {"grid_points", std::to_string(v.grid_points)},
      {"k_samples", std::to_string(v.k_samples)},
      {"inj_samples", std::to_string(v.inj_samples)},
      {"probes", std::to_string(v.probes)},
      {"k_independent", format_double(v.thresholds.k_independent)},
      {"separable", format_double(v.thresholds.separable)},
      {"injective", format_double(v.thresholds.injective)},
      {"fit_hidden", std::to_string(v.fit.hidden)},
      {"fit_epochs", std::to_string(v.fit.epochs)},
      {"fit_batch", std::to_string(v.fit.batch)},
      {"fit_lr", format_double(v.fit.lr)},
      {"fit_seed", std::to_string(v.fit.seed)},
      {"drop_episodes", std::to_string(v.drop_episodes)},
  };
  if (v.grid_offset) kv["grid_offset"] = format_double(*v.grid_offset);
  if (v.grid_amplitude) kv["grid_amplitude"] = format_double(*v.grid_amplitude);
  std::string grid;
  for (const auto& [m, n] : v.drop_grid) {
    grid += (grid.empty() ? "" : ",") + format_double(m) + ":" + format_double(n);
  }
  kv["drop_grid"] = grid;
  return kv;
}

std::string echo(const ResolvedConfig& r) {
  std::string out = "seed = " + std::to_string(r.seed) + "\n";
  out += "out_dir = " + r.out_dir.string() + "\n";
  const auto section = [&](const std::string& name, const KeyValues& kv) {
    out += "\n[" + name + "]\n";
    for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  };
  section("env", env_kv(r));
  section("stage1", r.stage1.to_kv());
  section("stage2", r.stage2.to_kv());
  section("eval", eval_kv(r.eval));
  section("verify", verify_kv(r.verify));
  return out;
}

}  // namespace adld::cli
