#include "adld/envsim/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <sstream>
#include <thread>

#include "adld/numerics/errors.hpp"
#include "adld/numerics/io.hpp"

namespace adld::env {
namespace {

constexpr std::string_view kHeader = "ADLD-DATA v1";

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(line);
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

class LineReader {
 public:
  explicit LineReader(const std::string& text) : in_(text) {}
  std::string next() {
    std::string line;
    if (!std::getline(in_, line)) throw FormatError("dataset truncated");
    return line;
  }
  bool more() {
    return in_.peek() != std::char_traits<char>::eof();
  }

 private:
  std::istringstream in_;
};

std::size_t parse_count(const std::string& s) {
  const double d = parse_double(s);
  if (d < 0 || d != static_cast<double>(static_cast<std::size_t>(d))) {
    throw FormatError("bad count '" + s + "'");
  }
  return static_cast<std::size_t>(d);
}

}  // namespace

bool Dataset::has_context() const {
  return !episodes.empty() && !episodes.front().empty() &&
         !episodes.front().front().c.empty();
}

std::size_t Dataset::num_steps() const {
  std::size_t n = 0;
  for (const auto& e : episodes) n += e.size();
  return n;
}

std::size_t worker_count() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("ADLD_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) n = static_cast<std::size_t>(v);
  }
  return n;
}

Episode rollout_expert(const EnvSpec& spec, std::size_t episode, std::uint64_t seed) {
  Env env(spec, episode, seed);
  Rng policy_rng(derive_seed(seed, 0xE4E4));
  Episode ep;
  ep.reserve(spec.horizon);
  while (!env.done()) {
    StepRecord rec;
    rec.t = env.t();
    rec.s = env.state();
    rec.c = env.context();
    const double target = tracked_velocity(spec, rec.c, rec.t);
    rec.a = expert_action(spec, rec.s, rec.c, target, spec.expert_noise, policy_rng);
    rec.r = env.step(rec.a);
    rec.done = env.done();
    ep.push_back(std::move(rec));
  }
  return ep;
}

Dataset generate_dataset(const EnvSpec& spec, std::size_t n_episodes,
                         std::uint64_t seed) {
  validate(spec);
  if (n_episodes == 0) throw ConfigError("episodes must be at least 1");
  Dataset d;
  d.spec = spec;
  d.seed = seed;
  d.episodes.resize(n_episodes);
  const std::size_t workers = std::min(worker_count(), n_episodes);
  auto work = [&](std::size_t w) {
    for (std::size_t i = w; i < n_episodes; i += workers) {
      d.episodes[i] = rollout_expert(spec, i, derive_seed(seed, i));
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  return d;
}

std::string dataset_to_text(const Dataset& d) {
  std::string out(kHeader);
  out += '\n';
  for (const auto& [k, v] : spec_to_kv(d.spec)) out += k + "=" + v + "\n";
  out += "seed=" + std::to_string(d.seed) + "\n";
  out += "has_context=" + std::string(d.has_context() ? "true" : "false") + "\n";
  out += "episodes=" + std::to_string(d.episodes.size()) + "\n";
  for (std::size_t i = 0; i < d.episodes.size(); ++i) {
    const auto& ep = d.episodes[i];
    out += "episode " + std::to_string(i) + " len " + std::to_string(ep.size()) + "\n";
    for (const auto& r : ep) {
      out += std::to_string(r.t);
      for (double v : r.s) out += '\t' + format_double(v);
      for (double v : r.a) out += '\t' + format_double(v);
      out += '\t' + format_double(r.r);
      for (double v : r.c) out += '\t' + format_double(v);
      out += r.done ? "\t1\n" : "\t0\n";
    }
  }
  return out;
}

Dataset dataset_from_text(const std::string& text) {
  LineReader in(text);
  if (in.next() != kHeader) throw FormatError("dataset header is not '" + std::string(kHeader) + "'");
  std::map<std::string, std::string> kv;
  Dataset d;
  bool has_context = false;
  std::size_t n_episodes = 0;
  for (;;) {
    const std::string line = in.next();
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("bad dataset header line '" + line + "'");
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "seed") {
      auto [end, ec] = std::from_chars(val.data(), val.data() + val.size(), d.seed);
      if (ec != std::errc() || end != val.data() + val.size()) {
        throw FormatError("bad dataset seed '" + val + "'");
      }
    }
    else if (key == "has_context") has_context = val == "true";
    else if (key == "episodes") {
      n_episodes = parse_count(val);
      break;
    } else kv[key] = val;
  }
  try {
    d.spec = spec_from_kv(kv);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("dataset spec block: ") + e.what());
  }
  const std::size_t ds = d.spec.state_dim, da = d.spec.action_dim;
  const std::size_t dc = has_context ? d.spec.context_dim() : 0;
  const std::size_t fields = 1 + ds + da + 1 + dc + 1;
  d.episodes.resize(n_episodes);
  for (std::size_t i = 0; i < n_episodes; ++i) {
    const auto head = split(in.next(), ' ');
    if (head.size() != 4 || head[0] != "episode" || head[2] != "len" ||
        parse_count(head[1]) != i) {
      throw FormatError("bad episode header for episode " + std::to_string(i));
    }
    const std::size_t len = parse_count(head[3]);
    auto& ep = d.episodes[i];
    ep.resize(len);
    for (auto& r : ep) {
      const auto f = split(in.next(), '\t');
      if (f.size() != fields) throw FormatError("dataset record has wrong field count");
      std::size_t k = 0;
      r.t = parse_count(f[k++]);
      for (std::size_t j = 0; j < ds; ++j) r.s.push_back(parse_double(f[k++]));
      for (std::size_t j = 0; j < da; ++j) r.a.push_back(parse_double(f[k++]));
      r.r = parse_double(f[k++]);
      for (std::size_t j = 0; j < dc; ++j) r.c.push_back(parse_double(f[k++]));
      r.done = f[k] == "1";
    }
  }
  if (in.more()) throw FormatError("trailing data after last episode");
  return d;
}

void dataset_save(const Dataset& d, const std::filesystem::path& path) {
  write_file_atomic(path, dataset_to_text(d));
}

Dataset dataset_load(const std::filesystem::path& path) {
  return dataset_from_text(read_file(path));
}

}  // namespace adld::env
