#include "adld/cli/commands.hpp"

#include <fmt/chrono.h>
#include <fmt/format.h>

#include <cmath>
#include <iostream>
#include <json.hpp>

#include "adld/causaldiff/train.hpp"
#include "adld/cli/experiments.hpp"
#include "adld/envsim/dataset.hpp"
#include "adld/numerics/checkpoint.hpp"
#include "adld/numerics/errors.hpp"
#include "adld/numerics/io.hpp"

#ifndef ADLD_BUILD_ID
#define ADLD_BUILD_ID "adld-dev"
#endif

namespace adld::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}",
                     fmt::gmtime(std::chrono::system_clock::to_time_t(std::chrono::system_clock::now())));
}

std::string num(double v) { return std::isfinite(v) ? format_double(v) : "nan"; }

std::string row(std::initializer_list<std::string> cells) {
  std::string out;
  for (const auto& c : cells) out += (out.empty() ? "" : "\t") + c;
  return out + "\n";
}

void check_dims(const diff::Stage2Model& m, const env::EnvSpec& spec) {
  if (m.layout.state_dim != spec.state_dim || m.layout.action_dim != spec.action_dim) {
    throw ConfigError(fmt::format("model dims (state {}, action {}) differ from env (state {}, action {})",
                                  m.layout.state_dim, m.layout.action_dim, spec.state_dim,
                                  spec.action_dim));
  }
  if (m.cfg.latent == diff::LatentSource::kOracle && m.latent_dim != spec.context_dim()) {
    throw ConfigError("oracle latent width differs from the env context dim");
  }
}

latent::Stage1Nets load_stage1(Run& run, const fs::path& p, const env::Dataset& d) {
  run.input("stage1", p);
  auto nets = latent::Stage1Nets::from_checkpoint(Checkpoint::load(p));
  if (nets.state_dim() != d.spec.state_dim || nets.action_dim() != d.spec.action_dim) {
    throw ConfigError(fmt::format("stage1 checkpoint dims (state {}, action {}) differ from dataset "
                                  "(state {}, action {})",
                                  nets.state_dim(), nets.action_dim(), d.spec.state_dim,
                                  d.spec.action_dim));
  }
  return nets;
}

std::string loss_tsv(const std::vector<diff::LossReport>& h, bool refined) {
  std::string out = refined ? row({"epoch", "diff", "post", "prior", "rel", "dr", "total"})
                            : row({"epoch", "diff", "total"});
  for (std::size_t i = 0; i < h.size(); ++i) {
    const auto& r = h[i];
    out += refined ? row({std::to_string(i), num(r.diff), num(r.post), num(r.prior), num(r.rel),
                          num(r.dr), num(r.total)})
                   : row({std::to_string(i), num(r.diff), num(r.total)});
  }
  return out;
}

}  // namespace

std::string RunManifest::to_json() const {
  const auto files = [](const std::vector<File>& fs) {
    json a = json::array();
    for (const auto& f : fs) {
      json o{{"path", f.path}, {"sha256", f.sha256}};
      if (!f.role.empty()) o["role"] = f.role;
      a.push_back(o);
    }
    return a;
  };
  json j{{"command", command}, {"config_hash", config_hash}, {"build", build},
         {"started", started}, {"finished", finished}, {"inputs", files(inputs)},
         {"outputs", files(outputs)}};
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    RunManifest m;
    m.command = j.at("command");
    m.config_hash = j.at("config_hash");
    m.build = j.at("build");
    m.started = j.at("started");
    m.finished = j.at("finished");
    for (const auto& f : j.at("inputs")) {
      m.inputs.push_back({f.value("role", ""), f.at("path"), f.at("sha256")});
    }
    for (const auto& f : j.at("outputs")) m.outputs.push_back({"", f.at("path"), f.at("sha256")});
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad manifest: ") + e.what());
  }
}

std::string build_id() { return ADLD_BUILD_ID; }

Run::Run(std::string command, const ResolvedConfig& cfg) : cfg_(cfg) {
  manifest_.command = std::move(command);
  manifest_.build = build_id();
  manifest_.started = utc_now();
  std::error_code ec;
  fs::create_directories(cfg_.out_dir, ec);
  if (ec) throw FileError("cannot create " + cfg_.out_dir.string() + ": " + ec.message());
  const std::string text = echo(cfg_);
  manifest_.config_hash = sha256_hex(text);
  output(manifest_.command + ".resolved.cfg", text);
}

std::string Run::input(std::string role, const fs::path& p) {
  std::string hash = sha256_file(p);
  manifest_.inputs.push_back({std::move(role), p.string(), hash});
  return hash;
}

void Run::output(std::string_view name, std::string_view bytes) {
  write_file_atomic(path(name), bytes);
  manifest_.outputs.push_back({"", std::string(name), sha256_hex(bytes)});
  std::cout << "wrote " << path(name).string() << "\n";
}

fs::path Run::finish() {
  manifest_.finished = utc_now();
  const auto p = path(manifest_.command + ".manifest.json");
  write_file_atomic(p, manifest_.to_json());
  return p;
}

void apply(const Stage2Flags& f, diff::Stage2Config& c) {
  if (f.no_refine) c.refine = false;
  if (f.no_zigzag) c.zigzag = false;
  if (f.schedule) c.schedule = diff::level_schedule_from(*f.schedule);
}

fs::path cmd_gen_data(const ResolvedConfig& cfg) {
  Run run("gen-data", cfg);
  env::validate(cfg.spec);
  const auto d = env::generate_dataset(cfg.spec, cfg.episodes, cfg.seed);
  run.output("dataset.txt", env::dataset_to_text(d));
  return run.finish();
}

fs::path cmd_train_stage1(const ResolvedConfig& cfg, const fs::path& data) {
  Run run("train-stage1", cfg);
  run.input("dataset", data);
  const auto d = env::dataset_load(data);
  const auto r = latent::train_stage1(d, cfg.stage1);
  run.output("stage1.ckpt", r.nets.to_checkpoint().encode());
  std::string tsv = row({"epoch", "loss", "recon", "kl"});
  for (std::size_t i = 0; i < r.loss_history.size(); ++i) {
    tsv += row({std::to_string(i), num(r.loss_history[i]), num(r.recon_history[i]),
                num(r.kl_history[i])});
  }
  run.output("stage1_loss.tsv", tsv);
  return run.finish();
}

fs::path cmd_train_stage2(const ResolvedConfig& cfg, const fs::path& data,
                          const std::optional<fs::path>& stage1) {
  Run run("train-stage2", cfg);
  run.input("dataset", data);
  const auto d = env::dataset_load(data);
  std::optional<latent::Stage1Nets> nets;
  std::string s1_hash;
  if (stage1) {
    nets = load_stage1(run, *stage1, d);
    s1_hash = sha256_file(*stage1);
  }
  auto r = diff::train_stage2(d, cfg.stage2, std::move(nets));
  if (stage1) {
    r.model.stage1_path = stage1->string();
    r.model.stage1_hash = s1_hash;
  }
  run.output("stage2.ckpt", r.model.to_checkpoint().encode());
  const bool refined = !r.history.empty() && cfg.stage2.refine &&
                       cfg.stage2.latent == diff::LatentSource::kPosterior;
  run.output("stage2_loss.tsv", loss_tsv(r.history, refined));
  if (!r.idm_history.empty()) {
    std::string tsv = row({"epoch", "mse"});
    for (std::size_t i = 0; i < r.idm_history.size(); ++i) {
      tsv += row({std::to_string(i), num(r.idm_history[i])});
    }
    run.output("stage2_idm_loss.tsv", tsv);
  }
  return run.finish();
}

fs::path cmd_eval(const ResolvedConfig& cfg, const fs::path& stage2,
                  const std::optional<fs::path>& against) {
  Run run("eval", cfg);
  if (cfg.eval.seeds.empty()) throw ConfigError("key seeds: the seed list is empty");
  run.input("stage2", stage2);
  const auto m = diff::Stage2Model::from_checkpoint(Checkpoint::load(stage2));
  check_dims(m, cfg.spec);
  const auto rows = evaluate(m, cfg.spec, cfg.eval);
  std::vector<SeedReturns> other;
  if (against) {
    run.input("against", *against);
    const auto b = diff::Stage2Model::from_checkpoint(Checkpoint::load(*against));
    check_dims(b, cfg.spec);
    other = evaluate(b, cfg.spec, cfg.eval);
  }
  std::string tsv = against ? row({"seed", "n", "mean", "std", "stderr", "against_mean",
                                   "against_stderr", "gap"})
                            : row({"seed", "n", "mean", "std", "stderr"});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& s = rows[i].stats;
    if (against) {
      const auto& o = other[i].stats;
      tsv += row({std::to_string(rows[i].seed), std::to_string(s.n), num(s.mean), num(s.std),
                  num(s.std_err), num(o.mean), num(o.std_err), num(s.mean - o.mean)});
    } else {
      tsv += row({std::to_string(rows[i].seed), std::to_string(s.n), num(s.mean), num(s.std),
                  num(s.std_err)});
    }
  }
  run.output("eval.tsv", tsv);
  return run.finish();
}

fs::path cmd_verify(const ResolvedConfig& cfg, const std::optional<fs::path>& data) {
  Run run("verify", cfg);
  env::Dataset d;
  if (data) {
    run.input("dataset", *data);
    d = env::dataset_load(*data);
  } else {
    d = env::generate_dataset(cfg.spec, cfg.episodes, cfg.seed);
  }
  const auto& v = cfg.verify;
  const auto model = dynamics_for(v, d.spec, d, cfg.episodes);
  const auto grid = verify_grid(v, d.spec);
  Rng rng(derive_seed(cfg.seed, 0x7E1));
  const std::vector<double> action(d.spec.action_dim, 0.0);

  Tensor inj;
  if (grid.size() >= 2) {
    const auto probes = verify::probe_points(d, v.probes, rng);
    inj = verify::injectivity_matrix(*model, grid, probes, v.inj_samples, rng);
  }
  const auto sep = verify::k_separability(*model, grid, d, v.k_samples, action, rng);

  std::vector<verify::RewardDropInput> drops;
  for (std::size_t i = 0; i < v.drop_grid.size(); ++i) {
    const auto [m, n] = v.drop_grid[i];
    drops.push_back(
        reward_drop_setting(d.spec, m, n, cfg.stage2, v, cfg.eval, derive_seed(cfg.seed, i)));
  }
  const auto drop_rows = verify::reward_drop_analysis(drops);

  run.output("inj_matrix.tsv", inj.size() ? verify::matrix_tsv(inj, grid) : std::string());
  run.output("sep_matrix.tsv", verify::matrix_tsv(sep.sep, grid));
  run.output("k_samples.tsv", verify::k_samples_tsv(sep.samples));
  run.output("reward_drop.tsv", verify::reward_drop_tsv(drop_rows));
  run.output("summary.txt", verify::summary_text(inj, sep.sep, drop_rows, v.thresholds));
  return run.finish();
}

fs::path cmd_probe(const ResolvedConfig& cfg, const fs::path& data,
                   const std::optional<fs::path>& stage1, const std::vector<std::size_t>& sizes) {
  if (sizes.empty()) throw ConfigError("probe needs at least one block size");
  for (auto s : sizes) {
    if (s < 2) throw ConfigError(fmt::format("block size {} is below 2", s));
  }
  Run run("probe", cfg);
  const std::string data_hash = run.input("dataset", data);
  const auto d = env::dataset_load(data);
  if (!d.has_context()) throw ContractError("probing needs the true context in the dataset");
  latent::Stage1Config base = cfg.stage1;
  if (stage1) base = load_stage1(run, *stage1, d).config();

  Cache cache(cfg.out_dir / "cache");
  const std::vector<std::string> inputs{data_hash};
  const auto nets_for = [&](std::size_t block, bool future) {
    latent::Stage1Config c = base;
    c.block = block;
    c.use_future = future;
    const auto key = Cache::key("stage1", c.to_kv(), inputs);
    auto bytes = cache.get(key);
    if (!bytes) {
      bytes = latent::train_stage1(d, c).nets.to_checkpoint().encode();
      cache.put(key, *bytes);
    }
    return latent::Stage1Nets::from_checkpoint(Checkpoint::decode(*bytes));
  };

  std::string probe = row({"block_size", "mse", "r2", "nofuture_mse", "nofuture_r2"});
  std::string clusters = row({"block_size", "k", "purity", "nofuture_purity"});
  for (auto size : sizes) {
    eval::ProbeResult p[2];
    double purity[2] = {0, 0};
    for (int f = 0; f < 2; ++f) {
      const auto lt = stage1_latents(nets_for(size, f == 0), d);
      p[f] = eval::linear_probe(lt.latents, lt.targets, cfg.seed);
      std::vector<double> c0;
      for (const auto& t : lt.targets) c0.push_back(t[0]);
      purity[f] = eval::kmeans_purity(lt.latents, c0, 5, cfg.seed).purity;
    }
    const auto r2 = [](const eval::ProbeResult& r) { return r.r2_defined ? num(r.r2) : "nan"; };
    probe += row({std::to_string(size), num(p[0].mse), r2(p[0]), num(p[1].mse), r2(p[1])});
    clusters += row({std::to_string(size), "5", num(purity[0]), num(purity[1])});
  }
  run.output("probe.tsv", probe);
  run.output("clusters.tsv", clusters);
  return run.finish();
}

fs::path cmd_ablate(const ResolvedConfig& cfg, const fs::path& data,
                    const std::optional<fs::path>& stage1,
                    const std::vector<std::string>& variants) {
  for (const auto& v : variants) (void)ablation_config(cfg.stage2, v);
  Run run("ablate", cfg);
  const std::string data_hash = run.input("dataset", data);
  const auto d = env::dataset_load(data);
  std::optional<latent::Stage1Nets> nets;
  std::string s1_hash;
  if (stage1) {
    nets = load_stage1(run, *stage1, d);
    s1_hash = sha256_file(*stage1);
  }
  Cache cache(cfg.out_dir / "cache");
  const std::vector<std::string> inputs{data_hash, s1_hash};

  std::string tsv = row({"variant", "refine", "zigzag", "schedule", "latent", "return_mean",
                         "return_se", "probe_mse", "probe_r2"});
  for (const auto& v : variants) {
    const auto c = ablation_config(cfg.stage2, v);
    const auto key = Cache::key("stage2", c.to_kv(), inputs);
    auto bytes = cache.get(key);
    if (!bytes) {
      bytes = diff::train_stage2(d, c, nets).model.to_checkpoint().encode();
      cache.put(key, *bytes);
    }
    const auto m = diff::Stage2Model::from_checkpoint(Checkpoint::decode(*bytes));
    std::vector<double> means;
    for (const auto& r : evaluate(m, d.spec, cfg.eval)) means.push_back(r.stats.mean);
    const auto stats = eval::rollout_stats(means);
    std::string mse = "nan", r2 = "nan";
    if (c.latent == diff::LatentSource::kPosterior) {
      const auto p = walk_probe(m, d, cfg.seed);
      mse = num(p.mse);
      r2 = p.r2_defined ? num(p.r2) : "nan";
    }
    tsv += row({v, c.refine ? "true" : "false", c.zigzag ? "true" : "false",
                diff::to_string(c.schedule), diff::to_string(c.latent), num(stats.mean),
                num(stats.std_err), mse, r2});
  }
  run.output("ablate.tsv", tsv);
  return run.finish();
}

}  // namespace adld::cli
