#include <unistd.h>

#include <filesystem>
#include <fstream>

#include "adld/causaldiff.hpp"
#include "adld/cli.hpp"
#include "adld/envsim.hpp"
#include "adld/latentid.hpp"
#include "adld/numerics.hpp"
#include "doctest.h"

using namespace adld;
using namespace adld::cli;
namespace fs = std::filesystem;

namespace {

const char* kBase = R"(seed = 3
[env]
kind = pointmass-wind
episodes = 4
horizon = 30   # short episodes
[stage1]
epochs = 1
batch = 4
hidden = 16
embed = 8
gru = 8
[stage2]
epochs = 1
hidden = 16
K = 10
horizon = 3
max_jump = 5
[eval]
seeds = 0..1
episodes = 1
[verify]
k_samples = 100
inj_samples = 200
probes = 4
grid_points = 3
)";

// Scratch directory removed at scope exit.
struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name)
      : dir(fs::temp_directory_path() / ("adld_cli_" + name + "_" + std::to_string(::getpid()))) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  fs::path operator/(const std::string& s) const { return dir / s; }
};

fs::path write_config(const Scratch& s, const std::string& name, const std::string& text) {
  const auto p = s / name;
  std::ofstream(p) << text;
  return p;
}

int adld_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "adld");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) { return read_file(p); }

std::size_t lines(const std::string& s) { return std::count(s.begin(), s.end(), '\n'); }

}  // namespace

TEST_CASE("config grammar") {
  const auto c = parse_config(
      "# header\nseed = 7\nout_dir = runs/x\n\n[env]\nkind=lineargauss-additive # trailing\n"
      "[stage1]\n  kl_weight = 0.02\n");
  CHECK(c.seed == 7);
  CHECK(c.out_dir == "runs/x");
  CHECK(c.env.at("kind") == "lineargauss-additive");
  CHECK(c.stage1.at("kl_weight") == "0.02");

  CHECK_THROWS_AS(parse_config("[stage3]\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("color = red\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[env]\nkind = a\nkind = b\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[env]\njust words\n"), ConfigError);

  const auto unknown = [](const std::string& text) -> std::string {
    try {
      resolve(parse_config(text));
    } catch (const ConfigError& e) {
      return e.what();
    }
    return {};
  };
  CHECK(unknown("[stage1]\nkl_wieght = 1\n").find("kl_wieght") != std::string::npos);
  CHECK(unknown("[stage2]\nlamda_rel = 1\n").find("lamda_rel") != std::string::npos);
  CHECK(unknown("[env]\nwindspeed = 1\n").find("windspeed") != std::string::npos);
  CHECK(unknown("[eval]\nseed = 1\n").find("seed") != std::string::npos);
  CHECK(unknown("[verify]\nthreshold = 1\n").find("threshold") != std::string::npos);
  CHECK(unknown("[eval]\nseeds =\n").find("empty") != std::string::npos);
  CHECK_THROWS_AS(resolve(parse_config("[env]\nhorizon = 3\n")), ConfigError);
}

TEST_CASE("resolved config echo") {
  const auto r = resolve(parse_config(kBase));
  const auto text = echo(r);
  CHECK(text.find("kl_weight = 0.01\n") != std::string::npos);
  CHECK(text.find("lambda_prior = 0.1\n") != std::string::npos);
  CHECK(text.find("lambda_rel = 0.1\n") != std::string::npos);
  CHECK(text.find("seeds = 0,1\n") != std::string::npos);
  // Section seeds follow the global seed.
  CHECK(r.stage1.seed == 3);
  CHECK(r.stage2.seed == 3);
  // The echo is itself a valid config resolving to the same values.
  CHECK(echo(resolve(parse_config(text))) == text);
  CHECK(parse_seed_list("seeds", "0..4") == std::vector<std::uint64_t>{0, 1, 2, 3, 4});
  CHECK(parse_seed_list("seeds", "5, 2..3") == std::vector<std::uint64_t>{5, 2, 3});
}

TEST_CASE("manifest json round trip") {
  RunManifest m;
  m.command = "gen-data";
  m.config_hash = "ab";
  m.build = build_id();
  m.started = "2024-01-01T00:00:00Z";
  m.finished = "2024-01-01T00:00:01Z";
  m.inputs.push_back({"dataset", "d.txt", "cd"});
  m.outputs.push_back({"", "o.tsv", "ef"});
  const auto back = RunManifest::from_json(m.to_json());
  CHECK(back.to_json() == m.to_json());
  CHECK_THROWS_AS(RunManifest::from_json("{"), FormatError);
}

TEST_CASE("gen-data") {
  Scratch s("gen");
  const auto cfg = write_config(s, "c.cfg", kBase);
  REQUIRE(adld_cli({"-c", cfg.string(), "-o", (s / "a").string(), "gen-data"}) == 0);
  REQUIRE(adld_cli({"-c", cfg.string(), "-o", (s / "b").string(), "gen-data"}) == 0);
  const auto d = env::dataset_load(s / "a/dataset.txt");
  CHECK(d.episodes.size() == 4);
  CHECK(sha256_file(s / "a/dataset.txt") == sha256_file(s / "b/dataset.txt"));
  CHECK(slurp(s / "a/gen-data.resolved.cfg").find("episodes = 4") != std::string::npos);

  const auto m = RunManifest::from_json(slurp(s / "a/gen-data.manifest.json"));
  CHECK(m.command == "gen-data");
  CHECK(m.config_hash == sha256_file(s / "a/gen-data.resolved.cfg"));
  REQUIRE(m.outputs.size() == 2);
  CHECK(m.outputs[1].path == "dataset.txt");
  CHECK(m.outputs[1].sha256 == sha256_file(s / "a/dataset.txt"));

  const auto bad_horizon = write_config(s, "h2.cfg", "[env]\nhorizon = 3\n");
  CHECK(adld_cli({"-c", bad_horizon.string(), "-o", (s / "c").string(), "gen-data"}) == 2);
  CHECK(adld_cli({"-c", (s / "missing.cfg").string(), "gen-data"}) == 4);
  CHECK(adld_cli({"frobnicate"}) == 2);
}

TEST_CASE("train-stage1") {
  Scratch s("s1");
  const auto cfg = write_config(s, "c.cfg", kBase);
  const auto out = (s / "o").string();
  REQUIRE(adld_cli({"-c", cfg.string(), "-o", out, "gen-data"}) == 0);
  const auto data = (s / "o/dataset.txt").string();

  CHECK(adld_cli({"-c", cfg.string(), "-o", out, "train-stage1", "--data", (s / "nope").string()}) == 4);

  auto r = resolve(parse_config(kBase));
  r.stage1.epochs = 0;
  const auto cfg0 = write_config(
      s, "e0.cfg", std::string(kBase).replace(std::string(kBase).find("epochs = 1"), 10, "epochs = 0"));
  REQUIRE(adld_cli({"-c", cfg0.string(), "-o", out, "train-stage1", "--data", data}) == 0);
  const auto d = env::dataset_load(data);
  const auto initial = latent::train_stage1(d, r.stage1).nets.to_checkpoint().encode();
  CHECK(slurp(s / "o/stage1.ckpt") == initial);
  CHECK(lines(slurp(s / "o/stage1_loss.tsv")) == 1);

  REQUIRE(adld_cli({"-c", cfg.string(), "-o", out, "train-stage1", "--data", data}) == 0);
  CHECK(slurp(s / "o/stage1.ckpt") != initial);
  CHECK(slurp(s / "o/stage1_loss.tsv").rfind("epoch\tloss\trecon\tkl\n", 0) == 0);
  CHECK(lines(slurp(s / "o/stage1_loss.tsv")) == 2);
  CHECK(slurp(s / "o/train-stage1.resolved.cfg").find("kl_weight = 0.01") != std::string::npos);

  // Provenance: the training input is the generated dataset.
  const auto gen = RunManifest::from_json(slurp(s / "o/gen-data.manifest.json"));
  const auto s1 = RunManifest::from_json(slurp(s / "o/train-stage1.manifest.json"));
  CHECK(s1.inputs.at(0).sha256 == gen.outputs.at(1).sha256);
}

TEST_CASE("train-stage2 flags and contracts") {
  Scratch s("s2");
  const auto cfg = write_config(s, "c.cfg", kBase);
  const auto out = (s / "o").string();
  REQUIRE(adld_cli({"-c", cfg.string(), "-o", out, "gen-data"}) == 0);
  const auto data = (s / "o/dataset.txt").string();
  REQUIRE(adld_cli({"-c", cfg.string(), "-o", out, "train-stage1", "--data", data}) == 0);
  const auto s1 = (s / "o/stage1.ckpt").string();

  REQUIRE(adld_cli({"-c", cfg.string(), "-o", out, "train-stage2", "--data", data, "--stage1", s1}) == 0);
  auto m = diff::Stage2Model::from_checkpoint(Checkpoint::load(s / "o/stage2.ckpt"));
  CHECK(m.stage1_hash == sha256_file(s1));
  CHECK(slurp(s / "o/stage2_loss.tsv").rfind("epoch\tdiff\tpost\tprior\trel\tdr\ttotal\n", 0) == 0);
  const auto man = RunManifest::from_json(slurp(s / "o/train-stage2.manifest.json"));
  CHECK(man.inputs.at(1).role == "stage1");
  CHECK(man.inputs.at(1).sha256 == sha256_file(s1));
  const auto echo_text = slurp(s / "o/train-stage2.resolved.cfg");
  CHECK(echo_text.find("lambda_prior = 0.1\n") != std::string::npos);
  CHECK(echo_text.find("lambda_rel = 0.1\n") != std::string::npos);

  REQUIRE(adld_cli({"-c", cfg.string(), "-o", out, "train-stage2", "--data", data, "--stage1", s1,
               "--no-refine"}) == 0);
  m = diff::Stage2Model::from_checkpoint(Checkpoint::load(s / "o/stage2.ckpt"));
  CHECK_FALSE(m.cfg.refine);
  CHECK(slurp(s / "o/stage2_loss.tsv").rfind("epoch\tdiff\ttotal\n", 0) == 0);
  CHECK(slurp(s / "o/train-stage2.resolved.cfg").find("refine = false") != std::string::npos);

  REQUIRE(adld_cli({"-c", cfg.string(), "-o", out, "train-stage2", "--data", data, "--stage1", s1,
               "--schedule", "same", "--no-zigzag"}) == 0);
  m = diff::Stage2Model::from_checkpoint(Checkpoint::load(s / "o/stage2.ckpt"));
  CHECK(m.cfg.schedule == diff::LevelSchedule::kSame);
  CHECK_FALSE(m.cfg.zigzag);
  Rng rng(1);
  for (const auto lv : diff::training_levels(m.cfg.schedule, m.cfg.horizon, m.cfg.K, rng)) {
    CHECK(lv == m.cfg.K / 2);
  }
  CHECK(adld_cli({"-c", cfg.string(), "-o", out, "train-stage2", "--data", data, "--stage1", s1,
             "--schedule", "sideways"}) == 2);

  // Posterior latents without Stage 1, and Stage 1 on other dims.
  CHECK(adld_cli({"-c", cfg.string(), "-o", out, "train-stage2", "--data", data}) == 2);
  const auto lg = write_config(s, "lg.cfg",
                               "seed = 1\n[env]\nkind = lineargauss-additive\nepisodes = 3\n"
                               "horizon = 30\n");
  REQUIRE(adld_cli({"-c", lg.string(), "-o", (s / "lg").string(), "gen-data"}) == 0);
  CHECK(adld_cli({"-c", cfg.string(), "-o", out, "train-stage2", "--data",
             (s / "lg/dataset.txt").string(), "--stage1", s1}) == 2);
}

TEST_CASE("eval tables") {
  Scratch s("ev");
  const auto oracle = write_config(
      s, "o.cfg",
      std::string(kBase).replace(std::string(kBase).find("[stage2]\n"), 9,
                                 "[stage2]\nlatent = oracle\nmode = policy\n"));
  const auto out = (s / "o").string();
  REQUIRE(adld_cli({"-c", oracle.string(), "-o", out, "gen-data"}) == 0);
  const auto data = (s / "o/dataset.txt").string();
  REQUIRE(adld_cli({"-c", oracle.string(), "-o", out, "train-stage2", "--data", data}) == 0);
  const auto ckpt = (s / "o/stage2.ckpt").string();

  const auto five = write_config(
      s, "five.cfg",
      std::string(slurp(oracle)).replace(slurp(oracle).find("seeds = 0..1"), 12, "seeds = 0..4"));
  REQUIRE(adld_cli({"-c", five.string(), "-o", out, "eval", "--stage2", ckpt}) == 0);
  const auto tsv = slurp(s / "o/eval.tsv");
  CHECK(tsv.rfind("seed\tn\tmean\tstd\tstderr\n", 0) == 0);
  CHECK(lines(tsv) == 6);

  REQUIRE(adld_cli({"-c", five.string(), "-o", out, "eval", "--stage2", ckpt, "--against", ckpt}) == 0);
  const auto paired = slurp(s / "o/eval.tsv");
  CHECK(paired.find("\tgap\n") != std::string::npos);
  CHECK(lines(paired) == 6);
  // Same model on both sides: zero gap on every row.
  std::istringstream in(paired);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) CHECK(line.substr(line.rfind('\t') + 1) == "0");

  const auto empty = write_config(
      s, "empty.cfg",
      std::string(slurp(oracle)).replace(slurp(oracle).find("seeds = 0..1"), 12, "seeds ="));
  CHECK(adld_cli({"-c", empty.string(), "-o", out, "eval", "--stage2", ckpt}) == 2);
  const auto lg = write_config(s, "lg.cfg", "[env]\nkind = lineargauss-additive\n");
  CHECK(adld_cli({"-c", lg.string(), "-o", out, "eval", "--stage2", ckpt}) == 2);
}

TEST_CASE("verify reports") {
  Scratch s("vf");
  const std::string tail = "\n[verify]\nk_samples = 300\nprobes = 4\ninj_samples = 300\n";
  const auto add = write_config(s, "add.cfg",
                                "seed = 2\n[env]\nkind = lineargauss-additive\nepisodes = 6\n"
                                "horizon = 60\n" + tail);
  const auto mul = write_config(s, "mul.cfg",
                                "seed = 2\n[env]\nkind = lineargauss-multiplicative\nepisodes = 6\n"
                                "horizon = 60\n" + tail);
  REQUIRE(adld_cli({"-c", add.string(), "-o", (s / "a").string(), "verify"}) == 0);
  REQUIRE(adld_cli({"-c", mul.string(), "-o", (s / "m").string(), "verify"}) == 0);
  for (const auto* f : {"inj_matrix.tsv", "sep_matrix.tsv", "k_samples.tsv", "reward_drop.tsv",
                        "summary.txt"}) {
    CHECK(fs::exists(s / "a" / f));
  }
  const auto sa = slurp(s / "a/summary.txt");
  const auto sm = slurp(s / "m/summary.txt");
  // Last word of the line that starts with `what`.
  const auto flag = [](const std::string& text, const std::string& what) {
    const auto at = text.find(what);
    REQUIRE(at != std::string::npos);
    const auto eol = text.find('\n', at);
    const auto sp = text.rfind(' ', eol);
    return text.substr(sp + 1, eol - sp - 1);
  };
  CHECK(flag(sa, "k context-independent") == "yes");
  CHECK(flag(sa, "separable") == "no");
  CHECK(flag(sm, "separable") == "yes");
  CHECK(flag(sm, "k context-independent") == "no");

  // Too few k-samples.
  const auto few = write_config(s, "few.cfg", slurp(add) + "grid_points = 3\n");
  const auto few2 = write_config(
      s, "few2.cfg",
      std::string(slurp(few)).replace(slurp(few).find("k_samples = 300"), 15, "k_samples = 1"));
  CHECK(adld_cli({"-c", few2.string(), "-o", (s / "f").string(), "verify"}) == 2);

  // A dataset without ground-truth contexts still runs with a fitted model.
  auto d = env::generate_dataset(resolve(parse_config(slurp(mul))).spec, 4, 9);
  for (auto& ep : d.episodes) {
    for (auto& r : ep) r.c.clear();
  }
  env::dataset_save(d, s / "blind.txt");
  const auto fitted_ok = write_config(
      s, "fit2.cfg",
      std::string(slurp(mul)).replace(slurp(mul).find("k_samples = 300"), 15, "k_samples = 50") +
          "model = fitted\nfit_epochs = 2\n");
  CHECK(adld_cli({"-c", fitted_ok.string(), "-o", (s / "b").string(), "verify", "--data",
             (s / "blind.txt").string()}) == 0);
  CHECK(lines(slurp(s / "b/sep_matrix.tsv")) == 6);
}

TEST_CASE("probe sweep and cache") {
  Scratch s("pr");
  const auto cfg = write_config(s, "c.cfg", kBase);
  const auto out = (s / "o").string();
  REQUIRE(adld_cli({"-c", cfg.string(), "-o", out, "gen-data"}) == 0);
  const auto data = (s / "o/dataset.txt").string();
  REQUIRE(adld_cli({"-c", cfg.string(), "-o", out, "probe", "--data", data, "--sizes", "2,6,12"}) == 0);
  const auto first = slurp(s / "o/probe.tsv");
  CHECK(first.rfind("block_size\tmse\tr2\tnofuture_mse\tnofuture_r2\n", 0) == 0);
  CHECK(lines(first) == 4);
  CHECK(lines(slurp(s / "o/clusters.tsv")) == 4);
  const auto cached = std::distance(fs::directory_iterator(s / "o/cache"), {});
  CHECK(cached == 6);

  REQUIRE(adld_cli({"-c", cfg.string(), "-o", out, "probe", "--data", data, "--sizes", "2,6,12"}) == 0);
  CHECK(slurp(s / "o/probe.tsv") == first);
  CHECK(std::distance(fs::directory_iterator(s / "o/cache"), {}) == cached);

  CHECK(adld_cli({"-c", cfg.string(), "-o", out, "probe", "--data", data, "--sizes", "1,6"}) == 2);
}

TEST_CASE("ablate matrix") {
  Scratch s("ab");
  const auto cfg = write_config(s, "c.cfg", kBase);
  const auto out = (s / "o").string();
  REQUIRE(adld_cli({"-c", cfg.string(), "-o", out, "gen-data"}) == 0);
  const auto data = (s / "o/dataset.txt").string();
  REQUIRE(adld_cli({"-c", cfg.string(), "-o", out, "train-stage1", "--data", data}) == 0);
  const auto s1 = (s / "o/stage1.ckpt").string();
  REQUIRE(adld_cli({"-c", cfg.string(), "-o", out, "ablate", "--data", data, "--stage1", s1}) == 0);
  const auto tsv = slurp(s / "o/ablate.tsv");
  CHECK(lines(tsv) == 1 + ablation_variants().size());
  CHECK(tsv.find("\nno-latent\tfalse\tfalse\tcausal\tzero\t") != std::string::npos);
  CHECK(tsv.find("\nsame-schedule\ttrue\ttrue\tsame\tposterior\t") != std::string::npos);
  CHECK(adld_cli({"-c", cfg.string(), "-o", out, "ablate", "--data", data, "--stage1", s1,
             "--variants", "full,bogus"}) == 2);
  CHECK(ablation_config(diff::Stage2Config{}, "no-refine").refine == false);
  CHECK(ablation_config(diff::Stage2Config{}, "no-zigzag").zigzag == false);
}

TEST_CASE("repeated runs are byte-identical") {
  Scratch s("rep");
  const auto cfg = write_config(s, "c.cfg", kBase);
  const auto out = (s / "o").string();
  const auto data = (s / "o/dataset.txt").string();
  const auto s1 = (s / "o/stage1.ckpt").string();
  const std::vector<std::string> files{"dataset.txt",    "stage1.ckpt", "stage1_loss.tsv",
                                       "stage2.ckpt",    "stage2_loss.tsv", "eval.tsv",
                                       "eval.resolved.cfg"};
  std::vector<std::string> hashes[2];
  for (int pass = 0; pass < 2; ++pass) {
    REQUIRE(adld_cli({"-c", cfg.string(), "-o", out, "gen-data"}) == 0);
    REQUIRE(adld_cli({"-c", cfg.string(), "-o", out, "train-stage1", "--data", data}) == 0);
    REQUIRE(adld_cli({"-c", cfg.string(), "-o", out, "train-stage2", "--data", data, "--stage1", s1}) == 0);
    REQUIRE(adld_cli({"-c", cfg.string(), "-o", out, "eval", "--stage2",
                 (s / "o/stage2.ckpt").string()}) == 0);
    for (const auto& f : files) hashes[pass].push_back(sha256_file(s / "o" / f));
    if (pass == 0) {
      for (const auto& f : files) fs::remove(s / "o" / f);
    }
  }
  CHECK(hashes[0] == hashes[1]);
}
