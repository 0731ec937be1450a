#include <CLI11.hpp>
#include <iostream>
#include <sstream>

#include "adld/cli/commands.hpp"
#include "adld/cli/experiments.hpp"
#include "adld/numerics/errors.hpp"

namespace adld::cli {
namespace {

int exit_code(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ContractError*>(&e) ||
      dynamic_cast<const ShapeError*>(&e)) {
    return 2;
  }
  if (dynamic_cast<const NumericError*>(&e) || dynamic_cast<const DomainError*>(&e)) return 3;
  if (dynamic_cast<const FileError*>(&e) || dynamic_cast<const FormatError*>(&e)) return 4;
  return 1;
}

std::vector<std::string> split_names(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Latent-context diffusion planning experiments"};
  app.require_subcommand(1);
  std::string config_path, out_dir;
  app.add_option("-c,--config", config_path, "Experiment config file");
  app.add_option("-o,--out", out_dir, "Output directory, overrides out_dir");

  std::string data, stage1, stage2, against, sizes = "2,6,12", variants;
  Stage2Flags flags;
  std::string schedule;

  auto* gen = app.add_subcommand("gen-data", "Generate an offline dataset");
  auto* s1 = app.add_subcommand("train-stage1", "Train the latent identification model");
  s1->add_option("--data", data, "Dataset file")->required();
  auto* s2 = app.add_subcommand("train-stage2", "Train the diffusion planner");
  s2->add_option("--data", data, "Dataset file")->required();
  s2->add_option("--stage1", stage1, "Stage-1 checkpoint");
  s2->add_flag("--no-refine", flags.no_refine, "Disable the refinement step");
  s2->add_flag("--no-zigzag", flags.no_zigzag, "Disable zig-zag latent refreshes");
  s2->add_option("--schedule", schedule, "Training level schedule: causal, same, random");
  auto* ev = app.add_subcommand("eval", "Closed-loop returns per evaluation seed");
  ev->add_option("--stage2", stage2, "Stage-2 checkpoint")->required();
  ev->add_option("--against", against, "Second checkpoint for a paired comparison");
  auto* vf = app.add_subcommand("verify", "Assumption diagnostics");
  vf->add_option("--data", data, "Dataset file; generated from [env] when absent");
  auto* pr = app.add_subcommand("probe", "Linear-probe sweep over block sizes");
  pr->add_option("--data", data, "Dataset file")->required();
  pr->add_option("--stage1", stage1, "Stage-1 checkpoint whose config is the base");
  pr->add_option("--sizes", sizes, "Comma-separated block sizes");
  auto* ab = app.add_subcommand("ablate", "Train and evaluate the ablation variants");
  ab->add_option("--data", data, "Dataset file")->required();
  ab->add_option("--stage1", stage1, "Stage-1 checkpoint");
  ab->add_option("--variants", variants, "Comma-separated subset of the variants");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const auto opt = [](const std::string& s) {
    return s.empty() ? std::nullopt : std::optional<std::filesystem::path>(s);
  };
  try {
    ExperimentConfig ec = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    if (!out_dir.empty()) ec.out_dir = out_dir;
    ResolvedConfig cfg = resolve(ec);
    std::filesystem::path manifest;
    if (gen->parsed()) {
      manifest = cmd_gen_data(cfg);
    } else if (s1->parsed()) {
      manifest = cmd_train_stage1(cfg, data);
    } else if (s2->parsed()) {
      if (!schedule.empty()) flags.schedule = schedule;
      apply(flags, cfg.stage2);
      cfg.stage2.validate();
      manifest = cmd_train_stage2(cfg, data, opt(stage1));
    } else if (ev->parsed()) {
      manifest = cmd_eval(cfg, stage2, opt(against));
    } else if (vf->parsed()) {
      manifest = cmd_verify(cfg, opt(data));
    } else if (pr->parsed()) {
      manifest = cmd_probe(cfg, data, opt(stage1), parse_count_list("sizes", sizes));
    } else if (ab->parsed()) {
      const auto names = variants.empty() ? ablation_variants() : split_names(variants);
      manifest = cmd_ablate(cfg, data, opt(stage1), names);
    }
    std::cout << "wrote " << manifest.string() << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e);
  }
}

}  // namespace adld::cli
