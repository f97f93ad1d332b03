// episeg: stage runner for the epithelium segmentation data pipeline.
//
//   episeg <stage> --config cfg.json [--seed N] [--threads N] [--set key=value]...
//   episeg all --config cfg.json        runs synth (when inputs are unset) .. evaluate
//   episeg default-config               prints the default configuration
//
// Exit codes: 0 ok, 1 unexpected failure, 2 usage or invalid argument,
// 3 configuration, 4 format, 5 resolution, 6 predictor, 7 dependency,
// 8 generation.

#ifdef EPISEG_CLI11_SINGLE_HEADER
#include <CLI11.hpp>
#else
#include <CLI/CLI.hpp>
#endif

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "episeg/error.hpp"
#include "episeg/pipeline.hpp"

namespace {

int exit_code(episeg::ErrorKind kind) {
  switch (kind) {
    case episeg::ErrorKind::kInvalidArgument: return 2;
    case episeg::ErrorKind::kConfiguration: return 3;
    case episeg::ErrorKind::kFormat: return 4;
    case episeg::ErrorKind::kResolution: return 5;
    case episeg::ErrorKind::kPredictor: return 6;
    case episeg::ErrorKind::kDependency: return 7;
    case episeg::ErrorKind::kGeneration: return 8;
  }
  return 1;
}

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::vector<std::string> set;
  bool overlay = false;
  bool pooled = false;
  std::string stain_matrix;
};

episeg::PipelineConfig load(const Options& o) {
  std::vector<std::string> overrides = o.set;
  if (o.seed) overrides.push_back("seed=" + std::to_string(*o.seed));
  if (o.threads) overrides.push_back("threads=" + std::to_string(*o.threads));
  if (o.overlay) overrides.push_back("overlay=true");
  if (o.pooled) overrides.push_back("inference.pooled=true");
  if (!o.stain_matrix.empty()) {
    // Relative to the working directory, not the config file.
    overrides.push_back("paths.stain_matrix=" +
                        std::filesystem::absolute(o.stain_matrix).generic_string());
  }
  return episeg::load_config(o.config, overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Epithelium segmentation data pipeline"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", opt.config, "pipeline config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "global seed (u64)");
    sub->add_option("--threads", opt.threads, "worker thread cap")->check(CLI::PositiveNumber);
    sub->add_option("--set", opt.set, "override a config key: dotted.key=value")->take_all();
    sub->add_flag("--overlay", opt.overlay, "write prediction overlays (infer-stitch)");
    sub->add_flag("--pooled", opt.pooled, "pixel-pooled precision/recall (evaluate)");
    sub->add_option("--stain-matrix", opt.stain_matrix, "3x3 stain matrix file")->check(CLI::ExistingFile);
  };

  std::vector<std::pair<std::string, CLI::App*>> stages;
  for (std::string_view s : episeg::kStages) {
    auto* sub = app.add_subcommand(std::string(s), "run the " + std::string(s) + " stage");
    add_common(sub);
    stages.emplace_back(std::string(s), sub);
  }
  auto* all = app.add_subcommand("all", "run synth (if inputs are unset) through evaluate");
  add_common(all);
  auto* defaults = app.add_subcommand("default-config", "print the default configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (defaults->parsed()) {
      std::cout << episeg::default_config_json();
      return 0;
    }
    const episeg::PipelineConfig cfg = load(opt);
    if (all->parsed()) {
      for (std::string_view s : episeg::kStages) {
        if (s == "synth" && !cfg.paths.he.empty()) continue;
        if (s == "qual-summary" && cfg.paths.qual_scores.empty()) continue;
        episeg::run_stage(s, cfg, std::cerr);
      }
      return 0;
    }
    for (const auto& [name, sub] : stages) {
      if (sub->parsed()) episeg::run_stage(name, cfg, std::cerr);
    }
  } catch (const episeg::Error& e) {
    std::cerr << "episeg: " << episeg::to_string(e.kind()) << ": " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "episeg: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
