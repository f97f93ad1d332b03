#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "episeg/dataset.hpp"
#include "episeg/mask_ops.hpp"
#include "episeg/stain.hpp"
#include "episeg/synth.hpp"
#include "episeg/tma.hpp"

namespace episeg {

/// Empty input paths mean "use the output of the synth stage".
struct PipelinePaths {
  std::filesystem::path he;
  std::filesystem::path ck;
  std::filesystem::path annotations;
  std::filesystem::path output = "out";
  std::filesystem::path case_metadata;
  std::filesystem::path qual_scores;
  std::filesystem::path stain_matrix;  // empty: default H-DAB vectors
};

/// Pyramid level factors used per stage. Crop windows are aligned to the
/// largest of them so rasters at different levels cover the same tissue.
struct LevelConfig {
  int threshold = 1;  // ground truth is built here
  int patch = 1;
  int inference = 1;
};

struct InferenceConfig {
  int patch_size = 1024;
  double overlap = 0.30;
  /// "oracle", "constant:<class code>" or "exec:<path>".
  std::string predictor = "oracle";
  bool pooled = false;  // pixel-pooled precision/recall in reports
};

struct PatchStageConfig {
  std::string slide = "slide";
  int preview_draws = 16;  // balanced sampler draws listed in the manifest
};

struct PipelineConfig {
  PipelinePaths paths;
  LevelConfig levels;
  DeconvConfig deconv;
  MorphologyConfig morphology;
  ExtractorConfig extractor;
  PatchGridConfig patch_grid;
  AugmentationConfig augmentation;
  InferenceConfig inference;
  PatchStageConfig patches;
  SynthSpec synth;
  int registration_factor = 4;
  std::uint64_t seed = 1;
  int threads = 1;
  bool overlay = false;

  /// SHA-256 (hex) of the canonical config, excluding paths.output and
  /// threads, which do not influence artifacts.
  std::string hash;
};

/// Parses a JSON config over the defaults. Relative paths resolve against
/// `base_dir`. `overrides` are "dotted.key=value" strings; the value is read
/// as JSON when it parses, else as a string. Throws ConfigurationError
/// listing every unknown or invalid key.
PipelineConfig parse_config(std::string_view json_text,
                            const std::vector<std::string>& overrides = {},
                            const std::filesystem::path& base_dir = {});
PipelineConfig load_config(const std::filesystem::path& path,
                           const std::vector<std::string>& overrides = {});
/// The default configuration as pretty JSON.
std::string default_config_json();

inline constexpr std::string_view kStages[] = {"synth",         "extract-tma", "register",
                                               "build-gt",      "build-patches", "infer-stitch",
                                               "evaluate",      "qual-summary"};

/// Runs one stage. Throws DependencyError naming the stage whose manifest
/// is missing. Progress lines go to `log`.
void run_stage(std::string_view stage, const PipelineConfig& cfg, std::ostream& log);

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

}  // namespace episeg
