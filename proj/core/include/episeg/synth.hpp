#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "episeg/annotations.hpp"
#include "episeg/raster.hpp"

namespace episeg {

struct StructureCounts {
  int benign_glands = 1;   // epithelial ring around a lumen
  int insitu_ducts = 1;    // filled disc
  int invasive_nests = 2;  // irregular blob
};

struct SynthSpec {
  int rows = 4;
  int cols = 4;
  int core_diameter = 400;  // level-0 px
  int spacing = 0;          // centre distance; 0 = 1.25 × diameter
  int margin = 100;
  StructureCounts structures;
  double ck_false_negative_rate = 0.0;  // per structure
  int shift_dx = 0;                     // CK render relative to HE
  int shift_dy = 0;
  double noise_sd = 0.0;  // gray levels, both renders
  double mpp = 0.3448;
  std::vector<int> factors{1, 4, 16};
  std::vector<int> exclude_cores;  // grid indices covered by an Exclude polygon
  int cores_per_case = 2;
  std::uint64_t seed = 1;

  int effective_spacing() const noexcept {
    return spacing > 0 ? spacing : (5 * core_diameter + 3) / 4;
  }
  void validate() const;
};

struct SynthStructure {
  TissueClass cls = TissueClass::kInvasive;
  double cx = 0.0;  // level 0
  double cy = 0.0;
  double radius = 0.0;        // outer radius (mean radius for nests)
  double inner_radius = 0.0;  // lumen, benign glands only
  double phase = 0.0;         // nest outline modulation
  bool ck_negative = false;

  double bounding_radius() const noexcept;
  /// Epithelium at the given level-0 position.
  bool covers(double x, double y) const noexcept;
  bool in_lumen(double x, double y) const noexcept;
};

struct SynthCore {
  int index = 0;  // raster order in the grid
  int row = 0;
  int col = 0;
  Point center;
  double radius = 0.0;
  Rect bbox;  // level 0, covers the disc
  std::string case_id;
  bool excluded = false;
  std::vector<SynthStructure> structures;
};

struct SynthCase {
  std::string case_id;
  std::string subtype;
  std::string grade;
};

struct SynthResult {
  PyramidImage he;
  PyramidImage ck;
  LabelMask truth;  // level 0, HE frame
  std::vector<SynthCore> cores;
  std::vector<SynthCase> cases;
  AnnotationSet annotations;

  LabelMask core_truth(std::size_t k) const { return crop(truth, cores.at(k).bbox); }
};

/// HE render colour per class code; background is the stroma colour.
std::array<std::array<std::uint8_t, 3>, kClassCount> synth_he_class_colors() noexcept;

/// Deterministic in (spec, seed) for any thread count. Throws
/// GenerationError when the requested structures do not fit a core.
SynthResult generate(const SynthSpec& spec, int threads = 1);

/// Writes he/, ck/ (directory pyramids), annotations.geojson, cases.csv,
/// truth/ (level-0 label mask) and cores.json.
void write_synth(const SynthResult& result, const std::filesystem::path& dir);

}  // namespace episeg
