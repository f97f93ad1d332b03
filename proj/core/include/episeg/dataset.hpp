#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "episeg/mask_ops.hpp"
#include "episeg/random.hpp"
#include "episeg/raster.hpp"
#include "episeg/registration.hpp"
#include "episeg/tma.hpp"

namespace episeg {

// ---------------------------------------------------------------------------
// Ground truth composition

struct GroundTruthConfig {
  bool insitu_precedence = true;
};

struct GroundTruth {
  LabelMask labels;
  bool excluded = false;             // exclusion mask covers the raster center
  long long annotation_overlap_px = 0;  // benign ∧ in situ annotation pixels
};

/// Class per pixel: in situ where DAB ∧ in-situ annotation, benign where
/// DAB ∧ benign annotation, invasive for remaining DAB pixels, background
/// elsewhere. Pixels under `exclude` are forced to background.
GroundTruth build_ground_truth(const BinaryMask& dab, const BinaryMask& benign,
                               const BinaryMask& insitu, const BinaryMask& exclude,
                               const GroundTruthConfig& cfg = {});

/// Block-majority reduction; ties go to the lowest class code.
LabelMask downsample_majority(const LabelMask& mask, int factor);
/// Nearest-neighbour resampling to an explicit size.
LabelMask resize_nearest(const LabelMask& mask, int width, int height);

/// 4-plane one-hot encoding (plane = class code), values 0/1.
Grid<std::uint8_t> to_one_hot(const LabelMask& mask);
/// Inverse of to_one_hot; throws InvalidArgument unless exactly one plane is
/// set per pixel.
LabelMask from_one_hot(const Grid<std::uint8_t>& planes);

// ---------------------------------------------------------------------------
// Patching

struct PatchGridConfig {
  int patch_size = 1024;
  double overlap_fraction = 0.25;
  double min_tissue_fraction = 0.25;

  void validate() const;
};

struct Anchor {
  int x = 0;
  int y = 0;
  friend bool operator==(const Anchor&, const Anchor&) = default;
};

/// round-half-up(patch_size · (1 − overlap)), at least 1.
int patch_stride(const PatchGridConfig& cfg);
/// Anchors along one axis: multiples of the stride that fit, plus a final
/// anchor clamped to dim − patch_size. A dimension smaller than the patch
/// yields {0}.
std::vector<int> axis_anchors(int dim, const PatchGridConfig& cfg);
/// Row-major product of the two axis anchor lists.
std::vector<Anchor> patch_grid(int width, int height, const PatchGridConfig& cfg);

enum class SetTag { kInSitu, kBenign, kInvasive };

std::string_view to_string(SetTag tag) noexcept;
std::optional<SetTag> parse_set_tag(std::string_view name) noexcept;

struct PatchOrigin {
  std::string slide;
  int core = 0;
  int x = 0;  // patch top-left in pixels of the slide level
  int y = 0;
  int level_factor = 1;
};

struct PatchRecord {
  RasterImage he;
  LabelMask gt;
  SetTag set_tag = SetTag::kInvasive;
  PatchOrigin origin;
  ShiftVector shift_applied;
  double tissue_fraction = 0.0;
};

/// In situ if any class-3 pixel, else benign if any class-2 pixel, else
/// invasive.
SetTag assign_set(const LabelMask& gt);

struct PatchCutOptions {
  std::string slide = "slide";
  int registration_factor = 4;
  TissueConfig tissue;
};

/// Cuts one patch per grid anchor from a core pair whose CK raster is
/// already aligned at core level. Each HE/CK patch pair is registered again
/// and the residual shift is applied to the ground-truth crop. Patches with
/// tissue fraction below cfg.min_tissue_fraction are dropped.
std::vector<PatchRecord> cut_patches(const CorePair& pair, const LabelMask& gt,
                                     const PatchGridConfig& cfg, const PatchCutOptions& opt = {});

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentationConfig {
  double p_flip = 0.5;
  double p_rot90 = 0.5;
  double p_brightness = 0.5;
  double p_hue = 0.5;
  double p_saturation = 0.5;
  double p_shift = 0.5;
  double p_blur = 0.1;
  double brightness_range = 0.2;  // ± fraction
  double hue_range_deg = 18.0;
  double saturation_range = 0.2;  // ± fraction
  int shift_range_px = 32;
  double blur_sigma_min = 0.5;
  double blur_sigma_max = 1.5;

  void validate() const;
};

struct AugmentationPlan {
  bool flip = false;
  bool flip_vertical = false;
  bool rot90 = false;
  int rot_quarters = 0;  // clockwise, 1..3 when enabled
  bool brightness = false;
  double brightness_factor = 1.0;
  bool hue = false;
  double hue_shift_deg = 0.0;
  bool saturation = false;
  double saturation_factor = 1.0;
  bool shift = false;
  int shift_dx = 0;
  int shift_dy = 0;
  bool blur = false;
  double blur_sigma = 0.0;
};

/// Draws every decision and magnitude in a fixed order from a generator
/// seeded by (seed, origin).
AugmentationPlan plan_augmentation(const AugmentationConfig& cfg, std::uint64_t seed,
                                   const PatchOrigin& origin);
/// Geometric ops (flip, rotation, shift) act on image and labels alike;
/// photometric ops (brightness, hue, saturation, blur) on the image only.
PatchRecord apply_augmentation(const PatchRecord& rec, const AugmentationPlan& plan);
PatchRecord augment(const PatchRecord& rec, const AugmentationConfig& cfg, std::uint64_t seed);

/// Geometric primitives, usable on any grid (images, labels, one-hot planes).
template <typename T>
Grid<T> flip_grid(const Grid<T>& g, bool vertical) {
  Grid<T> out(g.width(), g.height(), g.channels(), g.mpp());
  for (int y = 0; y < g.height(); ++y)
    for (int x = 0; x < g.width(); ++x) {
      const int sx = vertical ? x : g.width() - 1 - x;
      const int sy = vertical ? g.height() - 1 - y : y;
      for (int c = 0; c < g.channels(); ++c) out(x, y, c) = g(sx, sy, c);
    }
  return out;
}

/// Clockwise rotation by quarters × 90°.
template <typename T>
Grid<T> rotate_grid(const Grid<T>& g, int quarters) {
  quarters = ((quarters % 4) + 4) % 4;
  if (quarters == 0) return g;
  const bool swap = quarters % 2 == 1;
  const int w = swap ? g.height() : g.width();
  const int h = swap ? g.width() : g.height();
  Grid<T> out(w, h, g.channels(), g.mpp());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int sx = 0, sy = 0;
      switch (quarters) {
        case 1: sx = y; sy = g.height() - 1 - x; break;
        case 2: sx = g.width() - 1 - x; sy = g.height() - 1 - y; break;
        default: sx = g.width() - 1 - y; sy = x; break;
      }
      for (int c = 0; c < g.channels(); ++c) out(x, y, c) = g(sx, sy, c);
    }
  return out;
}

template <typename T>
Grid<T> translate_grid(const Grid<T>& g, int dx, int dy, T fill) {
  Grid<T> out(g.width(), g.height(), g.channels(), g.mpp(), fill);
  for (int y = 0; y < g.height(); ++y)
    for (int x = 0; x < g.width(); ++x) {
      const int sx = x - dx, sy = y - dy;
      if (!g.contains(sx, sy)) continue;
      for (int c = 0; c < g.channels(); ++c) out(x, y, c) = g(sx, sy, c);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Balanced sampling

struct SampleRef {
  SetTag set = SetTag::kInvasive;
  std::size_t index = 0;
};

/// Infinite deterministic stream: each draw picks one of the three sets
/// uniformly, then an element of it uniformly, with replacement.
class BalancedSampler {
 public:
  /// Sizes indexed by SetTag order (in situ, benign, invasive). Throws
  /// ConfigurationError naming any empty set.
  BalancedSampler(std::array<std::size_t, 3> set_sizes, std::uint64_t seed);

  SampleRef next();

 private:
  std::array<std::size_t, 3> sizes_;
  Rng rng_;
};

// ---------------------------------------------------------------------------
// Patch store: `index.jsonl` plus he_<n>.png / gt_<n>.png

struct PatchStoreEntry {
  std::size_t n = 0;
  PatchOrigin origin;
  SetTag set_tag = SetTag::kInvasive;
  double tissue_fraction = 0.0;
  ShiftVector shift_applied;
  double mpp = 0.0;
  std::string he_file;
  std::string gt_file;
};

class PatchStoreWriter {
 public:
  explicit PatchStoreWriter(std::filesystem::path dir);
  /// Writes the two PNGs immediately; the index is written by finish().
  std::size_t add(const PatchRecord& rec);
  /// Writes index.jsonl. `extra` fields (e.g. a config hash) are merged into
  /// every line.
  void finish(std::string_view extra_json_object = "{}");
  const std::vector<PatchStoreEntry>& entries() const noexcept { return entries_; }

 private:
  std::filesystem::path dir_;
  std::vector<PatchStoreEntry> entries_;
};

std::vector<PatchStoreEntry> read_patch_index(const std::filesystem::path& dir);
PatchRecord load_patch(const std::filesystem::path& dir, const PatchStoreEntry& entry);

}  // namespace episeg
