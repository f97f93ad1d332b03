#pragma once

#include <optional>
#include <string>
#include <vector>

#include "episeg/annotations.hpp"
#include "episeg/mask_ops.hpp"
#include "episeg/raster.hpp"
#include "episeg/registration.hpp"

namespace episeg {

struct CoreRegion {
  int id = 0;
  Rect bbox;        // level 0
  Point centroid;   // level 0, continuous coordinates
  long long area_px = 0;         // at the detection level
  double equiv_diameter_px = 0;  // 2·sqrt(area/π) at the detection level
  int detection_factor = 1;      // level factor the region was found on

  double equiv_diameter_level0() const noexcept { return equiv_diameter_px * detection_factor; }
};

struct ExtractorConfig {
  int min_region_px = 100;
  double max_median_deviation = 0.5;
  int lowres_max_width = 2048;
  TissueConfig tissue;

  void validate() const;
};

struct CorePair {
  CoreRegion he;
  CoreRegion ck;
  Rect level_rect;       // crop window at level_factor, shared by both rasters
  int level_factor = 0;  // 0 until rasters are attached
  RasterImage he_raster;
  RasterImage ck_raster;
  ShiftVector shift;
  bool excluded = false;
  std::string reason;
};

struct Pairing {
  std::vector<CorePair> pairs;
  std::vector<CoreRegion> unmatched_he;
  std::vector<CoreRegion> unmatched_ck;
};

/// Index of the level used for core detection: the finest level whose width
/// is at most lowres_max_width, else the coarsest.
std::size_t detection_level(const PyramidImage& slide, const ExtractorConfig& cfg);

/// Tissue mask on the detection level, 8-connected regions, removal of
/// regions under min_region_px, then removal of regions whose area or
/// equivalent diameter deviates from the survivors' median by more than
/// max_median_deviation. Ids are assigned in raster order.
std::vector<CoreRegion> extract_cores(const PyramidImage& slide, const ExtractorConfig& cfg);

/// Greedy mutual-nearest centroid matching. Pairs farther apart than
/// max_dist (default: half the median HE equivalent diameter at level 0)
/// are rejected.
Pairing pair_cores(const std::vector<CoreRegion>& he, const std::vector<CoreRegion>& ck,
                   std::optional<double> max_dist = std::nullopt);

/// Crops the union of both bounding boxes from each slide at level_factor.
/// With align > 1 the level-0 window is first widened to multiples of align,
/// so crops taken at different levels stay pixel-aligned. Pixels beyond a
/// slide edge are white.
CorePair extract_pair_rasters(const PyramidImage& slide_he, const PyramidImage& slide_ck,
                              CorePair pair, int level_factor, int align = 1);

/// Level-0 window covering both cores, widened to multiples of align.
Rect pair_window_level0(const CorePair& pair, int align);

}  // namespace episeg
