#pragma once

#include <cstdint>
#include <vector>

#include "episeg/annotations.hpp"
#include "episeg/raster.hpp"

namespace episeg {

enum class Connectivity { kFour = 4, kEight = 8 };

struct Region {
  int label = 0;  // dense, from 1
  long long pixel_count = 0;
  Rect bbox;
  double sum_x = 0.0;  // of pixel indices, for centroids
  double sum_y = 0.0;

  double centroid_x() const noexcept { return sum_x / static_cast<double>(pixel_count); }
  double centroid_y() const noexcept { return sum_y / static_cast<double>(pixel_count); }
};

struct ComponentMap {
  Grid<std::int32_t> labels;  // 0 = not part of any region
  std::vector<Region> regions;  // regions[i].label == i + 1
};

/// Labels maximal connected regions of true pixels in raster-scan order of
/// their first pixel.
ComponentMap connected_components(const BinaryMask& mask, Connectivity connectivity);

struct MorphologyConfig {
  double fill_hole_below_um2 = 150.0;
  double remove_object_below_um2 = 25.0;

  void validate() const;
};

/// Fills enclosed 4-connected background holes smaller than
/// fill_hole_below_um2, then drops 8-connected objects smaller than
/// remove_object_below_um2. Both comparisons are strict.
BinaryMask clean_epithelium_mask(const BinaryMask& mask, const MorphologyConfig& cfg);

/// Scan-converts polygons carrying `label` into a width × height mask.
/// Vertices are divided by level_factor and then offset by -origin (in level
/// pixels). A pixel is set when its center is inside a polygon (even-odd).
BinaryMask rasterize(const AnnotationSet& annotations, AnnotationLabel label, int width, int height,
                     int level_factor, double mpp, int origin_x = 0, int origin_y = 0);

BinaryMask mask_subtract(const BinaryMask& a, const BinaryMask& b);
BinaryMask mask_intersect(const BinaryMask& a, const BinaryMask& b);
BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b);

struct TissueConfig {
  int max_mean = 240;   // tissue iff mean(R,G,B) < max_mean
  int min_spread = 10;  // and max - min channel > min_spread
};

/// Color-threshold tissue detection: not near-white and not neutral gray.
BinaryMask tissue_mask(const RasterImage& img, const TissueConfig& cfg = {});

}  // namespace episeg
