#pragma once

#include "episeg/raster.hpp"

namespace episeg {

/// Integer translation of the moving image relative to the fixed one:
/// moving(x + dx, y + dy) ≈ fixed(x, y). apply_shift(moving, inverse()) aligns
/// moving onto fixed.
struct ShiftVector {
  int dx = 0;
  int dy = 0;
  double confidence = 0.0;  // peak share of the correlation surface, [0, 1]

  ShiftVector inverse() const noexcept { return {-dx, -dy, confidence}; }
  bool is_zero() const noexcept { return dx == 0 && dy == 0; }
};

/// Luma 0.299R + 0.587G + 0.114B rounded; grayscale input is copied.
RasterImage to_grayscale(const RasterImage& img);

/// Cumulative-histogram equalization over 256 bins: v -> floor(255·CDF(v)).
RasterImage equalize(const RasterImage& gray);

/// Phase cross-correlation of two equally sized grayscale rasters (≥ 8×8).
/// Peaks beyond half an axis are reported as negative shifts.
ShiftVector phase_correlation(const RasterImage& fixed, const RasterImage& moving);

/// Grayscale both, equalize the CK side, downsample both by `factor`,
/// correlate and scale the shift back up by `factor`.
ShiftVector register_pair(const RasterImage& he, const RasterImage& ck, int factor = 4);

/// Translates content by (dx, dy) without wraparound; vacated pixels become
/// 255 for images and 0 for masks.
RasterImage apply_shift(const RasterImage& img, const ShiftVector& s);
BinaryMask apply_shift(const BinaryMask& mask, const ShiftVector& s);
LabelMask apply_shift(const LabelMask& mask, const ShiftVector& s);

}  // namespace episeg
