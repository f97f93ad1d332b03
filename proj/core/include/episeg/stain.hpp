#pragma once

#include <array>
#include <filesystem>

#include "episeg/raster.hpp"

namespace episeg {

using Vec3 = std::array<double, 3>;

/// Optical-density absorption vectors, one unit-norm row per stain:
/// hematoxylin, DAB and the residual (normalized cross product of the first
/// two). OD = concentrations × matrix.
class StainMatrix {
 public:
  /// Normalizes both rows and derives the residual. Throws InvalidArgument
  /// for zero or parallel vectors.
  StainMatrix(const Vec3& hematoxylin, const Vec3& dab);
  /// Takes all three rows as given (each normalized); throws when singular.
  static StainMatrix from_rows(const Vec3& r0, const Vec3& r1, const Vec3& r2);

  /// Standard H-DAB vectors: H (0.65, 0.70, 0.29), DAB (0.27, 0.57, 0.78).
  static StainMatrix hdab_default();

  const Vec3& row(int k) const { return rows_.at(static_cast<std::size_t>(k)); }
  const std::array<Vec3, 3>& inverse() const noexcept { return inverse_; }

  /// od = c × M
  Vec3 compose(const Vec3& concentrations) const noexcept;
  /// c = od × M⁻¹
  Vec3 unmix(const Vec3& od) const noexcept;

 private:
  StainMatrix() = default;
  void finish();

  std::array<Vec3, 3> rows_{};
  std::array<Vec3, 3> inverse_{};
};

/// Stain matrix text file: three rows of three numbers.
StainMatrix read_stain_matrix(const std::filesystem::path& path);

struct DeconvConfig {
  double sigma = 3.0;          // pixels at target_mpp
  double threshold = 0.25;     // DAB concentration cutoff, inclusive
  double target_mpp = 0.3448;
  double mpp_tolerance = 0.10;  // relative

  void validate() const;
};

/// Beer–Lambert transform, OD = -log10(max(I, 1) / 255) per channel.
RealRaster rgb_to_od(const RasterImage& img);

/// Per-pixel unmixing into (hematoxylin, DAB, residual) concentrations.
/// Negative values are kept.
RealRaster deconvolve(const RealRaster& od, const StainMatrix& m);

/// Renders concentrations back to 8-bit RGB through the matrix
/// (I = 255·10^-OD, rounded and clamped).
RasterImage render_concentrations(const RealRaster& concentrations, const StainMatrix& m);

/// Separable Gaussian on one channel of `src`; kernel truncated at
/// ceil(4σ), half-sample symmetric reflection at the edges. σ = 0 copies.
RealRaster gaussian_blur(const RealRaster& src, double sigma, int channel = 0);

/// DAB positivity: blur(DAB concentration, σ) >= threshold.
/// Throws ResolutionError when img.mpp is not within tolerance of target_mpp.
BinaryMask dab_mask(const RasterImage& ck_img, const StainMatrix& m, const DeconvConfig& cfg);

}  // namespace episeg
