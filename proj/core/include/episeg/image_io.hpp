#pragma once

#include <array>
#include <cstdint>
#include <filesystem>

#include "episeg/raster.hpp"

namespace episeg {

/// Display colors for label codes 0..3: white, purple, red, blue.
inline constexpr std::array<std::array<std::uint8_t, 3>, kClassCount> kLabelPalette = {{
    {255, 255, 255},
    {128, 0, 128},
    {255, 0, 0},
    {0, 0, 255},
}};

/// Reads an 8-bit grayscale or RGB PNG (palette, alpha and 16-bit inputs are
/// reduced to 8-bit gray/RGB). PNG carries no resolution we trust, so mpp
/// comes from the caller.
RasterImage read_png(const std::filesystem::path& path, double mpp);
void write_png(const RasterImage& img, const std::filesystem::path& path);

/// Label rasters are stored as 8-bit indexed PNG: the index is the class code
/// and the palette is kLabelPalette, so viewers show colors while the raw
/// samples stay 0..3.
void write_label_png(const LabelMask& mask, const std::filesystem::path& path);
LabelMask read_label_png(const std::filesystem::path& path, double mpp);

/// Directory form: `labels.png` plus `meta.json` {"mpp": ...}.
void write_label_mask(const LabelMask& mask, const std::filesystem::path& dir);
LabelMask read_label_mask(const std::filesystem::path& dir);

/// Directory pyramid: `meta.json` {"mpp_level0", "factors"} plus
/// `level_<k>.png`. Round trip is bit-exact.
void write_pyramid(const PyramidImage& pyramid, const std::filesystem::path& dir);
/// Throws FormatError naming the offending level on missing files or
/// inconsistent geometry.
PyramidImage read_pyramid(const std::filesystem::path& dir);

/// RGB rendering of a label mask through kLabelPalette.
RasterImage colorize(const LabelMask& mask);

}  // namespace episeg
