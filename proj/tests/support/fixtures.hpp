#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "episeg/raster.hpp"

namespace fixture {

inline constexpr double kMpp = 0.3448;

inline void paint_disc(episeg::RasterImage& img, double cx, double cy, double r,
                       std::array<std::uint8_t, 3> rgb) {
  for (int y = std::max(0, static_cast<int>(cy - r - 1)); y < std::min(img.height(), static_cast<int>(cy + r + 2)); ++y)
    for (int x = std::max(0, static_cast<int>(cx - r - 1)); x < std::min(img.width(), static_cast<int>(cx + r + 2)); ++x)
      if (std::hypot(x + 0.5 - cx, y + 0.5 - cy) < r)
        for (int c = 0; c < 3; ++c) img(x, y, c) = rgb[static_cast<std::size_t>(c)];
}

inline void paint_rect(episeg::RasterImage& img, episeg::Rect r, std::array<std::uint8_t, 3> rgb) {
  for (int y = r.y; y < r.bottom(); ++y)
    for (int x = r.x; x < r.right(); ++x)
      for (int c = 0; c < 3; ++c) img(x, y, c) = rgb[static_cast<std::size_t>(c)];
}

inline constexpr std::array<std::uint8_t, 3> kPink{230, 170, 200};

/// Single-level slide with a rows×cols grid of tissue discs, optionally
/// offset, plus a 30-px speck and a 200-px blob when `debris` is set.
inline episeg::RasterImage disc_grid(int rows, int cols, double diameter, int spacing, int margin,
                                     int offset_x = 0, int offset_y = 0, bool debris = false) {
  const int w = 2 * margin + (cols - 1) * spacing + static_cast<int>(diameter);
  const int h = 2 * margin + (rows - 1) * spacing + static_cast<int>(diameter);
  episeg::RasterImage img(w, h, 3, kMpp, 255);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      paint_disc(img, margin + c * spacing + diameter / 2 + offset_x,
                 margin + r * spacing + diameter / 2 + offset_y, diameter / 2, kPink);
  if (debris) {
    // Between grid rows, away from every disc.
    paint_rect(img, {margin + spacing / 2 + 4, 4, 5, 6}, kPink);                    // 30 px
    paint_rect(img, {margin + spacing + spacing / 2 - 2, h - 24, 20, 10}, kPink);  // 200 px
  }
  return img;
}

/// Random texture with structure at several scales, for registration.
inline episeg::RasterImage textured(int w, int h, std::uint32_t seed) {
  std::mt19937 rng(seed);
  episeg::RasterImage img(w, h, 3, kMpp, 255);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 40; ++k) {
    const double r = 4 + 20 * u(rng);
    const std::uint8_t g = static_cast<std::uint8_t>(40 + 180 * u(rng));
    paint_disc(img, w * u(rng), h * u(rng), r, {g, static_cast<std::uint8_t>(g / 2 + 40), g});
  }
  return img;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("episeg_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixture
