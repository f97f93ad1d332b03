#include "episeg/raster.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace episeg {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid-argument";
    case ErrorKind::kFormat: return "format-error";
    case ErrorKind::kResolution: return "resolution-error";
    case ErrorKind::kPredictor: return "predictor-error";
    case ErrorKind::kConfiguration: return "configuration-error";
    case ErrorKind::kDependency: return "dependency-error";
    case ErrorKind::kGeneration: return "generation-error";
  }
  return "error";
}

Rect intersect(const Rect& a, const Rect& b) noexcept {
  const int x0 = std::max(a.x, b.x);
  const int y0 = std::max(a.y, b.y);
  const int x1 = std::min(a.right(), b.right());
  const int y1 = std::min(a.bottom(), b.bottom());
  if (x1 <= x0 || y1 <= y0) return {x0, y0, 0, 0};
  return {x0, y0, x1 - x0, y1 - y0};
}

Rect unite(const Rect& a, const Rect& b) noexcept {
  if (a.empty()) return b;
  if (b.empty()) return a;
  const int x0 = std::min(a.x, b.x);
  const int y0 = std::min(a.y, b.y);
  return {x0, y0, std::max(a.right(), b.right()) - x0, std::max(a.bottom(), b.bottom()) - y0};
}

RasterImage::RasterImage(int width, int height, int channels, double mpp, std::uint8_t fill)
    : Grid(width, height, channels, mpp, fill) {
  if (channels != 1 && channels != 3) throw InvalidArgument("RasterImage needs 1 or 3 channels");
}

RasterImage::RasterImage(int width, int height, int channels, double mpp,
                         std::vector<std::uint8_t> data)
    : Grid(width, height, channels, mpp, std::move(data)) {
  if (channels != 1 && channels != 3) throw InvalidArgument("RasterImage needs 1 or 3 channels");
}

RasterImage::RasterImage(Grid<std::uint8_t> grid) : Grid(std::move(grid)) {
  if (channels() != 1 && channels() != 3) {
    throw InvalidArgument("RasterImage needs 1 or 3 channels");
  }
}

BinaryMask::BinaryMask(int width, int height, double mpp, bool fill)
    : Grid(width, height, 1, mpp, fill ? 1 : 0) {}

BinaryMask::BinaryMask(Grid<std::uint8_t> grid) : Grid(std::move(grid)) {
  if (channels() != 1) throw InvalidArgument("BinaryMask must be single-channel");
  for (auto& v : storage()) v = v != 0 ? 1 : 0;
}

std::size_t BinaryMask::count() const noexcept {
  return static_cast<std::size_t>(std::count(data().begin(), data().end(), std::uint8_t{1}));
}

const char* class_name(TissueClass c) noexcept {
  switch (c) {
    case TissueClass::kBackground: return "background";
    case TissueClass::kInvasive: return "invasive";
    case TissueClass::kBenign: return "benign";
    case TissueClass::kInSitu: return "insitu";
  }
  return "unknown";
}

LabelMask::LabelMask(int width, int height, double mpp, TissueClass fill)
    : Grid(width, height, 1, mpp, static_cast<std::uint8_t>(fill)) {}

LabelMask::LabelMask(Grid<std::uint8_t> grid) : Grid(std::move(grid)) {
  if (channels() != 1) throw InvalidArgument("LabelMask must be single-channel");
  for (auto v : data()) {
    if (v >= kClassCount) {
      throw InvalidArgument("LabelMask code " + std::to_string(v) + " outside 0..3");
    }
  }
}

bool LabelMask::contains_class(TissueClass c) const noexcept {
  const auto code = static_cast<std::uint8_t>(c);
  return std::find(data().begin(), data().end(), code) != data().end();
}

std::size_t LabelMask::count(TissueClass c) const noexcept {
  const auto code = static_cast<std::uint8_t>(c);
  return static_cast<std::size_t>(std::count(data().begin(), data().end(), code));
}

namespace {

bool dimension_matches(int level0, int level_k, int factor) {
  // Accepts floor, ceil or nearest rounding of level0 / factor.
  const long long scaled = static_cast<long long>(level_k) * factor;
  return std::llabs(scaled - level0) < factor;
}

}  // namespace

PyramidImage::PyramidImage(std::vector<RasterImage> levels, std::vector<int> factors)
    : levels_(std::move(levels)), factors_(std::move(factors)) {
  if (levels_.empty()) throw InvalidArgument("pyramid needs at least one level");
  if (levels_.size() != factors_.size()) {
    throw InvalidArgument("pyramid level count does not match factor count");
  }
  if (factors_.front() != 1) throw InvalidArgument("pyramid level 0 must have factor 1");
  const RasterImage& base = levels_.front();
  for (std::size_t k = 1; k < levels_.size(); ++k) {
    const int f = factors_[k];
    if (f <= factors_[k - 1]) {
      throw InvalidArgument("pyramid factors must be strictly increasing");
    }
    const RasterImage& lv = levels_[k];
    if (!dimension_matches(base.width(), lv.width(), f) ||
        !dimension_matches(base.height(), lv.height(), f)) {
      throw InvalidArgument("pyramid level " + std::to_string(k) +
                            " dimensions inconsistent with factor " + std::to_string(f));
    }
    if (std::abs(lv.mpp() - base.mpp() * f) > 1e-9 * base.mpp() * f) {
      throw InvalidArgument("pyramid level " + std::to_string(k) + " mpp inconsistent with factor");
    }
    if (lv.channels() != base.channels()) {
      throw InvalidArgument("pyramid level " + std::to_string(k) + " channel count differs");
    }
  }
}

PyramidImage PyramidImage::build(const RasterImage& base, std::span<const int> factors) {
  std::vector<RasterImage> levels;
  std::vector<int> fs(factors.begin(), factors.end());
  if (fs.empty() || fs.front() != 1) throw InvalidArgument("pyramid factors must start at 1");
  levels.reserve(fs.size());
  for (int f : fs) levels.push_back(f == 1 ? base : downsample(base, f));
  return PyramidImage(std::move(levels), std::move(fs));
}

std::optional<std::size_t> PyramidImage::find_level(int factor) const noexcept {
  for (std::size_t k = 0; k < factors_.size(); ++k) {
    if (factors_[k] == factor) return k;
  }
  return std::nullopt;
}

const RasterImage& PyramidImage::level_for_factor(int factor) const {
  const auto k = find_level(factor);
  if (!k) throw InvalidArgument("pyramid has no level with factor " + std::to_string(factor));
  return levels_[*k];
}

RasterImage downsample(const RasterImage& img, int factor) {
  if (factor < 1) throw InvalidArgument("downsample factor must be >= 1");
  if (factor == 1) return img;
  const int ow = (img.width() + factor - 1) / factor;
  const int oh = (img.height() + factor - 1) / factor;
  const int ch = img.channels();
  RasterImage out(ow, oh, ch, img.mpp() * factor);
  std::vector<std::uint64_t> sums(static_cast<std::size_t>(ow) * ch);
  for (int oy = 0; oy < oh; ++oy) {
    std::fill(sums.begin(), sums.end(), 0);
    const int y0 = oy * factor;
    const int y1 = std::min(y0 + factor, img.height());
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < img.width(); ++x) {
        const std::size_t o = static_cast<std::size_t>(x / factor) * ch;
        for (int c = 0; c < ch; ++c) sums[o + c] += img(x, y, c);
      }
    }
    for (int ox = 0; ox < ow; ++ox) {
      const int x0 = ox * factor;
      const std::uint64_t n =
          static_cast<std::uint64_t>(std::min(x0 + factor, img.width()) - x0) * (y1 - y0);
      for (int c = 0; c < ch; ++c) {
        // floor(sum / n + 1/2) in integers.
        const std::uint64_t s = sums[static_cast<std::size_t>(ox) * ch + c];
        out(ox, oy, c) = static_cast<std::uint8_t>((2 * s + n) / (2 * n));
      }
    }
  }
  return out;
}

RasterImage crop(const RasterImage& img, Rect window) { return RasterImage(crop_grid(img, window)); }
BinaryMask crop(const BinaryMask& mask, Rect window) { return BinaryMask(crop_grid(mask, window)); }
LabelMask crop(const LabelMask& mask, Rect window) { return LabelMask(crop_grid(mask, window)); }

double area_um2_to_pixels(double area_um2, double mpp) {
  if (!(mpp > 0.0)) throw InvalidArgument("mpp must be > 0");
  return area_um2 / (mpp * mpp);
}

Rect scale_rect_down(const Rect& level0, int factor) {
  if (factor < 1) throw InvalidArgument("level factor must be >= 1");
  auto floor_div = [](int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); };
  auto ceil_div = [&](int a, int b) { return -floor_div(-a, b); };
  const int x0 = floor_div(level0.x, factor);
  const int y0 = floor_div(level0.y, factor);
  const int x1 = ceil_div(level0.right(), factor);
  const int y1 = ceil_div(level0.bottom(), factor);
  return {x0, y0, x1 - x0, y1 - y0};
}

}  // namespace episeg
