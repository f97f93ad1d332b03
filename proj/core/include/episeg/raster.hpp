#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "episeg/error.hpp"

namespace episeg {

/// Axis-aligned pixel rectangle, half-open: [x, x + width) × [y, y + height).
struct Rect {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;

  bool empty() const noexcept { return width <= 0 || height <= 0; }
  int right() const noexcept { return x + width; }
  int bottom() const noexcept { return y + height; }
  long long area() const noexcept {
    return empty() ? 0 : static_cast<long long>(width) * height;
  }

  friend bool operator==(const Rect&, const Rect&) = default;
};

Rect intersect(const Rect& a, const Rect& b) noexcept;
/// Smallest rectangle containing both; an empty operand is ignored.
Rect unite(const Rect& a, const Rect& b) noexcept;

/// Dense row-major, channel-interleaved raster with isotropic
/// microns-per-pixel metadata. The common storage under every image and mask
/// type in the library.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;

  Grid(int width, int height, int channels, double mpp, T fill = T{})
      : width_(width), height_(height), channels_(channels), mpp_(mpp) {
    validate_shape();
    data_.assign(sample_count(), fill);
  }

  Grid(int width, int height, int channels, double mpp, std::vector<T> data)
      : width_(width),
        height_(height),
        channels_(channels),
        mpp_(mpp),
        data_(std::move(data)) {
    validate_shape();
    if (data_.size() != sample_count()) {
      throw InvalidArgument("sample count does not match width*height*channels");
    }
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  double mpp() const noexcept { return mpp_; }
  bool empty() const noexcept { return data_.empty(); }
  Rect bounds() const noexcept { return {0, 0, width_, height_}; }

  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
  }
  std::size_t sample_count() const noexcept {
    return pixel_count() * static_cast<std::size_t>(channels_);
  }

  bool contains(int x, int y) const noexcept {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }

  std::size_t index(int x, int y, int c = 0) const noexcept {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
            static_cast<std::size_t>(x)) *
               static_cast<std::size_t>(channels_) +
           static_cast<std::size_t>(c);
  }

  T operator()(int x, int y, int c = 0) const noexcept { return data_[index(x, y, c)]; }
  T& operator()(int x, int y, int c = 0) noexcept { return data_[index(x, y, c)]; }

  std::span<const T> data() const noexcept { return data_; }
  std::span<T> data() noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  void set_mpp(double mpp) {
    if (!(mpp > 0.0)) throw InvalidArgument("mpp must be > 0");
    mpp_ = mpp;
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  void validate_shape() const {
    if (width_ <= 0 || height_ <= 0) throw InvalidArgument("raster dimensions must be positive");
    if (channels_ <= 0) throw InvalidArgument("raster must have at least one channel");
    if (!(mpp_ > 0.0)) throw InvalidArgument("mpp must be > 0");
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  double mpp_ = 1.0;
  std::vector<T> data_;
};

using RealRaster = Grid<double>;
/// Per-pixel class probabilities, 4 planes (background, invasive, benign, in situ).
using ProbabilityRaster = Grid<float>;

/// 8-bit grayscale or RGB image.
class RasterImage : public Grid<std::uint8_t> {
 public:
  RasterImage() = default;
  RasterImage(int width, int height, int channels, double mpp, std::uint8_t fill = 0);
  RasterImage(int width, int height, int channels, double mpp, std::vector<std::uint8_t> data);
  explicit RasterImage(Grid<std::uint8_t> grid);
};

class BinaryMask : public Grid<std::uint8_t> {
 public:
  BinaryMask() = default;
  BinaryMask(int width, int height, double mpp, bool fill = false);
  /// Nonzero samples are normalized to 1.
  explicit BinaryMask(Grid<std::uint8_t> grid);

  bool get(int x, int y) const noexcept { return (*this)(x, y) != 0; }
  void set(int x, int y, bool value) noexcept { (*this)(x, y) = value ? 1 : 0; }
  std::size_t count() const noexcept;
};

enum class TissueClass : std::uint8_t {
  kBackground = 0,
  kInvasive = 1,
  kBenign = 2,
  kInSitu = 3,
};

inline constexpr int kClassCount = 4;
inline constexpr TissueClass kForegroundClasses[] = {TissueClass::kInvasive, TissueClass::kBenign,
                                                     TissueClass::kInSitu};

const char* class_name(TissueClass c) noexcept;

/// Class-coded raster, codes 0 background, 1 invasive, 2 benign, 3 in situ.
class LabelMask : public Grid<std::uint8_t> {
 public:
  LabelMask() = default;
  LabelMask(int width, int height, double mpp, TissueClass fill = TissueClass::kBackground);
  /// Throws InvalidArgument on any code outside 0..3.
  explicit LabelMask(Grid<std::uint8_t> grid);

  TissueClass at(int x, int y) const noexcept { return static_cast<TissueClass>((*this)(x, y)); }
  void set(int x, int y, TissueClass c) noexcept { (*this)(x, y) = static_cast<std::uint8_t>(c); }
  bool contains_class(TissueClass c) const noexcept;
  std::size_t count(TissueClass c) const noexcept;
};

/// Multi-resolution image. Level 0 is the highest resolution and has factor 1.
class PyramidImage {
 public:
  PyramidImage() = default;
  /// Validates strictly increasing factors starting at 1, dimensions
  /// consistent with the factors and per-level mpp = level-0 mpp × factor.
  PyramidImage(std::vector<RasterImage> levels, std::vector<int> factors);

  static PyramidImage build(const RasterImage& base, std::span<const int> factors);

  std::size_t level_count() const noexcept { return levels_.size(); }
  const RasterImage& level(std::size_t k) const { return levels_.at(k); }
  int factor(std::size_t k) const { return factors_.at(k); }
  const std::vector<int>& factors() const noexcept { return factors_; }
  double mpp_level0() const { return levels_.at(0).mpp(); }

  std::optional<std::size_t> find_level(int factor) const noexcept;
  /// Throws InvalidArgument when no level has exactly this factor.
  const RasterImage& level_for_factor(int factor) const;

  friend bool operator==(const PyramidImage&, const PyramidImage&) = default;

 private:
  std::vector<RasterImage> levels_;
  std::vector<int> factors_;
};

/// Mean-pools factor×factor blocks (trailing partial blocks average the
/// available pixels), rounding half up. Output mpp = input mpp × factor.
RasterImage downsample(const RasterImage& img, int factor);

/// Copies the window clamped to the image. Throws InvalidArgument when the
/// clamped window is empty.
template <typename T>
Grid<T> crop_grid(const Grid<T>& img, Rect window) {
  const Rect r = intersect(window, img.bounds());
  if (r.empty()) throw InvalidArgument("crop window lies outside the image");
  const int ch = img.channels();
  std::vector<T> out;
  out.reserve(static_cast<std::size_t>(r.area()) * static_cast<std::size_t>(ch));
  for (int y = r.y; y < r.bottom(); ++y) {
    auto row = img.data().subspan(img.index(r.x, y), static_cast<std::size_t>(r.width) * ch);
    out.insert(out.end(), row.begin(), row.end());
  }
  return Grid<T>(r.width, r.height, ch, img.mpp(), std::move(out));
}

/// Copies exactly `window`; samples outside the image take `fill`.
template <typename T>
Grid<T> crop_padded_grid(const Grid<T>& img, Rect window, T fill) {
  if (window.empty()) throw InvalidArgument("crop window is empty");
  Grid<T> out(window.width, window.height, img.channels(), img.mpp(), fill);
  const Rect r = intersect(window, img.bounds());
  if (r.empty()) return out;
  const int ch = img.channels();
  for (int y = r.y; y < r.bottom(); ++y) {
    auto src = img.data().subspan(img.index(r.x, y), static_cast<std::size_t>(r.width) * ch);
    auto dst = out.data().subspan(out.index(r.x - window.x, y - window.y),
                                  static_cast<std::size_t>(r.width) * ch);
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return out;
}

RasterImage crop(const RasterImage& img, Rect window);
BinaryMask crop(const BinaryMask& mask, Rect window);
LabelMask crop(const LabelMask& mask, Rect window);

/// Physical area to (real-valued) pixel count: area / mpp².
double area_um2_to_pixels(double area_um2, double mpp);

/// Maps a level-0 rectangle onto a pyramid level, rounding outward.
Rect scale_rect_down(const Rect& level0, int factor);

}  // namespace episeg
