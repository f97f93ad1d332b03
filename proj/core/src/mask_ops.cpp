#include "episeg/mask_ops.hpp"

#include <algorithm>
#include <cmath>

namespace episeg {

ComponentMap connected_components(const BinaryMask& mask, Connectivity connectivity) {
  const int w = mask.width(), h = mask.height();
  ComponentMap out{Grid<std::int32_t>(w, h, 1, mask.mpp(), 0), {}};
  std::vector<std::pair<int, int>> stack;
  const bool eight = connectivity == Connectivity::kEight;

  for (int y0 = 0; y0 < h; ++y0) {
    for (int x0 = 0; x0 < w; ++x0) {
      if (!mask.get(x0, y0) || out.labels(x0, y0) != 0) continue;
      Region region;
      region.label = static_cast<int>(out.regions.size()) + 1;
      int min_x = x0, max_x = x0, min_y = y0, max_y = y0;
      out.labels(x0, y0) = region.label;
      stack.assign(1, {x0, y0});
      while (!stack.empty()) {
        const auto [x, y] = stack.back();
        stack.pop_back();
        ++region.pixel_count;
        region.sum_x += x;
        region.sum_y += y;
        min_x = std::min(min_x, x);
        max_x = std::max(max_x, x);
        min_y = std::min(min_y, y);
        max_y = std::max(max_y, y);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if ((dx == 0 && dy == 0) || (!eight && dx != 0 && dy != 0)) continue;
            const int nx = x + dx, ny = y + dy;
            if (!mask.contains(nx, ny) || !mask.get(nx, ny) || out.labels(nx, ny) != 0) continue;
            out.labels(nx, ny) = region.label;
            stack.emplace_back(nx, ny);
          }
        }
      }
      region.bbox = {min_x, min_y, max_x - min_x + 1, max_y - min_y + 1};
      out.regions.push_back(region);
    }
  }
  return out;
}

void MorphologyConfig::validate() const {
  if (!(fill_hole_below_um2 >= 0.0) || !(remove_object_below_um2 >= 0.0)) {
    throw InvalidArgument("morphology area thresholds must be >= 0");
  }
}

namespace {

BinaryMask complement(const BinaryMask& m) {
  BinaryMask out = m;
  for (auto& v : out.storage()) v = v ? 0 : 1;
  return out;
}

bool touches_border(const Rect& r, int w, int h) {
  return r.x == 0 || r.y == 0 || r.right() == w || r.bottom() == h;
}

}  // namespace

BinaryMask clean_epithelium_mask(const BinaryMask& mask, const MorphologyConfig& cfg) {
  cfg.validate();
  const double hole_px = area_um2_to_pixels(cfg.fill_hole_below_um2, mask.mpp());
  const double object_px = area_um2_to_pixels(cfg.remove_object_below_um2, mask.mpp());
  const int w = mask.width(), h = mask.height();

  BinaryMask out = mask;
  const ComponentMap holes = connected_components(complement(mask), Connectivity::kFour);
  std::vector<char> fill(holes.regions.size() + 1, 0);
  for (const auto& r : holes.regions) {
    fill[r.label] = !touches_border(r.bbox, w, h) && static_cast<double>(r.pixel_count) < hole_px;
  }
  for (std::size_t i = 0; i < out.pixel_count(); ++i) {
    if (fill[holes.labels.data()[i]]) out.data()[i] = 1;
  }

  const ComponentMap objects = connected_components(out, Connectivity::kEight);
  std::vector<char> drop(objects.regions.size() + 1, 0);
  for (const auto& r : objects.regions) {
    drop[r.label] = static_cast<double>(r.pixel_count) < object_px;
  }
  for (std::size_t i = 0; i < out.pixel_count(); ++i) {
    if (drop[objects.labels.data()[i]]) out.data()[i] = 0;
  }
  return out;
}

BinaryMask rasterize(const AnnotationSet& annotations, AnnotationLabel label, int width, int height,
                     int level_factor, double mpp, int origin_x, int origin_y) {
  annotations.validate();
  if (level_factor < 1) throw InvalidArgument("rasterize level_factor must be >= 1");
  BinaryMask out(width, height, mpp);
  std::vector<double> crossings;
  std::vector<Point> v;
  for (const auto& poly : annotations.polygons) {
    if (poly.label != label) continue;
    v.clear();
    double min_y = INFINITY, max_y = -INFINITY;
    for (const auto& p : poly.vertices) {
      v.push_back({p.x / level_factor - origin_x, p.y / level_factor - origin_y});
      min_y = std::min(min_y, v.back().y);
      max_y = std::max(max_y, v.back().y);
    }
    const int y_begin = std::max(0, static_cast<int>(std::floor(min_y - 0.5)));
    const int y_end = std::min(height, static_cast<int>(std::ceil(max_y + 0.5)));
    for (int y = y_begin; y < y_end; ++y) {
      const double yc = y + 0.5;
      crossings.clear();
      for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
        if ((v[i].y > yc) != (v[j].y > yc)) {
          crossings.push_back(v[j].x + (yc - v[j].y) * (v[i].x - v[j].x) / (v[i].y - v[j].y));
        }
      }
      std::sort(crossings.begin(), crossings.end());
      // Centers in [c_2k, c_2k+1) are inside.
      for (std::size_t k = 0; k + 1 < crossings.size(); k += 2) {
        const double lo = std::ceil(crossings[k] - 0.5);
        const double hi = std::ceil(crossings[k + 1] - 0.5);
        const int x0 = static_cast<int>(std::clamp(lo, 0.0, static_cast<double>(width)));
        const int x1 = static_cast<int>(std::clamp(hi, 0.0, static_cast<double>(width)));
        for (int x = x0; x < x1; ++x) out.set(x, y, true);
      }
    }
  }
  return out;
}

namespace {

template <typename Op>
BinaryMask combine(const BinaryMask& a, const BinaryMask& b, Op op) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw InvalidArgument("mask dimensions differ");
  }
  BinaryMask out(a.width(), a.height(), a.mpp());
  for (std::size_t i = 0; i < a.pixel_count(); ++i) {
    out.data()[i] = op(a.data()[i] != 0, b.data()[i] != 0) ? 1 : 0;
  }
  return out;
}

}  // namespace

BinaryMask mask_subtract(const BinaryMask& a, const BinaryMask& b) {
  return combine(a, b, [](bool x, bool y) { return x && !y; });
}

BinaryMask mask_intersect(const BinaryMask& a, const BinaryMask& b) {
  return combine(a, b, [](bool x, bool y) { return x && y; });
}

BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b) {
  return combine(a, b, [](bool x, bool y) { return x || y; });
}

BinaryMask tissue_mask(const RasterImage& img, const TissueConfig& cfg) {
  if (img.channels() != 3) throw InvalidArgument("tissue_mask needs an RGB image");
  BinaryMask out(img.width(), img.height(), img.mpp());
  auto src = img.data();
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    const int r = src[3 * i], g = src[3 * i + 1], b = src[3 * i + 2];
    const int spread = std::max({r, g, b}) - std::min({r, g, b});
    // mean < max_mean  <=>  sum < 3 * max_mean
    out.data()[i] = (r + g + b < 3 * cfg.max_mean && spread > cfg.min_spread) ? 1 : 0;
  }
  return out;
}

}  // namespace episeg
