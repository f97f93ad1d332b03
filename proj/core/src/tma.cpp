#include "episeg/tma.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace episeg {

void ExtractorConfig::validate() const {
  if (min_region_px < 1) throw InvalidArgument("extractor min_region_px must be >= 1");
  if (!(max_median_deviation >= 0.0)) {
    throw InvalidArgument("extractor max_median_deviation must be >= 0");
  }
  if (lowres_max_width < 1) throw InvalidArgument("extractor lowres_max_width must be >= 1");
}

std::size_t detection_level(const PyramidImage& slide, const ExtractorConfig& cfg) {
  for (std::size_t k = 0; k < slide.level_count(); ++k) {
    if (slide.level(k).width() <= cfg.lowres_max_width) return k;
  }
  return slide.level_count() - 1;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<CoreRegion> extract_cores(const PyramidImage& slide, const ExtractorConfig& cfg) {
  cfg.validate();
  const std::size_t level = detection_level(slide, cfg);
  const RasterImage& img = slide.level(level);
  const int f = slide.factor(level);
  const ComponentMap cc = connected_components(tissue_mask(img, cfg.tissue), Connectivity::kEight);

  std::vector<const Region*> kept;
  for (const auto& r : cc.regions) {
    if (r.pixel_count >= cfg.min_region_px) kept.push_back(&r);
  }
  if (kept.empty()) return {};

  auto diameter = [](const Region& r) {
    return 2.0 * std::sqrt(static_cast<double>(r.pixel_count) / std::numbers::pi);
  };
  std::vector<double> areas, diameters;
  for (const Region* r : kept) {
    areas.push_back(static_cast<double>(r->pixel_count));
    diameters.push_back(diameter(*r));
  }
  const double med_area = median(areas);
  const double med_diam = median(diameters);

  const Rect level0_bounds = slide.level(0).bounds();
  std::vector<CoreRegion> cores;
  for (const Region* r : kept) {
    const double area_dev = std::abs(static_cast<double>(r->pixel_count) - med_area) / med_area;
    const double diam_dev = std::abs(diameter(*r) - med_diam) / med_diam;
    if (area_dev > cfg.max_median_deviation || diam_dev > cfg.max_median_deviation) continue;
    CoreRegion core;
    core.id = static_cast<int>(cores.size());
    core.bbox = intersect({r->bbox.x * f, r->bbox.y * f, r->bbox.width * f, r->bbox.height * f},
                          level0_bounds);
    core.centroid = {(r->centroid_x() + 0.5) * f, (r->centroid_y() + 0.5) * f};
    core.area_px = r->pixel_count;
    core.equiv_diameter_px = diameter(*r);
    core.detection_factor = f;
    cores.push_back(core);
  }
  return cores;
}

Pairing pair_cores(const std::vector<CoreRegion>& he, const std::vector<CoreRegion>& ck,
                   std::optional<double> max_dist) {
  Pairing out;
  double limit = 0.0;
  if (max_dist) {
    limit = *max_dist;
  } else if (!he.empty()) {
    std::vector<double> d;
    for (const auto& c : he) d.push_back(c.equiv_diameter_level0());
    limit = 0.5 * median(d);
  }
  auto dist = [](const CoreRegion& a, const CoreRegion& b) {
    return std::hypot(a.centroid.x - b.centroid.x, a.centroid.y - b.centroid.y);
  };
  // Nearest unmatched partner; ties go to the lower index.
  auto nearest = [&](const CoreRegion& from, const std::vector<CoreRegion>& to,
                     const std::vector<char>& taken) {
    int best = -1;
    double best_d = 0.0;
    for (std::size_t j = 0; j < to.size(); ++j) {
      if (taken[j]) continue;
      const double d = dist(from, to[j]);
      if (best < 0 || d < best_d) {
        best = static_cast<int>(j);
        best_d = d;
      }
    }
    return best;
  };

  // Each round resolves every mutual-nearest pair of the remaining cores at
  // once, so the result does not depend on iteration order. A mutual pair
  // that is too far apart leaves both cores unmatched: neither has a closer
  // candidate.
  std::vector<char> he_taken(he.size(), 0), ck_taken(ck.size(), 0);
  std::vector<std::pair<int, int>> matched;
  for (;;) {
    std::vector<std::pair<int, int>> mutual;
    for (std::size_t i = 0; i < he.size(); ++i) {
      if (he_taken[i]) continue;
      const int j = nearest(he[i], ck, ck_taken);
      if (j >= 0 && nearest(ck[j], he, he_taken) == static_cast<int>(i)) {
        mutual.emplace_back(static_cast<int>(i), j);
      }
    }
    if (mutual.empty()) break;
    for (auto [i, j] : mutual) {
      he_taken[i] = 1;
      ck_taken[j] = 1;
      if (dist(he[i], ck[j]) <= limit) matched.emplace_back(i, j);
    }
  }
  std::sort(matched.begin(), matched.end());
  for (auto [i, j] : matched) {
    CorePair p;
    p.he = he[i];
    p.ck = ck[j];
    out.pairs.push_back(std::move(p));
  }
  for (std::size_t i = 0; i < he.size(); ++i) {
    if (!he_taken[i]) out.unmatched_he.push_back(he[i]);
  }
  for (std::size_t j = 0; j < ck.size(); ++j) {
    if (!ck_taken[j]) out.unmatched_ck.push_back(ck[j]);
  }
  return out;
}

Rect pair_window_level0(const CorePair& pair, int align) {
  if (align < 1) throw InvalidArgument("alignment must be >= 1");
  const Rect u = unite(pair.he.bbox, pair.ck.bbox);
  auto down = [&](int v) { return (v >= 0 ? v / align : -((-v + align - 1) / align)) * align; };
  auto up = [&](int v) { return -down(-v); };
  const int x0 = down(u.x), y0 = down(u.y);
  return {x0, y0, up(u.right()) - x0, up(u.bottom()) - y0};
}

CorePair extract_pair_rasters(const PyramidImage& slide_he, const PyramidImage& slide_ck,
                              CorePair pair, int level_factor, int align) {
  const RasterImage& he = slide_he.level_for_factor(level_factor);
  const RasterImage& ck = slide_ck.level_for_factor(level_factor);
  if (std::abs(he.mpp() - ck.mpp()) > 1e-9 * he.mpp()) {
    throw InvalidArgument("HE and CK levels have different mpp");
  }
  pair.level_factor = level_factor;
  pair.level_rect = scale_rect_down(pair_window_level0(pair, align), level_factor);
  pair.he_raster = RasterImage(crop_padded_grid<std::uint8_t>(he, pair.level_rect, 255));
  pair.ck_raster = RasterImage(crop_padded_grid<std::uint8_t>(ck, pair.level_rect, 255));
  return pair;
}

}  // namespace episeg
