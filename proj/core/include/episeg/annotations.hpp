#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace episeg {

enum class AnnotationLabel { kBenign, kInSitu, kExclude, kCase };

/// GeoJSON classification names: "Benign", "InSitu", "Exclude", "Case".
std::string_view to_string(AnnotationLabel label) noexcept;
std::optional<AnnotationLabel> parse_annotation_label(std::string_view name) noexcept;

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct Polygon {
  AnnotationLabel label = AnnotationLabel::kBenign;
  std::optional<std::string> case_id;
  std::vector<Point> vertices;  // level-0 pixel coordinates, open ring

  friend bool operator==(const Polygon&, const Polygon&) = default;
};

struct AnnotationSet {
  std::vector<Polygon> polygons;

  /// Throws FormatError on a polygon with fewer than 3 vertices.
  void validate() const;
  friend bool operator==(const AnnotationSet&, const AnnotationSet&) = default;
};

/// Even-odd point-in-polygon test on the closed ring.
bool contains(const Polygon& polygon, Point p) noexcept;

/// Reads a GeoJSON FeatureCollection; only the first ring of each Polygon is
/// used and a closing vertex equal to the first is dropped.
AnnotationSet read_geojson(const std::filesystem::path& path);
AnnotationSet parse_geojson(std::string_view text);
std::string to_geojson(const AnnotationSet& annotations);
void write_geojson(const AnnotationSet& annotations, const std::filesystem::path& path);

}  // namespace episeg
