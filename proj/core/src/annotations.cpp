#include "episeg/annotations.hpp"

#include <fstream>
#include <sstream>

#include "episeg/error.hpp"
#include <nlohmann/json.hpp>

namespace episeg {

using nlohmann::json;

std::string_view to_string(AnnotationLabel label) noexcept {
  switch (label) {
    case AnnotationLabel::kBenign: return "Benign";
    case AnnotationLabel::kInSitu: return "InSitu";
    case AnnotationLabel::kExclude: return "Exclude";
    case AnnotationLabel::kCase: return "Case";
  }
  return "";
}

std::optional<AnnotationLabel> parse_annotation_label(std::string_view name) noexcept {
  for (auto l : {AnnotationLabel::kBenign, AnnotationLabel::kInSitu, AnnotationLabel::kExclude,
                 AnnotationLabel::kCase}) {
    if (to_string(l) == name) return l;
  }
  return std::nullopt;
}

void AnnotationSet::validate() const {
  for (std::size_t i = 0; i < polygons.size(); ++i) {
    if (polygons[i].vertices.size() < 3) {
      throw FormatError("annotation polygon " + std::to_string(i) + " has fewer than 3 vertices");
    }
  }
}

bool contains(const Polygon& polygon, Point p) noexcept {
  const auto& v = polygon.vertices;
  bool inside = false;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    if ((v[i].y > p.y) != (v[j].y > p.y)) {
      const double x = v[j].x + (p.y - v[j].y) * (v[i].x - v[j].x) / (v[i].y - v[j].y);
      if (p.x < x) inside = !inside;
    }
  }
  return inside;
}

AnnotationSet parse_geojson(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed GeoJSON: ") + e.what());
  }
  if (doc.value("type", "") != "FeatureCollection" || !doc.contains("features") ||
      !doc["features"].is_array()) {
    throw FormatError("GeoJSON root must be a FeatureCollection");
  }
  AnnotationSet set;
  std::size_t index = 0;
  for (const auto& feature : doc["features"]) {
    const std::string where = "feature " + std::to_string(index++);
    try {
      const auto& props = feature.at("properties");
      const auto name = props.at("classification").at("name").get<std::string>();
      const auto label = parse_annotation_label(name);
      if (!label) throw FormatError(where + ": unknown classification '" + name + "'");
      Polygon poly;
      poly.label = *label;
      if (props.contains("case_id") && !props["case_id"].is_null()) {
        const auto& id = props["case_id"];
        poly.case_id = id.is_string() ? id.get<std::string>() : id.dump();
      }
      const auto& geometry = feature.at("geometry");
      if (geometry.at("type").get<std::string>() != "Polygon") {
        throw FormatError(where + ": geometry must be a Polygon");
      }
      const auto& rings = geometry.at("coordinates");
      if (!rings.is_array() || rings.empty()) throw FormatError(where + ": polygon has no ring");
      for (const auto& pt : rings.at(0)) {
        poly.vertices.push_back({pt.at(0).get<double>(), pt.at(1).get<double>()});
      }
      if (poly.vertices.size() > 1 && poly.vertices.front() == poly.vertices.back()) {
        poly.vertices.pop_back();
      }
      if (poly.vertices.size() < 3) throw FormatError(where + ": polygon has fewer than 3 vertices");
      set.polygons.push_back(std::move(poly));
    } catch (const json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
  return set;
}

AnnotationSet read_geojson(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open annotation file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_geojson(ss.str());
}

std::string to_geojson(const AnnotationSet& annotations) {
  json features = json::array();
  for (const auto& poly : annotations.polygons) {
    json ring = json::array();
    for (const auto& p : poly.vertices) ring.push_back({p.x, p.y});
    if (!poly.vertices.empty()) ring.push_back({poly.vertices.front().x, poly.vertices.front().y});
    json props;
    props["classification"] = {{"name", std::string(to_string(poly.label))}};
    if (poly.case_id) props["case_id"] = *poly.case_id;
    features.push_back({{"type", "Feature"},
                        {"properties", props},
                        {"geometry", {{"type", "Polygon"}, {"coordinates", json::array({ring})}}}});
  }
  json doc = {{"type", "FeatureCollection"}, {"features", features}};
  return doc.dump() + "\n";
}

void write_geojson(const AnnotationSet& annotations, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out << to_geojson(annotations);
}

}  // namespace episeg
