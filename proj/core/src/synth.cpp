#include "episeg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "episeg/dataset.hpp"
#include "episeg/image_io.hpp"
#include "episeg/parallel.hpp"
#include "episeg/random.hpp"
#include "episeg/stain.hpp"

namespace episeg {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

void SynthSpec::validate() const {
  std::vector<std::string> bad;
  if (rows < 1 || cols < 1) bad.push_back("grid must have at least one row and column");
  if (core_diameter < 64) bad.push_back("core_diameter must be >= 64");
  if (spacing != 0 && spacing <= core_diameter) bad.push_back("spacing must exceed core_diameter");
  if (margin < 0) bad.push_back("margin must be >= 0");
  if (structures.benign_glands < 0 || structures.insitu_ducts < 0 || structures.invasive_nests < 0) {
    bad.push_back("structure counts must be >= 0");
  }
  if (!(ck_false_negative_rate >= 0.0 && ck_false_negative_rate <= 1.0)) {
    bad.push_back("ck_false_negative_rate must be in [0, 1]");
  }
  if (!(noise_sd >= 0.0)) bad.push_back("noise_sd must be >= 0");
  if (!(mpp > 0.0)) bad.push_back("mpp must be > 0");
  if (factors.empty() || factors.front() != 1 || !std::is_sorted(factors.begin(), factors.end()) ||
      std::adjacent_find(factors.begin(), factors.end()) != factors.end()) {
    bad.push_back("factors must start at 1 and increase strictly");
  }
  if (cores_per_case < 1) bad.push_back("cores_per_case must be >= 1");
  for (int k : exclude_cores) {
    if (k < 0 || k >= rows * cols) bad.push_back("exclude_cores index out of range");
  }
  if (!bad.empty()) {
    std::string msg = "invalid synth spec:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw InvalidArgument(msg);
  }
}

double SynthStructure::bounding_radius() const noexcept {
  return cls == TissueClass::kInvasive ? radius * 1.12 : radius;
}

bool SynthStructure::covers(double x, double y) const noexcept {
  const double dx = x - cx, dy = y - cy;
  const double d = std::hypot(dx, dy);
  switch (cls) {
    case TissueClass::kBenign: return d < radius && d >= inner_radius;
    case TissueClass::kInSitu: return d < radius;
    case TissueClass::kInvasive:
      return d < radius * (1.0 + 0.12 * std::sin(3.0 * std::atan2(dy, dx) + phase));
    default: return false;
  }
}

bool SynthStructure::in_lumen(double x, double y) const noexcept {
  return cls == TissueClass::kBenign && std::hypot(x - cx, y - cy) < inner_radius;
}

namespace {

// Per-pixel material; index into the colour tables below.
enum Material : std::uint8_t {
  kGlass,
  kStroma,
  kLumen,
  kInvasiveEpi,
  kBenignEpi,
  kInSituEpi,
  kUnstainedEpi,  // epithelium missed by the CK stain
  kMaterialCount
};

constexpr std::array<std::array<std::uint8_t, 3>, kMaterialCount> kHeColors{{
    {255, 255, 255},
    {232, 178, 205},
    {246, 238, 242},
    {150, 72, 150},
    {196, 120, 176},
    {168, 92, 168},
    {150, 72, 150},  // unused on the HE side; epithelium keeps its class colour
}};

// (hematoxylin, DAB) optical-density concentrations of the CK render.
constexpr std::array<std::array<double, 2>, kMaterialCount> kCkConcentrations{{
    {0.0, 0.0},
    {0.10, 0.0},
    {0.02, 0.0},
    {0.12, 0.5},
    {0.12, 0.5},
    {0.12, 0.5},
    {0.12, 0.0},
}};

Polygon circle_polygon(AnnotationLabel label, double cx, double cy, double r, int n) {
  Polygon p;
  p.label = label;
  for (int k = 0; k < n; ++k) {
    const double t = 2.0 * std::numbers::pi * k / n;
    p.vertices.push_back({cx + r * std::cos(t), cy + r * std::sin(t)});
  }
  return p;
}

std::vector<SynthStructure> place_structures(const SynthSpec& spec, const SynthCore& core, Rng& rng) {
  std::vector<SynthStructure> out;
  auto place = [&](SynthStructure s) {
    const double reach = core.radius - s.bounding_radius() - 10.0;
    if (reach <= 0.0) {
      throw GenerationError("structure of radius " + std::to_string(s.radius) +
                            " does not fit core " + std::to_string(core.index));
    }
    for (int attempt = 0; attempt < 500; ++attempt) {
      // Uniform over the disc of admissible centres.
      const double r = reach * std::sqrt(rng.uniform());
      const double t = rng.uniform(0.0, 2.0 * std::numbers::pi);
      s.cx = core.center.x + r * std::cos(t);
      s.cy = core.center.y + r * std::sin(t);
      const bool clear = std::all_of(out.begin(), out.end(), [&](const SynthStructure& o) {
        return std::hypot(s.cx - o.cx, s.cy - o.cy) >= s.bounding_radius() + o.bounding_radius() + 12.0;
      });
      if (clear) {
        out.push_back(s);
        return;
      }
    }
    throw GenerationError("cannot place " + std::to_string(out.size() + 1) +
                          " non-overlapping structures in core " + std::to_string(core.index));
  };
  for (int i = 0; i < spec.structures.benign_glands; ++i) {
    SynthStructure s;
    s.cls = TissueClass::kBenign;
    s.radius = rng.uniform(34.0, 40.0);
    s.inner_radius = s.radius - 13.0;
    s.ck_negative = rng.bernoulli(spec.ck_false_negative_rate);
    place(s);
  }
  for (int i = 0; i < spec.structures.insitu_ducts; ++i) {
    SynthStructure s;
    s.cls = TissueClass::kInSitu;
    s.radius = rng.uniform(30.0, 40.0);
    s.ck_negative = rng.bernoulli(spec.ck_false_negative_rate);
    place(s);
  }
  for (int i = 0; i < spec.structures.invasive_nests; ++i) {
    SynthStructure s;
    s.cls = TissueClass::kInvasive;
    s.radius = rng.uniform(18.0, 26.0);
    s.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    s.ck_negative = rng.bernoulli(spec.ck_false_negative_rate);
    place(s);
  }
  return out;
}

Material material_at(const SynthCore& core, double x, double y, TissueClass& cls) {
  cls = TissueClass::kBackground;
  if (std::hypot(x - core.center.x, y - core.center.y) >= core.radius) return kGlass;
  for (const auto& s : core.structures) {
    if (s.covers(x, y)) {
      cls = s.cls;
      if (s.ck_negative) return kUnstainedEpi;
      switch (s.cls) {
        case TissueClass::kBenign: return kBenignEpi;
        case TissueClass::kInSitu: return kInSituEpi;
        default: return kInvasiveEpi;
      }
    }
    if (s.in_lumen(x, y)) return kLumen;
  }
  return kStroma;
}

void add_noise(RasterImage& img, double sd, std::uint64_t seed, int threads) {
  if (sd <= 0.0) return;
  parallel_for(static_cast<std::size_t>(img.height()), threads, [&](std::size_t y) {
    Rng rng(derive_seed(seed, {y}));
    auto row = img.data().subspan(y * img.width() * img.channels(),
                                  static_cast<std::size_t>(img.width()) * img.channels());
    for (auto& v : row) {
      v = static_cast<std::uint8_t>(std::clamp(std::round(v + sd * rng.normal()), 0.0, 255.0));
    }
  });
}

}  // namespace

std::array<std::array<std::uint8_t, 3>, kClassCount> synth_he_class_colors() noexcept {
  return {kHeColors[kStroma], kHeColors[kInvasiveEpi], kHeColors[kBenignEpi], kHeColors[kInSituEpi]};
}

SynthResult generate(const SynthSpec& spec, int threads) {
  spec.validate();
  const int spacing = spec.effective_spacing();
  const int d = spec.core_diameter;
  const int width = 2 * spec.margin + (spec.cols - 1) * spacing + d;
  const int height = 2 * spec.margin + (spec.rows - 1) * spacing + d;

  SynthResult out;
  const int n = spec.rows * spec.cols;
  out.cores.resize(static_cast<std::size_t>(n));
  const int n_cases = (n + spec.cores_per_case - 1) / spec.cores_per_case;
  for (int k = 0; k < n; ++k) {
    SynthCore& c = out.cores[static_cast<std::size_t>(k)];
    Rng rng(derive_seed(spec.seed, {0x636f7265, static_cast<std::uint64_t>(k)}));
    c.index = k;
    c.row = k / spec.cols;
    c.col = k % spec.cols;
    const double jitter = 0.04 * d;
    c.center = {spec.margin + c.col * spacing + d / 2.0 + rng.uniform(-jitter, jitter),
                spec.margin + c.row * spacing + d / 2.0 + rng.uniform(-jitter, jitter)};
    c.radius = d / 2.0 * rng.uniform(0.96, 1.0);
    const int x0 = static_cast<int>(std::floor(c.center.x - c.radius)) - 1;
    const int y0 = static_cast<int>(std::floor(c.center.y - c.radius)) - 1;
    const int x1 = static_cast<int>(std::ceil(c.center.x + c.radius)) + 1;
    const int y1 = static_cast<int>(std::ceil(c.center.y + c.radius)) + 1;
    c.bbox = intersect({x0, y0, x1 - x0, y1 - y0}, {0, 0, width, height});
    c.case_id = "case_" + std::to_string(k / spec.cores_per_case + 1);
    c.excluded = std::find(spec.exclude_cores.begin(), spec.exclude_cores.end(), k) !=
                 spec.exclude_cores.end();
    c.structures = place_structures(spec, c, rng);
  }

  // Material map over the whole slide; cores own disjoint boxes.
  Grid<std::uint8_t> material(width, height, 1, spec.mpp, kGlass);
  out.truth = LabelMask(width, height, spec.mpp);
  parallel_for(out.cores.size(), threads, [&](std::size_t k) {
    const SynthCore& c = out.cores[k];
    for (int y = c.bbox.y; y < c.bbox.bottom(); ++y) {
      for (int x = c.bbox.x; x < c.bbox.right(); ++x) {
        TissueClass cls;
        material(x, y) = material_at(c, x + 0.5, y + 0.5, cls);
        out.truth.set(x, y, cls);
      }
    }
  });

  const StainMatrix stains = StainMatrix::hdab_default();
  std::array<std::array<std::uint8_t, 3>, kMaterialCount> ck_colors{};
  for (int m = 0; m < kMaterialCount; ++m) {
    RealRaster conc(1, 1, 3, spec.mpp, 0.0);
    conc(0, 0, 0) = kCkConcentrations[m][0];
    conc(0, 0, 1) = kCkConcentrations[m][1];
    const RasterImage px = render_concentrations(conc, stains);
    ck_colors[m] = {px(0, 0, 0), px(0, 0, 1), px(0, 0, 2)};
  }

  RasterImage he(width, height, 3, spec.mpp, 255);
  RasterImage ck(width, height, 3, spec.mpp, 255);
  for (std::size_t i = 0; i < material.pixel_count(); ++i) {
    const std::uint8_t m = material.data()[i];
    for (int c = 0; c < 3; ++c) {
      he.data()[3 * i + c] = kHeColors[m][c];
      ck.data()[3 * i + c] = ck_colors[m][c];
    }
  }
  // CK content moves by the global shift: ck(x + dx, y + dy) = content(x, y).
  ck = RasterImage(translate_grid<std::uint8_t>(ck, spec.shift_dx, spec.shift_dy, 255));
  add_noise(he, spec.noise_sd, derive_seed(spec.seed, {0x6865}), threads);
  add_noise(ck, spec.noise_sd, derive_seed(spec.seed, {0x636b}), threads);

  out.he = PyramidImage::build(he, spec.factors);
  out.ck = PyramidImage::build(ck, spec.factors);

  for (const auto& c : out.cores) {
    Polygon cp = circle_polygon(AnnotationLabel::kCase, c.center.x, c.center.y, c.radius + 8.0, 48);
    cp.case_id = c.case_id;
    out.annotations.polygons.push_back(std::move(cp));
    if (c.excluded) {
      out.annotations.polygons.push_back(
          circle_polygon(AnnotationLabel::kExclude, c.center.x, c.center.y, c.radius + 12.0, 48));
    }
    for (const auto& s : c.structures) {
      if (s.cls == TissueClass::kInvasive) continue;
      const auto label = s.cls == TissueClass::kBenign ? AnnotationLabel::kBenign : AnnotationLabel::kInSitu;
      out.annotations.polygons.push_back(circle_polygon(label, s.cx, s.cy, s.radius + 4.0, 32));
    }
  }

  Rng case_rng(derive_seed(spec.seed, {0x63617365}));
  for (int k = 0; k < n_cases; ++k) {
    const double u = case_rng.uniform();
    const char* subtype = u < 0.7 ? "NST" : (u < 0.85 ? "Lobular" : "Other");
    out.cases.push_back({"case_" + std::to_string(k + 1), subtype, std::to_string(case_rng.between(1, 3))});
  }
  return out;
}

void write_synth(const SynthResult& result, const fs::path& dir) {
  fs::create_directories(dir);
  write_pyramid(result.he, dir / "he");
  write_pyramid(result.ck, dir / "ck");
  write_geojson(result.annotations, dir / "annotations.geojson");
  write_label_mask(result.truth, dir / "truth");

  std::ofstream cases(dir / "cases.csv", std::ios::binary | std::ios::trunc);
  cases << "case_id,subtype,grade\n";
  for (const auto& c : result.cases) cases << c.case_id << ',' << c.subtype << ',' << c.grade << '\n';
  if (!cases) throw InvalidArgument("cannot write " + (dir / "cases.csv").string());

  ordered_json cores = ordered_json::array();
  for (const auto& c : result.cores) {
    ordered_json structs = ordered_json::array();
    for (const auto& s : c.structures) {
      structs.push_back({{"class", class_name(s.cls)},
                         {"cx", s.cx},
                         {"cy", s.cy},
                         {"radius", s.radius},
                         {"ck_negative", s.ck_negative}});
    }
    cores.push_back({{"index", c.index},
                     {"row", c.row},
                     {"col", c.col},
                     {"center", {c.center.x, c.center.y}},
                     {"radius", c.radius},
                     {"bbox", {c.bbox.x, c.bbox.y, c.bbox.width, c.bbox.height}},
                     {"case_id", c.case_id},
                     {"excluded", c.excluded},
                     {"structures", structs}});
  }
  std::ofstream out(dir / "cores.json", std::ios::binary | std::ios::trunc);
  out << ordered_json{{"cores", cores}}.dump(2) << '\n';
  if (!out) throw InvalidArgument("cannot write " + (dir / "cores.json").string());
}

}  // namespace episeg
