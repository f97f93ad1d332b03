#include "episeg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "episeg/image_io.hpp"
#include "episeg/stain.hpp"
#include <nlohmann/json.hpp>

namespace episeg {

namespace fs = std::filesystem;

namespace {

void require_same_shape(const BinaryMask& a, const BinaryMask& b, const char* what) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw InvalidArgument(std::string("ground truth: ") + what + " mask dimensions differ");
  }
}

}  // namespace

GroundTruth build_ground_truth(const BinaryMask& dab, const BinaryMask& benign,
                               const BinaryMask& insitu, const BinaryMask& exclude,
                               const GroundTruthConfig& cfg) {
  require_same_shape(dab, benign, "benign");
  require_same_shape(dab, insitu, "in situ");
  require_same_shape(dab, exclude, "exclude");
  GroundTruth out{LabelMask(dab.width(), dab.height(), dab.mpp()), false, 0};
  for (std::size_t i = 0; i < dab.pixel_count(); ++i) {
    const bool is_b = benign.data()[i] != 0;
    const bool is_s = insitu.data()[i] != 0;
    if (is_b && is_s) ++out.annotation_overlap_px;
    if (dab.data()[i] == 0 || exclude.data()[i] != 0) continue;
    TissueClass c = TissueClass::kInvasive;
    if (is_b && is_s) {
      c = cfg.insitu_precedence ? TissueClass::kInSitu : TissueClass::kBenign;
    } else if (is_s) {
      c = TissueClass::kInSitu;
    } else if (is_b) {
      c = TissueClass::kBenign;
    }
    out.labels.data()[i] = static_cast<std::uint8_t>(c);
  }
  out.excluded = exclude.get(dab.width() / 2, dab.height() / 2);
  return out;
}

LabelMask downsample_majority(const LabelMask& mask, int factor) {
  if (factor < 1) throw InvalidArgument("majority downsample factor must be >= 1");
  if (factor == 1) return mask;
  const int ow = (mask.width() + factor - 1) / factor;
  const int oh = (mask.height() + factor - 1) / factor;
  LabelMask out(ow, oh, mask.mpp() * factor);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      std::array<int, kClassCount> votes{};
      for (int y = oy * factor; y < std::min((oy + 1) * factor, mask.height()); ++y)
        for (int x = ox * factor; x < std::min((ox + 1) * factor, mask.width()); ++x)
          ++votes[mask(x, y)];
      const auto best = std::max_element(votes.begin(), votes.end()) - votes.begin();
      out(ox, oy) = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

LabelMask resize_nearest(const LabelMask& mask, int width, int height) {
  LabelMask out(width, height, mask.mpp() * mask.width() / width);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(mask.height() - 1,
                            static_cast<int>((y + 0.5) * mask.height() / height));
    for (int x = 0; x < width; ++x) {
      const int sx =
          std::min(mask.width() - 1, static_cast<int>((x + 0.5) * mask.width() / width));
      out(x, y) = mask(sx, sy);
    }
  }
  return out;
}

Grid<std::uint8_t> to_one_hot(const LabelMask& mask) {
  Grid<std::uint8_t> out(mask.width(), mask.height(), kClassCount, mask.mpp(), 0);
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) out(x, y, mask(x, y)) = 1;
  return out;
}

LabelMask from_one_hot(const Grid<std::uint8_t>& planes) {
  if (planes.channels() != kClassCount) throw InvalidArgument("one-hot raster needs 4 planes");
  LabelMask out(planes.width(), planes.height(), planes.mpp());
  for (int y = 0; y < planes.height(); ++y) {
    for (int x = 0; x < planes.width(); ++x) {
      int set = 0, code = 0;
      for (int c = 0; c < kClassCount; ++c) {
        if (planes(x, y, c) != 0) {
          ++set;
          code = c;
        }
      }
      if (set != 1) throw InvalidArgument("one-hot pixel does not have exactly one plane set");
      out(x, y) = static_cast<std::uint8_t>(code);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

void PatchGridConfig::validate() const {
  if (patch_size < 1) throw InvalidArgument("patch_size must be >= 1");
  if (!(overlap_fraction >= 0.0 && overlap_fraction < 1.0)) {
    throw InvalidArgument("overlap_fraction must be in [0, 1)");
  }
  if (!(min_tissue_fraction >= 0.0 && min_tissue_fraction <= 1.0)) {
    throw InvalidArgument("min_tissue_fraction must be in [0, 1]");
  }
}

int patch_stride(const PatchGridConfig& cfg) {
  cfg.validate();
  const int s = static_cast<int>(std::floor(cfg.patch_size * (1.0 - cfg.overlap_fraction) + 0.5));
  return std::max(1, s);
}

std::vector<int> axis_anchors(int dim, const PatchGridConfig& cfg) {
  const int stride = patch_stride(cfg);
  const int p = cfg.patch_size;
  if (dim <= p) return {0};
  std::vector<int> out;
  int a = 0;
  for (; a + p <= dim; a += stride) out.push_back(a);
  if (out.back() + p < dim) out.push_back(dim - p);
  return out;
}

std::vector<Anchor> patch_grid(int width, int height, const PatchGridConfig& cfg) {
  const auto xs = axis_anchors(width, cfg);
  const auto ys = axis_anchors(height, cfg);
  std::vector<Anchor> out;
  out.reserve(xs.size() * ys.size());
  for (int y : ys)
    for (int x : xs) out.push_back({x, y});
  return out;
}

std::string_view to_string(SetTag tag) noexcept {
  switch (tag) {
    case SetTag::kInSitu: return "insitu";
    case SetTag::kBenign: return "benign";
    case SetTag::kInvasive: return "invasive";
  }
  return "";
}

std::optional<SetTag> parse_set_tag(std::string_view name) noexcept {
  for (auto t : {SetTag::kInSitu, SetTag::kBenign, SetTag::kInvasive}) {
    if (to_string(t) == name) return t;
  }
  return std::nullopt;
}

SetTag assign_set(const LabelMask& gt) {
  bool benign = false;
  for (auto v : gt.data()) {
    if (v == static_cast<std::uint8_t>(TissueClass::kInSitu)) return SetTag::kInSitu;
    benign = benign || v == static_cast<std::uint8_t>(TissueClass::kBenign);
  }
  return benign ? SetTag::kBenign : SetTag::kInvasive;
}

std::vector<PatchRecord> cut_patches(const CorePair& pair, const LabelMask& gt,
                                     const PatchGridConfig& cfg, const PatchCutOptions& opt) {
  cfg.validate();
  const RasterImage& he = pair.he_raster;
  const RasterImage& ck = pair.ck_raster;
  if (he.empty() || ck.empty()) throw InvalidArgument("cut_patches needs core rasters attached");
  if (he.width() != ck.width() || he.height() != ck.height() || gt.width() != he.width() ||
      gt.height() != he.height()) {
    throw InvalidArgument("cut_patches: HE, CK and ground truth dimensions differ");
  }
  const int p = cfg.patch_size;
  std::vector<PatchRecord> out;
  for (const Anchor& a : patch_grid(he.width(), he.height(), cfg)) {
    const Rect window{a.x, a.y, p, p};
    RasterImage he_patch(crop_padded_grid<std::uint8_t>(he, window, 255));
    const double tissue =
        static_cast<double>(tissue_mask(he_patch, opt.tissue).count()) / (static_cast<double>(p) * p);
    if (tissue < cfg.min_tissue_fraction) continue;
    const RasterImage ck_patch(crop_padded_grid<std::uint8_t>(ck, window, 255));
    const ShiftVector residual = register_pair(he_patch, ck_patch, opt.registration_factor);
    LabelMask gt_patch(crop_padded_grid<std::uint8_t>(gt, window, 0));
    gt_patch = apply_shift(gt_patch, residual.inverse());

    PatchRecord rec;
    rec.set_tag = assign_set(gt_patch);
    rec.he = std::move(he_patch);
    rec.gt = std::move(gt_patch);
    rec.origin = {opt.slide, pair.he.id, pair.level_rect.x + a.x, pair.level_rect.y + a.y,
                  pair.level_factor > 0 ? pair.level_factor : 1};
    rec.shift_applied = residual;
    rec.tissue_fraction = tissue;
    out.push_back(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------------------

void AugmentationConfig::validate() const {
  for (double p : {p_flip, p_rot90, p_brightness, p_hue, p_saturation, p_shift, p_blur}) {
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("augmentation probabilities must be in [0, 1]");
  }
  if (brightness_range < 0 || hue_range_deg < 0 || saturation_range < 0 || shift_range_px < 0 ||
      blur_sigma_min < 0 || blur_sigma_max < blur_sigma_min) {
    throw InvalidArgument("augmentation magnitude ranges are invalid");
  }
}

AugmentationPlan plan_augmentation(const AugmentationConfig& cfg, std::uint64_t seed,
                                   const PatchOrigin& origin) {
  cfg.validate();
  Rng rng(derive_seed(seed, {hash_string(origin.slide), static_cast<std::uint64_t>(origin.core),
                             static_cast<std::uint64_t>(origin.x), static_cast<std::uint64_t>(origin.y),
                             static_cast<std::uint64_t>(origin.level_factor)}));
  AugmentationPlan plan;
  plan.flip = rng.bernoulli(cfg.p_flip);
  plan.flip_vertical = rng.bernoulli(0.5);
  plan.rot90 = rng.bernoulli(cfg.p_rot90);
  plan.rot_quarters = rng.between(1, 3);
  plan.brightness = rng.bernoulli(cfg.p_brightness);
  plan.brightness_factor = 1.0 + rng.uniform(-cfg.brightness_range, cfg.brightness_range);
  plan.hue = rng.bernoulli(cfg.p_hue);
  plan.hue_shift_deg = rng.uniform(-cfg.hue_range_deg, cfg.hue_range_deg);
  plan.saturation = rng.bernoulli(cfg.p_saturation);
  plan.saturation_factor = 1.0 + rng.uniform(-cfg.saturation_range, cfg.saturation_range);
  plan.shift = rng.bernoulli(cfg.p_shift);
  plan.shift_dx = rng.between(-cfg.shift_range_px, cfg.shift_range_px);
  plan.shift_dy = rng.between(-cfg.shift_range_px, cfg.shift_range_px);
  plan.blur = rng.bernoulli(cfg.p_blur);
  plan.blur_sigma = rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max);
  return plan;
}

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
}

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx > 0.0 ? d / mx : 0.0;
  if (d <= 0.0) {
    h = 0.0;
  } else if (mx == r) {
    h = 60.0 * std::fmod((g - b) / d, 6.0);
  } else if (mx == g) {
    h = 60.0 * ((b - r) / d + 2.0);
  } else {
    h = 60.0 * ((r - g) / d + 4.0);
  }
  if (h < 0.0) h += 360.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double c = v * s;
  const double hp = h / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r1 = 0, g1 = 0, b1 = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r1 = c; g1 = x; break;
    case 1: r1 = x; g1 = c; break;
    case 2: g1 = c; b1 = x; break;
    case 3: g1 = x; b1 = c; break;
    case 4: r1 = x; b1 = c; break;
    default: r1 = c; b1 = x; break;
  }
  const double m = v - c;
  r = r1 + m;
  g = g1 + m;
  b = b1 + m;
}

void adjust_hsv(RasterImage& img, double hue_shift, double sat_factor) {
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    auto px = img.data().subspan(3 * i, 3);
    double h, s, v;
    rgb_to_hsv(px[0] / 255.0, px[1] / 255.0, px[2] / 255.0, h, s, v);
    h = std::fmod(h + hue_shift + 360.0, 360.0);
    s = std::clamp(s * sat_factor, 0.0, 1.0);
    double r, g, b;
    hsv_to_rgb(h, s, v, r, g, b);
    px[0] = to_byte(r * 255.0);
    px[1] = to_byte(g * 255.0);
    px[2] = to_byte(b * 255.0);
  }
}

RasterImage blur_image(const RasterImage& img, double sigma) {
  Grid<double> src(img.width(), img.height(), img.channels(), img.mpp());
  std::transform(img.data().begin(), img.data().end(), src.data().begin(),
                 [](std::uint8_t v) { return static_cast<double>(v); });
  RasterImage out = img;
  for (int c = 0; c < img.channels(); ++c) {
    const RealRaster b = gaussian_blur(src, sigma, c);
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) out(x, y, c) = to_byte(b(x, y));
  }
  return out;
}

}  // namespace

PatchRecord apply_augmentation(const PatchRecord& rec, const AugmentationPlan& plan) {
  PatchRecord out = rec;
  Grid<std::uint8_t> img = rec.he;
  Grid<std::uint8_t> gt = rec.gt;
  if (plan.flip) {
    img = flip_grid(img, plan.flip_vertical);
    gt = flip_grid(gt, plan.flip_vertical);
  }
  if (plan.rot90) {
    img = rotate_grid(img, plan.rot_quarters);
    gt = rotate_grid(gt, plan.rot_quarters);
  }
  if (plan.shift) {
    img = translate_grid<std::uint8_t>(img, plan.shift_dx, plan.shift_dy, 255);
    gt = translate_grid<std::uint8_t>(gt, plan.shift_dx, plan.shift_dy, 0);
  }
  out.he = RasterImage(std::move(img));
  out.gt = LabelMask(std::move(gt));
  if (plan.brightness) {
    for (auto& v : out.he.storage()) v = to_byte(v * plan.brightness_factor);
  }
  if (out.he.channels() == 3 && (plan.hue || plan.saturation)) {
    adjust_hsv(out.he, plan.hue ? plan.hue_shift_deg : 0.0,
               plan.saturation ? plan.saturation_factor : 1.0);
  }
  if (plan.blur) out.he = blur_image(out.he, plan.blur_sigma);
  return out;
}

PatchRecord augment(const PatchRecord& rec, const AugmentationConfig& cfg, std::uint64_t seed) {
  return apply_augmentation(rec, plan_augmentation(cfg, seed, rec.origin));
}

// ---------------------------------------------------------------------------

BalancedSampler::BalancedSampler(std::array<std::size_t, 3> set_sizes, std::uint64_t seed)
    : sizes_(set_sizes), rng_(derive_seed(seed, {0x62616c616e636564ULL})) {
  for (std::size_t k = 0; k < sizes_.size(); ++k) {
    if (sizes_[k] == 0) {
      throw ConfigurationError("balanced sampler: set '" +
                               std::string(to_string(static_cast<SetTag>(k))) + "' is empty");
    }
  }
}

SampleRef BalancedSampler::next() {
  const auto set = static_cast<std::size_t>(rng_.below(3));
  return {static_cast<SetTag>(set), static_cast<std::size_t>(rng_.below(sizes_[set]))};
}

// ---------------------------------------------------------------------------

using nlohmann::ordered_json;

PatchStoreWriter::PatchStoreWriter(fs::path dir) : dir_(std::move(dir)) {
  fs::create_directories(dir_);
}

std::size_t PatchStoreWriter::add(const PatchRecord& rec) {
  PatchStoreEntry e;
  e.n = entries_.size();
  e.origin = rec.origin;
  e.set_tag = rec.set_tag;
  e.tissue_fraction = rec.tissue_fraction;
  e.shift_applied = rec.shift_applied;
  e.mpp = rec.he.mpp();
  e.he_file = "he_" + std::to_string(e.n) + ".png";
  e.gt_file = "gt_" + std::to_string(e.n) + ".png";
  write_png(rec.he, dir_ / e.he_file);
  write_label_png(rec.gt, dir_ / e.gt_file);
  entries_.push_back(e);
  return e.n;
}

void PatchStoreWriter::finish(std::string_view extra_json_object) {
  const ordered_json extra = ordered_json::parse(extra_json_object);
  std::ofstream out(dir_ / "index.jsonl", std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write patch index in " + dir_.string());
  for (const auto& e : entries_) {
    ordered_json line;
    line["n"] = e.n;
    line["origin"] = {{"slide", e.origin.slide},
                      {"core", e.origin.core},
                      {"x", e.origin.x},
                      {"y", e.origin.y},
                      {"level_factor", e.origin.level_factor}};
    line["set_tag"] = std::string(to_string(e.set_tag));
    line["tissue_fraction"] = e.tissue_fraction;
    line["shift_applied"] = {{"dx", e.shift_applied.dx},
                             {"dy", e.shift_applied.dy},
                             {"confidence", e.shift_applied.confidence}};
    line["mpp"] = e.mpp;
    line["he"] = e.he_file;
    line["gt"] = e.gt_file;
    for (const auto& [k, v] : extra.items()) line[k] = v;
    out << line.dump() << '\n';
  }
}

std::vector<PatchStoreEntry> read_patch_index(const fs::path& dir) {
  std::ifstream in(dir / "index.jsonl");
  if (!in) throw FormatError("patch store " + dir.string() + " has no index.jsonl");
  std::vector<PatchStoreEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = ordered_json::parse(line);
      PatchStoreEntry e;
      e.n = j.at("n").get<std::size_t>();
      const auto& o = j.at("origin");
      e.origin = {o.at("slide").get<std::string>(), o.at("core").get<int>(), o.at("x").get<int>(),
                  o.at("y").get<int>(), o.at("level_factor").get<int>()};
      const auto tag = parse_set_tag(j.at("set_tag").get<std::string>());
      if (!tag) throw FormatError("unknown set_tag");
      e.set_tag = *tag;
      e.tissue_fraction = j.at("tissue_fraction").get<double>();
      const auto& s = j.at("shift_applied");
      e.shift_applied = {s.at("dx").get<int>(), s.at("dy").get<int>(), s.value("confidence", 0.0)};
      e.mpp = j.at("mpp").get<double>();
      e.he_file = j.at("he").get<std::string>();
      e.gt_file = j.at("gt").get<std::string>();
      out.push_back(std::move(e));
    } catch (const std::exception& ex) {
      throw FormatError("patch index line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return out;
}

PatchRecord load_patch(const fs::path& dir, const PatchStoreEntry& entry) {
  PatchRecord rec;
  rec.he = read_png(dir / entry.he_file, entry.mpp);
  rec.gt = read_label_png(dir / entry.gt_file, entry.mpp);
  rec.set_tag = entry.set_tag;
  rec.origin = entry.origin;
  rec.shift_applied = entry.shift_applied;
  rec.tissue_fraction = entry.tissue_fraction;
  return rec;
}

}  // namespace episeg
