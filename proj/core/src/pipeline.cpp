#include "episeg/pipeline.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "episeg/eval.hpp"
#include "episeg/image_io.hpp"
#include "episeg/parallel.hpp"
#include "episeg/registration.hpp"

namespace episeg {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw InvalidArgument("SHA-256 digest failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Config schema. One key list drives both serialization and parsing.

namespace {

std::vector<std::string> split_key(std::string_view key) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    parts.emplace_back(key.substr(start, dot - start));
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  return parts;
}

template <typename Visitor>
void visit_config(PipelineConfig& c, Visitor&& v) {
  v("paths.he", c.paths.he);
  v("paths.ck", c.paths.ck);
  v("paths.annotations", c.paths.annotations);
  v("paths.output", c.paths.output);
  v("paths.case_metadata", c.paths.case_metadata);
  v("paths.qual_scores", c.paths.qual_scores);
  v("paths.stain_matrix", c.paths.stain_matrix);
  v("levels.threshold", c.levels.threshold);
  v("levels.patch", c.levels.patch);
  v("levels.inference", c.levels.inference);
  v("deconv.sigma", c.deconv.sigma);
  v("deconv.threshold", c.deconv.threshold);
  v("deconv.target_mpp", c.deconv.target_mpp);
  v("deconv.mpp_tolerance", c.deconv.mpp_tolerance);
  v("morphology.fill_hole_below_um2", c.morphology.fill_hole_below_um2);
  v("morphology.remove_object_below_um2", c.morphology.remove_object_below_um2);
  v("extractor.min_region_px", c.extractor.min_region_px);
  v("extractor.max_median_deviation", c.extractor.max_median_deviation);
  v("extractor.lowres_max_width", c.extractor.lowres_max_width);
  v("extractor.tissue_max_mean", c.extractor.tissue.max_mean);
  v("extractor.tissue_min_spread", c.extractor.tissue.min_spread);
  v("registration.factor", c.registration_factor);
  v("patch_grid.patch_size", c.patch_grid.patch_size);
  v("patch_grid.overlap", c.patch_grid.overlap_fraction);
  v("patch_grid.min_tissue_fraction", c.patch_grid.min_tissue_fraction);
  v("patches.slide", c.patches.slide);
  v("patches.preview_draws", c.patches.preview_draws);
  v("augmentation.p_flip", c.augmentation.p_flip);
  v("augmentation.p_rot90", c.augmentation.p_rot90);
  v("augmentation.p_brightness", c.augmentation.p_brightness);
  v("augmentation.p_hue", c.augmentation.p_hue);
  v("augmentation.p_saturation", c.augmentation.p_saturation);
  v("augmentation.p_shift", c.augmentation.p_shift);
  v("augmentation.p_blur", c.augmentation.p_blur);
  v("augmentation.brightness_range", c.augmentation.brightness_range);
  v("augmentation.hue_range_deg", c.augmentation.hue_range_deg);
  v("augmentation.saturation_range", c.augmentation.saturation_range);
  v("augmentation.shift_range_px", c.augmentation.shift_range_px);
  v("augmentation.blur_sigma_min", c.augmentation.blur_sigma_min);
  v("augmentation.blur_sigma_max", c.augmentation.blur_sigma_max);
  v("inference.patch_size", c.inference.patch_size);
  v("inference.overlap", c.inference.overlap);
  v("inference.predictor", c.inference.predictor);
  v("inference.pooled", c.inference.pooled);
  v("synth.rows", c.synth.rows);
  v("synth.cols", c.synth.cols);
  v("synth.core_diameter", c.synth.core_diameter);
  v("synth.spacing", c.synth.spacing);
  v("synth.margin", c.synth.margin);
  v("synth.benign_glands", c.synth.structures.benign_glands);
  v("synth.insitu_ducts", c.synth.structures.insitu_ducts);
  v("synth.invasive_nests", c.synth.structures.invasive_nests);
  v("synth.ck_false_negative_rate", c.synth.ck_false_negative_rate);
  v("synth.shift_dx", c.synth.shift_dx);
  v("synth.shift_dy", c.synth.shift_dy);
  v("synth.noise_sd", c.synth.noise_sd);
  v("synth.mpp", c.synth.mpp);
  v("synth.factors", c.synth.factors);
  v("synth.exclude_cores", c.synth.exclude_cores);
  v("synth.cores_per_case", c.synth.cores_per_case);
  v("seed", c.seed);
  v("threads", c.threads);
  v("overlay", c.overlay);
}

ordered_json& at_path(ordered_json& root, const std::vector<std::string>& parts) {
  ordered_json* node = &root;
  for (const auto& p : parts) node = &(*node)[p];
  return *node;
}

const ordered_json* find_path(const ordered_json& root, const std::vector<std::string>& parts) {
  const ordered_json* node = &root;
  for (const auto& p : parts) {
    if (!node->is_object()) return nullptr;
    auto it = node->find(p);
    if (it == node->end()) return nullptr;
    node = &*it;
  }
  return node;
}

struct JsonWriter {
  ordered_json& root;
  template <typename T>
  void operator()(const char* key, const T& value) {
    ordered_json& slot = at_path(root, split_key(key));
    if constexpr (std::is_same_v<T, fs::path>) {
      slot = value.generic_string();
    } else {
      slot = value;
    }
  }
};

struct JsonReader {
  const ordered_json& root;
  std::vector<std::string>& errors;

  template <typename T>
  void operator()(const char* key, T& out) {
    const ordered_json* j = find_path(root, split_key(key));
    if (j == nullptr) return;
    const std::string k(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!j->is_boolean()) return errors.push_back(k + ": expected a boolean");
      out = j->get<bool>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!j->is_number_unsigned()) return errors.push_back(k + ": expected an unsigned 64-bit integer");
      out = j->get<std::uint64_t>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!j->is_number_integer()) return errors.push_back(k + ": expected an integer");
      out = j->get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!j->is_number()) return errors.push_back(k + ": expected a number");
      out = j->get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!j->is_string()) return errors.push_back(k + ": expected a string");
      out = j->get<std::string>();
    } else if constexpr (std::is_same_v<T, fs::path>) {
      if (!j->is_string()) return errors.push_back(k + ": expected a path string");
      out = fs::path(j->get<std::string>());
    } else {
      static_assert(std::is_same_v<T, std::vector<int>>);
      if (!j->is_array() ||
          !std::all_of(j->begin(), j->end(), [](const auto& e) { return e.is_number_integer(); })) {
        return errors.push_back(k + ": expected an array of integers");
      }
      out = j->get<std::vector<int>>();
    }
  }
};

ordered_json config_to_json(const PipelineConfig& cfg) {
  ordered_json j = ordered_json::object();
  PipelineConfig copy = cfg;
  visit_config(copy, JsonWriter{j});
  return j;
}

// Overlays `user` onto `base`, which carries the full schema.
void merge_into(ordered_json& base, const ordered_json& user, const std::string& prefix,
                std::vector<std::string>& errors) {
  for (const auto& [key, value] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    auto it = base.find(key);
    if (it == base.end()) {
      errors.push_back(path + ": unknown key");
      continue;
    }
    if (it->is_object()) {
      if (!value.is_object()) {
        errors.push_back(path + ": expected an object");
        continue;
      }
      merge_into(*it, value, path, errors);
    } else {
      *it = value;
    }
  }
}

void apply_override(ordered_json& root, const std::string& expr, std::vector<std::string>& errors) {
  const auto eq = expr.find('=');
  if (eq == std::string::npos || eq == 0) {
    errors.push_back("override '" + expr + "': expected key=value");
    return;
  }
  const std::string key = expr.substr(0, eq);
  const std::string raw = expr.substr(eq + 1);
  const auto parts = split_key(key);
  ordered_json* node = &root;
  for (const auto& p : parts) {
    if (!node->is_object() || !node->contains(p)) {
      errors.push_back(key + ": unknown key");
      return;
    }
    node = &(*node)[p];
  }
  if (node->is_object()) {
    errors.push_back(key + ": cannot override a whole section");
    return;
  }
  ordered_json value = ordered_json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  *node = value;
}

void check_semantics(const PipelineConfig& c, std::vector<std::string>& errors) {
  auto check = [&](const char* section, auto&& fn) {
    try {
      fn();
    } catch (const InvalidArgument& e) {
      errors.push_back(std::string(section) + ": " + e.what());
    }
  };
  check("deconv", [&] { c.deconv.validate(); });
  check("morphology", [&] { c.morphology.validate(); });
  check("extractor", [&] { c.extractor.validate(); });
  check("augmentation", [&] { c.augmentation.validate(); });
  check("synth", [&] { c.synth.validate(); });
  for (auto [key, v] : {std::pair{"levels.threshold", c.levels.threshold},
                        std::pair{"levels.patch", c.levels.patch},
                        std::pair{"levels.inference", c.levels.inference},
                        std::pair{"registration.factor", c.registration_factor},
                        std::pair{"inference.patch_size", c.inference.patch_size},
                        std::pair{"threads", c.threads}}) {
    if (v < 1) errors.push_back(std::string(key) + ": must be >= 1");
  }
  if (c.patch_grid.patch_size < 1) errors.push_back("patch_grid.patch_size: must be >= 1");
  if (!(c.patch_grid.overlap_fraction >= 0.0 && c.patch_grid.overlap_fraction < 1.0)) {
    errors.push_back("patch_grid.overlap: must be in [0, 1)");
  }
  if (!(c.patch_grid.min_tissue_fraction >= 0.0 && c.patch_grid.min_tissue_fraction <= 1.0)) {
    errors.push_back("patch_grid.min_tissue_fraction: must be in [0, 1]");
  }
  if (!(c.inference.overlap >= 0.0 && c.inference.overlap < 1.0)) {
    errors.push_back("inference.overlap: must be in [0, 1)");
  }
  if (c.patches.preview_draws < 0) errors.push_back("patches.preview_draws: must be >= 0");
  const std::string& p = c.inference.predictor;
  const bool constant_ok = p.rfind("constant:", 0) == 0 && p.size() == 10 && p[9] >= '0' && p[9] <= '3';
  const bool exec_ok = p.rfind("exec:", 0) == 0 && p.size() > 5;
  if (p != "oracle" && !constant_ok && !exec_ok) {
    errors.push_back("inference.predictor: expected oracle, constant:<0-3> or exec:<path>");
  }
  if (c.paths.output.empty()) errors.push_back("paths.output: must not be empty");
}

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return (base / p).lexically_normal();
}

}  // namespace

std::string default_config_json() { return config_to_json(PipelineConfig{}).dump(2) + "\n"; }

PipelineConfig parse_config(std::string_view json_text, const std::vector<std::string>& overrides,
                            const fs::path& base_dir) {
  ordered_json merged = config_to_json(PipelineConfig{});
  std::vector<std::string> errors;
  const ordered_json user = ordered_json::parse(json_text, nullptr, false);
  if (user.is_discarded() || !user.is_object()) {
    throw ConfigurationError("config is not a JSON object");
  }
  merge_into(merged, user, "", errors);
  for (const auto& o : overrides) apply_override(merged, o, errors);

  PipelineConfig cfg;
  visit_config(cfg, JsonReader{merged, errors});
  // Keys that failed to parse keep their defaults, so semantic checks still
  // run and every problem is reported at once.
  check_semantics(cfg, errors);
  if (!errors.empty()) {
    std::string msg = "invalid configuration (" + std::to_string(errors.size()) + " problem" +
                      (errors.size() == 1 ? "" : "s") + "):";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigurationError(msg);
  }

  ordered_json canonical = merged;
  canonical["paths"].erase("output");
  canonical.erase("threads");
  cfg.hash = sha256_hex(canonical.dump());

  for (fs::path* p : {&cfg.paths.he, &cfg.paths.ck, &cfg.paths.annotations, &cfg.paths.output,
                      &cfg.paths.case_metadata, &cfg.paths.qual_scores, &cfg.paths.stain_matrix}) {
    *p = resolve(*p, base_dir);
  }
  if (cfg.inference.predictor.rfind("exec:", 0) == 0) {
    cfg.inference.predictor = "exec:" + resolve(cfg.inference.predictor.substr(5), base_dir).string();
  }
  cfg.synth.seed = cfg.seed;
  return cfg;
}

PipelineConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), overrides, fs::absolute(path).parent_path());
}

// ---------------------------------------------------------------------------
// Stages

namespace {

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw InvalidArgument("cannot write " + p.string());
}

ordered_json rect_json(const Rect& r) { return {r.x, r.y, r.width, r.height}; }
Rect rect_from(const ordered_json& j) {
  return {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>(), j.at(3).get<int>()};
}

ordered_json region_json(const CoreRegion& c) {
  return {{"id", c.id},
          {"bbox", rect_json(c.bbox)},
          {"centroid", {c.centroid.x, c.centroid.y}},
          {"area_px", c.area_px},
          {"equiv_diameter_px", c.equiv_diameter_px},
          {"detection_factor", c.detection_factor}};
}

CoreRegion region_from(const ordered_json& j) {
  CoreRegion c;
  c.id = j.at("id").get<int>();
  c.bbox = rect_from(j.at("bbox"));
  c.centroid = {j.at("centroid").at(0).get<double>(), j.at("centroid").at(1).get<double>()};
  c.area_px = j.at("area_px").get<long long>();
  c.equiv_diameter_px = j.at("equiv_diameter_px").get<double>();
  c.detection_factor = j.at("detection_factor").get<int>();
  return c;
}

struct CoreRecord {
  int id = 0;
  std::string case_id;
  Rect window;  // level 0, aligned
  CorePair pair;
  std::optional<ShiftVector> shift;  // level 0
};

ordered_json record_json(const CoreRecord& r) {
  ordered_json j{{"id", r.id},
                 {"case_id", r.case_id},
                 {"window", rect_json(r.window)},
                 {"he", region_json(r.pair.he)},
                 {"ck", region_json(r.pair.ck)}};
  if (r.shift) {
    j["shift"] = {{"dx", r.shift->dx}, {"dy", r.shift->dy}, {"confidence", r.shift->confidence}};
  } else {
    j["shift"] = nullptr;
  }
  return j;
}

CoreRecord record_from(const ordered_json& j) {
  CoreRecord r;
  r.id = j.at("id").get<int>();
  r.case_id = j.at("case_id").get<std::string>();
  r.window = rect_from(j.at("window"));
  r.pair.he = region_from(j.at("he"));
  r.pair.ck = region_from(j.at("ck"));
  if (!j.at("shift").is_null()) {
    const auto& s = j.at("shift");
    r.shift = ShiftVector{s.at("dx").get<int>(), s.at("dy").get<int>(), s.at("confidence").get<double>()};
  }
  return r;
}

std::vector<ordered_json> read_jsonl(const fs::path& p) {
  std::istringstream in(read_text(p));
  std::vector<ordered_json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(ordered_json::parse(line));
  }
  return out;
}

std::string to_jsonl(const std::vector<ordered_json>& lines) {
  std::string s;
  for (const auto& l : lines) s += l.dump() + "\n";
  return s;
}

struct GtEntry {
  int id = 0;
  std::string case_id;
  bool excluded = false;
  std::string labels;  // relative to the output dir
  double mpp = 0.0;
};

/// Output-dir bookkeeping shared by all stages.
class Stage {
 public:
  Stage(std::string name, const PipelineConfig& cfg, std::ostream& log)
      : name_(std::move(name)), cfg_(cfg), out_(cfg.paths.output), log_(log) {}

  const PipelineConfig& cfg() const { return cfg_; }
  const fs::path& out() const { return out_; }

  void require(std::string_view upstream) {
    const fs::path m = manifest_path(upstream);
    if (!fs::exists(m)) {
      throw DependencyError("stage '" + name_ + "' needs stage '" + std::string(upstream) +
                            "' to run first (missing " + rel(m) + ")");
    }
    upstream_[std::string(upstream)] = sha256_hex(read_text(m));
  }

  bool has(std::string_view stage) const { return fs::exists(manifest_path(stage)); }

  /// Input path from the config, else the synth stage's output.
  fs::path input(const fs::path& configured, const char* synth_rel) {
    if (!configured.empty()) return configured;
    require("synth");
    return out_ / "synth" / synth_rel;
  }

  void output(const fs::path& p) { outputs_.push_back(rel(p)); }
  void write(const fs::path& p, const std::string& text) {
    write_text(p, text);
    output(p);
  }

  std::string rel(const fs::path& p) const { return p.lexically_relative(out_).generic_string(); }

  void info(const std::string& msg) { log_ << "[" << name_ << "] " << msg << '\n'; }

  void finish(ordered_json summary) {
    std::sort(outputs_.begin(), outputs_.end());
    ordered_json files = ordered_json::array();
    for (const auto& o : outputs_) {
      files.push_back({{"path", o}, {"sha256", sha256_hex(read_text(out_ / o))}});
    }
    ordered_json up = ordered_json::object();
    for (const auto& [k, v] : upstream_) up[k] = v;
    ordered_json m{{"stage", name_},
                   {"config_hash", cfg_.hash},
                   {"seed", cfg_.seed},
                   {"upstream", up},
                   {"summary", std::move(summary)},
                   {"outputs", files}};
    write_text(manifest_path(name_), m.dump(2) + "\n");
    info("wrote " + rel(manifest_path(name_)));
  }

 private:
  fs::path manifest_path(std::string_view stage) const {
    return out_ / "manifests" / (std::string(stage) + ".json");
  }

  std::string name_;
  const PipelineConfig& cfg_;
  fs::path out_;
  std::ostream& log_;
  std::map<std::string, std::string> upstream_;
  std::vector<std::string> outputs_;
};

int window_alignment(const PipelineConfig& cfg) {
  return std::max({cfg.levels.threshold, cfg.levels.patch, cfg.levels.inference});
}

StainMatrix stain_matrix(const PipelineConfig& cfg) {
  return cfg.paths.stain_matrix.empty() ? StainMatrix::hdab_default()
                                        : read_stain_matrix(cfg.paths.stain_matrix);
}

ShiftVector shift_at(const ShiftVector& level0, int factor) {
  auto div = [factor](int v) {
    return static_cast<int>(std::lround(static_cast<double>(v) / factor));
  };
  return {div(level0.dx), div(level0.dy), level0.confidence};
}

/// Re-samples a label map built at factor `from` onto a raster of size w×h
/// at factor `to`.
LabelMask labels_to_level(const LabelMask& gt, int from, int to, int w, int h) {
  LabelMask out = gt;
  if (to > from && to % from == 0) out = downsample_majority(gt, to / from);
  if (out.width() != w || out.height() != h) out = resize_nearest(out, w, h);
  out.set_mpp(gt.mpp() * to / from);
  return out;
}

std::vector<CoreRecord> load_records(Stage& st) {
  std::vector<CoreRecord> out;
  for (const auto& j : read_jsonl(st.out() / "cores.jsonl")) out.push_back(record_from(j));
  return out;
}

std::vector<GtEntry> load_gt_index(Stage& st) {
  std::vector<GtEntry> out;
  for (const auto& j : read_jsonl(st.out() / "gt" / "index.jsonl")) {
    out.push_back({j.at("core").get<int>(), j.at("case_id").get<std::string>(),
                   j.at("excluded").get<bool>(), j.at("labels").get<std::string>(),
                   j.at("mpp").get<double>()});
  }
  return out;
}

/// Processes items in chunks of `threads`: compute in parallel, emit in
/// index order, which keeps outputs independent of the thread count.
template <typename R, typename Compute, typename Emit>
void chunked(std::size_t n, int threads, Compute&& compute, Emit&& emit) {
  const std::size_t chunk = static_cast<std::size_t>(std::max(1, threads));
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t m = std::min(chunk, n - start);
    std::vector<std::optional<R>> results(m);
    parallel_for(m, threads, [&](std::size_t i) { results[i].emplace(compute(start + i)); });
    for (std::size_t i = 0; i < m; ++i) emit(start + i, std::move(*results[i]));
  }
}

// -- synth ------------------------------------------------------------------

void stage_synth(Stage& st) {
  const auto& cfg = st.cfg();
  const SynthResult res = generate(cfg.synth, cfg.threads);
  const fs::path dir = st.out() / "synth";
  fs::remove_all(dir);
  write_synth(res, dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  for (const auto& f : files) st.output(f);
  st.info("generated " + std::to_string(res.cores.size()) + " cores, slide " +
          std::to_string(res.he.level(0).width()) + "x" + std::to_string(res.he.level(0).height()));
  st.finish({{"cores", res.cores.size()},
             {"cases", res.cases.size()},
             {"width", res.he.level(0).width()},
             {"height", res.he.level(0).height()},
             {"shift", {cfg.synth.shift_dx, cfg.synth.shift_dy}}});
}

// -- extract-tma ------------------------------------------------------------

void stage_extract(Stage& st) {
  const auto& cfg = st.cfg();
  const PyramidImage he = read_pyramid(st.input(cfg.paths.he, "he"));
  const PyramidImage ck = read_pyramid(st.input(cfg.paths.ck, "ck"));
  const fs::path ann_path = st.input(cfg.paths.annotations, "annotations.geojson");
  const AnnotationSet ann = read_geojson(ann_path);

  const auto he_cores = extract_cores(he, cfg.extractor);
  const auto ck_cores = extract_cores(ck, cfg.extractor);
  const Pairing pairing = pair_cores(he_cores, ck_cores);
  const int align = window_alignment(cfg);

  std::vector<ordered_json> lines;
  int k = 0;
  for (const auto& p : pairing.pairs) {
    CoreRecord r;
    r.id = k++;
    r.pair = p;
    r.window = pair_window_level0(p, align);
    for (const auto& poly : ann.polygons) {
      if (poly.label == AnnotationLabel::kCase && poly.case_id && contains(poly, p.he.centroid)) {
        r.case_id = *poly.case_id;
        break;
      }
    }
    lines.push_back(record_json(r));
  }
  st.write(st.out() / "cores.jsonl", to_jsonl(lines));
  auto ids = [](const std::vector<CoreRegion>& v) {
    ordered_json a = ordered_json::array();
    for (const auto& c : v) a.push_back(c.id);
    return a;
  };
  st.info(std::to_string(he_cores.size()) + " HE cores, " + std::to_string(ck_cores.size()) +
          " CK cores, " + std::to_string(pairing.pairs.size()) + " pairs");
  st.finish({{"he_cores", he_cores.size()},
             {"ck_cores", ck_cores.size()},
             {"pairs", pairing.pairs.size()},
             {"unmatched_he", ids(pairing.unmatched_he)},
             {"unmatched_ck", ids(pairing.unmatched_ck)},
             {"window_alignment", align}});
}

// -- register ---------------------------------------------------------------

void stage_register(Stage& st) {
  st.require("extract-tma");
  const auto& cfg = st.cfg();
  const PyramidImage he = read_pyramid(st.input(cfg.paths.he, "he"));
  const PyramidImage ck = read_pyramid(st.input(cfg.paths.ck, "ck"));
  auto records = load_records(st);
  const int f = cfg.levels.threshold;
  const int align = window_alignment(cfg);
  parallel_for(records.size(), cfg.threads, [&](std::size_t i) {
    const CorePair p = extract_pair_rasters(he, ck, records[i].pair, f, align);
    const ShiftVector s = register_pair(p.he_raster, p.ck_raster, cfg.registration_factor);
    records[i].shift = ShiftVector{s.dx * f, s.dy * f, s.confidence};
  });
  std::vector<ordered_json> lines;
  ordered_json shifts = ordered_json::array();
  for (const auto& r : records) {
    lines.push_back(record_json(r));
    shifts.push_back({r.shift->dx, r.shift->dy});
  }
  st.write(st.out() / "cores.jsonl", to_jsonl(lines));
  st.info("registered " + std::to_string(records.size()) + " core pairs");
  st.finish({{"cores", records.size()}, {"level_factor", f}, {"shifts_level0", shifts}});
}

// -- build-gt ---------------------------------------------------------------

struct GtResult {
  GroundTruth gt;
  Rect level_rect;
};

void stage_build_gt(Stage& st) {
  st.require("register");
  const auto& cfg = st.cfg();
  const PyramidImage he = read_pyramid(st.input(cfg.paths.he, "he"));
  const PyramidImage ck = read_pyramid(st.input(cfg.paths.ck, "ck"));
  const AnnotationSet ann = read_geojson(st.input(cfg.paths.annotations, "annotations.geojson"));
  const StainMatrix stains = stain_matrix(cfg);
  const auto records = load_records(st);
  const int f = cfg.levels.threshold;
  const int align = window_alignment(cfg);

  fs::remove_all(st.out() / "gt");
  std::vector<ordered_json> lines;
  long long overlap_px = 0;
  int excluded = 0;
  chunked<GtResult>(
      records.size(), cfg.threads,
      [&](std::size_t i) {
        const CoreRecord& r = records[i];
        if (!r.shift) throw DependencyError("core " + std::to_string(r.id) + " has no registration shift");
        const CorePair p = extract_pair_rasters(he, ck, r.pair, f, align);
        const BinaryMask dab = clean_epithelium_mask(dab_mask(p.ck_raster, stains, cfg.deconv), cfg.morphology);
        const BinaryMask aligned = apply_shift(dab, shift_at(*r.shift, f).inverse());
        const int w = p.he_raster.width(), h = p.he_raster.height();
        const double mpp = p.he_raster.mpp();
        const Rect lr = p.level_rect;
        auto raster = [&](AnnotationLabel l) { return rasterize(ann, l, w, h, f, mpp, lr.x, lr.y); };
        return GtResult{build_ground_truth(aligned, raster(AnnotationLabel::kBenign),
                                           raster(AnnotationLabel::kInSitu),
                                           raster(AnnotationLabel::kExclude)),
                        lr};
      },
      [&](std::size_t i, GtResult res) {
        const CoreRecord& r = records[i];
        const fs::path dir = st.out() / "gt" / ("core_" + std::to_string(r.id));
        fs::create_directories(dir);
        write_label_png(res.gt.labels, dir / "labels.png");
        st.output(dir / "labels.png");
        const ordered_json meta{{"core", r.id},
                                {"case_id", r.case_id},
                                {"excluded", res.gt.excluded},
                                {"level_factor", f},
                                {"mpp", res.gt.labels.mpp()},
                                {"window", rect_json(res.level_rect)},
                                {"annotation_overlap_px", res.gt.annotation_overlap_px}};
        st.write(dir / "meta.json", meta.dump(2) + "\n");
        ordered_json counts = ordered_json::object();
        for (TissueClass c : kForegroundClasses) counts[class_name(c)] = res.gt.labels.count(c);
        lines.push_back({{"core", r.id},
                         {"case_id", r.case_id},
                         {"excluded", res.gt.excluded},
                         {"labels", st.rel(dir / "labels.png")},
                         {"mpp", res.gt.labels.mpp()},
                         {"class_px", counts},
                         {"annotation_overlap_px", res.gt.annotation_overlap_px}});
        overlap_px += res.gt.annotation_overlap_px;
        excluded += res.gt.excluded ? 1 : 0;
        if (res.gt.annotation_overlap_px > 0) {
          st.info("core " + std::to_string(r.id) + ": benign and in situ annotations overlap on " +
                  std::to_string(res.gt.annotation_overlap_px) + " px; in situ wins");
        }
      });
  st.write(st.out() / "gt" / "index.jsonl", to_jsonl(lines));
  st.info("built ground truth for " + std::to_string(records.size()) + " cores (" +
          std::to_string(excluded) + " excluded)");
  st.finish({{"cores", records.size()},
             {"excluded", excluded},
             {"level_factor", f},
             {"annotation_overlap_px", overlap_px},
             {"exclusion_rule", "core excluded when an Exclude polygon covers its raster centre"}});
}

// -- build-patches ----------------------------------------------------------

void stage_build_patches(Stage& st) {
  st.require("build-gt");
  const auto& cfg = st.cfg();
  const PyramidImage he = read_pyramid(st.input(cfg.paths.he, "he"));
  const PyramidImage ck = read_pyramid(st.input(cfg.paths.ck, "ck"));
  const auto records = load_records(st);
  const auto gt_index = load_gt_index(st);
  const int ft = cfg.levels.threshold, fp = cfg.levels.patch;
  const int align = window_alignment(cfg);

  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!gt_index.at(i).excluded) todo.push_back(i);
  }
  const fs::path dir = st.out() / "patches";
  fs::remove_all(dir);
  PatchStoreWriter writer(dir);
  PatchCutOptions opt;
  opt.slide = cfg.patches.slide;
  opt.registration_factor = cfg.registration_factor;
  opt.tissue = cfg.extractor.tissue;

  chunked<std::vector<PatchRecord>>(
      todo.size(), cfg.threads,
      [&](std::size_t t) {
        const CoreRecord& r = records[todo[t]];
        CorePair p = extract_pair_rasters(he, ck, r.pair, fp, align);
        p.ck_raster = apply_shift(p.ck_raster, shift_at(*r.shift, fp).inverse());
        const LabelMask gt = read_label_png(st.out() / gt_index[todo[t]].labels, gt_index[todo[t]].mpp);
        const LabelMask g = labels_to_level(gt, ft, fp, p.he_raster.width(), p.he_raster.height());
        p.he.id = r.id;
        return cut_patches(p, g, cfg.patch_grid, opt);
      },
      [&](std::size_t, std::vector<PatchRecord> patches) {
        for (const auto& rec : patches) writer.add(rec);
      });
  writer.finish(ordered_json{{"config_hash", cfg.hash}}.dump());

  std::array<std::size_t, 3> sizes{};
  std::array<std::vector<std::size_t>, 3> members;
  for (const auto& e : writer.entries()) {
    const auto s = static_cast<std::size_t>(e.set_tag);
    ++sizes[s];
    members[s].push_back(e.n);
    st.output(dir / e.he_file);
    st.output(dir / e.gt_file);
  }
  st.output(dir / "index.jsonl");

  ordered_json preview = ordered_json::array();
  std::string sampler_error;
  try {
    BalancedSampler sampler(sizes, cfg.seed);
    for (int k = 0; k < cfg.patches.preview_draws; ++k) {
      const SampleRef ref = sampler.next();
      const std::size_t n = members[static_cast<std::size_t>(ref.set)][ref.index];
      const AugmentationPlan plan =
          plan_augmentation(cfg.augmentation, cfg.seed + static_cast<std::uint64_t>(k), writer.entries()[n].origin);
      preview.push_back({{"set", std::string(to_string(ref.set))},
                         {"n", n},
                         {"flip", plan.flip},
                         {"rot90", plan.rot90 ? plan.rot_quarters : 0},
                         {"shift", plan.shift ? ordered_json{plan.shift_dx, plan.shift_dy} : ordered_json(nullptr)}});
    }
  } catch (const ConfigurationError& e) {
    sampler_error = e.what();
    st.info(std::string("sampler preview skipped: ") + e.what());
  }

  st.info("wrote " + std::to_string(writer.entries().size()) + " patches from " +
          std::to_string(todo.size()) + " cores");
  ordered_json summary{{"cores", todo.size()},
                       {"patches", writer.entries().size()},
                       {"sets", {{"insitu", sizes[0]}, {"benign", sizes[1]}, {"invasive", sizes[2]}}},
                       {"level_factor", fp},
                       {"sampler_preview", preview}};
  if (!sampler_error.empty()) summary["sampler_error"] = sampler_error;
  st.finish(std::move(summary));
}

// -- infer-stitch -----------------------------------------------------------

RasterImage overlay(const RasterImage& he, const LabelMask& pred) {
  RasterImage out = he;
  for (int y = 0; y < he.height(); ++y) {
    for (int x = 0; x < he.width(); ++x) {
      const auto code = pred(x, y);
      if (code == 0) continue;
      for (int c = 0; c < 3; ++c) {
        out(x, y, c) = static_cast<std::uint8_t>(
            std::lround(0.6 * he(x, y, c) + 0.4 * kLabelPalette[code][static_cast<std::size_t>(c)]));
      }
    }
  }
  return out;
}

void stage_infer(Stage& st) {
  st.require("build-gt");
  const auto& cfg = st.cfg();
  const PyramidImage he = read_pyramid(st.input(cfg.paths.he, "he"));
  const PyramidImage ck = read_pyramid(st.input(cfg.paths.ck, "ck"));
  const auto records = load_records(st);
  const auto gt_index = load_gt_index(st);
  const int ft = cfg.levels.threshold, fi = cfg.levels.inference;
  const int align = window_alignment(cfg);
  const std::string& spec = cfg.inference.predictor;

  const fs::path dir = st.out() / "pred";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::unique_ptr<Predictor> external;
  if (spec.rfind("exec:", 0) == 0) {
    external = std::make_unique<ExternalPredictor>(spec.substr(5), dir / "tmp");
  }
  StitchConfig sc{cfg.inference.patch_size, cfg.inference.overlap, cfg.threads};

  std::vector<ordered_json> lines;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const GtEntry& g = gt_index.at(i);
    if (g.excluded) continue;
    const CoreRecord& r = records[i];
    const CorePair p = extract_pair_rasters(he, ck, r.pair, fi, align);
    const LabelMask gt = read_label_png(st.out() / g.labels, g.mpp);
    std::unique_ptr<Predictor> local;
    const Predictor* predictor = external.get();
    if (spec == "oracle") {
      local = std::make_unique<OraclePredictor>(
          labels_to_level(gt, ft, fi, p.he_raster.width(), p.he_raster.height()));
    } else if (spec.rfind("constant:", 0) == 0) {
      local = std::make_unique<ConstantPredictor>(static_cast<TissueClass>(spec[9] - '0'));
    }
    if (local) predictor = local.get();
    LabelMask pred = stitch_predict(p.he_raster, *predictor, sc);
    if (pred.width() != gt.width() || pred.height() != gt.height()) {
      pred = resize_nearest(pred, gt.width(), gt.height());
    }
    pred.set_mpp(gt.mpp());
    const fs::path file = dir / ("core_" + std::to_string(r.id) + ".png");
    write_label_png(pred, file);
    st.output(file);
    if (cfg.overlay) {
      const CorePair q = fi == ft ? p : extract_pair_rasters(he, ck, r.pair, ft, align);
      const fs::path ov = dir / ("overlay_" + std::to_string(r.id) + ".png");
      write_png(overlay(q.he_raster, pred), ov);
      st.output(ov);
    }
    lines.push_back({{"core", r.id}, {"case_id", r.case_id}, {"labels", st.rel(file)}, {"mpp", pred.mpp()}});
  }
  fs::remove_all(dir / "tmp");
  st.write(dir / "index.jsonl", to_jsonl(lines));
  st.info("stitched predictions for " + std::to_string(lines.size()) + " cores with " + spec);
  const std::string shown = spec.rfind("exec:", 0) == 0 ? "exec:" + fs::path(spec.substr(5)).filename().string() : spec;
  st.finish({{"cores", lines.size()},
             {"predictor", shown},
             {"level_factor", fi},
             {"patch_size", cfg.inference.patch_size},
             {"overlap", cfg.inference.overlap}});
}

// -- evaluate ---------------------------------------------------------------

void stage_evaluate(Stage& st) {
  st.require("build-gt");
  st.require("infer-stitch");
  const auto& cfg = st.cfg();
  const auto gt_index = load_gt_index(st);
  std::map<int, ordered_json> preds;
  for (const auto& j : read_jsonl(st.out() / "pred" / "index.jsonl")) preds[j.at("core").get<int>()] = j;

  std::vector<EvaluatedCore> cores;
  ordered_json excluded = ordered_json::array();
  for (const auto& g : gt_index) {
    if (g.excluded) {
      excluded.push_back(g.id);
      continue;
    }
    const auto it = preds.find(g.id);
    if (it == preds.end()) throw DependencyError("no prediction for core " + std::to_string(g.id) + "; rerun infer-stitch");
    const LabelMask gt = read_label_png(st.out() / g.labels, g.mpp);
    const LabelMask pred = read_label_png(st.out() / it->second.at("labels").get<std::string>(), g.mpp);
    cores.push_back({g.id, g.case_id, core_metrics(gt, pred)});
  }

  std::map<std::string, CaseInfo> metadata;
  fs::path meta_path = cfg.paths.case_metadata;
  if (meta_path.empty() && st.has("synth")) meta_path = st.out() / "synth" / "cases.csv";
  if (!meta_path.empty()) metadata = read_case_metadata(meta_path);

  std::vector<CoreMetrics> metrics;
  for (const auto& c : cores) metrics.push_back(c.metrics);
  const MetricsReport report = build_report(metrics, cfg.inference.pooled);
  const auto groups = group_metrics(cores, metadata, cfg.inference.pooled);

  const fs::path dir = st.out() / "report";
  fs::create_directories(dir);
  write_per_core_csv(cores, dir / "per_core.csv");
  st.output(dir / "per_core.csv");
  const ordered_json header{
      {"config_hash", cfg.hash},
      {"cores", cores.size()},
      {"excluded_cores", excluded},
      {"variants",
       {{"I", "all cores"}, {"II", "class in ground truth or prediction"}, {"III", "class in ground truth"}}},
      {"zero_denominator", "metric set to 1"},
      {"sd", "population"}};
  write_report_json(report, groups, header.dump(), dir / "report.json");
  st.output(dir / "report.json");

  ordered_json dice = ordered_json::object();
  for (TissueClass c : kForegroundClasses) {
    const MetricRow* row = report.find(c, Variant::kI);
    dice[class_name(c)] = row ? ordered_json(row->dice.mean) : ordered_json(nullptr);
    if (row) st.info(std::string(class_name(c)) + " dice (I) " + std::to_string(row->dice.mean));
  }
  st.finish({{"cores", cores.size()}, {"excluded", excluded.size()}, {"dice_variant_I", dice}});
}

// -- qual-summary -----------------------------------------------------------

void stage_qual(Stage& st) {
  const auto& cfg = st.cfg();
  if (cfg.paths.qual_scores.empty()) throw ConfigurationError("paths.qual_scores: not set");
  const auto scores = read_qual_scores(cfg.paths.qual_scores);
  const QualSummary summary = qualitative_summary(scores);
  const fs::path dir = st.out() / "qual";
  fs::create_directories(dir);
  const ordered_json header{
      {"config_hash", cfg.hash},
      {"all", "mean and sample SD over scores 1-5; score 0 excluded per class"},
      {"present", "as all, restricted per class to cases with the class in the ground truth"}};
  write_qual_summary_json(summary, header.dump(), dir / "summary.json");
  write_qual_histogram_csv(summary, dir / "histogram.csv");
  st.output(dir / "summary.json");
  st.output(dir / "histogram.csv");
  ordered_json means = ordered_json::object();
  for (int c = 0; c < kQualClassCount; ++c) {
    const auto& s = summary.classes[static_cast<std::size_t>(c)].all;
    means[std::string(to_string(static_cast<QualClass>(c)))] = s.n > 0 ? ordered_json(s.mean) : ordered_json(nullptr);
  }
  st.info("summarized " + std::to_string(scores.size()) + " cases");
  st.finish({{"cases", scores.size()}, {"mean_all", means}});
}

}  // namespace

void run_stage(std::string_view stage, const PipelineConfig& cfg, std::ostream& log) {
  Stage st(std::string(stage), cfg, log);
  fs::create_directories(cfg.paths.output);
  if (stage == "synth") return stage_synth(st);
  if (stage == "extract-tma") return stage_extract(st);
  if (stage == "register") return stage_register(st);
  if (stage == "build-gt") return stage_build_gt(st);
  if (stage == "build-patches") return stage_build_patches(st);
  if (stage == "infer-stitch") return stage_infer(st);
  if (stage == "evaluate") return stage_evaluate(st);
  if (stage == "qual-summary") return stage_qual(st);
  throw InvalidArgument("unknown stage '" + std::string(stage) + "'");
}

}  // namespace episeg
