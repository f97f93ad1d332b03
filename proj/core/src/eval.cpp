#include "episeg/eval.hpp"

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "episeg/dataset.hpp"
#include "episeg/parallel.hpp"
#include <nlohmann/json.hpp>

extern char** environ;

namespace episeg {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Protocol

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InvalidArgument("cannot write " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string encode(const char* magic, std::uint32_t h, std::uint32_t w, std::uint32_t planes,
                   std::span<const float> values) {
  std::string out(magic, 4);
  put_u32(out, kProtocolVersion);
  put_u32(out, h);
  put_u32(out, w);
  put_u32(out, planes);
  out.reserve(out.size() + values.size() * 4);
  for (float v : values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

Grid<float> decode(const std::string& bytes, const char* magic, std::uint32_t planes,
                   const fs::path& path) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 20 || std::memcmp(p, magic, 4) != 0) {
    throw FormatError(path.string() + ": missing " + magic + " header");
  }
  if (get_u32(p + 4) != kProtocolVersion) {
    throw FormatError(path.string() + ": unsupported protocol version");
  }
  const std::uint32_t h = get_u32(p + 8), w = get_u32(p + 12), c = get_u32(p + 16);
  if (c != planes) throw FormatError(path.string() + ": expected " + std::to_string(planes) + " planes");
  if (h == 0 || w == 0 || h > 1u << 16 || w > 1u << 16) {
    throw FormatError(path.string() + ": invalid dimensions");
  }
  const std::size_t n = static_cast<std::size_t>(h) * w * c;
  if (bytes.size() != 20 + 4 * n) throw FormatError(path.string() + ": payload size mismatch");
  std::vector<float> values(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = std::bit_cast<float>(get_u32(p + 20 + 4 * i));
  return Grid<float>(static_cast<int>(w), static_cast<int>(h), static_cast<int>(c), 1.0,
                     std::move(values));
}

}  // namespace

void write_predictor_request(const RasterImage& patch, const fs::path& path) {
  if (patch.channels() != 3) throw InvalidArgument("predictor requests carry RGB patches");
  std::vector<float> v(patch.sample_count());
  std::transform(patch.data().begin(), patch.data().end(), v.begin(),
                 [](std::uint8_t s) { return static_cast<float>(s) / 255.0f; });
  write_file(path, encode("PTCH", static_cast<std::uint32_t>(patch.height()),
                          static_cast<std::uint32_t>(patch.width()), 3, v));
}

Grid<float> read_predictor_request(const fs::path& path) {
  return decode(read_file(path), "PTCH", 3, path);
}

void write_predictor_response(const ProbabilityRaster& probs, const fs::path& path) {
  if (probs.channels() != kClassCount) throw InvalidArgument("predictor responses carry 4 planes");
  write_file(path, encode("PRED", static_cast<std::uint32_t>(probs.height()),
                          static_cast<std::uint32_t>(probs.width()), kClassCount, probs.data()));
}

ProbabilityRaster read_predictor_response(const fs::path& path) {
  return decode(read_file(path), "PRED", kClassCount, path);
}

void check_prediction(const ProbabilityRaster& probs, int width, int height) {
  if (probs.width() != width || probs.height() != height) {
    throw PredictorError("prediction is " + std::to_string(probs.width()) + "x" +
                         std::to_string(probs.height()) + ", expected " + std::to_string(width) +
                         "x" + std::to_string(height));
  }
  if (probs.channels() != kClassCount) {
    throw PredictorError("prediction has " + std::to_string(probs.channels()) + " planes, expected 4");
  }
  for (std::size_t i = 0; i < probs.pixel_count(); ++i) {
    double sum = 0.0;
    for (int c = 0; c < kClassCount; ++c) {
      const float v = probs.data()[i * kClassCount + c];
      if (!(v >= 0.0f)) throw PredictorError("prediction has a negative or NaN probability");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-4) throw PredictorError("prediction planes do not sum to 1");
  }
}

// ---------------------------------------------------------------------------
// Predictors

ProbabilityRaster ConstantPredictor::predict(const RasterImage& patch, const PatchContext&) const {
  ProbabilityRaster out(patch.width(), patch.height(), kClassCount, patch.mpp(), 0.0f);
  const auto c = static_cast<int>(cls_);
  for (std::size_t i = 0; i < out.pixel_count(); ++i) out.data()[i * kClassCount + c] = 1.0f;
  return out;
}

ProbabilityRaster OraclePredictor::predict(const RasterImage& patch, const PatchContext& ctx) const {
  const Rect window{ctx.x, ctx.y, patch.width(), patch.height()};
  const Grid<std::uint8_t> labels = crop_padded_grid<std::uint8_t>(truth_, window, 0);
  ProbabilityRaster out(patch.width(), patch.height(), kClassCount, patch.mpp(), 0.0f);
  for (std::size_t i = 0; i < out.pixel_count(); ++i) out.data()[i * kClassCount + labels.data()[i]] = 1.0f;
  return out;
}

ExternalPredictor::ExternalPredictor(fs::path exe, fs::path workdir)
    : exe_(std::move(exe)), workdir_(std::move(workdir)) {
  if (!fs::exists(exe_)) throw PredictorError("predictor executable not found: " + exe_.string());
  if (workdir_.empty()) {
    workdir_ = fs::temp_directory_path() / ("episeg_predictor_" + std::to_string(::getpid()));
  }
  fs::create_directories(workdir_);
}

ProbabilityRaster ExternalPredictor::predict(const RasterImage& patch, const PatchContext&) const {
  const std::string stem = "patch_" + std::to_string(calls_.fetch_add(1));
  const fs::path req = workdir_ / (stem + ".ptch");
  const fs::path resp = workdir_ / (stem + ".pred");
  write_predictor_request(patch, req);
  fs::remove(resp);

  std::string exe = exe_.string(), a1 = req.string(), a2 = resp.string();
  char* argv[] = {exe.data(), a1.data(), a2.data(), nullptr};
  pid_t pid = 0;
  if (posix_spawn(&pid, exe.c_str(), nullptr, nullptr, argv, environ) != 0) {
    fs::remove(req);
    throw PredictorError("cannot start predictor " + exe);
  }
  int status = 0;
  while (waitpid(pid, &status, 0) < 0) {
    if (errno != EINTR) throw PredictorError("waiting for predictor failed");
  }
  fs::remove(req);
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    fs::remove(resp);
    throw PredictorError("predictor " + exe + " exited with status " +
                         std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1));
  }
  ProbabilityRaster probs;
  try {
    probs = read_predictor_response(resp);
  } catch (const FormatError& e) {
    fs::remove(resp);
    throw PredictorError(std::string("bad predictor response: ") + e.what());
  }
  fs::remove(resp);
  probs.set_mpp(patch.mpp());
  return probs;
}

// ---------------------------------------------------------------------------
// Stitching

LabelMask stitch_predict(const RasterImage& core, const Predictor& predictor,
                         const StitchConfig& cfg) {
  PatchGridConfig grid;
  grid.patch_size = cfg.patch_size;
  grid.overlap_fraction = cfg.overlap;
  grid.min_tissue_fraction = 0.0;
  const auto anchors = patch_grid(core.width(), core.height(), grid);
  const int p = cfg.patch_size;

  std::vector<double> sum(core.pixel_count() * kClassCount, 0.0);
  std::vector<int> hits(core.pixel_count(), 0);

  // Batches bound memory; merging in anchor order keeps the sums
  // bit-reproducible for any thread count.
  const std::size_t batch = static_cast<std::size_t>(std::max(1, cfg.threads));
  for (std::size_t start = 0; start < anchors.size(); start += batch) {
    const std::size_t n = std::min(batch, anchors.size() - start);
    std::vector<ProbabilityRaster> probs(n);
    parallel_for(n, cfg.threads, [&](std::size_t i) {
      const Anchor a = anchors[start + i];
      const RasterImage patch(crop_padded_grid<std::uint8_t>(core, {a.x, a.y, p, p}, 255));
      probs[i] = predictor.predict(patch, {a.x, a.y});
      check_prediction(probs[i], p, p);
    });
    for (std::size_t i = 0; i < n; ++i) {
      const Anchor a = anchors[start + i];
      const int w = std::min(p, core.width() - a.x), h = std::min(p, core.height() - a.y);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const std::size_t dst = static_cast<std::size_t>(a.y + y) * core.width() + (a.x + x);
          ++hits[dst];
          for (int c = 0; c < kClassCount; ++c) sum[dst * kClassCount + c] += probs[i](x, y, c);
        }
      }
    }
  }

  LabelMask out(core.width(), core.height(), core.mpp());
  for (std::size_t i = 0; i < out.pixel_count(); ++i) {
    int best = 0;
    double best_v = -1.0;
    for (int c = 0; c < kClassCount; ++c) {
      const double v = sum[i * kClassCount + c] / hits[i];
      if (v > best_v) {
        best_v = v;
        best = c;
      }
    }
    out.data()[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

const ClassCounts& CoreMetrics::at(TissueClass c) const {
  const int k = static_cast<int>(c);
  if (k < 1 || k > 3) throw InvalidArgument("background is not scored");
  return classes[static_cast<std::size_t>(k - 1)];
}

ClassCounts& CoreMetrics::at(TissueClass c) {
  return const_cast<ClassCounts&>(std::as_const(*this).at(c));
}

CoreMetrics core_metrics(const LabelMask& gt, const LabelMask& pred) {
  if (gt.width() != pred.width() || gt.height() != pred.height()) {
    throw InvalidArgument("ground truth and prediction dimensions differ");
  }
  // Confusion matrix first, counts derived from it.
  std::array<std::array<long long, kClassCount>, kClassCount> cm{};
  for (std::size_t i = 0; i < gt.pixel_count(); ++i) ++cm[gt.data()[i]][pred.data()[i]];
  CoreMetrics m;
  for (int c = 1; c < kClassCount; ++c) {
    ClassCounts& k = m.classes[static_cast<std::size_t>(c - 1)];
    k.tp = cm[c][c];
    for (int o = 0; o < kClassCount; ++o) {
      if (o == c) continue;
      k.fp += cm[o][c];
      k.fn += cm[c][o];
    }
  }
  return m;
}

Scores score(const ClassCounts& c) noexcept {
  auto ratio = [](long long num, long long den) {
    return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  return {ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn), ratio(c.tp, c.tp + c.fp), ratio(c.tp, c.tp + c.fn)};
}

Scores score(const CoreMetrics& m, TissueClass c) { return score(m.at(c)); }

std::string_view to_string(Variant v) noexcept {
  switch (v) {
    case Variant::kI: return "I";
    case Variant::kII: return "II";
    case Variant::kIII: return "III";
  }
  return "";
}

bool includes(Variant v, const ClassCounts& c) noexcept {
  switch (v) {
    case Variant::kI: return true;
    case Variant::kII: return c.gt_present() || c.pred_present();
    case Variant::kIII: return c.gt_present();
  }
  return false;
}

namespace {

MeanSd mean_sd(const std::vector<double>& v) {
  MeanSd r;
  if (v.empty()) return r;
  double s = 0.0;
  for (double x : v) s += x;
  r.mean = s / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - r.mean) * (x - r.mean);
  r.sd = std::sqrt(ss / static_cast<double>(v.size()));
  return r;
}

}  // namespace

std::optional<MetricRow> aggregate(const std::vector<CoreMetrics>& cores, TissueClass cls,
                                   Variant variant, bool pooled) {
  std::vector<double> dice, precision, recall;
  ClassCounts total;
  for (const auto& m : cores) {
    const ClassCounts& c = m.at(cls);
    if (!includes(variant, c)) continue;
    const Scores s = score(c);
    dice.push_back(s.dice);
    precision.push_back(s.precision);
    recall.push_back(s.recall);
    total.tp += c.tp;
    total.fp += c.fp;
    total.fn += c.fn;
  }
  if (dice.empty()) return std::nullopt;
  MetricRow row;
  row.cls = cls;
  row.variant = variant;
  row.cores = dice.size();
  row.dice = mean_sd(dice);
  row.pooled = pooled;
  if (pooled) {
    const Scores s = score(total);
    row.precision = {s.precision, 0.0};
    row.recall = {s.recall, 0.0};
  } else {
    row.precision = mean_sd(precision);
    row.recall = mean_sd(recall);
  }
  return row;
}

const MetricRow* MetricsReport::find(TissueClass cls, Variant variant) const noexcept {
  for (const auto& r : rows) {
    if (r.cls == cls && r.variant == variant) return &r;
  }
  return nullptr;
}

MetricsReport build_report(const std::vector<CoreMetrics>& cores, bool pooled) {
  MetricsReport rep;
  rep.total_cores = cores.size();
  rep.pooled = pooled;
  for (TissueClass c : kForegroundClasses) {
    for (Variant v : {Variant::kI, Variant::kII, Variant::kIII}) {
      if (auto row = aggregate(cores, c, v, pooled)) rep.rows.push_back(*row);
    }
  }
  return rep;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::map<std::string, CaseInfo> read_case_metadata(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open case metadata " + path.string());
  std::string line;
  if (!std::getline(in, line)) return {};
  const auto header = split_csv_line(line);
  auto column = [&](std::string_view name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw FormatError("case metadata lacks column '" + std::string(name) + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t ic = column("case_id"), is = column("subtype"), ig = column("grade");
  std::map<std::string, CaseInfo> out;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split_csv_line(line);
    if (f.size() <= std::max({ic, is, ig})) throw FormatError("short case metadata row: " + line);
    out[f[ic]] = {f[is], f[ig]};
  }
  return out;
}

std::vector<GroupReport> group_metrics(const std::vector<EvaluatedCore>& cores,
                                       const std::map<std::string, CaseInfo>& metadata,
                                       bool pooled) {
  std::vector<GroupReport> out;
  for (const char* key : {"subtype", "grade"}) {
    std::map<std::string, std::vector<CoreMetrics>> groups;
    for (const auto& core : cores) {
      std::string value;
      if (auto it = metadata.find(core.case_id); it != metadata.end()) {
        value = std::string_view(key) == "subtype" ? it->second.subtype : it->second.grade;
      }
      if (value.empty()) value = "Unknown";
      groups[value].push_back(core.metrics);
    }
    for (const auto& [value, members] : groups) {
      out.push_back({key, value, build_report(members, pooled)});
    }
  }
  return out;
}

void write_per_core_csv(const std::vector<EvaluatedCore>& cores, const fs::path& path) {
  std::ostringstream os;
  os.precision(17);
  os << "core_id,case_id";
  for (TissueClass c : kForegroundClasses) {
    const std::string n = class_name(c);
    os << ',' << n << "_tp," << n << "_fp," << n << "_fn," << n << "_dice," << n << "_precision,"
       << n << "_recall";
  }
  os << '\n';
  for (const auto& core : cores) {
    os << core.core_id << ',' << core.case_id;
    for (TissueClass c : kForegroundClasses) {
      const ClassCounts& k = core.metrics.at(c);
      const Scores s = score(k);
      os << ',' << k.tp << ',' << k.fp << ',' << k.fn << ',' << s.dice << ',' << s.precision << ','
         << s.recall;
    }
    os << '\n';
  }
  write_file(path, os.str());
}

namespace {

ordered_json report_to_json(const MetricsReport& rep) {
  ordered_json j;
  j["total_cores"] = rep.total_cores;
  j["precision_recall"] = rep.pooled ? "pooled" : "per-core mean";
  ordered_json classes = ordered_json::object();
  for (TissueClass c : kForegroundClasses) {
    ordered_json variants = ordered_json::object();
    for (Variant v : {Variant::kI, Variant::kII, Variant::kIII}) {
      const MetricRow* r = rep.find(c, v);
      if (r == nullptr) {
        variants[std::string(to_string(v))] = nullptr;
        continue;
      }
      auto ms = [](const MeanSd& m) { return ordered_json{{"mean", m.mean}, {"sd", m.sd}}; };
      variants[std::string(to_string(v))] = {{"cores", r->cores},
                                             {"dice", ms(r->dice)},
                                             {"precision", ms(r->precision)},
                                             {"recall", ms(r->recall)}};
    }
    classes[class_name(c)] = variants;
  }
  j["classes"] = classes;
  return j;
}

}  // namespace

void write_report_json(const MetricsReport& report, const std::vector<GroupReport>& groups,
                       std::string_view header_json, const fs::path& path) {
  ordered_json j;
  j["header"] = ordered_json::parse(header_json);
  j["overall"] = report_to_json(report);
  ordered_json g = ordered_json::array();
  for (const auto& gr : groups) {
    ordered_json e = report_to_json(gr.report);
    e["key"] = gr.key;
    e["value"] = gr.value;
    g.push_back(e);
  }
  j["groups"] = g;
  write_file(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Qualitative scores

std::string_view to_string(QualClass c) noexcept {
  switch (c) {
    case QualClass::kAllEpithelium: return "all_epithelium";
    case QualClass::kBenign: return "benign";
    case QualClass::kInSitu: return "insitu";
    case QualClass::kInvasive: return "invasive";
  }
  return "";
}

QualStats summarize_histogram(const ScoreHistogram& hist) {
  QualStats s;
  double sum = 0.0;
  for (int k = 1; k <= 5; ++k) {
    s.n += hist[k];
    sum += static_cast<double>(k) * hist[k];
  }
  if (s.n == 0) return s;
  s.mean = sum / static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (int k = 1; k <= 5; ++k) ss += hist[k] * (k - s.mean) * (k - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  return s;
}

std::array<double, 6> histogram_fractions(const ScoreHistogram& hist) {
  std::array<double, 6> f{};
  long long n = 0;
  for (int k = 1; k <= 5; ++k) n += hist[k];
  if (n == 0) return f;
  for (int k = 1; k <= 5; ++k) f[k] = static_cast<double>(hist[k]) / static_cast<double>(n);
  return f;
}

QualSummary qualitative_summary(const std::vector<QualScore>& scores) {
  QualSummary out;
  out.cases = scores.size();
  for (const auto& s : scores) {
    for (int c = 0; c < kQualClassCount; ++c) {
      const int v = s.scores[c];
      if (v < 0 || v > 5) {
        throw InvalidArgument("qualitative score out of range for case " + s.case_id);
      }
      ++out.classes[c].hist_all[v];
      ++out.classes[c].hist_present[s.gt_present[c] ? v : 0];
    }
  }
  for (auto& c : out.classes) {
    c.all = summarize_histogram(c.hist_all);
    c.present = summarize_histogram(c.hist_present);
  }
  return out;
}

std::vector<QualScore> read_qual_scores(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open qualitative scores " + path.string());
  std::string line;
  if (!std::getline(in, line)) return {};
  const auto header = split_csv_line(line);
  auto find = [&](const std::string& name) -> std::optional<std::size_t> {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto case_col = find("case_id");
  if (!case_col) throw FormatError("qualitative scores lack column 'case_id'");
  std::array<std::size_t, kQualClassCount> score_cols{};
  std::array<std::optional<std::size_t>, kQualClassCount> present_cols{};
  for (int c = 0; c < kQualClassCount; ++c) {
    const std::string name(to_string(static_cast<QualClass>(c)));
    const auto col = find(name);
    if (!col) throw FormatError("qualitative scores lack column '" + name + "'");
    score_cols[c] = *col;
    present_cols[c] = find("present_" + name);
  }
  std::vector<QualScore> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split_csv_line(line);
    auto field = [&](std::size_t col) -> const std::string& {
      if (col >= f.size()) throw FormatError("qualitative scores line " + std::to_string(line_no) + " is short");
      return f[col];
    };
    QualScore q;
    q.case_id = field(*case_col);
    for (int c = 0; c < kQualClassCount; ++c) {
      try {
        q.scores[c] = std::stoi(field(score_cols[c]));
        if (present_cols[c]) q.gt_present[c] = std::stoi(field(*present_cols[c])) != 0;
      } catch (const std::logic_error&) {
        throw FormatError("qualitative scores line " + std::to_string(line_no) + " is not numeric");
      }
    }
    out.push_back(std::move(q));
  }
  return out;
}

void write_qual_summary_json(const QualSummary& summary, std::string_view header_json,
                             const fs::path& path) {
  auto stats = [](const QualStats& s) {
    ordered_json j{{"n", s.n}};
    j["mean"] = s.n > 0 ? ordered_json(s.mean) : ordered_json(nullptr);
    j["sd"] = s.n > 1 ? ordered_json(s.sd) : ordered_json(nullptr);
    return j;
  };
  ordered_json j;
  j["header"] = ordered_json::parse(header_json);
  j["cases"] = summary.cases;
  ordered_json classes = ordered_json::object();
  for (int c = 0; c < kQualClassCount; ++c) {
    const auto& s = summary.classes[c];
    classes[std::string(to_string(static_cast<QualClass>(c)))] = {
        {"all", stats(s.all)},
        {"present", stats(s.present)},
        {"histogram_all", s.hist_all},
        {"histogram_present", s.hist_present}};
  }
  j["classes"] = classes;
  write_file(path, j.dump(2) + "\n");
}

void write_qual_histogram_csv(const QualSummary& summary, const fs::path& path) {
  std::ostringstream os;
  os << "score";
  for (int c = 0; c < kQualClassCount; ++c) {
    const std::string n(to_string(static_cast<QualClass>(c)));
    os << ',' << n << "_all," << n << "_all_fraction," << n << "_pre," << n << "_pre_fraction";
  }
  os << '\n';
  char buf[32];
  for (int k = 0; k <= 5; ++k) {
    os << k;
    for (const auto& s : summary.classes) {
      const auto fa = histogram_fractions(s.hist_all), fp = histogram_fractions(s.hist_present);
      std::snprintf(buf, sizeof buf, "%.2f", fa[k]);
      os << ',' << s.hist_all[k] << ',' << (k == 0 ? "" : buf);
      std::snprintf(buf, sizeof buf, "%.2f", fp[k]);
      os << ',' << s.hist_present[k] << ',' << (k == 0 ? "" : buf);
    }
    os << '\n';
  }
  write_file(path, os.str());
}

}  // namespace episeg
