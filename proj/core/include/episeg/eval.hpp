#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "episeg/raster.hpp"

namespace episeg {

// ---------------------------------------------------------------------------
// Predictors

/// Where the patch sits inside the core raster being stitched.
struct PatchContext {
  int x = 0;
  int y = 0;
};

/// predict() returns a 4-plane probability raster of the patch's size.
/// Implementations must tolerate concurrent calls.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual ProbabilityRaster predict(const RasterImage& patch, const PatchContext& ctx) const = 0;
};

/// Probability 1 on one plane everywhere.
class ConstantPredictor final : public Predictor {
 public:
  explicit ConstantPredictor(TissueClass cls) : cls_(cls) {}
  ProbabilityRaster predict(const RasterImage& patch, const PatchContext& ctx) const override;

 private:
  TissueClass cls_;
};

/// Returns the one-hot encoding of a known label map under the patch
/// window; pixels outside the map are background.
class OraclePredictor final : public Predictor {
 public:
  explicit OraclePredictor(LabelMask truth) : truth_(std::move(truth)) {}
  ProbabilityRaster predict(const RasterImage& patch, const PatchContext& ctx) const override;

 private:
  LabelMask truth_;
};

/// Runs `<exe> <request> <response>` per patch using the PTCH/PRED file
/// protocol. A nonzero exit, a missing or malformed response is a
/// PredictorError.
class ExternalPredictor final : public Predictor {
 public:
  explicit ExternalPredictor(std::filesystem::path exe, std::filesystem::path workdir = {});
  ProbabilityRaster predict(const RasterImage& patch, const PatchContext& ctx) const override;

 private:
  std::filesystem::path exe_;
  std::filesystem::path workdir_;
  mutable std::atomic<std::uint64_t> calls_{0};
};

inline constexpr std::uint32_t kProtocolVersion = 1;

/// PTCH request: magic, u32 LE version, height, width, channels = 3, then
/// float32 LE samples in [0, 1], row-major and channel-interleaved.
void write_predictor_request(const RasterImage& patch, const std::filesystem::path& path);
Grid<float> read_predictor_request(const std::filesystem::path& path);
/// PRED response: magic, u32 LE version, height, width, planes = 4, then
/// float32 LE probabilities, row-major and plane-interleaved.
void write_predictor_response(const ProbabilityRaster& probs, const std::filesystem::path& path);
ProbabilityRaster read_predictor_response(const std::filesystem::path& path);

/// Throws PredictorError unless `probs` has the given size, 4 planes and
/// non-negative values summing to 1 ± 1e-4 per pixel.
void check_prediction(const ProbabilityRaster& probs, int width, int height);

// ---------------------------------------------------------------------------
// Stitching

struct StitchConfig {
  int patch_size = 1024;
  double overlap = 0.30;
  int threads = 1;
};

/// Tiled inference over the patch grid. Per-pixel plane probabilities are
/// averaged over all covering patches (in double), then argmax with ties to
/// the lowest class code. Patches reaching past the core edge are padded
/// white.
LabelMask stitch_predict(const RasterImage& core, const Predictor& predictor,
                         const StitchConfig& cfg = {});

// ---------------------------------------------------------------------------
// Metrics

struct ClassCounts {
  long long tp = 0;
  long long fp = 0;
  long long fn = 0;

  bool gt_present() const noexcept { return tp + fn > 0; }
  bool pred_present() const noexcept { return tp + fp > 0; }
  friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

/// Counts for the three foreground classes, indexed by class code − 1.
struct CoreMetrics {
  std::array<ClassCounts, 3> classes{};

  const ClassCounts& at(TissueClass c) const;
  ClassCounts& at(TissueClass c);
  friend bool operator==(const CoreMetrics&, const CoreMetrics&) = default;
};

CoreMetrics core_metrics(const LabelMask& gt, const LabelMask& pred);

struct Scores {
  double dice = 1.0;
  double precision = 1.0;
  double recall = 1.0;
};

/// A zero denominator scores 1.
Scores score(const ClassCounts& c) noexcept;
Scores score(const CoreMetrics& m, TissueClass c);

/// I: all cores. II: class in gt or prediction. III: class in gt.
enum class Variant { kI, kII, kIII };

std::string_view to_string(Variant v) noexcept;
bool includes(Variant v, const ClassCounts& c) noexcept;

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;  // population
};

struct MetricRow {
  TissueClass cls = TissueClass::kInvasive;
  Variant variant = Variant::kI;
  std::size_t cores = 0;
  MeanSd dice;
  MeanSd precision;  // pixel-pooled over included cores when pooled (sd = 0)
  MeanSd recall;
  bool pooled = false;
};

/// nullopt when the variant includes no cores.
std::optional<MetricRow> aggregate(const std::vector<CoreMetrics>& cores, TissueClass cls,
                                   Variant variant, bool pooled = false);

struct MetricsReport {
  std::size_t total_cores = 0;
  bool pooled = false;
  std::vector<MetricRow> rows;  // present rows only, class-major then variant

  const MetricRow* find(TissueClass cls, Variant variant) const noexcept;
};

MetricsReport build_report(const std::vector<CoreMetrics>& cores, bool pooled = false);

struct EvaluatedCore {
  int core_id = 0;
  std::string case_id;
  CoreMetrics metrics;
};

struct CaseInfo {
  std::string subtype;  // NST, Lobular, Other
  std::string grade;    // 1, 2, 3
};

/// case_id,subtype,grade with a header line.
std::map<std::string, CaseInfo> read_case_metadata(const std::filesystem::path& path);

struct GroupReport {
  std::string key;    // "subtype" or "grade"
  std::string value;  // group name, "Unknown" for missing metadata
  MetricsReport report;
};

/// One report per subtype and per grade value (sorted by value); cores whose
/// case is not in the metadata, or has an empty field, go to "Unknown".
std::vector<GroupReport> group_metrics(const std::vector<EvaluatedCore>& cores,
                                       const std::map<std::string, CaseInfo>& metadata,
                                       bool pooled = false);

/// core_id,case_id then tp/fp/fn/dice/precision/recall per class.
void write_per_core_csv(const std::vector<EvaluatedCore>& cores, const std::filesystem::path& path);
/// Aggregates and groups as JSON; `header_json` (an object) is embedded as
/// "header".
void write_report_json(const MetricsReport& report, const std::vector<GroupReport>& groups,
                       std::string_view header_json, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Qualitative scores

enum class QualClass { kAllEpithelium, kBenign, kInSitu, kInvasive };
inline constexpr int kQualClassCount = 4;
std::string_view to_string(QualClass c) noexcept;

struct QualScore {
  std::string case_id;
  std::array<int, kQualClassCount> scores{};  // 0..5
  std::array<bool, kQualClassCount> gt_present{true, true, true, true};
};

using ScoreHistogram = std::array<long long, 6>;

struct QualStats {
  long long n = 0;  // 0 means empty: mean and sd are not reported
  double mean = 0.0;
  double sd = 0.0;  // sample
};

/// Mean and sample SD over scores 1–5 of a histogram; score 0 is ignored.
QualStats summarize_histogram(const ScoreHistogram& hist);
/// Fractions of each score among the nonzero scores (index 0 stays 0).
std::array<double, 6> histogram_fractions(const ScoreHistogram& hist);

struct QualClassSummary {
  ScoreHistogram hist_all{};
  ScoreHistogram hist_present{};  // score if class is in the gt, else 0
  QualStats all;
  QualStats present;
};

struct QualSummary {
  std::size_t cases = 0;
  std::array<QualClassSummary, kQualClassCount> classes{};
};

/// Throws InvalidArgument on scores outside 0..5.
QualSummary qualitative_summary(const std::vector<QualScore>& scores);

/// case_id,all_epithelium,benign,insitu,invasive and optionally
/// present_all_epithelium,present_benign,present_insitu,present_invasive (0/1).
std::vector<QualScore> read_qual_scores(const std::filesystem::path& path);
void write_qual_summary_json(const QualSummary& summary, std::string_view header_json,
                             const std::filesystem::path& path);
/// Rows are scores 0..5; columns All/Pre per class, fractions in parentheses.
void write_qual_histogram_csv(const QualSummary& summary, const std::filesystem::path& path);

}  // namespace episeg
