#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "episeg/dataset.hpp"
#include "episeg/eval.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace episeg;

namespace {

LabelMask random_labels(int w, int h, std::mt19937& rng, int classes = 4) {
  LabelMask m(w, h, 1.0);
  for (auto& v : m.storage()) v = static_cast<std::uint8_t>(rng() % static_cast<unsigned>(classes));
  return m;
}

CoreMetrics invasive_counts(long long tp, long long fp, long long fn) {
  CoreMetrics m;
  m.at(TissueClass::kInvasive) = {tp, fp, fn};
  return m;
}

std::vector<unsigned char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::uint32_t u32_at(const std::vector<unsigned char>& b, std::size_t off) {
  return b[off] | (b[off + 1] << 8) | (b[off + 2] << 16) | (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

float f32_at(const std::vector<unsigned char>& b, std::size_t off) {
  const std::uint32_t u = u32_at(b, off);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

// Votes class 1 at 0.6 in the left patch and class 2 at 0.6 in the right one.
class SplitVote final : public Predictor {
 public:
  ProbabilityRaster predict(const RasterImage& patch, const PatchContext& ctx) const override {
    ProbabilityRaster p(patch.width(), patch.height(), 4, patch.mpp(), 0.0f);
    for (int y = 0; y < p.height(); ++y)
      for (int x = 0; x < p.width(); ++x) {
        p(x, y, 1) = ctx.x == 0 ? 0.6f : 0.4f;
        p(x, y, 2) = ctx.x == 0 ? 0.4f : 0.6f;
      }
    return p;
  }
};

// Position-dependent soft output, to exercise averaging.
class Smooth final : public Predictor {
 public:
  ProbabilityRaster predict(const RasterImage& patch, const PatchContext& ctx) const override {
    ProbabilityRaster p(patch.width(), patch.height(), 4, patch.mpp(), 0.0f);
    for (int y = 0; y < p.height(); ++y)
      for (int x = 0; x < p.width(); ++x) {
        const float a = static_cast<float>(((x + ctx.x) * 7 + (y + ctx.y) * 3 + ctx.x) % 17) / 17.0f;
        const float b = static_cast<float>(patch(x, y, 0)) / 255.0f;
        p(x, y, 0) = 0.25f * a;
        p(x, y, 1) = 0.25f * (1 - a) + 0.25f * b;
        p(x, y, 2) = 0.5f - 0.25f * b;
        p(x, y, 3) = 1.0f - p(x, y, 0) - p(x, y, 1) - p(x, y, 2);
      }
    return p;
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// Metrics

TEST(CoreMetrics, MatchesPixelOracle) {
  std::mt19937 rng(42);
  for (int t = 0; t < 50; ++t) {
    const auto gt = random_labels(64, 64, rng, 1 + t % 4);
    const auto pred = random_labels(64, 64, rng, 1 + (t / 4) % 4);
    const auto m = core_metrics(gt, pred);
    for (int c = 1; c <= 3; ++c) {
      const auto k = oracle::count_class(gt, pred, c);
      const auto& got = m.at(static_cast<TissueClass>(c));
      ASSERT_EQ(got.tp, k.tp);
      ASSERT_EQ(got.fp, k.fp);
      ASSERT_EQ(got.fn, k.fn);
      const auto s = score(got);
      ASSERT_NEAR(s.dice, oracle::safe_ratio(2.0 * k.tp, 2.0 * k.tp + k.fp + k.fn), 1e-12);
      ASSERT_NEAR(s.precision, oracle::safe_ratio(k.tp, k.tp + k.fp), 1e-12);
      ASSERT_NEAR(s.recall, oracle::safe_ratio(k.tp, k.tp + k.fn), 1e-12);
    }
  }
}

TEST(CoreMetrics, IdenticalAndOverlap) {
  std::mt19937 rng(1);
  const auto gt = random_labels(20, 20, rng);
  for (const auto& c : core_metrics(gt, gt).classes) {
    EXPECT_EQ(c.fp, 0);
    EXPECT_EQ(c.fn, 0);
  }
  LabelMask a(20, 10, 1.0), b(20, 10, 1.0);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x) {
      a.set(x, y, TissueClass::kInvasive);
      b.set(x + 5, y, TissueClass::kInvasive);
    }
  EXPECT_EQ(core_metrics(a, b).at(TissueClass::kInvasive), (ClassCounts{50, 50, 50}));
  EXPECT_THROW(core_metrics(a, LabelMask(3, 3, 1.0)), InvalidArgument);
  EXPECT_THROW(core_metrics(a, b).at(TissueClass::kBackground), InvalidArgument);
}

TEST(Score, Cases) {
  const auto absent = score(ClassCounts{0, 0, 0});
  EXPECT_EQ(absent.dice, 1.0);
  EXPECT_EQ(absent.precision, 1.0);
  EXPECT_EQ(absent.recall, 1.0);
  const auto half = score(ClassCounts{50, 50, 50});
  EXPECT_DOUBLE_EQ(half.dice, 0.5);
  EXPECT_DOUBLE_EQ(half.precision, 0.5);
  EXPECT_DOUBLE_EQ(half.recall, 0.5);
  const auto fp_only = score(ClassCounts{0, 10, 0});
  EXPECT_EQ(fp_only.dice, 0.0);
  EXPECT_EQ(fp_only.precision, 0.0);
  EXPECT_EQ(fp_only.recall, 1.0);
}

TEST(Score, ScaleFree) {
  std::mt19937 rng(3);
  for (int t = 0; t < 100; ++t) {
    const ClassCounts c{static_cast<long long>(rng() % 50), static_cast<long long>(rng() % 50),
                        static_cast<long long>(rng() % 50)};
    const long long k = 1 + rng() % 9;
    const auto a = score(c), b = score(ClassCounts{c.tp * k, c.fp * k, c.fn * k});
    EXPECT_NEAR(a.dice, b.dice, 1e-12);
    EXPECT_NEAR(a.precision, b.precision, 1e-12);
    EXPECT_NEAR(a.recall, b.recall, 1e-12);
  }
}

TEST(Aggregate, ThreeCoreVariants) {
  const std::vector<CoreMetrics> cores{invasive_counts(4, 1, 1), invasive_counts(0, 0, 0),
                                       invasive_counts(0, 5, 0)};
  const auto i = aggregate(cores, TissueClass::kInvasive, Variant::kI);
  const auto ii = aggregate(cores, TissueClass::kInvasive, Variant::kII);
  const auto iii = aggregate(cores, TissueClass::kInvasive, Variant::kIII);
  ASSERT_TRUE(i && ii && iii);
  EXPECT_NEAR(i->dice.mean, 0.6, 1e-12);
  EXPECT_NEAR(ii->dice.mean, 0.4, 1e-12);
  EXPECT_NEAR(iii->dice.mean, 0.8, 1e-12);
  EXPECT_EQ(i->cores, 3u);
  EXPECT_EQ(ii->cores, 2u);
  EXPECT_EQ(iii->cores, 1u);
  // Population SD over {0.8, 1, 0}.
  EXPECT_NEAR(i->dice.sd, std::sqrt(((0.2 * 0.2) + (0.4 * 0.4) + (0.6 * 0.6)) / 3.0), 1e-12);
}

TEST(Aggregate, AllAbsentAndSingleCore) {
  const std::vector<CoreMetrics> absent(4);
  EXPECT_DOUBLE_EQ(aggregate(absent, TissueClass::kBenign, Variant::kI)->dice.mean, 1.0);
  EXPECT_FALSE(aggregate(absent, TissueClass::kBenign, Variant::kII).has_value());
  EXPECT_FALSE(aggregate(absent, TissueClass::kBenign, Variant::kIII).has_value());

  const std::vector<CoreMetrics> one{invasive_counts(3, 1, 2)};
  const double d = aggregate(one, TissueClass::kInvasive, Variant::kI)->dice.mean;
  EXPECT_EQ(aggregate(one, TissueClass::kInvasive, Variant::kII)->dice.mean, d);
  EXPECT_EQ(aggregate(one, TissueClass::kInvasive, Variant::kIII)->dice.mean, d);

  const auto report = build_report(absent);
  EXPECT_EQ(report.find(TissueClass::kBenign, Variant::kII), nullptr);
  EXPECT_NE(report.find(TissueClass::kBenign, Variant::kI), nullptr);
}

TEST(Aggregate, VariantsAreNested) {
  std::mt19937 rng(10);
  for (int t = 0; t < 50; ++t) {
    const ClassCounts c{static_cast<long long>(rng() % 3), static_cast<long long>(rng() % 3),
                        static_cast<long long>(rng() % 3)};
    EXPECT_TRUE(!includes(Variant::kIII, c) || includes(Variant::kII, c));
    EXPECT_TRUE(!includes(Variant::kII, c) || includes(Variant::kI, c));
  }
}

TEST(Aggregate, PooledPrecisionRecall) {
  const std::vector<CoreMetrics> cores{invasive_counts(10, 10, 0), invasive_counts(30, 0, 10)};
  const auto row = aggregate(cores, TissueClass::kInvasive, Variant::kI, true);
  ASSERT_TRUE(row);
  EXPECT_TRUE(row->pooled);
  EXPECT_DOUBLE_EQ(row->precision.mean, 40.0 / 50.0);
  EXPECT_DOUBLE_EQ(row->recall.mean, 40.0 / 50.0);
  EXPECT_EQ(row->precision.sd, 0.0);
}

TEST(Groups, PartitionAndMeans) {
  const std::vector<EvaluatedCore> cores{{1, "a", invasive_counts(4, 1, 1)},
                                        {2, "b", invasive_counts(3, 2, 2)},
                                        {3, "b", invasive_counts(5, 0, 0)},
                                        {4, "zz", invasive_counts(1, 0, 0)}};
  const std::map<std::string, CaseInfo> meta{{"a", {"NST", "2"}}, {"b", {"Lobular", "3"}}};
  const auto groups = group_metrics(cores, meta);
  std::size_t subtype_total = 0;
  for (const auto& g : groups) {
    if (g.key != "subtype") continue;
    subtype_total += g.report.total_cores;
    const auto* row = g.report.find(TissueClass::kInvasive, Variant::kI);
    ASSERT_NE(row, nullptr);
    if (g.value == "NST" || g.value == "Lobular") EXPECT_NEAR(row->dice.mean, 0.8, 1e-12) << g.value;
  }
  EXPECT_EQ(subtype_total, cores.size());
  const bool unknown = std::any_of(groups.begin(), groups.end(), [](const GroupReport& g) {
    return g.key == "grade" && g.value == "Unknown" && g.report.total_cores == 1;
  });
  EXPECT_TRUE(unknown);
}

TEST(Groups, SingleSubtypeEqualsOverall) {
  std::mt19937 rng(5);
  std::vector<EvaluatedCore> cores;
  std::vector<CoreMetrics> plain;
  for (int i = 0; i < 6; ++i) {
    const auto m = core_metrics(random_labels(8, 8, rng), random_labels(8, 8, rng));
    cores.push_back({i, "c" + std::to_string(i % 2), m});
    plain.push_back(m);
  }
  const std::map<std::string, CaseInfo> meta{{"c0", {"NST", "1"}}, {"c1", {"NST", "2"}}};
  const auto overall = build_report(plain);
  for (const auto& g : group_metrics(cores, meta)) {
    if (g.key != "subtype") continue;
    EXPECT_EQ(g.value, "NST");
    ASSERT_EQ(g.report.rows.size(), overall.rows.size());
    for (std::size_t k = 0; k < overall.rows.size(); ++k)
      EXPECT_DOUBLE_EQ(g.report.rows[k].dice.mean, overall.rows[k].dice.mean);
  }
}

TEST(Reports, WritersProduceParseableOutput) {
  const auto dir = fixture::temp_dir("reports");
  const std::vector<EvaluatedCore> cores{{1, "a", invasive_counts(4, 1, 1)}};
  write_per_core_csv(cores, dir / "per_core.csv");
  std::ifstream csv(dir / "per_core.csv");
  std::string header, row;
  std::getline(csv, header);
  std::getline(csv, row);
  EXPECT_EQ(header.rfind("core_id,case_id", 0), 0u);
  EXPECT_EQ(row.rfind("1,a,4,1,1", 0), 0u) << row;

  const auto report = build_report({cores[0].metrics});
  write_report_json(report, group_metrics(cores, {}), R"({"seed":1})", dir / "report.json");
  std::ifstream in(dir / "report.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j.at("header").at("seed"), 1);
}

TEST(CaseMetadata, Reads) {
  const auto dir = fixture::temp_dir("case_meta");
  std::ofstream(dir / "m.csv") << "case_id,subtype,grade\nA,NST,2\nB,Lobular,\n";
  const auto m = read_case_metadata(dir / "m.csv");
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m.at("A").grade, "2");
  EXPECT_EQ(m.at("B").grade, "");
  std::ofstream(dir / "bad.csv") << "id,x\n";
  EXPECT_THROW(read_case_metadata(dir / "bad.csv"), FormatError);
}

// ---------------------------------------------------------------------------
// Qualitative scores

namespace {

ScoreHistogram hist(std::initializer_list<std::pair<int, long long>> counts) {
  ScoreHistogram h{};
  for (auto [s, n] : counts) h[static_cast<std::size_t>(s)] = n;
  return h;
}

}  // namespace

TEST(Qualitative, HistogramMeans) {
  const auto inv = summarize_histogram(hist({{2, 2}, {3, 21}, {4, 38}, {5, 87}}));
  EXPECT_EQ(inv.n, 148);
  EXPECT_DOUBLE_EQ(inv.mean, 654.0 / 148.0);
  EXPECT_NEAR(inv.sd, 0.78, 0.005);
  const auto all = summarize_histogram(hist({{2, 1}, {3, 8}, {4, 21}, {5, 118}}));
  EXPECT_DOUBLE_EQ(all.mean, 700.0 / 148.0);
  EXPECT_NEAR(all.sd, 0.59, 0.005);
  EXPECT_EQ(summarize_histogram(hist({{0, 12}})).n, 0);
  const auto f = histogram_fractions(hist({{0, 63}, {1, 18}, {2, 3}, {3, 8}, {4, 16}, {5, 40}}));
  EXPECT_EQ(f[0], 0.0);
  EXPECT_NEAR(f[1], 0.21, 0.005);
  EXPECT_NEAR(f[5], 0.47, 0.005);
}

TEST(Qualitative, SummaryFromCases) {
  // Benign column: 63×0, 18×1 (16 of them without benign in the gt), 3×2,
  // 8×3, 16×4, 40×5.
  std::vector<QualScore> scores;
  auto add = [&](int score, int n, bool present) {
    for (int i = 0; i < n; ++i) {
      QualScore q;
      q.case_id = "c" + std::to_string(scores.size());
      q.scores = {5, score, 0, 5};
      q.gt_present = {true, present, false, true};
      scores.push_back(q);
    }
  };
  add(0, 63, false);
  add(1, 16, false);
  add(1, 2, true);
  add(2, 3, true);
  add(3, 8, true);
  add(4, 16, true);
  add(5, 40, true);
  const auto s = qualitative_summary(scores);
  EXPECT_EQ(s.cases, 148u);
  const auto& b = s.classes[static_cast<std::size_t>(QualClass::kBenign)];
  EXPECT_EQ(b.all.n, 85);
  EXPECT_NEAR(b.all.mean, 3.67, 0.005);
  EXPECT_EQ(b.present.n, 69);
  EXPECT_NEAR(b.present.mean, 296.0 / 69.0, 1e-12);
  EXPECT_EQ(b.hist_present[0], 79);
  EXPECT_EQ(s.classes[static_cast<std::size_t>(QualClass::kInSitu)].all.n, 0);

  scores[0].scores[0] = 6;
  EXPECT_THROW(qualitative_summary(scores), InvalidArgument);
}

TEST(Qualitative, CsvInputAndOutputs) {
  const auto dir = fixture::temp_dir("qual");
  std::ofstream(dir / "s.csv") << "case_id,all_epithelium,benign,insitu,invasive,present_benign\n"
                               << "A,5,0,1,4,0\nB,4,3,0,5,1\n";
  const auto q = read_qual_scores(dir / "s.csv");
  ASSERT_EQ(q.size(), 2u);
  EXPECT_FALSE(q[0].gt_present[1]);
  EXPECT_TRUE(q[0].gt_present[0]);
  EXPECT_EQ(q[1].scores[3], 5);
  const auto s = qualitative_summary(q);
  write_qual_summary_json(s, "{}", dir / "summary.json");
  write_qual_histogram_csv(s, dir / "hist.csv");
  std::ifstream in(dir / "summary.json");
  EXPECT_FALSE(nlohmann::json::parse(in).is_discarded());
  std::ifstream h(dir / "hist.csv");
  int lines = 0;
  for (std::string l; std::getline(h, l);) ++lines;
  EXPECT_EQ(lines, 7);
}

// ---------------------------------------------------------------------------
// Predictor protocol and stitching

TEST(Protocol, RequestByteLayout) {
  const auto dir = fixture::temp_dir("protocol");
  RasterImage img(2, 1, 3, 1.0, std::vector<std::uint8_t>{0, 51, 102, 153, 204, 255});
  write_predictor_request(img, dir / "r.ptch");
  const auto b = slurp(dir / "r.ptch");
  ASSERT_EQ(b.size(), 20u + 6u * 4u);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "PTCH");
  EXPECT_EQ(u32_at(b, 4), 1u);
  EXPECT_EQ(u32_at(b, 8), 1u);   // height
  EXPECT_EQ(u32_at(b, 12), 2u);  // width
  EXPECT_EQ(u32_at(b, 16), 3u);
  for (int i = 0; i < 6; ++i) EXPECT_FLOAT_EQ(f32_at(b, 20 + 4 * i), i * 51 / 255.0f);
  const auto back = read_predictor_request(dir / "r.ptch");
  EXPECT_EQ(back.width(), 2);
  EXPECT_FLOAT_EQ(back(1, 0, 2), 1.0f);
}

TEST(Protocol, ResponseRoundTripAndValidation) {
  const auto dir = fixture::temp_dir("protocol_resp");
  ProbabilityRaster p(3, 2, 4, 1.0, 0.25f);
  write_predictor_response(p, dir / "r.pred");
  const auto b = slurp(dir / "r.pred");
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "PRED");
  EXPECT_EQ(u32_at(b, 16), 4u);
  EXPECT_EQ(read_predictor_response(dir / "r.pred").storage(), p.storage());

  std::ofstream(dir / "junk.pred") << "PTCHxxxx";
  EXPECT_THROW(read_predictor_response(dir / "junk.pred"), FormatError);
  EXPECT_NO_THROW(check_prediction(p, 3, 2));
  EXPECT_THROW(check_prediction(p, 2, 2), PredictorError);
  p(0, 0, 0) = 0.5f;
  EXPECT_THROW(check_prediction(p, 3, 2), PredictorError);
}

TEST(External, ReferencePredictorRuns) {
  const auto dir = fixture::temp_dir("external_ref");
  const ExternalPredictor pred(EPISEG_REFERENCE_PREDICTOR, dir);
  RasterImage img(16, 12, 3, 1.0, 255);
  const auto out = pred.predict(img, {});
  EXPECT_NO_THROW(check_prediction(out, 16, 12));
  // White is background.
  EXPECT_GT(out(3, 3, 0), 0.9f);
}

TEST(External, FailuresArePredictorErrors) {
  const auto dir = fixture::temp_dir("external_bad");
  const RasterImage img(8, 8, 3, 1.0, 255);
  EXPECT_THROW(ExternalPredictor("/bin/false", dir).predict(img, {}), PredictorError);
  EXPECT_THROW(ExternalPredictor(dir / "missing", dir).predict(img, {}), PredictorError);

  // Answers every request with a 2×2 response.
  write_predictor_response(ProbabilityRaster(2, 2, 4, 1.0, 0.25f), dir / "small.pred");
  const auto script = dir / "wrong_dims.sh";
  std::ofstream(script) << "#!/bin/sh\ncp '" << (dir / "small.pred").string() << "' \"$2\"\n";
  std::filesystem::permissions(script, std::filesystem::perms::owner_all);
  const ExternalPredictor wrong(script, dir);
  EXPECT_NO_THROW((void)wrong.predict(img, {}));
  EXPECT_THROW(stitch_predict(img, wrong, {8, 0.3, 1}), PredictorError);
}

TEST(Stitch, ConstantAndOracle) {
  const auto core = fixture::textured(70, 50, 3);
  const auto inv = stitch_predict(core, ConstantPredictor(TissueClass::kInvasive), {32, 0.3, 1});
  EXPECT_EQ(inv.count(TissueClass::kInvasive), inv.pixel_count());

  std::mt19937 rng(4);
  const auto truth = random_labels(70, 50, rng);
  EXPECT_EQ(stitch_predict(core, OraclePredictor(truth), {32, 0.3, 1}).storage(), truth.storage());
  EXPECT_EQ(stitch_predict(core, OraclePredictor(truth), {128, 0.3, 1}).storage(), truth.storage());
}

TEST(Stitch, TieGoesToLowestClass) {
  // Width 14, patch 10, overlap 0.3: anchors 0 and 4, overlap columns 4..9.
  const RasterImage core(14, 3, 3, 1.0, 255);
  const auto out = stitch_predict(core, SplitVote(), {10, 0.3, 1});
  for (int x = 0; x < 14; ++x) {
    EXPECT_EQ(out.at(x, 1), x < 10 ? TissueClass::kInvasive : TissueClass::kBenign) << x;
  }
}

TEST(Stitch, ThreadCountDoesNotMatter) {
  const auto core = fixture::textured(150, 110, 9);
  const auto one = stitch_predict(core, Smooth(), {32, 0.4, 1});
  for (int t : {2, 3, 8}) EXPECT_EQ(stitch_predict(core, Smooth(), {32, 0.4, t}), one) << t;
}
