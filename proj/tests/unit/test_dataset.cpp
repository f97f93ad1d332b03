#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "episeg/dataset.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace episeg;

namespace {

BinaryMask mask_from(int w, int h, std::initializer_list<int> on) {
  BinaryMask m(w, h, 1.0);
  for (int i : on) m.data()[static_cast<std::size_t>(i)] = 1;
  return m;
}

LabelMask random_labels(int w, int h, std::mt19937& rng) {
  LabelMask m(w, h, 1.0);
  for (auto& v : m.storage()) v = static_cast<std::uint8_t>(rng() % 4);
  return m;
}

double dice(const LabelMask& a, const LabelMask& b, int c) {
  const auto k = oracle::count_class(a, b, c);
  return oracle::safe_ratio(2.0 * k.tp, 2.0 * k.tp + k.fp + k.fn);
}

// Tissue texture framed by a white border.
RasterImage framed_texture(int size, int border, std::uint32_t seed) {
  const auto inner = fixture::textured(size - 2 * border, size - 2 * border, seed);
  RasterImage out(size, size, 3, fixture::kMpp, 255);
  for (int y = 0; y < inner.height(); ++y)
    for (int x = 0; x < inner.width(); ++x)
      for (int c = 0; c < 3; ++c) out(x + border, y + border, c) = inner(x, y, c);
  return out;
}

CorePair pair_of(RasterImage he, RasterImage ck) {
  CorePair p;
  p.he.id = 3;
  p.level_factor = 1;
  p.level_rect = {100, 200, he.width(), he.height()};
  p.he_raster = std::move(he);
  p.ck_raster = std::move(ck);
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------

TEST(GroundTruth, ClassRules) {
  // Pixels: 0 DAB+benign, 1 DAB only, 2 benign only, 3 DAB+insitu, 4 DAB+both,
  // 5 DAB+excluded.
  const auto dab = mask_from(6, 1, {0, 1, 3, 4, 5});
  const auto benign = mask_from(6, 1, {0, 2, 4});
  const auto insitu = mask_from(6, 1, {3, 4});
  const auto exclude = mask_from(6, 1, {5});
  const auto gt = build_ground_truth(dab, benign, insitu, exclude);
  EXPECT_EQ(gt.labels.at(0, 0), TissueClass::kBenign);
  EXPECT_EQ(gt.labels.at(1, 0), TissueClass::kInvasive);
  EXPECT_EQ(gt.labels.at(2, 0), TissueClass::kBackground);
  EXPECT_EQ(gt.labels.at(3, 0), TissueClass::kInSitu);
  EXPECT_EQ(gt.labels.at(4, 0), TissueClass::kInSitu);
  EXPECT_EQ(gt.labels.at(5, 0), TissueClass::kBackground);
  EXPECT_EQ(gt.annotation_overlap_px, 1);
  EXPECT_FALSE(gt.excluded);

  const auto benign_first = build_ground_truth(dab, benign, insitu, exclude, {false});
  EXPECT_EQ(benign_first.labels.at(4, 0), TissueClass::kBenign);
  EXPECT_THROW(build_ground_truth(dab, BinaryMask(2, 2, 1.0), insitu, exclude), InvalidArgument);
}

TEST(GroundTruth, PartitionAndSubsetProperty) {
  std::mt19937 rng(4);
  for (int t = 0; t < 20; ++t) {
    auto rnd = [&] {
      BinaryMask m(16, 16, 1.0);
      for (auto& v : m.storage()) v = rng() % 2;
      return m;
    };
    const auto dab = rnd(), b = rnd(), s = rnd(), e = rnd();
    const auto gt = build_ground_truth(dab, b, s, e);
    for (std::size_t i = 0; i < dab.pixel_count(); ++i) {
      const bool fg = gt.labels.data()[i] != 0;
      ASSERT_EQ(fg, dab.data()[i] && !e.data()[i]);
    }
  }
}

TEST(GroundTruth, ExcludedWhenCentreCovered) {
  const BinaryMask none(8, 8, 1.0);
  BinaryMask centre(8, 8, 1.0);
  centre.set(4, 4, true);
  EXPECT_TRUE(build_ground_truth(none, none, none, centre).excluded);
}

TEST(Labels, MajorityAndNearest) {
  LabelMask m(4, 2, 1.0);
  // Block (0..1): {1,1,2,2} tie -> 1. Block (2..3): {0,3,3,2} -> 3.
  m.set(0, 0, TissueClass::kInvasive);
  m.set(1, 0, TissueClass::kInvasive);
  m.set(0, 1, TissueClass::kBenign);
  m.set(1, 1, TissueClass::kBenign);
  m.set(3, 0, TissueClass::kInSitu);
  m.set(2, 1, TissueClass::kInSitu);
  m.set(3, 1, TissueClass::kBenign);
  const auto d = downsample_majority(m, 2);
  EXPECT_EQ(d.at(0, 0), TissueClass::kInvasive);
  EXPECT_EQ(d.at(1, 0), TissueClass::kInSitu);
  EXPECT_DOUBLE_EQ(d.mpp(), 2.0);

  const auto up = resize_nearest(d, 4, 2);
  EXPECT_EQ(up.at(1, 1), TissueClass::kInvasive);
  EXPECT_EQ(up.at(2, 0), TissueClass::kInSitu);
}

TEST(Labels, OneHotRoundTrip) {
  std::mt19937 rng(1);
  const auto m = random_labels(9, 7, rng);
  const auto planes = to_one_hot(m);
  ASSERT_EQ(planes.channels(), 4);
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 9; ++x) {
      int s = 0;
      for (int c = 0; c < 4; ++c) s += planes(x, y, c);
      ASSERT_EQ(s, 1);
    }
  EXPECT_EQ(from_one_hot(planes), m);
  auto bad = planes;
  bad(0, 0, 0) = bad(0, 0, 1) = 1;
  EXPECT_THROW(from_one_hot(bad), InvalidArgument);
}

// ---------------------------------------------------------------------------

TEST(PatchGrid, Anchors) {
  PatchGridConfig cfg;
  EXPECT_EQ(patch_stride(cfg), 768);
  EXPECT_EQ(axis_anchors(2048, cfg), (std::vector<int>{0, 768, 1024}));
  EXPECT_EQ(patch_grid(2048, 2048, cfg).size(), 9u);
  EXPECT_EQ(patch_grid(1024, 1024, cfg), (std::vector<Anchor>{{0, 0}}));
  EXPECT_EQ(axis_anchors(500, cfg), (std::vector<int>{0}));
  cfg.overlap_fraction = 0.30;
  EXPECT_EQ(patch_stride(cfg), 717);
  EXPECT_EQ(axis_anchors(2048, cfg), (std::vector<int>{0, 717, 1024}));
  EXPECT_EQ(axis_anchors(1536, cfg), (std::vector<int>{0, 512}));
}

TEST(PatchGrid, CoversEveryPixel) {
  std::mt19937 rng(12);
  for (int t = 0; t < 30; ++t) {
    PatchGridConfig cfg;
    cfg.patch_size = 8 + static_cast<int>(rng() % 40);
    cfg.overlap_fraction = (rng() % 90) / 100.0;
    const int w = 1 + static_cast<int>(rng() % 200), h = 1 + static_cast<int>(rng() % 200);
    std::vector<int> cover(static_cast<std::size_t>(w) * h, 0);
    for (const auto& a : patch_grid(w, h, cfg)) {
      ASSERT_GE(a.x, 0);
      ASSERT_GE(a.y, 0);
      for (int y = a.y; y < std::min(h, a.y + cfg.patch_size); ++y)
        for (int x = a.x; x < std::min(w, a.x + cfg.patch_size); ++x) ++cover[static_cast<std::size_t>(y) * w + x];
    }
    ASSERT_EQ(std::count(cover.begin(), cover.end(), 0), 0) << w << "x" << h << " p=" << cfg.patch_size;
  }
}

TEST(PatchGrid, RejectsBadConfig) {
  PatchGridConfig cfg;
  cfg.overlap_fraction = 1.0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = {};
  cfg.patch_size = 0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
}

TEST(SetTag, Assignment) {
  LabelMask m(3, 1, 1.0);
  EXPECT_EQ(assign_set(m), SetTag::kInvasive);
  m.set(0, 0, TissueClass::kInvasive);
  m.set(1, 0, TissueClass::kBenign);
  EXPECT_EQ(assign_set(m), SetTag::kBenign);
  m.set(2, 0, TissueClass::kInSitu);
  EXPECT_EQ(assign_set(m), SetTag::kInSitu);
  for (auto t : {SetTag::kInSitu, SetTag::kBenign, SetTag::kInvasive}) EXPECT_EQ(parse_set_tag(to_string(t)), t);
  EXPECT_EQ(to_string(SetTag::kInSitu), "insitu");
}

// ---------------------------------------------------------------------------

TEST(CutPatches, TissueFractionCutoff) {
  PatchGridConfig cfg;
  cfg.patch_size = 100;
  for (auto [rows, kept] : {std::pair{24, false}, std::pair{26, true}}) {
    RasterImage he(100, 100, 3, fixture::kMpp, 255);
    fixture::paint_rect(he, {0, 0, 100, rows}, fixture::kPink);
    const auto out = cut_patches(pair_of(he, he), LabelMask(100, 100, fixture::kMpp), cfg);
    EXPECT_EQ(out.size(), kept ? 1u : 0u) << rows;
    if (kept) EXPECT_DOUBLE_EQ(out[0].tissue_fraction, rows / 100.0);
  }
  RasterImage glass(100, 100, 3, fixture::kMpp, 255);
  EXPECT_TRUE(cut_patches(pair_of(glass, glass), LabelMask(100, 100, fixture::kMpp), cfg).empty());
}

TEST(CutPatches, ResidualShiftIsUndone) {
  const auto he = framed_texture(256, 24, 31);
  LabelMask truth(256, 256, fixture::kMpp);
  const auto tissue = tissue_mask(he);
  for (std::size_t i = 0; i < tissue.pixel_count(); ++i) truth.data()[i] = tissue.data()[i] ? 1 : 0;
  const ShiftVector residual{4, 0};
  const auto ck = apply_shift(he, residual);
  const auto gt_ck = apply_shift(truth, residual);

  PatchGridConfig cfg;
  cfg.patch_size = 256;
  cfg.min_tissue_fraction = 0.0;
  const auto out = cut_patches(pair_of(he, ck), gt_ck, cfg, {"s1", 4, {}});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].shift_applied.dx, 4);
  EXPECT_EQ(out[0].shift_applied.dy, 0);
  EXPECT_GE(dice(out[0].gt, truth, 1), 0.99);
  EXPECT_GE(dice(out[0].gt, truth, 0), 0.99);
  EXPECT_EQ(out[0].origin.slide, "s1");
  EXPECT_EQ(out[0].origin.core, 3);
  EXPECT_EQ(out[0].origin.x, 100);
  EXPECT_EQ(out[0].origin.y, 200);
  EXPECT_EQ(out[0].set_tag, SetTag::kInvasive);
}

TEST(CutPatches, DimensionMismatch) {
  const RasterImage he(64, 64, 3, 1.0, 255);
  EXPECT_THROW(cut_patches(pair_of(he, he), LabelMask(32, 32, 1.0), {}), InvalidArgument);
}

// ---------------------------------------------------------------------------

namespace {

// HE pixels coloured by class, so label/image agreement is checkable after
// geometric transforms.
PatchRecord coded_record(std::uint32_t seed) {
  std::mt19937 rng(seed);
  PatchRecord rec;
  rec.gt = LabelMask(48, 32, 1.0);
  rec.he = RasterImage(48, 32, 3, 1.0);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 48; ++x) {
      const int c = static_cast<int>(rng() % 3) + 1;
      rec.gt(x, y) = static_cast<std::uint8_t>(c);
      for (int k = 0; k < 3; ++k) rec.he(x, y, k) = static_cast<std::uint8_t>(40 * c + k);
    }
  rec.origin = {"s", 1, 10, 20, 1};
  return rec;
}

}  // namespace

TEST(Augmentation, ZeroProbabilityIsIdentity) {
  AugmentationConfig cfg;
  cfg.p_flip = cfg.p_rot90 = cfg.p_brightness = cfg.p_hue = cfg.p_saturation = cfg.p_shift = cfg.p_blur = 0;
  const auto rec = coded_record(1);
  const auto out = augment(rec, cfg, 99);
  EXPECT_EQ(out.he, rec.he);
  EXPECT_EQ(out.gt, rec.gt);
}

TEST(Augmentation, DeterministicPerSeedAndOrigin) {
  const AugmentationConfig cfg;
  const auto rec = coded_record(2);
  const auto a = augment(rec, cfg, 5), b = augment(rec, cfg, 5);
  EXPECT_EQ(a.he, b.he);
  EXPECT_EQ(a.gt, b.gt);
  std::set<std::vector<std::uint8_t>> distinct;
  for (std::uint64_t s = 0; s < 20; ++s) distinct.insert(augment(rec, cfg, s).he.storage());
  EXPECT_GT(distinct.size(), 5u);
}

TEST(Augmentation, GeometryKeepsLabelsWithImage) {
  AugmentationConfig cfg;
  cfg.p_flip = cfg.p_rot90 = cfg.p_shift = 1.0;
  cfg.p_brightness = cfg.p_hue = cfg.p_saturation = cfg.p_blur = 0;
  const auto rec = coded_record(3);
  for (std::uint64_t s = 0; s < 30; ++s) {
    const auto plan = plan_augmentation(cfg, s, rec.origin);
    const auto out = apply_augmentation(rec, plan);
    ASSERT_EQ(out.he.width(), out.gt.width());
    ASSERT_EQ(out.he.height(), out.gt.height());
    for (int y = 0; y < out.gt.height(); ++y)
      for (int x = 0; x < out.gt.width(); ++x) {
        const int c = out.gt(x, y);
        if (c == 0) {
          ASSERT_EQ(out.he(x, y, 0), 255);
        } else {
          ASSERT_EQ(out.he(x, y, 0), 40 * c);
        }
      }
    const auto planes = to_one_hot(out.gt);
    for (int y = 0; y < planes.height(); ++y)
      for (int x = 0; x < planes.width(); ++x)
        ASSERT_EQ(planes(x, y, 0) + planes(x, y, 1) + planes(x, y, 2) + planes(x, y, 3), 1);
  }
}

TEST(Augmentation, PhotometricLeavesLabels) {
  AugmentationConfig cfg;
  cfg.p_flip = cfg.p_rot90 = cfg.p_shift = 0;
  cfg.p_brightness = cfg.p_hue = cfg.p_saturation = cfg.p_blur = 1.0;
  const auto rec = coded_record(4);
  const auto out = augment(rec, cfg, 7);
  EXPECT_EQ(out.gt, rec.gt);
  EXPECT_NE(out.he, rec.he);
}

TEST(Augmentation, GeometricPrimitives) {
  std::mt19937 rng(6);
  const auto m = random_labels(5, 3, rng);
  const Grid<std::uint8_t>& g = m;
  EXPECT_EQ(rotate_grid(rotate_grid(g, 1), 3), g);
  EXPECT_EQ(rotate_grid(g, 4), g);
  EXPECT_EQ(flip_grid(flip_grid(g, false), false), g);
  EXPECT_EQ(rotate_grid(rotate_grid(g, 1), 1), rotate_grid(g, 2));
  const auto r = rotate_grid(g, 1);
  EXPECT_EQ(r.width(), 3);
  // Clockwise: top-left goes to top-right.
  EXPECT_EQ(r(2, 0), g(0, 0));
  EXPECT_EQ(translate_grid<std::uint8_t>(g, 1, 0, 9)(0, 0), 9);
  EXPECT_EQ(translate_grid<std::uint8_t>(g, 1, 0, 9)(1, 0), g(0, 0));
}

// ---------------------------------------------------------------------------

TEST(Sampler, BalancedFrequencies) {
  BalancedSampler s({5, 50, 500}, 17);
  std::array<int, 3> hits{};
  for (int i = 0; i < 3000; ++i) {
    const auto r = s.next();
    ++hits[static_cast<std::size_t>(r.set)];
  }
  for (int h : hits) EXPECT_NEAR(h / 3000.0, 1.0 / 3.0, 0.05);
}

TEST(Sampler, SingletonsAreOversampled) {
  BalancedSampler s({1, 1, 1000}, 3);
  std::map<std::pair<int, std::size_t>, int> hits;
  for (int i = 0; i < 3000; ++i) {
    const auto r = s.next();
    ++hits[{static_cast<int>(r.set), r.index}];
  }
  EXPECT_NEAR((hits[{0, 0}]), 1000, 120);
  EXPECT_NEAR((hits[{1, 0}]), 1000, 120);
}

TEST(Sampler, SameSeedSameStream) {
  BalancedSampler a({3, 4, 5}, 8), b({3, 4, 5}, 8), c({3, 4, 5}, 9);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next(), y = b.next(), z = c.next();
    ASSERT_EQ(x.set, y.set);
    ASSERT_EQ(x.index, y.index);
    differs |= x.set != z.set || x.index != z.index;
  }
  EXPECT_TRUE(differs);
}

TEST(Sampler, EmptySetIsNamed) {
  try {
    BalancedSampler s({3, 0, 5}, 1);
    FAIL();
  } catch (const ConfigurationError& e) {
    EXPECT_NE(std::string(e.what()).find("benign"), std::string::npos) << e.what();
  }
}

// ---------------------------------------------------------------------------

TEST(PatchStore, RoundTrip) {
  const auto dir = fixture::temp_dir("patch_store");
  PatchStoreWriter w(dir);
  auto a = coded_record(1);
  a.he.set_mpp(0.5);
  a.gt.set_mpp(0.5);
  a.set_tag = SetTag::kBenign;
  a.tissue_fraction = 0.75;
  a.shift_applied = {4, -4, 0.5};
  auto b = coded_record(2);
  b.origin.core = 7;
  EXPECT_EQ(w.add(a), 0u);
  EXPECT_EQ(w.add(b), 1u);
  w.finish(R"({"config_hash":"abc"})");

  const auto idx = read_patch_index(dir);
  ASSERT_EQ(idx.size(), 2u);
  EXPECT_EQ(idx[0].set_tag, SetTag::kBenign);
  EXPECT_DOUBLE_EQ(idx[0].tissue_fraction, 0.75);
  EXPECT_EQ(idx[0].shift_applied.dx, 4);
  EXPECT_EQ(idx[1].origin.core, 7);
  const auto back = load_patch(dir, idx[0]);
  EXPECT_EQ(back.he, a.he);
  EXPECT_EQ(back.gt, a.gt);

  std::ifstream in(dir / "index.jsonl");
  std::string line;
  std::getline(in, line);
  const auto j = nlohmann::json::parse(line);
  EXPECT_EQ(j.at("config_hash"), "abc");
  EXPECT_EQ(j.at("set_tag"), "benign");
  EXPECT_EQ(j.at("origin").at("x"), 10);
}

TEST(PatchStore, MalformedIndexNamesLine) {
  const auto dir = fixture::temp_dir("patch_store_bad");
  std::ofstream(dir / "index.jsonl") << "{}\n";
  try {
    read_patch_index(dir);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos) << e.what();
  }
}
