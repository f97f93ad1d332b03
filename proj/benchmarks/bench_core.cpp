#include <benchmark/benchmark.h>

#include <random>

#include "episeg/eval.hpp"
#include "episeg/mask_ops.hpp"
#include "episeg/registration.hpp"
#include "episeg/stain.hpp"

using namespace episeg;

namespace {

constexpr double kMpp = 0.3448;

RasterImage noise_rgb(int side, std::uint32_t seed) {
  std::mt19937 rng(seed);
  RasterImage img(side, side, 3, kMpp);
  for (auto& v : img.storage()) v = static_cast<std::uint8_t>(rng());
  return img;
}

// Smooth-ish texture so phase correlation has a real peak.
RasterImage blobs_gray(int side, std::uint32_t seed) {
  std::mt19937 rng(seed);
  RasterImage img(side, side, 1, kMpp, 255);
  for (int k = 0; k < 60; ++k) {
    const int cx = static_cast<int>(rng() % side), cy = static_cast<int>(rng() % side);
    const int r = 4 + static_cast<int>(rng() % 24);
    const auto g = static_cast<std::uint8_t>(rng() % 200);
    for (int y = std::max(0, cy - r); y < std::min(side, cy + r); ++y)
      for (int x = std::max(0, cx - r); x < std::min(side, cx + r); ++x)
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) < r * r) img(x, y, 0) = g;
  }
  return img;
}

}  // namespace

static void BM_Downsample(benchmark::State& state) {
  const auto img = noise_rgb(static_cast<int>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(downsample(img, 4));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(img.pixel_count()));
}
BENCHMARK(BM_Downsample)->Arg(1024)->Arg(4096);

static void BM_ConnectedComponents(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  std::mt19937 rng(2);
  BinaryMask m(side, side, kMpp);
  for (auto& v : m.storage()) v = rng() % 3 == 0;
  for (auto _ : state) benchmark::DoNotOptimize(connected_components(m, Connectivity::kEight));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(m.pixel_count()));
}
BENCHMARK(BM_ConnectedComponents)->Arg(512)->Arg(2048);

static void BM_PhaseCorrelation(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const auto fixed = blobs_gray(side, 3);
  const auto moving = apply_shift(fixed, ShiftVector{7, -5});
  for (auto _ : state) benchmark::DoNotOptimize(phase_correlation(fixed, moving));
}
BENCHMARK(BM_PhaseCorrelation)->Arg(256)->Arg(1024);

static void BM_DabMask(benchmark::State& state) {
  const auto img = noise_rgb(static_cast<int>(state.range(0)), 4);
  const auto stains = StainMatrix::hdab_default();
  const DeconvConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(dab_mask(img, stains, cfg));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(img.pixel_count()));
}
BENCHMARK(BM_DabMask)->Arg(512)->Arg(2048);

static void BM_StitchConstant(benchmark::State& state) {
  const auto core = noise_rgb(2048, 5);
  const ConstantPredictor predictor(TissueClass::kInvasive);
  StitchConfig cfg;
  cfg.patch_size = 512;
  cfg.threads = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(stitch_predict(core, predictor, cfg));
}
BENCHMARK(BM_StitchConstant)->Arg(1)->Arg(4)->UseRealTime();
BENCHMARK_MAIN();
