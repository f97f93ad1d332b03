#include "episeg/registration.hpp"

#include <fftw3.h>

#include <array>
#include <cmath>
#include <complex>
#include <memory>
#include <mutex>

namespace episeg {

RasterImage to_grayscale(const RasterImage& img) {
  if (img.channels() == 1) return img;
  RasterImage out(img.width(), img.height(), 1, img.mpp());
  auto src = img.data();
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    const int v = 299 * src[3 * i] + 587 * src[3 * i + 1] + 114 * src[3 * i + 2];
    out.data()[i] = static_cast<std::uint8_t>((v + 500) / 1000);
  }
  return out;
}

RasterImage equalize(const RasterImage& gray) {
  if (gray.channels() != 1) throw InvalidArgument("equalize needs a grayscale image");
  std::array<std::uint64_t, 256> hist{};
  for (auto v : gray.data()) ++hist[v];
  const std::uint64_t total = gray.pixel_count();
  std::array<std::uint8_t, 256> lut{};
  std::uint64_t cum = 0;
  for (int v = 0; v < 256; ++v) {
    cum += hist[v];
    lut[v] = static_cast<std::uint8_t>((255 * cum) / total);
  }
  RasterImage out = gray;
  for (auto& v : out.storage()) v = lut[v];
  return out;
}

namespace {

// Planner calls are not thread-safe in FFTW; execution is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(fftw_complex* p) const noexcept { fftw_free(p); }
};
using ComplexBuffer = std::unique_ptr<fftw_complex[], FftwFree>;

ComplexBuffer alloc_complex(std::size_t n) {
  auto* p = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n));
  if (p == nullptr) throw std::bad_alloc();
  return ComplexBuffer(p);
}

class Plan {
 public:
  Plan(int h, int w, fftw_complex* in, fftw_complex* out, int sign) {
    std::lock_guard lock(planner_mutex());
    plan_ = fftw_plan_dft_2d(h, w, in, out, sign, FFTW_ESTIMATE);
  }
  ~Plan() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_);
  }
  Plan(const Plan&) = delete;
  Plan& operator=(const Plan&) = delete;
  void execute() const { fftw_execute(plan_); }

 private:
  fftw_plan plan_;
};

}  // namespace

ShiftVector phase_correlation(const RasterImage& fixed, const RasterImage& moving) {
  if (fixed.channels() != 1 || moving.channels() != 1) {
    throw InvalidArgument("phase_correlation needs grayscale rasters");
  }
  if (fixed.width() != moving.width() || fixed.height() != moving.height()) {
    throw InvalidArgument("phase_correlation needs equal dimensions");
  }
  const int w = fixed.width(), h = fixed.height();
  if (w < 8 || h < 8) throw InvalidArgument("phase_correlation needs at least 8x8 pixels");
  const std::size_t n = fixed.pixel_count();

  auto a = alloc_complex(n);
  auto b = alloc_complex(n);
  {
    Plan fa(h, w, a.get(), a.get(), FFTW_FORWARD);
    Plan fb(h, w, b.get(), b.get(), FFTW_FORWARD);
    for (std::size_t i = 0; i < n; ++i) {
      a[i][0] = fixed.data()[i];
      a[i][1] = 0.0;
      b[i][0] = moving.data()[i];
      b[i][1] = 0.0;
    }
    fa.execute();
    fb.execute();
  }
  // conj(F_fixed)·F_moving puts the peak at +shift of moving.
  for (std::size_t i = 0; i < n; ++i) {
    const std::complex<double> fa(a[i][0], a[i][1]);
    const std::complex<double> fb(b[i][0], b[i][1]);
    std::complex<double> r = std::conj(fa) * fb;
    const double mag = std::abs(r);
    r = mag > 1e-12 ? r / mag : std::complex<double>(0.0, 0.0);
    a[i][0] = r.real();
    a[i][1] = r.imag();
  }
  {
    Plan inv(h, w, a.get(), a.get(), FFTW_BACKWARD);
    inv.execute();
  }
  std::size_t best = 0;
  double best_mag = -1.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double mag = std::hypot(a[i][0], a[i][1]);
    total += mag;
    if (mag > best_mag) {
      best_mag = mag;
      best = i;
    }
  }
  int px = static_cast<int>(best % static_cast<std::size_t>(w));
  int py = static_cast<int>(best / static_cast<std::size_t>(w));
  if (px > w / 2) px -= w;
  if (py > h / 2) py -= h;
  const double confidence = total > 0.0 ? std::clamp(best_mag / total, 0.0, 1.0) : 0.0;
  return {px, py, confidence};
}

ShiftVector register_pair(const RasterImage& he, const RasterImage& ck, int factor) {
  if (he.width() != ck.width() || he.height() != ck.height()) {
    throw InvalidArgument("register_pair needs equal dimensions");
  }
  if (factor < 1) throw InvalidArgument("registration factor must be >= 1");
  const RasterImage fixed = downsample(to_grayscale(he), factor);
  const RasterImage moving = downsample(equalize(to_grayscale(ck)), factor);
  ShiftVector s = phase_correlation(fixed, moving);
  s.dx *= factor;
  s.dy *= factor;
  return s;
}

namespace {

template <typename T>
Grid<T> shift_grid(const Grid<T>& src, const ShiftVector& s, T fill) {
  Grid<T> out(src.width(), src.height(), src.channels(), src.mpp(), fill);
  const int w = src.width(), h = src.height(), ch = src.channels();
  const int x0 = std::max(0, s.dx), x1 = std::min(w, w + s.dx);
  if (x1 <= x0) return out;
  for (int y = std::max(0, s.dy); y < std::min(h, h + s.dy); ++y) {
    auto from = src.data().subspan(src.index(x0 - s.dx, y - s.dy),
                                   static_cast<std::size_t>(x1 - x0) * ch);
    std::copy(from.begin(), from.end(), out.data().begin() + static_cast<std::ptrdiff_t>(out.index(x0, y)));
  }
  return out;
}

}  // namespace

RasterImage apply_shift(const RasterImage& img, const ShiftVector& s) {
  return RasterImage(shift_grid<std::uint8_t>(img, s, 255));
}

BinaryMask apply_shift(const BinaryMask& mask, const ShiftVector& s) {
  return BinaryMask(shift_grid<std::uint8_t>(mask, s, 0));
}

LabelMask apply_shift(const LabelMask& mask, const ShiftVector& s) {
  return LabelMask(shift_grid<std::uint8_t>(mask, s, 0));
}

}  // namespace episeg
