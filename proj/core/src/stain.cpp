#include "episeg/stain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

namespace episeg {

namespace {

double norm(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

Vec3 normalized(const Vec3& v) {
  const double n = norm(v);
  if (!(n > 0.0)) throw InvalidArgument("stain vector must be nonzero");
  return {v[0] / n, v[1] / n, v[2] / n};
}

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

}  // namespace

StainMatrix::StainMatrix(const Vec3& hematoxylin, const Vec3& dab) {
  rows_[0] = normalized(hematoxylin);
  rows_[1] = normalized(dab);
  const Vec3 c = cross(rows_[0], rows_[1]);
  if (norm(c) < 1e-9) throw InvalidArgument("hematoxylin and DAB vectors are parallel");
  rows_[2] = normalized(c);
  finish();
}

StainMatrix StainMatrix::from_rows(const Vec3& r0, const Vec3& r1, const Vec3& r2) {
  StainMatrix m;
  m.rows_ = {normalized(r0), normalized(r1), normalized(r2)};
  m.finish();
  return m;
}

StainMatrix StainMatrix::hdab_default() { return StainMatrix({0.65, 0.70, 0.29}, {0.27, 0.57, 0.78}); }

void StainMatrix::finish() {
  const auto& a = rows_;
  const double det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) -
                     a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
                     a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
  if (std::abs(det) < 1e-9) throw InvalidArgument("stain matrix is singular");
  // Adjugate / determinant.
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const int r0 = (j + 1) % 3, r1 = (j + 2) % 3;
      const int c0 = (i + 1) % 3, c1 = (i + 2) % 3;
      inverse_[i][j] = (a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0]) / det;
    }
  }
}

Vec3 StainMatrix::compose(const Vec3& c) const noexcept {
  Vec3 od{};
  for (int j = 0; j < 3; ++j) {
    od[j] = c[0] * rows_[0][j] + c[1] * rows_[1][j] + c[2] * rows_[2][j];
  }
  return od;
}

Vec3 StainMatrix::unmix(const Vec3& od) const noexcept {
  Vec3 c{};
  for (int j = 0; j < 3; ++j) {
    c[j] = od[0] * inverse_[0][j] + od[1] * inverse_[1][j] + od[2] * inverse_[2][j];
  }
  return c;
}

StainMatrix read_stain_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open stain matrix " + path.string());
  std::array<Vec3, 3> rows{};
  std::string line;
  int r = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    if (r == 3) throw FormatError("stain matrix has more than 3 rows");
    std::istringstream ss(line);
    for (int c = 0; c < 3; ++c) {
      if (!(ss >> rows[r][c])) throw FormatError("stain matrix row " + std::to_string(r) + " needs 3 numbers");
    }
    ++r;
  }
  if (r != 3) throw FormatError("stain matrix needs 3 rows");
  return StainMatrix::from_rows(rows[0], rows[1], rows[2]);
}

void DeconvConfig::validate() const {
  if (!(sigma >= 0.0)) throw InvalidArgument("deconv sigma must be >= 0");
  if (!(threshold > 0.0)) throw InvalidArgument("deconv threshold must be > 0");
  if (!(target_mpp > 0.0)) throw InvalidArgument("deconv target_mpp must be > 0");
  if (!(mpp_tolerance >= 0.0)) throw InvalidArgument("deconv mpp_tolerance must be >= 0");
}

RealRaster rgb_to_od(const RasterImage& img) {
  if (img.channels() != 3) throw InvalidArgument("rgb_to_od needs a 3-channel image");
  std::array<double, 256> lut{};
  for (int v = 0; v < 256; ++v) lut[v] = -std::log10(std::max(v, 1) / 255.0);
  std::vector<double> od(img.sample_count());
  std::transform(img.data().begin(), img.data().end(), od.begin(),
                 [&](std::uint8_t v) { return lut[v]; });
  return RealRaster(img.width(), img.height(), 3, img.mpp(), std::move(od));
}

RealRaster deconvolve(const RealRaster& od, const StainMatrix& m) {
  if (od.channels() != 3) throw InvalidArgument("deconvolve needs 3 OD channels");
  RealRaster out(od.width(), od.height(), 3, od.mpp());
  auto src = od.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < od.pixel_count(); ++i) {
    const Vec3 c = m.unmix({src[3 * i], src[3 * i + 1], src[3 * i + 2]});
    dst[3 * i] = c[0];
    dst[3 * i + 1] = c[1];
    dst[3 * i + 2] = c[2];
  }
  return out;
}

RasterImage render_concentrations(const RealRaster& conc, const StainMatrix& m) {
  if (conc.channels() != 3) throw InvalidArgument("render_concentrations needs 3 channels");
  RasterImage out(conc.width(), conc.height(), 3, conc.mpp());
  auto src = conc.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < conc.pixel_count(); ++i) {
    const Vec3 od = m.compose({src[3 * i], src[3 * i + 1], src[3 * i + 2]});
    for (int c = 0; c < 3; ++c) {
      const double v = std::round(255.0 * std::pow(10.0, -od[c]));
      dst[3 * i + c] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
  }
  return out;
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = w;
    sum += w;
  }
  for (auto& w : k) w /= sum;
  return k;
}

// Half-sample symmetric: d c b a | a b c d | d c b a
int reflect(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

}  // namespace

RealRaster gaussian_blur(const RealRaster& src, double sigma, int channel) {
  if (channel < 0 || channel >= src.channels()) throw InvalidArgument("blur channel out of range");
  if (sigma < 0.0) throw InvalidArgument("blur sigma must be >= 0");
  const int w = src.width(), h = src.height();
  RealRaster out(w, h, 1, src.mpp());
  if (sigma == 0.0) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out(x, y) = src(x, y, channel);
    return out;
  }
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(static_cast<std::size_t>(w) * h);
  std::vector<double> row(static_cast<std::size_t>(w));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) row[x] = src(x, y, channel);
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * row[reflect(x + i, w)];
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) {
        acc += k[i + r] * tmp[static_cast<std::size_t>(reflect(y + i, h)) * w + x];
      }
      out(x, y) = acc;
    }
  }
  return out;
}

BinaryMask dab_mask(const RasterImage& ck_img, const StainMatrix& m, const DeconvConfig& cfg) {
  cfg.validate();
  if (std::abs(ck_img.mpp() - cfg.target_mpp) > cfg.mpp_tolerance * cfg.target_mpp) {
    throw ResolutionError("CK image mpp " + std::to_string(ck_img.mpp()) +
                          " is not within tolerance of the thresholding resolution " +
                          std::to_string(cfg.target_mpp));
  }
  const RealRaster conc = deconvolve(rgb_to_od(ck_img), m);
  const RealRaster dab = gaussian_blur(conc, cfg.sigma, 1);
  BinaryMask mask(ck_img.width(), ck_img.height(), ck_img.mpp());
  auto src = dab.data();
  auto dst = mask.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] >= cfg.threshold ? 1 : 0;
  return mask;
}

}  // namespace episeg
