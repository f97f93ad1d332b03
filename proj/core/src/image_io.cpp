#include "episeg/image_io.hpp"

#include <png.h>

#include <cstring>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

namespace episeg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct PngImage {
  png_image image;
  PngImage() {
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&image); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out << text;
}

}  // namespace

RasterImage read_png(const fs::path& path, double mpp) {
  PngImage png;
  if (!png_image_begin_read_from_file(&png.image, path.string().c_str())) {
    throw FormatError("cannot read PNG " + path.string() + ": " + png.image.message);
  }
  const bool color = (png.image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int channels = color ? 3 : 1;
  const int width = static_cast<int>(png.image.width);
  const int height = static_cast<int>(png.image.height);
  std::vector<std::uint8_t> data(PNG_IMAGE_SIZE(png.image));
  if (!png_image_finish_read(&png.image, nullptr, data.data(), 0, nullptr)) {
    throw FormatError("cannot decode PNG " + path.string() + ": " + png.image.message);
  }
  return RasterImage(width, height, channels, mpp, std::move(data));
}

void write_png(const RasterImage& img, const fs::path& path) {
  PngImage png;
  png.image.width = static_cast<png_uint_32>(img.width());
  png.image.height = static_cast<png_uint_32>(img.height());
  png.image.format = img.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png.image, path.string().c_str(), 0, img.data().data(), 0,
                               nullptr)) {
    throw InvalidArgument("cannot write PNG " + path.string() + ": " + png.image.message);
  }
}

void write_label_png(const LabelMask& mask, const fs::path& path) {
  PngImage png;
  png.image.width = static_cast<png_uint_32>(mask.width());
  png.image.height = static_cast<png_uint_32>(mask.height());
  png.image.format = PNG_FORMAT_RGB_COLORMAP;
  png.image.colormap_entries = kClassCount;
  std::uint8_t colormap[kClassCount * 3];
  for (int c = 0; c < kClassCount; ++c) {
    for (int k = 0; k < 3; ++k) colormap[c * 3 + k] = kLabelPalette[c][k];
  }
  if (!png_image_write_to_file(&png.image, path.string().c_str(), 0, mask.data().data(), 0,
                               colormap)) {
    throw InvalidArgument("cannot write label PNG " + path.string() + ": " + png.image.message);
  }
}

LabelMask read_label_png(const fs::path& path, double mpp) {
  // Decoded through RGB so the result does not depend on how a writer
  // ordered its palette; plain grayscale codes 0..3 are accepted too.
  const RasterImage rgb = [&] {
    RasterImage img = read_png(path, mpp);
    if (img.channels() == 3) return img;
    std::vector<std::uint8_t> expanded;
    expanded.reserve(img.sample_count() * 3);
    for (auto v : img.data()) expanded.insert(expanded.end(), {v, v, v});
    return RasterImage(img.width(), img.height(), 3, mpp, std::move(expanded));
  }();
  std::vector<std::uint8_t> codes(rgb.pixel_count());
  for (int y = 0; y < rgb.height(); ++y) {
    for (int x = 0; x < rgb.width(); ++x) {
      const std::uint8_t r = rgb(x, y, 0), g = rgb(x, y, 1), b = rgb(x, y, 2);
      int code = -1;
      for (int c = 0; c < kClassCount; ++c) {
        if (kLabelPalette[c][0] == r && kLabelPalette[c][1] == g && kLabelPalette[c][2] == b) {
          code = c;
          break;
        }
      }
      if (code < 0 && r == g && g == b && r < kClassCount) code = r;
      if (code < 0) {
        throw FormatError("label PNG " + path.string() + " has a non-label color at (" +
                          std::to_string(x) + "," + std::to_string(y) + ")");
      }
      codes[static_cast<std::size_t>(y) * rgb.width() + x] = static_cast<std::uint8_t>(code);
    }
  }
  return LabelMask(Grid<std::uint8_t>(rgb.width(), rgb.height(), 1, mpp, std::move(codes)));
}

void write_label_mask(const LabelMask& mask, const fs::path& dir) {
  fs::create_directories(dir);
  write_label_png(mask, dir / "labels.png");
  write_text_file(dir / "meta.json", json{{"mpp", mask.mpp()}}.dump(2) + "\n");
}

LabelMask read_label_mask(const fs::path& dir) {
  const json meta = read_json_file(dir / "meta.json");
  if (!meta.contains("mpp") || !meta["mpp"].is_number()) {
    throw FormatError(dir.string() + "/meta.json lacks numeric mpp");
  }
  return read_label_png(dir / "labels.png", meta["mpp"].get<double>());
}

void write_pyramid(const PyramidImage& pyramid, const fs::path& dir) {
  fs::create_directories(dir);
  json meta;
  meta["mpp_level0"] = pyramid.mpp_level0();
  meta["factors"] = pyramid.factors();
  write_text_file(dir / "meta.json", meta.dump(2) + "\n");
  for (std::size_t k = 0; k < pyramid.level_count(); ++k) {
    write_png(pyramid.level(k), dir / ("level_" + std::to_string(k) + ".png"));
  }
}

PyramidImage read_pyramid(const fs::path& dir) {
  const fs::path meta_path = dir / "meta.json";
  if (!fs::exists(meta_path)) throw FormatError("pyramid " + dir.string() + " has no meta.json");
  const json meta = read_json_file(meta_path);
  if (!meta.contains("mpp_level0") || !meta["mpp_level0"].is_number() ||
      !meta.contains("factors") || !meta["factors"].is_array()) {
    throw FormatError("pyramid meta.json needs mpp_level0 and factors");
  }
  const double mpp0 = meta["mpp_level0"].get<double>();
  if (!(mpp0 > 0.0)) throw FormatError("pyramid mpp_level0 must be > 0");
  std::vector<int> factors;
  for (const auto& f : meta["factors"]) {
    if (!f.is_number_integer()) throw FormatError("pyramid factors must be integers");
    factors.push_back(f.get<int>());
  }
  if (factors.empty()) throw FormatError("pyramid lists no levels");

  std::vector<RasterImage> levels;
  for (std::size_t k = 0; k < factors.size(); ++k) {
    const fs::path level_path = dir / ("level_" + std::to_string(k) + ".png");
    if (!fs::exists(level_path)) {
      throw FormatError("pyramid level " + std::to_string(k) + " missing: " + level_path.string());
    }
    if (factors[k] < 1) throw FormatError("pyramid level " + std::to_string(k) + " factor < 1");
    levels.push_back(read_png(level_path, mpp0 * factors[k]));
  }
  try {
    return PyramidImage(std::move(levels), std::move(factors));
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("invalid pyramid ") + dir.string() + ": " + e.what());
  }
}

RasterImage colorize(const LabelMask& mask) {
  RasterImage out(mask.width(), mask.height(), 3, mask.mpp());
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      const auto& rgb = kLabelPalette[mask(x, y)];
      for (int c = 0; c < 3; ++c) out(x, y, c) = rgb[c];
    }
  }
  return out;
}

}  // namespace episeg
