#include "messfn/raster.h"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <zlib.h>

namespace messfn::raster {

namespace {

constexpr const char* kMagic = "MESSFN-RASTER 1";

static_assert(std::endian::native == std::endian::little,
              "payload I/O assumes a little-endian host");

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::u8: return 1;
    case DType::u16: return 2;
    case DType::f32: return 4;
    case DType::f64: return 8;
  }
  return 0;
}

std::uint8_t to_byte(double v) {
  const double scaled = std::round((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5);
  return static_cast<std::uint8_t>(scaled);
}

void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32_be(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

void write_chunk(std::vector<std::uint8_t>& out, const char* type,
                 const std::vector<std::uint8_t>& payload) {
  put_u32_be(out, static_cast<std::uint32_t>(payload.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const auto crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
  put_u32_be(out, static_cast<std::uint32_t>(crc));
}

// Percentile of a copy of the values (nearest rank).
double percentile(std::vector<double> values, double q) {
  const std::size_t k = static_cast<std::size_t>(std::floor(q * (values.size() - 1) + 0.5));
  std::nth_element(values.begin(), values.begin() + k, values.end());
  return values[k];
}

}  // namespace

const char* dtype_name(DType dtype) {
  switch (dtype) {
    case DType::u8: return "u8";
    case DType::u16: return "u16";
    case DType::f32: return "f32";
    case DType::f64: return "f64";
  }
  return "?";
}

DType parse_dtype(const std::string& name) {
  if (name == "u8") return DType::u8;
  if (name == "u16") return DType::u16;
  if (name == "f32") return DType::f32;
  if (name == "f64") return DType::f64;
  throw RasterError("unsupported dtype '" + name + "'");
}

RasterImage::RasterImage(std::size_t bands, std::size_t height, std::size_t width, double fill)
    : bands(bands), height(height), width(width), data(bands * height * width, fill) {}

RasterImage RasterImage::extract_band(std::size_t b) const {
  RasterImage out(1, height, width);
  auto src = band(b);
  std::copy(src.begin(), src.end(), out.data.begin());
  out.bit_depth = bit_depth;
  out.domain = domain;
  if (b < band_names.size()) out.band_names = {band_names[b]};
  return out;
}

NormalizationParams NormalizationParams::for_bit_depth(int bit_depth) {
  if (bit_depth < 1 || bit_depth > 16) {
    throw RasterError("bit depth must lie in [1, 16], got " + std::to_string(bit_depth));
  }
  return {std::ldexp(1.0, bit_depth) - 1.0, 0.0};
}

RasterImage load_raster(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RasterError("cannot open raster '" + path.string() + "'");

  std::string line;
  if (!std::getline(in, line) || line != kMagic) {
    throw RasterError("'" + path.string() + "' is not a raster file (bad magic)");
  }
  RasterImage img;
  DType dtype = DType::f32;
  bool have_bands = false, have_h = false, have_w = false, have_dtype = false, ended = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "bands") {
      ls >> img.bands;
      have_bands = true;
    } else if (key == "height") {
      ls >> img.height;
      have_h = true;
    } else if (key == "width") {
      ls >> img.width;
      have_w = true;
    } else if (key == "dtype") {
      std::string name;
      ls >> name;
      dtype = parse_dtype(name);
      have_dtype = true;
    } else if (key == "bit_depth") {
      ls >> img.bit_depth;
    } else if (key == "domain") {
      std::string d;
      ls >> d;
      if (d == "raw") img.domain = Domain::raw;
      else if (d == "unit") img.domain = Domain::unit;
      else throw RasterError("unknown domain '" + d + "' in '" + path.string() + "'");
    } else if (key == "band_names") {
      std::string name;
      while (ls >> name) img.band_names.push_back(name);
    } else if (!key.empty()) {
      throw RasterError("unknown header key '" + key + "' in '" + path.string() + "'");
    }
    if (ls.fail() && !ls.eof()) {
      throw RasterError("malformed header line '" + line + "' in '" + path.string() + "'");
    }
  }
  if (!ended || !have_bands || !have_h || !have_w || !have_dtype) {
    throw RasterError("incomplete header in '" + path.string() +
                      "' (needs bands, height, width, dtype, end)");
  }
  if (img.bands == 0 || img.height == 0 || img.width == 0) {
    throw RasterError("raster dimensions must be positive in '" + path.string() + "'");
  }

  const std::vector<char> payload((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  const std::size_t count = img.bands * img.height * img.width;
  const std::size_t expected = count * dtype_size(dtype);
  if (payload.size() != expected) {
    throw RasterError("payload of '" + path.string() + "' holds " +
                      std::to_string(payload.size()) + " bytes, expected " +
                      std::to_string(expected) + " for " + std::to_string(img.bands) + "x" +
                      std::to_string(img.height) + "x" + std::to_string(img.width) + " " +
                      dtype_name(dtype));
  }
  img.data.resize(count);
  const char* p = payload.data();
  for (std::size_t i = 0; i < count; ++i) {
    switch (dtype) {
      case DType::u8: img.data[i] = static_cast<std::uint8_t>(p[i]); break;
      case DType::u16: {
        std::uint16_t v;
        std::memcpy(&v, p + 2 * i, 2);
        img.data[i] = v;
        break;
      }
      case DType::f32: {
        float v;
        std::memcpy(&v, p + 4 * i, 4);
        img.data[i] = v;
        break;
      }
      case DType::f64: std::memcpy(&img.data[i], p + 8 * i, 8); break;
    }
  }
  return img;
}

void save_raster(const RasterImage& img, const std::filesystem::path& path, DType dtype) {
  if (img.data.size() != img.bands * img.height * img.width) {
    throw RasterError("raster buffer length does not match its dimensions");
  }
  std::ostringstream header;
  header << kMagic << '\n'
         << "bands " << img.bands << '\n'
         << "height " << img.height << '\n'
         << "width " << img.width << '\n'
         << "dtype " << dtype_name(dtype) << '\n'
         << "bit_depth " << img.bit_depth << '\n'
         << "domain " << (img.domain == Domain::raw ? "raw" : "unit") << '\n';
  if (!img.band_names.empty()) {
    header << "band_names";
    for (const auto& n : img.band_names) header << ' ' << n;
    header << '\n';
  }
  header << "end\n";

  std::vector<char> payload(img.data.size() * dtype_size(dtype));
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const double v = img.data[i];
    switch (dtype) {
      case DType::u8:
      case DType::u16: {
        const double max = dtype == DType::u8 ? 255.0 : 65535.0;
        if (!(v >= 0.0 && v <= max)) {
          throw RasterError("value " + std::to_string(v) + " does not fit " + dtype_name(dtype));
        }
        const auto r = static_cast<std::uint16_t>(std::lround(v));
        if (dtype == DType::u8) payload[i] = static_cast<char>(r);
        else std::memcpy(payload.data() + 2 * i, &r, 2);
        break;
      }
      case DType::f32: {
        const float f = static_cast<float>(v);
        std::memcpy(payload.data() + 4 * i, &f, 4);
        break;
      }
      case DType::f64: std::memcpy(payload.data() + 8 * i, &v, 8); break;
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RasterError("cannot write raster '" + path.string() + "'");
  const auto text = header.str();
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw RasterError("write failed for '" + path.string() + "'");
}

RasterImage normalize_to_unit(const RasterImage& img, const NormalizationParams& params) {
  if (!(params.scale > 0.0)) throw RasterError("normalization scale must be positive");
  RasterImage out = img;
  for (auto& v : out.data) v = 2.0 * (v - params.offset) / params.scale - 1.0;
  out.domain = Domain::unit;
  return out;
}

RasterImage denormalize_from_unit(const RasterImage& img, const NormalizationParams& params) {
  if (!(params.scale > 0.0)) throw RasterError("normalization scale must be positive");
  RasterImage out = img;
  for (auto& v : out.data) v = (v + 1.0) * 0.5 * params.scale + params.offset;
  out.domain = Domain::raw;
  return out;
}

RasterImage to_unit(const RasterImage& img) {
  if (img.domain == Domain::unit) return img;
  return normalize_to_unit(img, NormalizationParams::for_bit_depth(img.bit_depth));
}

RasterImage crop(const RasterImage& img, std::size_t y, std::size_t x, std::size_t h,
                 std::size_t w) {
  if (y + h > img.height || x + w > img.width) {
    throw RasterError("crop window exceeds the image");
  }
  RasterImage out(img.bands, h, w);
  out.bit_depth = img.bit_depth;
  out.domain = img.domain;
  out.band_names = img.band_names;
  for (std::size_t b = 0; b < img.bands; ++b)
    for (std::size_t r = 0; r < h; ++r) {
      const double* src = img.data.data() + (b * img.height + y + r) * img.width + x;
      std::copy_n(src, w, out.data.begin() + (b * h + r) * w);
    }
  return out;
}

std::size_t patch_count(std::size_t height, std::size_t width, std::size_t patch,
                        std::size_t stride) {
  if (patch == 0 || stride == 0) throw RasterError("patch and stride must be positive");
  if (patch > height || patch > width) {
    throw RasterError("patch " + std::to_string(patch) + " larger than image " +
                      std::to_string(height) + "x" + std::to_string(width));
  }
  return ((height - patch) / stride + 1) * ((width - patch) / stride + 1);
}

std::vector<RasterImage> crop_patches(const RasterImage& img, std::size_t patch,
                                      std::size_t stride) {
  patch_count(img.height, img.width, patch, stride);
  std::vector<RasterImage> out;
  for (std::size_t y = 0; y + patch <= img.height; y += stride)
    for (std::size_t x = 0; x + patch <= img.width; x += stride)
      out.push_back(crop(img, y, x, patch, patch));
  return out;
}

void write_png8(const std::filesystem::path& path, const Png8& png) {
  if (png.channels != 1 && png.channels != 3) throw RasterError("PNG must have 1 or 3 channels");
  const std::size_t row = png.width * png.channels;
  std::vector<std::uint8_t> raw;
  raw.reserve((row + 1) * png.height);
  for (std::size_t y = 0; y < png.height; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), png.pixels.begin() + y * row, png.pixels.begin() + (y + 1) * row);
  }
  uLongf packed_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> packed(packed_len);
  if (compress2(packed.data(), &packed_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw RasterError("zlib compression failed");
  }
  packed.resize(packed_len);

  std::vector<std::uint8_t> file{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<std::uint8_t> ihdr;
  put_u32_be(ihdr, static_cast<std::uint32_t>(png.width));
  put_u32_be(ihdr, static_cast<std::uint32_t>(png.height));
  ihdr.push_back(8);
  ihdr.push_back(png.channels == 3 ? 2 : 0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  write_chunk(file, "IHDR", ihdr);
  write_chunk(file, "IDAT", packed);
  write_chunk(file, "IEND", {});
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(file.data()), static_cast<std::streamsize>(file.size()));
  if (!out) throw RasterError("cannot write PNG '" + path.string() + "'");
}

Png8 read_png8(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RasterError("cannot open PNG '" + path.string() + "'");
  const std::vector<std::uint8_t> file((std::istreambuf_iterator<char>(in)),
                                       std::istreambuf_iterator<char>());
  if (file.size() < 8 || file[0] != 0x89 || file[1] != 'P') throw RasterError("not a PNG file");
  Png8 png;
  std::vector<std::uint8_t> idat;
  std::size_t pos = 8;
  while (pos + 12 <= file.size()) {
    const std::uint32_t len = get_u32_be(&file[pos]);
    const std::string type(file.begin() + pos + 4, file.begin() + pos + 8);
    const std::uint8_t* data = &file[pos + 8];
    if (pos + 12 + len > file.size()) throw RasterError("truncated PNG chunk");
    if (type == "IHDR") {
      png.width = get_u32_be(data);
      png.height = get_u32_be(data + 4);
      if (data[8] != 8 || data[12] != 0) throw RasterError("unsupported PNG variant");
      png.channels = data[9] == 2 ? 3 : (data[9] == 0 ? 1 : 0);
      if (png.channels == 0) throw RasterError("unsupported PNG color type");
    } else if (type == "IDAT") {
      idat.insert(idat.end(), data, data + len);
    }
    pos += 12 + len;
  }
  const std::size_t row = png.width * png.channels;
  std::vector<std::uint8_t> raw((row + 1) * png.height);
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      raw_len != raw.size()) {
    throw RasterError("PNG payload does not decompress to the declared size");
  }
  png.pixels.reserve(row * png.height);
  for (std::size_t y = 0; y < png.height; ++y) {
    if (raw[y * (row + 1)] != 0) throw RasterError("unsupported PNG row filter");
    png.pixels.insert(png.pixels.end(), raw.begin() + y * (row + 1) + 1,
                      raw.begin() + (y + 1) * (row + 1));
  }
  return png;
}

void export_png8(const RasterImage& img, const std::vector<std::size_t>& band_selection,
                 const std::filesystem::path& path, Stretch stretch) {
  if (band_selection.size() != 1 && band_selection.size() != 3) {
    throw RasterError("PNG export needs 1 or 3 bands, got " +
                      std::to_string(band_selection.size()));
  }
  for (auto b : band_selection) {
    if (b >= img.bands) {
      throw RasterError("band index " + std::to_string(b) + " out of range for " +
                        std::to_string(img.bands) + "-band image");
    }
  }
  Png8 png{img.width, img.height, band_selection.size(), {}};
  png.pixels.resize(img.plane() * png.channels);
  for (std::size_t c = 0; c < png.channels; ++c) {
    auto src = img.band(band_selection[c]);
    double lo = -1.0, hi = 1.0;
    if (stretch == Stretch::percentile_2_98) {
      std::vector<double> values(src.begin(), src.end());
      lo = percentile(values, 0.02);
      hi = percentile(std::move(values), 0.98);
      if (hi <= lo) hi = lo + 1e-12;
    }
    for (std::size_t i = 0; i < img.plane(); ++i) {
      const double t = 2.0 * (src[i] - lo) / (hi - lo) - 1.0;
      png.pixels[i * png.channels + c] = to_byte(t);
    }
  }
  write_png8(path, png);
}

void export_png8_colormap(const RasterImage& img, const std::filesystem::path& path, double lo,
                          double hi) {
  if (img.bands != 1) throw RasterError("colormap export needs a single-band image");
  if (!(hi > lo)) throw RasterError("colormap range must be increasing");
  // Piecewise-linear black -> blue -> cyan -> yellow -> red ramp; lo maps to
  // black so an all-zero error map exports as an all-zero payload.
  static constexpr std::array<std::array<double, 3>, 5> kStops{
      {{0, 0, 0}, {0, 0, 255}, {0, 255, 255}, {255, 255, 0}, {255, 0, 0}}};
  constexpr std::size_t kSegments = kStops.size() - 1;
  Png8 png{img.width, img.height, 3, std::vector<std::uint8_t>(img.plane() * 3)};
  for (std::size_t i = 0; i < img.plane(); ++i) {
    const double t = std::clamp((img.data[i] - lo) / (hi - lo), 0.0, 1.0) * kSegments;
    const std::size_t k = std::min(static_cast<std::size_t>(t), kSegments - 1);
    const double f = t - static_cast<double>(k);
    for (int c = 0; c < 3; ++c) {
      const double v = kStops[k][c] + f * (kStops[k + 1][c] - kStops[k][c]);
      png.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::lround(v));
    }
  }
  write_png8(path, png);
}

void export_pgm(const RasterImage& img, std::size_t band, const std::filesystem::path& path) {
  if (band >= img.bands) throw RasterError("band index out of range for PGM export");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  for (double v : img.band(band)) out.put(static_cast<char>(to_byte(v)));
  if (!out) throw RasterError("cannot write PGM '" + path.string() + "'");
}

}  // namespace messfn::raster
