#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace messfn::raster {

// Raised for malformed, truncated or inconsistent raster files.
class RasterError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType { u8, u16, f32, f64 };

// raw: sensor counts in [0, 2^bit_depth - 1]; unit: normalized to [-1, 1].
enum class Domain { raw, unit };

const char* dtype_name(DType dtype);
DType parse_dtype(const std::string& name);

// Planar band-major multi-band image.
struct RasterImage {
  std::size_t bands = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;
  int bit_depth = 11;
  Domain domain = Domain::raw;
  std::vector<std::string> band_names;

  RasterImage() = default;
  RasterImage(std::size_t bands, std::size_t height, std::size_t width, double fill = 0.0);

  std::size_t plane() const { return height * width; }
  double& at(std::size_t b, std::size_t y, std::size_t x) {
    return data[(b * height + y) * width + x];
  }
  double at(std::size_t b, std::size_t y, std::size_t x) const {
    return data[(b * height + y) * width + x];
  }
  std::span<double> band(std::size_t b) { return {data.data() + b * plane(), plane()}; }
  std::span<const double> band(std::size_t b) const { return {data.data() + b * plane(), plane()}; }

  // Single-band copy of band b (metadata preserved, names trimmed).
  RasterImage extract_band(std::size_t b) const;
  bool same_geometry(const RasterImage& other) const {
    return bands == other.bands && height == other.height && width == other.width;
  }
};

// x -> 2 (x - offset) / scale - 1.
struct NormalizationParams {
  double scale = 2047.0;
  double offset = 0.0;

  static NormalizationParams for_bit_depth(int bit_depth);
};

// Reads the native format: a text header (magic line, key/value lines,
// "end") followed by the planar little-endian payload.
RasterImage load_raster(const std::filesystem::path& path);
void save_raster(const RasterImage& img, const std::filesystem::path& path,
                 DType dtype = DType::f32);

RasterImage normalize_to_unit(const RasterImage& img, const NormalizationParams& params);
RasterImage denormalize_from_unit(const RasterImage& img, const NormalizationParams& params);

// Returns img in the unit domain, normalizing by its bit depth if raw.
RasterImage to_unit(const RasterImage& img);

RasterImage crop(const RasterImage& img, std::size_t y, std::size_t x, std::size_t h,
                 std::size_t w);

// Row-major grid of patch x patch crops at the given stride; remainders are
// dropped.
std::vector<RasterImage> crop_patches(const RasterImage& img, std::size_t patch,
                                      std::size_t stride);
std::size_t patch_count(std::size_t height, std::size_t width, std::size_t patch,
                        std::size_t stride);

enum class Stretch { linear, percentile_2_98 };

// 8-bit grayscale (one band) or RGB (three bands) PNG. Linear stretch maps
// [-1, 1] to [0, 255].
void export_png8(const RasterImage& img, const std::vector<std::size_t>& band_selection,
                 const std::filesystem::path& path, Stretch stretch = Stretch::linear);

// Single band mapped through a blue-to-red ramp over [lo, hi].
void export_png8_colormap(const RasterImage& img, const std::filesystem::path& path, double lo,
                          double hi);

// Binary PGM for single-band previews, linear [-1, 1] -> [0, 255].
void export_pgm(const RasterImage& img, std::size_t band, const std::filesystem::path& path);

struct Png8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;
};

void write_png8(const std::filesystem::path& path, const Png8& png);
// Decoder for the files write_png8 produces (8-bit, non-interlaced, filter 0).
Png8 read_png8(const std::filesystem::path& path);

}  // namespace messfn::raster
