#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "messfn/raster.h"

namespace messfn::metrics {

using raster::RasterImage;

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kPsnrCap = 150.0;
inline constexpr std::size_t kSsimWindow = 11;
inline constexpr std::size_t kQBlock = 32;

// Mean over bands of 10 log10(peak^2 / MSE_b), capped at kPsnrCap.
double psnr(const RasterImage& fused, const RasterImage& ref, double peak);

// Gaussian-window SSIM (11x11, sigma 1.5, K1 0.01, K2 0.03) over every valid
// window position, averaged over the map and then over bands.
double ssim(const RasterImage& fused, const RasterImage& ref, double dynamic_range);

// Mean spectral angle in radians. Pixels where either vector is zero are
// skipped and counted in *skipped.
double sam(const RasterImage& fused, const RasterImage& ref, std::size_t* skipped = nullptr);

// 100 * ratio * sqrt(mean_b (RMSE_b / mean(ref_b))^2).
double ergas(const RasterImage& fused, const RasterImage& ref, double ratio);

// Per-band Pearson correlation averaged over bands.
double cc(const RasterImage& fused, const RasterImage& ref);

// Universal image quality index of two planes, averaged over non-overlapping
// block x block tiles.
double q_index(std::span<const double> a, std::span<const double> b, std::size_t height,
               std::size_t width, std::size_t block);

// Quaternion quality index of 4-band images over non-overlapping tiles.
double q4(const RasterImage& fused, const RasterImage& ref, std::size_t block = kQBlock);

struct QnrResult {
  double d_lambda = 0.0;
  double d_s = 0.0;
  double qnr = 1.0;
};

// fused and pan at full resolution, ms_orig at 1/r. Full-resolution terms
// use block tiles; MS-resolution terms use block / r so tiles cover the same
// ground area.
QnrResult qnr_suite(const RasterImage& fused, const RasterImage& ms_orig, const RasterImage& pan,
                    std::size_t r, std::size_t block = kQBlock);

RasterImage sam_map(const RasterImage& fused, const RasterImage& ref);
// Sobel gradient magnitude averaged over bands (clamped borders).
RasterImage gradient_map(const RasterImage& img);
// Per-band absolute difference.
RasterImage diff_map(const RasterImage& a, const RasterImage& b);

// Shift from [-1, 1] to [0, 1], the range every reported metric is computed in.
RasterImage to_positive(const RasterImage& img);

struct MetricReport {
  std::optional<double> psnr_db, ssim, sam_rad, ergas, cc, q4;
  std::optional<double> d_lambda, d_s, qnr;
  std::map<std::string, std::vector<double>> per_band;

  // Flat "key = value" lines, absent metrics omitted.
  std::string to_text() const;
  std::string to_json() const;
  std::map<std::string, double> values() const;
};

inline const std::set<std::string>& reference_metric_names() {
  static const std::set<std::string> names{"psnr", "ssim", "sam", "ergas", "cc", "q4"};
  return names;
}

// Parses a comma-separated subset of reference metric names ("all" for every one).
std::set<std::string> parse_selection(const std::string& text);

// Unit-domain fused and reference images; computed on [0, 1] data with peak 1.
MetricReport reference_report(const RasterImage& fused, const RasterImage& ref, std::size_t r,
                              const std::set<std::string>& selection = reference_metric_names());

MetricReport no_reference_report(const RasterImage& fused, const RasterImage& ms_orig,
                                 const RasterImage& pan, std::size_t r);

// Mean of each present metric over a set of reports.
MetricReport average(const std::vector<MetricReport>& reports);

}  // namespace messfn::metrics
