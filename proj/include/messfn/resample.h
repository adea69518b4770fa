#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace messfn {

// Positive rational resampling factor num/den.
struct Scale {
  std::size_t num = 1;
  std::size_t den = 1;
};

// Target length len * num / den; throws ShapeError when not integral.
std::size_t scaled_length(std::size_t len, Scale scale);

// Keys cubic convolution kernel with a = -0.5.
double keys_cubic(double t);

// Four-tap sampling table for one axis. Output sample i reads
// sources index[4i..4i+3] with weights weight[4i..4i+3]; indices are clamped
// to the valid range. Sample centers follow the half-pixel convention
// src = (i + 0.5) / s - 0.5.
struct CubicAxis {
  std::size_t in_len = 0;
  std::size_t out_len = 0;
  std::vector<std::size_t> index;
  std::vector<double> weight;
};

CubicAxis make_cubic_axis(std::size_t in_len, std::size_t out_len);

// Separable bicubic resize of one plane (row-major, height x width).
void cubic_resize_plane(std::span<const double> src, std::size_t height,
                        std::size_t width, const CubicAxis& rows,
                        const CubicAxis& cols, std::span<double> dst);

// Normalized 1-D Gaussian taps on [-radius, radius].
std::vector<double> gaussian_taps(double sigma, std::size_t radius);

// Separable convolution of one plane with a symmetric odd kernel,
// clamp-to-edge boundaries.
std::vector<double> separable_filter_plane(std::span<const double> src,
                                           std::size_t height, std::size_t width,
                                           std::span<const double> taps);

}  // namespace messfn
