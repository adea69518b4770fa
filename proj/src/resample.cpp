#include "messfn/resample.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "messfn/tensor.h"

namespace messfn {

std::size_t scaled_length(std::size_t len, Scale scale) {
  if (scale.num == 0 || scale.den == 0) {
    throw ShapeError("resample scale must be a positive rational");
  }
  if ((len * scale.num) % scale.den != 0) {
    throw ShapeError("length " + std::to_string(len) + " scaled by " +
                     std::to_string(scale.num) + "/" + std::to_string(scale.den) +
                     " is not integral");
  }
  return len * scale.num / scale.den;
}

double keys_cubic(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

CubicAxis make_cubic_axis(std::size_t in_len, std::size_t out_len) {
  CubicAxis axis;
  axis.in_len = in_len;
  axis.out_len = out_len;
  axis.index.resize(4 * out_len);
  axis.weight.resize(4 * out_len);
  const double step = static_cast<double>(in_len) / static_cast<double>(out_len);
  const auto last = static_cast<long>(in_len) - 1;
  for (std::size_t i = 0; i < out_len; ++i) {
    const double src = (static_cast<double>(i) + 0.5) * step - 0.5;
    const double base = std::floor(src);
    const double frac = src - base;
    double sum = 0.0;
    for (int k = 0; k < 4; ++k) {
      const long j = static_cast<long>(base) - 1 + k;
      const double w = keys_cubic(frac - (k - 1));
      axis.index[4 * i + k] = static_cast<std::size_t>(std::clamp(j, 0L, last));
      axis.weight[4 * i + k] = w;
      sum += w;
    }
    for (int k = 0; k < 4; ++k) axis.weight[4 * i + k] /= sum;
  }
  return axis;
}

void cubic_resize_plane(std::span<const double> src, std::size_t height,
                        std::size_t width, const CubicAxis& rows,
                        const CubicAxis& cols, std::span<double> dst) {
  const std::size_t out_w = cols.out_len;
  std::vector<double> tmp(height * out_w);
  for (std::size_t y = 0; y < height; ++y) {
    const double* in = src.data() + y * width;
    for (std::size_t x = 0; x < out_w; ++x) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += cols.weight[4 * x + k] * in[cols.index[4 * x + k]];
      tmp[y * out_w + x] = acc;
    }
  }
  for (std::size_t y = 0; y < rows.out_len; ++y) {
    double* out = dst.data() + y * out_w;
    std::fill(out, out + out_w, 0.0);
    for (int k = 0; k < 4; ++k) {
      const double w = rows.weight[4 * y + k];
      const double* in = tmp.data() + rows.index[4 * y + k] * out_w;
      for (std::size_t x = 0; x < out_w; ++x) out[x] += w * in[x];
    }
  }
}

std::vector<double> gaussian_taps(double sigma, std::size_t radius) {
  std::vector<double> taps(2 * radius + 1);
  double sum = 0.0;
  for (std::size_t i = 0; i < taps.size(); ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(radius);
    taps[i] = std::exp(-0.5 * d * d / (sigma * sigma));
    sum += taps[i];
  }
  for (auto& t : taps) t /= sum;
  return taps;
}

std::vector<double> separable_filter_plane(std::span<const double> src,
                                           std::size_t height, std::size_t width,
                                           std::span<const double> taps) {
  const long radius = static_cast<long>(taps.size() / 2);
  const long h = static_cast<long>(height);
  const long w = static_cast<long>(width);
  std::vector<double> tmp(height * width);
  std::vector<double> out(height * width);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      double acc = 0.0;
      for (long k = -radius; k <= radius; ++k) {
        acc += taps[k + radius] * src[y * w + std::clamp(x + k, 0L, w - 1)];
      }
      tmp[y * w + x] = acc;
    }
  }
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      double acc = 0.0;
      for (long k = -radius; k <= radius; ++k) {
        acc += taps[k + radius] * tmp[std::clamp(y + k, 0L, h - 1) * w + x];
      }
      out[y * w + x] = acc;
    }
  }
  return out;
}

}  // namespace messfn
