#include "messfn/baselines.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <Eigen/Dense>
#include <spdlog/spdlog.h>

#include "messfn/resample.h"

namespace messfn::baselines {

namespace {

constexpr std::size_t kBands = 4;

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double covariance(std::span<const double> a, std::span<const double> b) {
  const double ma = mean_of(a), mb = mean_of(b);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - ma) * (b[i] - mb);
  return acc / static_cast<double>(a.size());
}

// [-1, 1] <-> [0, 1]; HPM needs nonnegative data, the others are indifferent.
RasterImage to_positive(const RasterImage& img) {
  RasterImage out = img;
  for (auto& v : out.data) v = 0.5 * (v + 1.0);
  return out;
}

RasterImage from_positive(RasterImage img) {
  for (auto& v : img.data) v = 2.0 * v - 1.0;
  img.domain = raster::Domain::unit;
  return img;
}

std::vector<double> band_mean_plane(const RasterImage& ms) {
  std::vector<double> intensity(ms.plane(), 0.0);
  for (std::size_t b = 0; b < ms.bands; ++b) {
    const auto band = ms.band(b);
    for (std::size_t i = 0; i < intensity.size(); ++i) intensity[i] += band[i];
  }
  for (auto& v : intensity) v /= static_cast<double>(ms.bands);
  return intensity;
}

}  // namespace

void FusionInput::validate() const {
  if (ms_up.bands != kBands) {
    throw FusionError("fusion expects 4 MS bands, got " + std::to_string(ms_up.bands));
  }
  if (pan.bands != 1) throw FusionError("fusion expects a single-band PAN image");
  if (ms_up.height != pan.height || ms_up.width != pan.width) {
    throw FusionError("upsampled MS " + std::to_string(ms_up.height) + "x" +
                      std::to_string(ms_up.width) + " does not match PAN " +
                      std::to_string(pan.height) + "x" + std::to_string(pan.width));
  }
  if (r == 0) throw FusionError("scale factor r must be positive");
}

RasterImage upsample(const RasterImage& ms, std::size_t r) {
  const std::size_t oh = ms.height * r, ow = ms.width * r;
  const auto rows = make_cubic_axis(ms.height, oh);
  const auto cols = make_cubic_axis(ms.width, ow);
  RasterImage out(ms.bands, oh, ow);
  out.bit_depth = ms.bit_depth;
  out.domain = ms.domain;
  out.band_names = ms.band_names;
  for (std::size_t b = 0; b < ms.bands; ++b) {
    cubic_resize_plane(ms.band(b), ms.height, ms.width, rows, cols, out.band(b));
  }
  return out;
}

FusionInput make_input(const RasterImage& ms, const RasterImage& pan, std::size_t r) {
  if (r == 0 || pan.height != r * ms.height || pan.width != r * ms.width) {
    throw FusionError("PAN " + std::to_string(pan.height) + "x" + std::to_string(pan.width) +
                      " is not r=" + std::to_string(r) + " times MS " +
                      std::to_string(ms.height) + "x" + std::to_string(ms.width));
  }
  FusionInput inp{upsample(raster::to_unit(ms), r), raster::to_unit(pan), r};
  inp.validate();
  return inp;
}

std::vector<double> hist_match(std::span<const double> src, std::span<const double> ref) {
  const double ms = mean_of(src), mr = mean_of(ref);
  const double ss = std::sqrt(covariance(src, src)), sr = std::sqrt(covariance(ref, ref));
  std::vector<double> out(src.size(), mr);
  if (!(ss > 0.0)) {
    spdlog::warn("hist_match: source band has zero variance; returning the reference mean");
    return out;
  }
  const double gain = sr / ss;
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = (src[i] - ms) * gain + mr;
  return out;
}

RasterImage ihs_fuse(const FusionInput& inp) {
  inp.validate();
  RasterImage ms = to_positive(inp.ms_up);
  const RasterImage pan = to_positive(inp.pan);
  const auto intensity = band_mean_plane(ms);
  const auto matched = hist_match(pan.band(0), intensity);
  for (std::size_t b = 0; b < ms.bands; ++b) {
    auto band = ms.band(b);
    for (std::size_t i = 0; i < band.size(); ++i) band[i] += matched[i] - intensity[i];
  }
  return from_positive(std::move(ms));
}

PcaBasis pca_basis(const RasterImage& img) {
  const std::size_t nb = img.bands;
  PcaBasis pca;
  pca.mean.resize(nb);
  for (std::size_t b = 0; b < nb; ++b) pca.mean[b] = mean_of(img.band(b));
  Eigen::MatrixXd cov(nb, nb);
  for (std::size_t i = 0; i < nb; ++i) {
    for (std::size_t j = i; j < nb; ++j) {
      cov(i, j) = cov(j, i) = covariance(img.band(i), img.band(j));
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw FusionError("PCA eigendecomposition failed");
  const auto& values = solver.eigenvalues();
  const double largest = values(nb - 1);
  if (!(largest > 0.0) || values(0) <= 1e-12 * largest) {
    throw FusionError("PCA: band covariance is rank deficient");
  }
  pca.basis.assign(nb * nb, 0.0);
  pca.variance.resize(nb);
  for (std::size_t k = 0; k < nb; ++k) {
    const auto src = static_cast<Eigen::Index>(nb - 1 - k);
    Eigen::VectorXd v = solver.eigenvectors().col(src);
    if (v.sum() < 0.0) v = -v;
    pca.variance[k] = values(src);
    for (std::size_t b = 0; b < nb; ++b) pca.basis[b * nb + k] = v(static_cast<Eigen::Index>(b));
  }
  return pca;
}

RasterImage pca_forward(const RasterImage& img, const PcaBasis& pca) {
  const std::size_t nb = img.bands;
  RasterImage out(nb, img.height, img.width);
  for (std::size_t k = 0; k < nb; ++k) {
    auto dst = out.band(k);
    for (std::size_t b = 0; b < nb; ++b) {
      const double w = pca.basis[b * nb + k];
      const auto src = img.band(b);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += w * (src[i] - pca.mean[b]);
    }
  }
  return out;
}

RasterImage pca_inverse(const RasterImage& components, const PcaBasis& pca) {
  const std::size_t nb = components.bands;
  RasterImage out(nb, components.height, components.width);
  for (std::size_t b = 0; b < nb; ++b) {
    auto dst = out.band(b);
    std::fill(dst.begin(), dst.end(), pca.mean[b]);
    for (std::size_t k = 0; k < nb; ++k) {
      const double w = pca.basis[b * nb + k];
      const auto src = components.band(k);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += w * src[i];
    }
  }
  return out;
}

RasterImage pca_fuse(const FusionInput& inp) {
  inp.validate();
  const RasterImage ms = to_positive(inp.ms_up);
  const RasterImage pan = to_positive(inp.pan);
  const auto pca = pca_basis(ms);
  RasterImage pcs = pca_forward(ms, pca);
  const auto matched = hist_match(pan.band(0), pcs.band(0));
  std::copy(matched.begin(), matched.end(), pcs.band(0).begin());
  RasterImage out = pca_inverse(pcs, pca);
  out.band_names = inp.ms_up.band_names;
  out.bit_depth = inp.ms_up.bit_depth;
  return from_positive(std::move(out));
}

GsDecomposition gs_decompose(const RasterImage& ms) {
  const std::size_t nb = ms.bands, n = ms.plane();
  GsDecomposition gs;
  gs.mean.resize(nb);
  for (std::size_t b = 0; b < nb; ++b) gs.mean[b] = mean_of(ms.band(b));

  auto first = band_mean_plane(ms);
  const double first_mean = mean_of(first);
  for (auto& v : first) v -= first_mean;
  std::vector<double> norms{covariance(first, first)};
  if (!(norms[0] > 1e-14)) throw FusionError("Gram-Schmidt: synthetic intensity is constant");
  gs.vectors.push_back(std::move(first));

  gs.coeff.assign(nb, {});
  for (std::size_t b = 0; b < nb; ++b) {
    const auto band = ms.band(b);
    std::vector<double> residual(n);
    for (std::size_t i = 0; i < n; ++i) residual[i] = band[i] - gs.mean[b];
    for (std::size_t j = 0; j < gs.vectors.size(); ++j) {
      const double c = norms[j] > 1e-14 ? covariance(band, gs.vectors[j]) / norms[j] : 0.0;
      gs.coeff[b].push_back(c);
      for (std::size_t i = 0; i < n; ++i) residual[i] -= c * gs.vectors[j][i];
    }
    norms.push_back(covariance(residual, residual));
    gs.vectors.push_back(std::move(residual));
  }
  return gs;
}

RasterImage gs_reconstruct(const GsDecomposition& gs, std::size_t height, std::size_t width) {
  const std::size_t nb = gs.mean.size();
  RasterImage out(nb, height, width);
  for (std::size_t b = 0; b < nb; ++b) {
    auto dst = out.band(b);
    const auto& own = gs.vectors[b + 1];
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = gs.mean[b] + own[i];
    for (std::size_t j = 0; j < gs.coeff[b].size(); ++j) {
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gs.coeff[b][j] * gs.vectors[j][i];
    }
  }
  return out;
}

RasterImage gs_fuse(const FusionInput& inp) {
  inp.validate();
  const RasterImage ms = to_positive(inp.ms_up);
  const RasterImage pan = to_positive(inp.pan);
  auto gs = gs_decompose(ms);
  auto intensity = band_mean_plane(ms);
  auto matched = hist_match(pan.band(0), intensity);
  const double m = mean_of(intensity);
  for (auto& v : matched) v -= m;
  gs.vectors[0] = std::move(matched);
  RasterImage out = gs_reconstruct(gs, ms.height, ms.width);
  out.band_names = inp.ms_up.band_names;
  out.bit_depth = inp.ms_up.bit_depth;
  return from_positive(std::move(out));
}

std::vector<double> mtf_taps(std::size_t r, double nyquist_gain) {
  // Continuous Gaussian response exp(-2 pi^2 sigma^2 f^2) at f = 1/(2r).
  const double rd = static_cast<double>(r);
  const double sigma = 2.0 * rd * std::sqrt(-std::log(nyquist_gain) / 2.0) / std::numbers::pi;
  return gaussian_taps(sigma, 5 * r);
}

std::vector<double> pan_lowpass(std::span<const double> pan, std::size_t height,
                                std::size_t width, std::size_t r) {
  if (height % r != 0 || width % r != 0) {
    throw FusionError("PAN " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by r=" + std::to_string(r));
  }
  const auto smooth = separable_filter_plane(pan, height, width, mtf_taps(r));
  const std::size_t lh = height / r, lw = width / r;
  std::vector<double> low(lh * lw), back(height * width);
  cubic_resize_plane(smooth, height, width, make_cubic_axis(height, lh), make_cubic_axis(width, lw),
                     low);
  cubic_resize_plane(low, lh, lw, make_cubic_axis(lh, height), make_cubic_axis(lw, width), back);
  return back;
}

RasterImage hpm_inject(const RasterImage& ms_up, std::span<const double> pan,
                       std::span<const double> pan_low, double eps) {
  RasterImage out = ms_up;
  for (std::size_t b = 0; b < out.bands; ++b) {
    auto band = out.band(b);
    for (std::size_t i = 0; i < band.size(); ++i) {
      if (std::abs(pan_low[i]) >= eps) band[i] *= pan[i] / pan_low[i];
    }
  }
  return out;
}

RasterImage mtf_glp_hpm_fuse(const FusionInput& inp) {
  inp.validate();
  const RasterImage ms = to_positive(inp.ms_up);
  const RasterImage pan = to_positive(inp.pan);
  const auto low = pan_lowpass(pan.band(0), pan.height, pan.width, inp.r);
  return from_positive(hpm_inject(ms, pan.band(0), low));
}

Method parse_method(const std::string& name) {
  if (name == "ihs") return Method::ihs;
  if (name == "pca") return Method::pca;
  if (name == "gs") return Method::gs;
  if (name == "mtf-glp-hpm" || name == "mtf_glp_hpm") return Method::mtf_glp_hpm;
  throw std::invalid_argument("unknown baseline '" + name +
                              "' (expected ihs, pca, gs or mtf-glp-hpm)");
}

const char* method_name(Method m) {
  switch (m) {
    case Method::ihs: return "ihs";
    case Method::pca: return "pca";
    case Method::gs: return "gs";
    case Method::mtf_glp_hpm: return "mtf-glp-hpm";
  }
  return "?";
}

RasterImage fuse(Method m, const FusionInput& inp) {
  switch (m) {
    case Method::ihs: return ihs_fuse(inp);
    case Method::pca: return pca_fuse(inp);
    case Method::gs: return gs_fuse(inp);
    case Method::mtf_glp_hpm: return mtf_glp_hpm_fuse(inp);
  }
  throw std::invalid_argument("unknown baseline");
}

}  // namespace messfn::baselines
