#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "messfn/raster.h"

namespace messfn::baselines {

using raster::RasterImage;

class FusionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unit-domain inputs at PAN geometry: 4-band bicubic-upsampled MS and 1-band PAN.
struct FusionInput {
  RasterImage ms_up;
  RasterImage pan;
  std::size_t r = 4;

  void validate() const;
};

// Bicubic upsampling of every band by r.
RasterImage upsample(const RasterImage& ms, std::size_t r);

// Checks that pan is r times the size of ms and upsamples ms.
FusionInput make_input(const RasterImage& ms, const RasterImage& pan, std::size_t r);

// Affine map giving src the mean and standard deviation of ref. A constant
// src maps to the constant ref mean.
std::vector<double> hist_match(std::span<const double> src, std::span<const double> ref);

RasterImage ihs_fuse(const FusionInput& inp);
RasterImage pca_fuse(const FusionInput& inp);
RasterImage gs_fuse(const FusionInput& inp);
RasterImage mtf_glp_hpm_fuse(const FusionInput& inp);

// Principal axes of the band covariance, sorted by decreasing variance.
// Columns of basis are unit eigenvectors, each oriented to have a
// nonnegative component sum.
struct PcaBasis {
  std::vector<double> mean;
  std::vector<double> basis;  // bands x bands, row-major
  std::vector<double> variance;
};

PcaBasis pca_basis(const RasterImage& img);
RasterImage pca_forward(const RasterImage& img, const PcaBasis& pca);
RasterImage pca_inverse(const RasterImage& components, const PcaBasis& pca);

// Gram-Schmidt decomposition seeded with the band-mean intensity. vectors
// holds the centered intensity followed by one residual per band; coeff[b][j]
// is the projection of band b on vector j.
struct GsDecomposition {
  std::vector<std::vector<double>> vectors;
  std::vector<std::vector<double>> coeff;
  std::vector<double> mean;
};

GsDecomposition gs_decompose(const RasterImage& ms);
RasterImage gs_reconstruct(const GsDecomposition& gs, std::size_t height, std::size_t width);

// Gaussian low-pass whose response at the MS Nyquist frequency 1/(2r) is
// nyquist_gain.
std::vector<double> mtf_taps(std::size_t r, double nyquist_gain = 0.3);

// PAN low-pass: MTF filter, bicubic decimation by r and bicubic re-expansion.
std::vector<double> pan_lowpass(std::span<const double> pan, std::size_t height,
                                std::size_t width, std::size_t r);

// High-pass modulation on nonnegative data: ms * pan / pan_low, copying ms
// where |pan_low| < eps.
RasterImage hpm_inject(const RasterImage& ms_up, std::span<const double> pan,
                       std::span<const double> pan_low, double eps = 1e-9);

enum class Method { ihs, pca, gs, mtf_glp_hpm };

Method parse_method(const std::string& name);
const char* method_name(Method m);
RasterImage fuse(Method m, const FusionInput& inp);

}  // namespace messfn::baselines
