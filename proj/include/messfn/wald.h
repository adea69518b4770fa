#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "messfn/raster.h"

namespace messfn::wald {

using raster::RasterImage;

struct WaldConfig {
  std::size_t r = 4;
  std::size_t patch = 64;
  // Patch grid stride in PAN-resolution pixels; 0 means stride = patch.
  std::size_t stride = 0;
  double train_fraction = 0.9;
  std::uint64_t seed = 0;

  std::size_t effective_stride() const { return stride == 0 ? patch : stride; }
  void validate() const;
};

// One reduced-resolution training triple, all in the unit domain.
struct SamplePair {
  RasterImage ms_lr;   // patch/r x patch/r x 4
  RasterImage pan_lr;  // patch x patch x 1
  RasterImage ms_ref;  // patch x patch x 4
  std::string source_id;
};

struct DatasetManifest {
  std::vector<SamplePair> train;
  std::vector<SamplePair> val;
  WaldConfig config;
};

// Gaussian prefilter (sigma = r/2, radius 2r) then bicubic decimation by r.
RasterImage degrade(const RasterImage& img, std::size_t r);

// Number of training samples for n patches: round(train_fraction * n).
std::size_t train_count(std::size_t n, double train_fraction);

// Degrades MS and PAN by r, cuts co-registered patches, shuffles with the
// configured seed and splits. ms_ref patches are exact crops of the
// (normalized) original MS.
DatasetManifest make_dataset(const RasterImage& ms, const RasterImage& pan,
                             const WaldConfig& cfg, const std::string& source_name = "scene");

// Writes samples/NNNNNN_{ms_lr,pan_lr,ms_ref}.ras plus manifest.txt into dir
// and returns the manifest path.
std::filesystem::path save_manifest(const DatasetManifest& manifest,
                                    const std::filesystem::path& dir);
DatasetManifest load_manifest(const std::filesystem::path& manifest_path);

struct SyntheticScene {
  RasterImage ms;   // 4 bands at ms_height x ms_width
  RasterImage pan;  // 1 band at r times the MS size
};

// Deterministic 11-bit test scene: smooth band-correlated fields with sharp
// edges at PAN resolution; PAN is their band mean and MS their degraded copy.
SyntheticScene synthetic_scene(std::size_t ms_height, std::size_t ms_width, std::size_t r,
                               std::uint64_t seed);

}  // namespace messfn::wald
