#include "messfn/wald.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "messfn/resample.h"
#include "messfn/rng.h"

namespace messfn::wald {

namespace {

std::string sample_stem(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06zu", index);
  return buf;
}

}  // namespace

void WaldConfig::validate() const {
  if (r == 0) throw std::invalid_argument("scale factor r must be positive");
  if (patch == 0 || patch % r != 0) {
    throw std::invalid_argument("patch size " + std::to_string(patch) +
                                " must be a positive multiple of r=" + std::to_string(r));
  }
  if (effective_stride() % r != 0) {
    throw std::invalid_argument("patch stride must be a multiple of r=" + std::to_string(r));
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("train fraction must lie in (0, 1)");
  }
}

RasterImage degrade(const RasterImage& img, std::size_t r) {
  if (r == 0 || img.height % r != 0 || img.width % r != 0) {
    throw raster::RasterError("image " + std::to_string(img.height) + "x" +
                              std::to_string(img.width) + " is not divisible by r=" +
                              std::to_string(r));
  }
  const auto taps = gaussian_taps(0.5 * static_cast<double>(r), 2 * r);
  const std::size_t oh = img.height / r, ow = img.width / r;
  const auto rows = make_cubic_axis(img.height, oh);
  const auto cols = make_cubic_axis(img.width, ow);
  RasterImage out(img.bands, oh, ow);
  out.bit_depth = img.bit_depth;
  out.domain = img.domain;
  out.band_names = img.band_names;
  for (std::size_t b = 0; b < img.bands; ++b) {
    const auto smooth = separable_filter_plane(img.band(b), img.height, img.width, taps);
    cubic_resize_plane(smooth, img.height, img.width, rows, cols, out.band(b));
  }
  return out;
}

std::size_t train_count(std::size_t n, double train_fraction) {
  return static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(n)));
}

DatasetManifest make_dataset(const RasterImage& ms_in, const RasterImage& pan_in,
                             const WaldConfig& cfg, const std::string& source_name) {
  cfg.validate();
  if (pan_in.bands != 1) throw raster::RasterError("PAN image must have exactly one band");
  if (pan_in.height != cfg.r * ms_in.height || pan_in.width != cfg.r * ms_in.width) {
    throw raster::RasterError(
        "misaligned geometry: PAN " + std::to_string(pan_in.height) + "x" +
        std::to_string(pan_in.width) + " is not r=" + std::to_string(cfg.r) + " times MS " +
        std::to_string(ms_in.height) + "x" + std::to_string(ms_in.width));
  }
  const RasterImage ms = raster::to_unit(ms_in);
  const RasterImage pan = raster::to_unit(pan_in);
  const RasterImage ms_lr_scene = degrade(ms, cfg.r);
  const RasterImage pan_lr_scene = degrade(pan, cfg.r);

  const std::size_t patch = cfg.patch, stride = cfg.effective_stride(), r = cfg.r;
  raster::patch_count(ms.height, ms.width, patch, stride);
  std::vector<SamplePair> samples;
  for (std::size_t y = 0; y + patch <= ms.height; y += stride) {
    for (std::size_t x = 0; x + patch <= ms.width; x += stride) {
      SamplePair s;
      s.ms_ref = raster::crop(ms, y, x, patch, patch);
      s.pan_lr = raster::crop(pan_lr_scene, y, x, patch, patch);
      s.ms_lr = raster::crop(ms_lr_scene, y / r, x / r, patch / r, patch / r);
      s.source_id = source_name + "_y" + std::to_string(y) + "_x" + std::to_string(x);
      samples.push_back(std::move(s));
    }
  }

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(cfg.seed);
  rng.shuffle(order);
  const std::size_t n_train = train_count(samples.size(), cfg.train_fraction);

  DatasetManifest manifest;
  manifest.config = cfg;
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& dst = i < n_train ? manifest.train : manifest.val;
    dst.push_back(std::move(samples[order[i]]));
  }
  return manifest;
}

std::filesystem::path save_manifest(const DatasetManifest& manifest,
                                    const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "samples");
  std::ostringstream text;
  const auto& c = manifest.config;
  text << "# messfn manifest v1\n"
       << "# r = " << c.r << '\n'
       << "# patch = " << c.patch << '\n'
       << "# stride = " << c.effective_stride() << '\n'
       << "# train_fraction = " << c.train_fraction << '\n'
       << "# seed = " << c.seed << '\n'
       << "# samples = " << manifest.train.size() + manifest.val.size() << '\n'
       << "# train = " << manifest.train.size() << '\n'
       << "# val = " << manifest.val.size() << '\n';
  std::size_t index = 0;
  for (const auto* split : {&manifest.train, &manifest.val}) {
    const char* tag = split == &manifest.train ? "train" : "val";
    for (const auto& s : *split) {
      const std::string stem = "samples/" + sample_stem(index++);
      raster::save_raster(s.ms_lr, dir / (stem + "_ms_lr.ras"));
      raster::save_raster(s.pan_lr, dir / (stem + "_pan_lr.ras"));
      raster::save_raster(s.ms_ref, dir / (stem + "_ms_ref.ras"));
      text << tag << ' ' << stem << "_ms_lr.ras " << stem << "_pan_lr.ras " << stem
           << "_ms_ref.ras " << s.source_id << '\n';
    }
  }
  const auto path = dir / "manifest.txt";
  std::ofstream out(path, std::ios::trunc);
  out << text.str();
  if (!out) throw raster::RasterError("cannot write manifest '" + path.string() + "'");
  return path;
}

DatasetManifest load_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw raster::RasterError("cannot open manifest '" + manifest_path.string() + "'");
  const auto base = manifest_path.parent_path();
  DatasetManifest manifest;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    if (line[0] == '#') {
      std::string hash, key, eq;
      ls >> hash >> key >> eq;
      if (eq != "=") continue;
      auto& c = manifest.config;
      if (key == "r") ls >> c.r;
      else if (key == "patch") ls >> c.patch;
      else if (key == "stride") ls >> c.stride;
      else if (key == "train_fraction") ls >> c.train_fraction;
      else if (key == "seed") ls >> c.seed;
      continue;
    }
    std::string tag, ms_lr, pan_lr, ms_ref, id;
    if (!(ls >> tag >> ms_lr >> pan_lr >> ms_ref >> id) || (tag != "train" && tag != "val")) {
      throw raster::RasterError("malformed manifest line '" + line + "'");
    }
    SamplePair s{raster::load_raster(base / ms_lr), raster::load_raster(base / pan_lr),
                 raster::load_raster(base / ms_ref), id};
    (tag == "train" ? manifest.train : manifest.val).push_back(std::move(s));
  }
  return manifest;
}

SyntheticScene synthetic_scene(std::size_t ms_height, std::size_t ms_width, std::size_t r,
                               std::uint64_t seed) {
  const std::size_t h = ms_height * r, w = ms_width * r;
  Rng rng(seed);
  struct Wave {
    double fy, fx, phase, amp;
  };
  std::vector<Wave> waves(6);
  for (auto& wv : waves) {
    wv = {rng.uniform(0.01, 0.12), rng.uniform(0.01, 0.12), rng.uniform(0.0, 6.28),
          rng.uniform(0.02, 0.07)};
  }
  struct Disc {
    double cy, cx, radius;
    std::vector<double> level;
  };
  std::vector<Disc> discs(5);
  for (auto& d : discs) {
    d.cy = rng.uniform(0.0, static_cast<double>(h));
    d.cx = rng.uniform(0.0, static_cast<double>(w));
    d.radius = rng.uniform(0.05, 0.25) * static_cast<double>(std::min(h, w));
    for (int b = 0; b < 4; ++b) d.level.push_back(rng.uniform(-0.15, 0.15));
  }
  const double band_gain[4] = {0.8, 1.0, 0.9, 1.2};

  RasterImage hr(4, h, w);
  hr.bit_depth = 11;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double base = 0.0;
      for (const auto& wv : waves) {
        base += wv.amp * std::sin(wv.fy * static_cast<double>(y) + wv.fx * static_cast<double>(x) +
                                  wv.phase);
      }
      for (std::size_t b = 0; b < 4; ++b) {
        double v = 0.5 + band_gain[b] * base;
        for (const auto& d : discs) {
          const double dy = static_cast<double>(y) - d.cy, dx = static_cast<double>(x) - d.cx;
          if (dy * dy + dx * dx < d.radius * d.radius) v += d.level[b];
        }
        hr.at(b, y, x) = std::clamp(v, 0.02, 0.98) * 2047.0;
      }
    }
  }
  SyntheticScene scene{degrade(hr, r), RasterImage(1, h, w)};
  scene.pan.bit_depth = 11;
  for (std::size_t i = 0; i < scene.pan.data.size(); ++i) {
    double acc = 0.0;
    for (std::size_t b = 0; b < 4; ++b) acc += hr.band(b)[i];
    scene.pan.data[i] = acc / 4.0;
  }
  return scene;
}

}  // namespace messfn::wald
