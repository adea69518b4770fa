#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "messfn/raster.h"
#include "test_util.h"

using namespace messfn::raster;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RasterImage random_image(std::size_t b, std::size_t h, std::size_t w, std::uint64_t seed,
                         double lo, double hi) {
  RasterImage img(b, h, w);
  img.data = testutil::random_values(img.data.size(), seed, lo, hi);
  return img;
}

}  // namespace

TEST_CASE("u16 file of zeros loads as an all-zero image") {
  const auto dir = testutil::temp_dir("raster_zero");
  RasterImage img(1, 2, 2, 0.0);
  save_raster(img, dir / "z.ras", DType::u16);
  const auto loaded = load_raster(dir / "z.ras");
  CHECK(loaded.bands == 1);
  CHECK(loaded.height == 2);
  CHECK(loaded.width == 2);
  REQUIRE(loaded.data.size() == 4);
  for (double v : loaded.data) CHECK(v == 0.0);
}

TEST_CASE("save then load is bit-identical") {
  const auto dir = testutil::temp_dir("raster_roundtrip");
  SUBCASE("f64 payload") {
    auto img = random_image(4, 7, 5, 11, -1.0, 1.0);
    img.domain = Domain::unit;
    img.band_names = {"NIR", "R", "G", "B"};
    save_raster(img, dir / "a.ras", DType::f64);
    const auto back = load_raster(dir / "a.ras");
    CHECK(back.data == img.data);
    CHECK(back.band_names == img.band_names);
    CHECK(back.domain == Domain::unit);
    save_raster(back, dir / "b.ras", DType::f64);
    CHECK(slurp(dir / "a.ras") == slurp(dir / "b.ras"));
  }
  SUBCASE("u16 payload of 11-bit counts") {
    auto img = random_image(1, 9, 3, 12, 0.0, 2047.0);
    for (auto& v : img.data) v = std::round(v);
    save_raster(img, dir / "c.ras", DType::u16);
    CHECK(load_raster(dir / "c.ras").data == img.data);
  }
}

TEST_CASE("header claiming more bands than the payload holds is rejected") {
  const auto dir = testutil::temp_dir("raster_short");
  save_raster(RasterImage(3, 4, 4, 1.0), dir / "three.ras", DType::f32);
  auto text = slurp(dir / "three.ras");
  const auto pos = text.find("bands 3");
  REQUIRE(pos != std::string::npos);
  text.replace(pos, 7, "bands 4");
  std::ofstream(dir / "four.ras", std::ios::binary) << text;
  try {
    load_raster(dir / "four.ras");
    FAIL("expected RasterError");
  } catch (const RasterError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("holds 192 bytes") != std::string::npos);
    CHECK(msg.find("expected 256") != std::string::npos);
  }
}

TEST_CASE("malformed raster files are rejected") {
  const auto dir = testutil::temp_dir("raster_bad");
  std::ofstream(dir / "magic.ras") << "NOT A RASTER\n";
  CHECK_THROWS_AS(load_raster(dir / "magic.ras"), RasterError);
  std::ofstream(dir / "dtype.ras") << "MESSFN-RASTER 1\nbands 1\nheight 1\nwidth 1\ndtype c64\nend\n";
  CHECK_THROWS_AS(load_raster(dir / "dtype.ras"), RasterError);
  CHECK_THROWS_AS(load_raster(dir / "missing.ras"), RasterError);
  CHECK_THROWS_AS(save_raster(RasterImage(1, 1, 1, 70000.0), dir / "big.ras", DType::u16),
                  RasterError);
}

TEST_CASE("normalize maps the radiometric range onto [-1, 1]") {
  const NormalizationParams p{2047.0, 0.0};
  RasterImage img(1, 1, 3);
  img.data = {0.0, 2047.0, 2047.0 / 2.0};
  const auto unit = normalize_to_unit(img, p);
  CHECK(unit.data[0] == -1.0);
  CHECK(unit.data[1] == 1.0);
  CHECK(unit.data[2] == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(unit.domain == Domain::unit);
  CHECK(NormalizationParams::for_bit_depth(11).scale == 2047.0);
  CHECK_THROWS_AS(normalize_to_unit(img, {0.0, 0.0}), RasterError);
}

TEST_CASE("normalize round trip on random 11-bit data") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto img = random_image(4, 16, 16, 100 + seed, 0.0, 2047.0);
    for (auto& v : img.data) v = std::round(v);
    const auto p = NormalizationParams::for_bit_depth(11);
    const auto unit = normalize_to_unit(img, p);
    double max_err = 0.0;
    for (std::size_t i = 0; i < img.data.size(); ++i) {
      CHECK(unit.data[i] >= -1.0);
      CHECK(unit.data[i] <= 1.0);
    }
    const auto back = denormalize_from_unit(unit, p);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
      max_err = std::max(max_err, std::abs(back.data[i] - img.data[i]));
    }
    CHECK(max_err <= 1e-6);
  }
}

TEST_CASE("crop_patches tiling counts") {
  const auto a = random_image(1, 64, 64, 1, -1, 1);
  const auto one = crop_patches(a, 64, 64);
  REQUIRE(one.size() == 1);
  CHECK(one[0].data == a.data);
  CHECK(crop_patches(random_image(1, 128, 128, 2, -1, 1), 64, 64).size() == 4);
  CHECK(crop_patches(random_image(1, 100, 100, 3, -1, 1), 64, 64).size() == 1);
  CHECK(patch_count(100, 130, 32, 16) == 5 * 7);
  CHECK_THROWS_AS(crop_patches(a, 65, 1), RasterError);
}

TEST_CASE("patches are exact sub-buffers of the source") {
  messfn::Rng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t h = 20 + rng.index(40), w = 20 + rng.index(40);
    const std::size_t patch = 4 + rng.index(12), stride = 1 + rng.index(10);
    const auto img = random_image(3, h, w, 200 + trial, -1, 1);
    const auto patches = crop_patches(img, patch, stride);
    const std::size_t ny = (h - patch) / stride + 1, nx = (w - patch) / stride + 1;
    REQUIRE(patches.size() == ny * nx);
    for (int probe = 0; probe < 5; ++probe) {
      const std::size_t py = rng.index(ny), px = rng.index(nx);
      const auto& p = patches[py * nx + px];
      for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t y = 0; y < patch; ++y)
          for (std::size_t x = 0; x < patch; ++x)
            REQUIRE(p.at(b, y, x) == img.at(b, py * stride + y, px * stride + x));
    }
  }
}

TEST_CASE("PNG export endpoints and band layout") {
  const auto dir = testutil::temp_dir("raster_png");
  export_png8(RasterImage(1, 5, 6, -1.0), {0}, dir / "black.png");
  const auto black = read_png8(dir / "black.png");
  CHECK(black.channels == 1);
  CHECK(black.width == 6);
  CHECK(black.height == 5);
  for (auto v : black.pixels) CHECK(v == 0);

  export_png8(RasterImage(1, 5, 6, 1.0), {0}, dir / "white.png");
  for (auto v : read_png8(dir / "white.png").pixels) CHECK(v == 255);

  RasterImage four(4, 2, 3);
  const double level[4] = {-1.0, -0.5, 0.0, 1.0};
  for (std::size_t b = 0; b < 4; ++b)
    for (auto& v : four.band(b)) v = level[b];
  export_png8(four, {1, 2, 3}, dir / "rgb.png");
  const auto rgb = read_png8(dir / "rgb.png");
  REQUIRE(rgb.channels == 3);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(rgb.pixels[3 * i + 0] == 64);
    CHECK(rgb.pixels[3 * i + 1] == 128);
    CHECK(rgb.pixels[3 * i + 2] == 255);
  }
  CHECK_THROWS_AS(export_png8(four, {1, 2, 4}, dir / "bad.png"), RasterError);
  CHECK_THROWS_AS(export_png8(four, {0, 1}, dir / "bad.png"), RasterError);
}

TEST_CASE("colormap export maps the low end to black") {
  const auto dir = testutil::temp_dir("raster_cmap");
  export_png8_colormap(RasterImage(1, 4, 4, 0.0), dir / "zero.png", 0.0, 1.0);
  const auto png = read_png8(dir / "zero.png");
  CHECK(png.channels == 3);
  for (auto v : png.pixels) CHECK(v == 0);
  export_png8_colormap(RasterImage(1, 1, 1, 1.0), dir / "top.png", 0.0, 1.0);
  const auto top = read_png8(dir / "top.png");
  CHECK(top.pixels == std::vector<std::uint8_t>{255, 0, 0});
}
