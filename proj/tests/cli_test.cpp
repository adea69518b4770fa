#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <iterator>
#include <sstream>

#include "cli.h"
#include "messfn/checkpoint.h"
#include "messfn/raster.h"
#include "messfn/wald.h"
#include "test_util.h"

using namespace messfn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

// Writes an 11-bit synthetic MS/PAN pair; returns {ms path, pan path}.
std::pair<std::string, std::string> write_scene(const fs::path& dir, std::size_t ms_size,
                                                std::uint64_t seed = 5) {
  const auto scene = wald::synthetic_scene(ms_size, ms_size, 4, seed);
  const auto ms = dir / "ms.ras", pan = dir / "pan.ras";
  raster::save_raster(scene.ms, ms, raster::DType::u16);
  raster::save_raster(scene.pan, pan, raster::DType::u16);
  return {ms.string(), pan.string()};
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string hash_line(const std::string& out) {
  const auto pos = out.find("manifest hash ");
  REQUIRE(pos != std::string::npos);
  return out.substr(pos, out.find('\n', pos) - pos);
}

// Four 32x32 patches, two of them for validation.
fs::path small_manifest(const fs::path& dir) {
  const auto [ms, pan] = write_scene(dir, 64);
  const auto r = run_cli({"simulate", ms, pan, (dir / "sim").string(), "--patch", "32",
                      "--train-frac", "0.5"});
  REQUIRE(r.code == 0);
  return dir / "sim";
}

std::vector<std::string> tiny_train(const fs::path& manifest, const fs::path& out) {
  return {"train", manifest.string(), out.string(), "--B", "2", "--channels", "4",
          "--epochs", "4", "--decay-epoch", "2", "--batch-size", "2", "--lr", "1e-3",
          "--checkpoint-every", "0", "--seed", "3"};
}

// Replaces the value of an existing flag or appends it.
void set_flag(std::vector<std::string>& args, const std::string& flag, const std::string& value) {
  const auto it = std::find(args.begin(), args.end(), flag);
  if (it != args.end()) {
    *(it + 1) = value;
  } else {
    args.insert(args.end(), {flag, value});
  }
}

}  // namespace

TEST_CASE("simulate cuts 16 samples from a 256/1024 pair with a 14/2 split") {
  const auto dir = testutil::temp_dir("cli_sim");
  const auto [ms, pan] = write_scene(dir, 256);
  const auto a = run_cli({"simulate", ms, pan, (dir / "a").string()});
  REQUIRE(a.code == 0);
  CHECK(a.out.find("samples 16: train 14, val 2") != std::string::npos);
  CHECK(a.out.find("ms_lr 16x16x4, pan_lr 64x64x1, ms_ref 64x64x4") != std::string::npos);

  const auto m = wald::load_manifest(dir / "a" / "manifest.txt");
  CHECK(m.train.size() == 14);
  CHECK(m.val.size() == 2);

  const auto b = run_cli({"simulate", ms, pan, (dir / "b").string()});
  REQUIRE(b.code == 0);
  CHECK(hash_line(a.out) == hash_line(b.out));
  const auto c = run_cli({"simulate", ms, pan, (dir / "c").string(), "--seed", "1"});
  REQUIRE(c.code == 0);
  CHECK(hash_line(a.out) != hash_line(c.out));

  const auto echo = file_bytes(dir / "a" / "config.txt");
  CHECK(echo.rfind("[simulate]\n", 0) == 0);
  CHECK(echo.find("train-frac=0.9") != std::string::npos);
}

TEST_CASE("simulate input errors") {
  const auto dir = testutil::temp_dir("cli_sim_err");
  const auto [ms, pan] = write_scene(dir, 32);
  const auto missing = (dir / "missing_pan.ras").string();
  const auto r = run_cli({"simulate", ms, missing, (dir / "out").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find(missing) != std::string::npos);

  const auto other = dir / "other";
  fs::create_directories(other);
  const auto [ms2, pan2] = write_scene(other, 16);
  const auto geo = run_cli({"simulate", ms, pan2, (dir / "out").string(), "--patch", "16"});
  CHECK(geo.code == 1);
  CHECK(!geo.err.empty());

  CHECK(run_cli({"simulate", ms, pan, (dir / "out").string(), "--train-frac", "1.5"}).code == 2);
  CHECK(run_cli({"simulate", ms}).code == 2);
  CHECK(run_cli({}).code == 2);
  CHECK(run_cli({"--help"}).code == 0);
}

TEST_CASE("train writes checkpoint, log and config echo") {
  const auto dir = testutil::temp_dir("cli_train");
  const auto manifest = small_manifest(dir);
  const auto r = run_cli(tiny_train(manifest, dir / "run"));
  REQUIRE(r.code == 0);
  CHECK(r.out.find("epoch=3 ") != std::string::npos);
  CHECK(fs::exists(dir / "run" / "last.ckpt"));
  CHECK(fs::exists(dir / "run" / "loss.log"));
  CHECK(fs::exists(dir / "run" / "val_metrics.json"));
  const auto echo = file_bytes(dir / "run" / "config.txt");
  CHECK(echo.rfind("[train]\n", 0) == 0);
  CHECK(echo.find("epochs=4") != std::string::npos);
  CHECK(echo.find("B=2") != std::string::npos);
  CHECK(load_checkpoint(dir / "run" / "last.ckpt").epoch == 4);
}

TEST_CASE("train ablation spec is echoed") {
  const auto dir = testutil::temp_dir("cli_ablate");
  const auto manifest = small_manifest(dir);
  auto args = tiny_train(manifest, dir / "run");
  set_flag(args, "--B", "9");
  set_flag(args, "--ablate", "disconnect=2,5,7,9");
  set_flag(args, "--epochs", "1");
  set_flag(args, "--decay-epoch", "0");
  set_flag(args, "--max-patches", "2");
  const auto r = run_cli(args);
  REQUIRE(r.code == 0);
  CHECK(file_bytes(dir / "run" / "config.txt").find("ablate=\"disconnect=2,5,7,9\"") !=
        std::string::npos);
  CHECK(file_bytes(dir / "run" / "model.txt").find("disconnect = 2,5,7,9") != std::string::npos);
  const auto ck = load_checkpoint(dir / "run" / "last.ckpt");
  CHECK(ck.weights.config.disconnect == std::set<std::size_t>{2, 5, 7, 9});
  CHECK(ck.weights.config.blocks == 9);
}

TEST_CASE("train accepts the block-count sweep and rejects bad configs") {
  const auto dir = testutil::temp_dir("cli_sweep");
  const auto manifest = small_manifest(dir);
  for (const char* b : {"5", "7", "9", "11"}) {
    auto args = tiny_train(manifest, dir / (std::string("b") + b));
    set_flag(args, "--B", b);
    set_flag(args, "--epochs", "1");
    set_flag(args, "--decay-epoch", "0");
    set_flag(args, "--max-patches", "2");
    const auto r = run_cli(args);
    CHECK_MESSAGE(r.code == 0, r.err);
    CHECK(load_checkpoint(dir / (std::string("b") + b) / "last.ckpt").weights.config.blocks ==
          std::stoul(b));
  }
  auto zero = tiny_train(manifest, dir / "zero");
  set_flag(zero, "--B", "0");
  CHECK(run_cli(zero).code == 2);
  auto bad = tiny_train(manifest, dir / "bad");
  set_flag(bad, "--ablate", "disconnect=2,x");
  CHECK(run_cli(bad).code == 2);
  auto late = tiny_train(manifest, dir / "late");
  set_flag(late, "--decay-epoch", "4");
  CHECK(run_cli(late).code == 2);
  CHECK(run_cli({"train", (dir / "nowhere").string(), (dir / "x").string()}).code == 2);
}

TEST_CASE("train is deterministic and resumable byte for byte") {
  const auto dir = testutil::temp_dir("cli_det");
  const auto manifest = small_manifest(dir);
  REQUIRE(run_cli(tiny_train(manifest, dir / "a")).code == 0);
  REQUIRE(run_cli(tiny_train(manifest, dir / "b")).code == 0);
  const auto whole = file_bytes(dir / "a" / "last.ckpt");
  CHECK(whole == file_bytes(dir / "b" / "last.ckpt"));

  auto first = tiny_train(manifest, dir / "split");
  first.insert(first.end(), {"--stop-after", "2"});
  REQUIRE(run_cli(first).code == 0);
  CHECK(load_checkpoint(dir / "split" / "last.ckpt").epoch == 2);
  auto second = tiny_train(manifest, dir / "split");
  second.insert(second.end(), {"--resume", (dir / "split" / "last.ckpt").string()});
  REQUIRE(run_cli(second).code == 0);
  CHECK(file_bytes(dir / "split" / "last.ckpt") == whole);
}

TEST_CASE("config file values are overridden by flags") {
  const auto dir = testutil::temp_dir("cli_config");
  const auto manifest = small_manifest(dir);
  {
    std::ofstream cfg(dir / "run.cfg");
    cfg << "[train]\nepochs = 3\ndecay-epoch = 1\nseed = 9\nchannels = 4\nB = 2\n";
  }
  const auto r = run_cli({"--config", (dir / "run.cfg").string(), "train", manifest.string(),
                      (dir / "run").string(), "--seed", "4", "--batch-size", "2"});
  REQUIRE(r.code == 0);
  const auto echo = file_bytes(dir / "run" / "config.txt");
  CHECK(echo.find("epochs=3") != std::string::npos);
  CHECK(echo.find("seed=4") != std::string::npos);

  // the echo alone reproduces the run
  const auto again = run_cli({"--config", (dir / "run" / "config.txt").string(), "train",
                          manifest.string(), (dir / "rerun").string()});
  REQUIRE(again.code == 0);
  CHECK(file_bytes(dir / "run" / "last.ckpt") == file_bytes(dir / "rerun" / "last.ckpt"));
}

TEST_CASE("fuse with a baseline keeps PAN geometry") {
  const auto dir = testutil::temp_dir("cli_fuse");
  const auto [ms, pan] = write_scene(dir, 32);
  for (const char* method : {"ihs", "pca", "gs", "mtf-glp-hpm"}) {
    const auto out = dir / (std::string(method) + ".ras");
    const auto r = run_cli({"fuse", ms, pan, out.string(), "--baseline", method, "--png",
                        (dir / (std::string(method) + ".png")).string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto img = raster::load_raster(out);
    CHECK(img.bands == 4);
    CHECK(img.height == 128);
    CHECK(img.width == 128);
    const auto png = raster::read_png8(dir / (std::string(method) + ".png"));
    CHECK(png.channels == 3);
    CHECK(png.width == 128);
  }
  CHECK(run_cli({"fuse", ms, pan, (dir / "x.ras").string(), "--baseline", "brovey"}).code == 2);
  CHECK(run_cli({"fuse", ms, pan, (dir / "x.ras").string()}).code == 2);
  CHECK(run_cli({"fuse", ms, (dir / "none.ras").string(), (dir / "x.ras").string(), "--baseline",
             "ihs"}).code == 2);
}

TEST_CASE("fuse with a checkpoint") {
  const auto dir = testutil::temp_dir("cli_fuse_net");
  const auto manifest = small_manifest(dir);
  REQUIRE(run_cli(tiny_train(manifest, dir / "run")).code == 0);
  const auto ck = (dir / "run" / "last.ckpt").string();

  // unit-domain sample inputs give unit-domain output
  const auto sample = manifest / "samples" / "000000";
  const auto out = dir / "net.ras";
  const auto r = run_cli({"fuse", sample.string() + "_ms_lr.ras", sample.string() + "_pan_lr.ras",
                      out.string(), "--checkpoint", ck});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto img = raster::load_raster(out);
  CHECK(img.domain == raster::Domain::unit);
  CHECK(img.height == 32);
  for (double v : img.data) {
    CHECK(v > -1.0);
    CHECK(v < 1.0);
  }

  const auto bad = run_cli({"fuse", sample.string() + "_ms_lr.ras", (dir / "pan.ras").string(),
                            (dir / "bad.ras").string(), "--checkpoint", ck});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("r=4") != std::string::npos);
  CHECK(run_cli({"fuse", sample.string() + "_ms_lr.ras", sample.string() + "_pan_lr.ras",
             (dir / "x.ras").string(), "--checkpoint", ck, "--r", "2"})
            .code == 2);
  CHECK(run_cli({"fuse", sample.string() + "_ms_lr.ras", sample.string() + "_pan_lr.ras",
             (dir / "x.ras").string(), "--checkpoint", ck, "--baseline", "ihs"})
            .code == 2);
}

TEST_CASE("eval on identical images") {
  const auto dir = testutil::temp_dir("cli_eval");
  const auto [ms, pan] = write_scene(dir, 32);
  const auto fused = (dir / "fused.ras").string();
  REQUIRE(run_cli({"fuse", ms, pan, fused, "--baseline", "gs"}).code == 0);
  const auto r = run_cli({"eval", fused, "--ref", fused, "--maps", (dir / "maps").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("psnr_db = 150\n") != std::string::npos);
  CHECK(r.out.find("ssim = 1\n") != std::string::npos);
  CHECK(r.out.find("sam_rad = 0\n") != std::string::npos);
  CHECK(r.out.find("ergas = 0\n") != std::string::npos);
  CHECK(r.out.find("cc = 1\n") != std::string::npos);
  CHECK(r.out.find("q4 = 1\n") != std::string::npos);
  CHECK(fs::exists(dir / "fused.metrics.txt"));
  CHECK(file_bytes(dir / "fused.metrics.json").find("\"q4\"") != std::string::npos);
  CHECK(fs::exists(dir / "fused.eval.config.txt"));

  const auto sam = raster::read_png8(dir / "maps" / "sam_map.png");
  CHECK(sam.width == 128);
  CHECK(std::all_of(sam.pixels.begin(), sam.pixels.end(), [](auto p) { return p == 0; }));
  const auto diff = raster::read_png8(dir / "maps" / "diff_map.png");
  CHECK(std::all_of(diff.pixels.begin(), diff.pixels.end(), [](auto p) { return p == 0; }));
  CHECK(fs::exists(dir / "maps" / "gradient_map.png"));

  const auto only = run_cli({"eval", fused, "--ref", fused, "--metrics", "psnr,sam", "--out",
                         (dir / "sel").string()});
  REQUIRE(only.code == 0);
  CHECK(only.out.find("psnr_db") != std::string::npos);
  CHECK(only.out.find("ssim") == std::string::npos);
}

TEST_CASE("eval without reference and its errors") {
  const auto dir = testutil::temp_dir("cli_eval_noref");
  const auto [ms, pan] = write_scene(dir, 32);
  const auto fused = (dir / "fused.ras").string();
  REQUIRE(run_cli({"fuse", ms, pan, fused, "--baseline", "mtf-glp-hpm"}).code == 0);
  const auto r = run_cli({"eval", fused, "--noref", ms, pan});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("qnr = ") != std::string::npos);
  CHECK(r.out.find("d_lambda = ") != std::string::npos);
  CHECK(r.out.find("psnr") == std::string::npos);

  const auto small = dir / "small";
  fs::create_directories(small);
  const auto [ms2, pan2] = write_scene(small, 16);
  CHECK(run_cli({"eval", fused, "--noref", ms2, pan2}).code == 1);
  CHECK(run_cli({"eval", fused}).code == 2);
  CHECK(run_cli({"eval", fused, "--ref", fused, "--noref", ms, pan}).code == 2);
  CHECK(run_cli({"eval", fused, "--noref", ms}).code == 2);
}
