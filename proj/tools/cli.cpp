#include "cli.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <ostream>
#include <stdexcept>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>
#include <zlib.h>

#include "messfn/baselines.h"
#include "messfn/checkpoint.h"
#include "messfn/metrics.h"
#include "messfn/raster.h"
#include "messfn/trainer.h"
#include "messfn/wald.h"

namespace messfn::cli {

namespace fs = std::filesystem;
using raster::RasterImage;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SimulateArgs {
  std::string ms, pan, out_dir;
  std::size_t r = 4;
  std::size_t patch = 64;
  std::size_t stride = 0;
  double train_frac = 0.9;
  std::uint64_t seed = 0;
};

struct TrainArgs {
  std::string manifest, out_dir;
  std::size_t blocks = 9;
  std::size_t channels = 64;
  std::string ablate = "none";
  TrainConfig cfg;
  std::string resume;
  std::size_t stop_after = 0;
};

struct FuseArgs {
  std::string ms, pan, out;
  std::string checkpoint, baseline;
  std::size_t r = 4;
  std::string png;
};

struct EvalArgs {
  std::string fused, ref;
  std::vector<std::string> noref;
  std::size_t r = 4;
  std::string metrics = "all";
  std::string out_dir, maps_dir;
};

// Stores paths in absolute form so echoed configs do not depend on the
// working directory.
const CLI::Validator kAbsolute(
    [](std::string& p) {
      if (!p.empty()) p = fs::absolute(p).lexically_normal().string();
      return std::string();
    },
    "", "absolute");

void require_file(const std::string& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw UsageError(what + " file not found: " + path);
}

// Effective options of one subcommand as a config file section that can be
// passed back through --config.
void write_echo(const CLI::App& sub, const fs::path& path) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  out << '[' << sub.get_name() << "]\n";
  std::istringstream lines(sub.config_to_str(true, false));
  for (std::string line; std::getline(lines, line);) {
    if (line.ends_with("=\"\"") || line.ends_with("=[]")) continue;
    out << line << '\n';
  }
  if (!out) throw std::runtime_error("cannot write config echo '" + path.string() + "'");
}

std::string shape_text(const RasterImage& img) {
  return std::to_string(img.height) + "x" + std::to_string(img.width) + "x" +
         std::to_string(img.bands);
}

// CRC-32 over manifest.txt and every sample file in name order.
std::string manifest_hash(const fs::path& dir) {
  std::vector<fs::path> files{dir / "manifest.txt"};
  std::vector<fs::path> samples;
  for (const auto& e : fs::directory_iterator(dir / "samples")) samples.push_back(e.path());
  std::sort(samples.begin(), samples.end());
  files.insert(files.end(), samples.begin(), samples.end());
  uLong crc = crc32(0L, Z_NULL, 0);
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    const std::string name = f.lexically_relative(dir).generic_string();
    crc = crc32(crc, reinterpret_cast<const Bytef*>(name.data()), static_cast<uInt>(name.size()));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  }
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

fs::path manifest_file(const std::string& arg) {
  fs::path p(arg);
  if (fs::is_directory(p)) p /= "manifest.txt";
  require_file(p.string(), "manifest");
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
}

int cmd_simulate(const SimulateArgs& a, const CLI::App& sub, std::ostream& out) {
  require_file(a.ms, "MS");
  require_file(a.pan, "PAN");
  wald::WaldConfig wc;
  wc.r = a.r;
  wc.patch = a.patch;
  wc.stride = a.stride;
  wc.train_fraction = a.train_frac;
  wc.seed = a.seed;
  wc.validate();

  const auto ms = raster::load_raster(a.ms);
  const auto pan = raster::load_raster(a.pan);
  const auto manifest = wald::make_dataset(ms, pan, wc, fs::path(a.ms).stem().string());
  const auto path = wald::save_manifest(manifest, a.out_dir);
  write_echo(sub, fs::path(a.out_dir) / "config.txt");

  const std::size_t total = manifest.train.size() + manifest.val.size();
  out << "samples " << total << ": train " << manifest.train.size() << ", val "
      << manifest.val.size() << '\n';
  const auto& first = manifest.train.empty() ? manifest.val.front() : manifest.train.front();
  out << "shapes ms_lr " << shape_text(first.ms_lr) << ", pan_lr " << shape_text(first.pan_lr)
      << ", ms_ref " << shape_text(first.ms_ref) << '\n';
  out << "manifest " << path.string() << '\n';
  out << "manifest hash " << manifest_hash(a.out_dir) << '\n';
  return 0;
}

int cmd_train(const TrainArgs& a, const CLI::App& sub, std::ostream& out) {
  MessfnConfig mcfg;
  mcfg.blocks = a.blocks;
  mcfg.channels = a.channels;
  apply_ablation(a.ablate, mcfg);
  mcfg.validate();
  a.cfg.validate();

  const auto manifest = wald::load_manifest(manifest_file(a.manifest));
  mcfg.r = manifest.config.r;
  if (!a.resume.empty()) require_file(a.resume, "checkpoint");

  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  write_echo(sub, dir / "config.txt");
  std::ofstream model(dir / "model.txt", std::ios::trunc);
  for (const auto& [key, value] : config_entries(mcfg)) model << key << " = " << value << '\n';
  model.close();

  TrainOptions opt;
  opt.out_dir = dir;
  if (!a.resume.empty()) opt.resume_from = fs::path(a.resume);
  opt.stop_after_epoch = a.stop_after;
  spdlog::info("training B={} C={} ablation={} on {} patches", mcfg.blocks, mcfg.channels,
               a.ablate, manifest.train.size());
  const auto result = train(manifest, mcfg, a.cfg, opt);

  if (!result.reports.empty()) out << result.reports.back().to_line() << '\n';
  out << "checkpoint " << (dir / "last.ckpt").string() << '\n';
  if (!manifest.val.empty()) {
    const auto report = evaluate(result.weights, manifest.val);
    write_text(dir / "val_metrics.txt", report.to_text());
    write_text(dir / "val_metrics.json", report.to_json());
    out << report.to_text();
  }
  return 0;
}

int cmd_fuse(const FuseArgs& a, const CLI::App& sub, std::ostream& out) {
  if (a.checkpoint.empty() == a.baseline.empty()) {
    throw UsageError("fuse needs exactly one of --checkpoint or --baseline");
  }
  std::optional<baselines::Method> method;
  if (!a.baseline.empty()) method = baselines::parse_method(a.baseline);
  require_file(a.ms, "MS");
  require_file(a.pan, "PAN");
  const auto ms = raster::load_raster(a.ms);
  const auto pan = raster::load_raster(a.pan);

  RasterImage fused;
  if (method) {
    fused = baselines::fuse(*method, baselines::make_input(ms, pan, a.r));
  } else {
    require_file(a.checkpoint, "checkpoint");
    const auto ck = load_checkpoint(a.checkpoint);
    if (sub.count("--r") > 0 && a.r != ck.weights.config.r) {
      throw UsageError("--r " + std::to_string(a.r) + " differs from the checkpoint's r=" +
                       std::to_string(ck.weights.config.r));
    }
    fused = fuse_with_network(ck.weights, ms, pan);
  }
  fused.domain = raster::Domain::unit;
  fused.bit_depth = ms.bit_depth;
  fused.band_names = ms.band_names;

  const fs::path path(a.out);
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  const auto stored = ms.domain == raster::Domain::raw
                          ? raster::denormalize_from_unit(
                                fused, raster::NormalizationParams::for_bit_depth(ms.bit_depth))
                          : fused;
  raster::save_raster(stored, path);
  if (!a.png.empty()) {
    std::vector<std::size_t> rgb{0};
    if (fused.bands >= 3) rgb = {2, 1, 0};
    raster::export_png8(fused, rgb, a.png, raster::Stretch::percentile_2_98);
  }
  write_echo(sub, path.parent_path() / (path.stem().string() + ".config.txt"));
  out << "fused " << shape_text(fused) << " -> " << path.string() << '\n';
  return 0;
}

// Band-mean of a nonnegative map scaled by its maximum into an 8-bit
// grayscale PNG; an all-zero map stays zero.
void write_map(const RasterImage& map, const fs::path& stem) {
  raster::save_raster(map, stem.string() + ".ras");
  std::vector<double> mean(map.plane(), 0.0);
  for (std::size_t b = 0; b < map.bands; ++b) {
    const auto band = map.band(b);
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += band[i] / static_cast<double>(map.bands);
  }
  const double hi = mean.empty() ? 0.0 : *std::max_element(mean.begin(), mean.end());
  raster::Png8 png;
  png.width = map.width;
  png.height = map.height;
  png.channels = 1;
  png.pixels.resize(mean.size());
  for (std::size_t i = 0; i < mean.size(); ++i) {
    png.pixels[i] = hi > 0.0 ? static_cast<std::uint8_t>(std::lround(255.0 * mean[i] / hi)) : 0;
  }
  raster::write_png8(stem.string() + ".png", png);
}

int cmd_eval(const EvalArgs& a, const CLI::App& sub, std::ostream& out) {
  if (a.ref.empty() == a.noref.empty()) {
    throw UsageError("eval needs exactly one of --ref or --noref");
  }
  require_file(a.fused, "fused");
  const auto fused = raster::to_unit(raster::load_raster(a.fused));

  metrics::MetricReport report;
  RasterImage map_ref;
  if (!a.ref.empty()) {
    require_file(a.ref, "reference");
    const auto ref = raster::to_unit(raster::load_raster(a.ref));
    report = metrics::reference_report(fused, ref, a.r, metrics::parse_selection(a.metrics));
    map_ref = ref;
  } else {
    require_file(a.noref[0], "MS");
    require_file(a.noref[1], "PAN");
    const auto ms = raster::to_unit(raster::load_raster(a.noref[0]));
    const auto pan = raster::to_unit(raster::load_raster(a.noref[1]));
    report = metrics::no_reference_report(fused, ms, pan, a.r);
    if (!a.maps_dir.empty()) map_ref = baselines::upsample(ms, a.r);
  }
  out << report.to_text();

  const fs::path dir = a.out_dir.empty() ? fs::path(a.fused).parent_path() : fs::path(a.out_dir);
  const std::string stem = fs::path(a.fused).stem().string();
  if (!dir.empty()) fs::create_directories(dir);
  write_text(dir / (stem + ".metrics.txt"), report.to_text());
  write_text(dir / (stem + ".metrics.json"), report.to_json());
  write_echo(sub, dir / (stem + ".eval.config.txt"));

  if (!a.maps_dir.empty()) {
    if (!map_ref.same_geometry(fused)) {
      throw raster::RasterError("maps need the comparison image at the fused geometry " +
                                shape_text(fused));
    }
    const fs::path maps(a.maps_dir);
    fs::create_directories(maps);
    write_map(metrics::sam_map(metrics::to_positive(fused), metrics::to_positive(map_ref)),
              maps / "sam_map");
    write_map(metrics::gradient_map(fused), maps / "gradient_map");
    write_map(metrics::diff_map(fused, map_ref), maps / "diff_map");
    out << "maps " << maps.string() << '\n';
  }
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multispectral pan-sharpening: Wald simulation, network training, fusion and "
               "quality evaluation"};
  app.name("messfn");
  app.set_config("--config", "", "key = value file with [simulate], [train], [fuse] or [eval] sections");
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Log per-epoch training progress");

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Cut reduced-resolution training triples");
  simulate->add_option("ms", sim.ms, "Multispectral raster")->required()->transform(kAbsolute);
  simulate->add_option("pan", sim.pan, "Panchromatic raster")->required()->transform(kAbsolute);
  simulate->add_option("out_dir", sim.out_dir, "Output directory")->required()->transform(kAbsolute);
  simulate->add_option("--r", sim.r, "Resolution ratio")->capture_default_str();
  simulate->add_option("--patch", sim.patch, "Patch size in MS pixels")->capture_default_str();
  simulate->add_option("--stride", sim.stride, "Patch stride (0 = patch)")->capture_default_str();
  simulate->add_option("--seed", sim.seed, "Shuffle seed")->capture_default_str();
  simulate->add_option("--train-frac", sim.train_frac, "Training fraction")->capture_default_str();

  TrainArgs tr;
  auto* trainc = app.add_subcommand("train", "Train the network on a manifest");
  trainc->add_option("manifest", tr.manifest, "manifest.txt or its directory")
      ->required()
      ->transform(kAbsolute);
  trainc->add_option("out_dir", tr.out_dir, "Output directory")->required()->transform(kAbsolute);
  trainc->add_option("--B", tr.blocks, "Number of expert blocks")->capture_default_str();
  trainc->add_option("--channels", tr.channels, "Feature channels")->capture_default_str();
  trainc->add_option("--ablate", tr.ablate, "none | no-rsab | no-rmsab | disconnect=i,j,...")
      ->capture_default_str();
  trainc->add_option("--epochs", tr.cfg.epochs, "Training epochs")->capture_default_str();
  trainc->add_option("--batch-size", tr.cfg.batch_size, "Patches per step")->capture_default_str();
  trainc->add_option("--lr", tr.cfg.lr0, "Initial learning rate")->capture_default_str();
  trainc->add_option("--decay-epoch", tr.cfg.decay_epoch, "First epoch at the decayed rate")
      ->capture_default_str();
  trainc->add_option("--decay-factor", tr.cfg.decay_factor, "Learning-rate multiplier at the decay epoch")
      ->capture_default_str();
  trainc->add_option("--beta1", tr.cfg.beta1, "Adam first-moment decay")->capture_default_str();
  trainc->add_option("--beta2", tr.cfg.beta2, "Adam second-moment decay")->capture_default_str();
  trainc->add_option("--seed", tr.cfg.seed, "Initialization and shuffle seed")
      ->capture_default_str();
  trainc->add_option("--checkpoint-every", tr.cfg.checkpoint_every, "0 keeps only last.ckpt")
      ->capture_default_str();
  trainc->add_option("--max-patches", tr.cfg.max_patches, "Cap on training patches (0 = all)")
      ->capture_default_str();
  trainc->add_option("--resume", tr.resume, "Checkpoint to continue from")->transform(kAbsolute);
  trainc->add_option("--stop-after", tr.stop_after, "Stop once this many epochs are done (0 = all)")
      ->capture_default_str();

  FuseArgs fu;
  auto* fuse = app.add_subcommand("fuse", "Fuse an MS/PAN pair with a checkpoint or a baseline");
  fuse->add_option("ms", fu.ms, "Multispectral raster")->required()->transform(kAbsolute);
  fuse->add_option("pan", fu.pan, "Panchromatic raster")->required()->transform(kAbsolute);
  fuse->add_option("out", fu.out, "Output raster")->required()->transform(kAbsolute);
  fuse->add_option("--checkpoint", fu.checkpoint, "Network checkpoint")->transform(kAbsolute);
  fuse->add_option("--baseline", fu.baseline, "ihs | pca | gs | mtf-glp-hpm");
  fuse->add_option("--r", fu.r, "Resolution ratio for baselines")->capture_default_str();
  fuse->add_option("--png", fu.png, "8-bit RGB preview")->transform(kAbsolute);

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Quality metrics of a fused raster");
  eval->add_option("fused", ev.fused, "Fused raster")->required()->transform(kAbsolute);
  eval->add_option("--ref", ev.ref, "Reference raster")->transform(kAbsolute);
  eval->add_option("--noref", ev.noref, "Original MS and PAN rasters")
      ->expected(2)
      ->transform(kAbsolute);
  eval->add_option("--r", ev.r, "Resolution ratio")->capture_default_str();
  eval->add_option("--metrics", ev.metrics, "Comma-separated reference metrics or all")
      ->capture_default_str();
  eval->add_option("--out", ev.out_dir, "Report directory (default: next to the fused raster)")
      ->transform(kAbsolute);
  eval->add_option("--maps", ev.maps_dir, "Write SAM, gradient and difference maps here")
      ->transform(kAbsolute);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*simulate) return cmd_simulate(sim, *simulate, out);
    if (*trainc) return cmd_train(tr, *trainc, out);
    if (*fuse) return cmd_fuse(fu, *fuse, out);
    return cmd_eval(ev, *eval, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace messfn::cli
