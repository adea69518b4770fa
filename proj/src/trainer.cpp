#include "messfn/trainer.h"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

#include "messfn/checkpoint.h"
#include "messfn/optim.h"
#include "messfn/rng.h"

namespace messfn {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

raster::RasterImage plane_to_raster(const Tensor<float>& t, std::size_t n) {
  const std::size_t c = t.dim(1), h = t.dim(2), w = t.dim(3);
  raster::RasterImage img(c, h, w);
  img.domain = raster::Domain::unit;
  const auto src = t.data().subspan(n * c * h * w, c * h * w);
  std::copy(src.begin(), src.end(), img.data.begin());
  return img;
}

void append_planes(std::vector<float>& dst, const raster::RasterImage& img) {
  for (double v : img.data) dst.push_back(static_cast<float>(v));
}

// Mean L1 and mean per-sample PSNR on [0, 1] data over the validation set.
std::pair<double, double> validate_epoch(const MessfnWeights<float>& weights,
                                         const std::vector<wald::SamplePair>& val,
                                         std::size_t batch_size) {
  NoGradGuard guard;
  double l1 = 0.0, psnr = 0.0;
  for (std::size_t start = 0; start < val.size(); start += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, val.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto batch = make_batch(val, idx);
    const auto pred = forward(batch.ms, batch.pan, weights);
    l1 += static_cast<double>(l1_loss(pred, batch.ref).item()) * static_cast<double>(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      psnr += metrics::psnr(metrics::to_positive(plane_to_raster(pred, k)),
                            metrics::to_positive(val[idx[k]].ms_ref), 1.0);
    }
  }
  const auto n = static_cast<double>(val.size());
  return {l1 / n, psnr / n};
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("epochs must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
  if (decay_epoch >= epochs) {
    throw std::invalid_argument("decay_epoch " + std::to_string(decay_epoch) +
                                " must be smaller than epochs " + std::to_string(epochs));
  }
  if (!(lr0 > 0.0)) throw std::invalid_argument("lr0 must be positive");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) {
    throw std::invalid_argument("decay_factor must lie in (0, 1]");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
  }
}

ConfigEntries train_config_entries(const TrainConfig& cfg) {
  return {{"epochs", std::to_string(cfg.epochs)},
          {"batch_size", std::to_string(cfg.batch_size)},
          {"lr0", fmt_double(cfg.lr0)},
          {"decay_epoch", std::to_string(cfg.decay_epoch)},
          {"decay_factor", fmt_double(cfg.decay_factor)},
          {"beta1", fmt_double(cfg.beta1)},
          {"beta2", fmt_double(cfg.beta2)},
          {"seed", std::to_string(cfg.seed)},
          {"checkpoint_every", std::to_string(cfg.checkpoint_every)},
          {"max_patches", std::to_string(cfg.max_patches)}};
}

TrainConfig train_config_from_entries(const ConfigEntries& entries, TrainConfig cfg) {
  for (const auto& [key, value] : entries) {
    if (key == "epochs") cfg.epochs = std::stoul(value);
    else if (key == "batch_size") cfg.batch_size = std::stoul(value);
    else if (key == "lr0") cfg.lr0 = std::stod(value);
    else if (key == "decay_epoch") cfg.decay_epoch = std::stoul(value);
    else if (key == "decay_factor") cfg.decay_factor = std::stod(value);
    else if (key == "beta1") cfg.beta1 = std::stod(value);
    else if (key == "beta2") cfg.beta2 = std::stod(value);
    else if (key == "seed") cfg.seed = std::stoull(value);
    else if (key == "checkpoint_every") cfg.checkpoint_every = std::stoul(value);
    else if (key == "max_patches") cfg.max_patches = std::stoul(value);
  }
  return cfg;
}

double lr_at(const TrainConfig& cfg, std::size_t epoch) {
  return epoch < cfg.decay_epoch ? cfg.lr0 : cfg.lr0 * cfg.decay_factor;
}

std::string LossReport::to_line() const {
  std::ostringstream os;
  os << "epoch=" << epoch << " train_l1=" << fmt_double(train_l1);
  if (val_l1) os << " val_l1=" << fmt_double(*val_l1);
  if (val_psnr) os << " val_psnr=" << fmt_double(*val_psnr);
  os << " lr=" << fmt_double(lr) << " wall_time=" << wall_time;
  return os.str();
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed ^ (0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(epoch) + 1)));
  rng.shuffle(order);
  return order;
}

Batch make_batch(const std::vector<wald::SamplePair>& samples,
                 const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
  const auto& first = samples.at(indices.front());
  std::vector<float> ms, pan, ref;
  for (auto i : indices) {
    const auto& s = samples.at(i);
    if (!s.ms_lr.same_geometry(first.ms_lr) || !s.pan_lr.same_geometry(first.pan_lr) ||
        !s.ms_ref.same_geometry(first.ms_ref)) {
      throw std::invalid_argument("make_batch: sample '" + s.source_id +
                                  "' differs in geometry from '" + first.source_id + "'");
    }
    append_planes(ms, s.ms_lr);
    append_planes(pan, s.pan_lr);
    append_planes(ref, s.ms_ref);
  }
  const std::size_t n = indices.size();
  return {Tensor<float>({n, first.ms_lr.bands, first.ms_lr.height, first.ms_lr.width}, std::move(ms)),
          Tensor<float>({n, 1, first.pan_lr.height, first.pan_lr.width}, std::move(pan)),
          Tensor<float>({n, first.ms_ref.bands, first.ms_ref.height, first.ms_ref.width},
                        std::move(ref))};
}

TrainResult train(const wald::DatasetManifest& manifest, const MessfnConfig& mcfg,
                  const TrainConfig& tcfg, const TrainOptions& options) {
  mcfg.validate();
  tcfg.validate();
  if (manifest.train.empty()) throw std::invalid_argument("train: manifest has no training samples");
  std::vector<wald::SamplePair> samples = manifest.train;
  if (tcfg.max_patches > 0 && samples.size() > tcfg.max_patches) samples.resize(tcfg.max_patches);
  const std::size_t n = samples.size();
  const std::size_t bs = std::min(tcfg.batch_size, n);
  if (bs < tcfg.batch_size) {
    spdlog::info("batch size {} clipped to the {} available training patches", tcfg.batch_size, n);
  }

  TrainResult result;
  std::size_t start_epoch = 0;
  if (options.resume_from) {
    auto ck = load_checkpoint(*options.resume_from, mcfg);
    result.weights = std::move(ck.weights);
    start_epoch = static_cast<std::size_t>(ck.epoch);
  } else if (options.initial) {
    if (!(options.initial->config == mcfg)) {
      throw std::invalid_argument("train: initial weights were built for a different model config");
    }
    result.weights = options.initial->clone();
  } else {
    result.weights = init_weights<float>(mcfg, tcfg.seed);
  }
  const std::size_t end_epoch =
      options.stop_after_epoch > 0 ? std::min(options.stop_after_epoch, tcfg.epochs) : tcfg.epochs;

  const auto echo = train_config_entries(tcfg);
  std::ofstream log;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    log.open(options.out_dir / "loss.log", start_epoch > 0 ? std::ios::app : std::ios::trunc);
  }

  auto params = result.weights.parameters();
  std::size_t iteration = start_epoch * (n / bs);
  for (std::size_t epoch = start_epoch; epoch < end_epoch; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at(tcfg, epoch);
    const auto order = epoch_order(n, tcfg.seed, epoch);
    double loss_sum = 0.0;
    const std::size_t batches = n / bs;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b * bs),
                                         order.begin() + static_cast<std::ptrdiff_t>((b + 1) * bs));
      const auto batch = make_batch(samples, idx);
      Tensor<float> loss;
      try {
        loss = l1_loss(forward(batch.ms, batch.pan, result.weights), batch.ref);
      } catch (const DivergenceError& e) {
        throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) +
                               ", iteration " + std::to_string(iteration) + ": " + e.what());
      }
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) {
        throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) +
                               ", iteration " + std::to_string(iteration) + ": loss is " +
                               std::to_string(value));
      }
      backward(loss);
      adam_step(params, AdamOptions{lr, tcfg.beta1, tcfg.beta2});
      if (options.on_iteration) options.on_iteration(iteration, value);
      loss_sum += value;
      ++iteration;
    }

    LossReport rep;
    rep.epoch = epoch;
    rep.train_l1 = loss_sum / static_cast<double>(batches);
    rep.lr = lr;
    if (!manifest.val.empty()) {
      const auto [vl1, vpsnr] = validate_epoch(result.weights, manifest.val, bs);
      rep.val_l1 = vl1;
      rep.val_psnr = vpsnr;
    }
    rep.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.reports.push_back(rep);

    if (!options.out_dir.empty()) {
      const std::uint64_t done = epoch + 1;
      save_checkpoint(options.out_dir / "last.ckpt", result.weights, echo, done);
      if (tcfg.checkpoint_every > 0 && done % tcfg.checkpoint_every == 0) {
        char name[32];
        std::snprintf(name, sizeof(name), "epoch_%04llu.ckpt", static_cast<unsigned long long>(done));
        save_checkpoint(options.out_dir / name, result.weights, echo, done);
      }
      log << rep.to_line() << '\n' << std::flush;
    }
    spdlog::debug("{}", rep.to_line());
  }
  return result;
}

raster::RasterImage fuse_with_network(const MessfnWeights<float>& weights,
                                      const raster::RasterImage& ms_in,
                                      const raster::RasterImage& pan_in) {
  const std::size_t r = weights.config.r;
  if (ms_in.bands != 4 || pan_in.bands != 1) {
    throw raster::RasterError("network fusion expects a 4-band MS and a 1-band PAN image");
  }
  if (pan_in.height != r * ms_in.height || pan_in.width != r * ms_in.width) {
    throw raster::RasterError("PAN " + std::to_string(pan_in.height) + "x" +
                              std::to_string(pan_in.width) + " does not match MS " +
                              std::to_string(ms_in.height) + "x" + std::to_string(ms_in.width) +
                              " at the checkpoint's r=" + std::to_string(r));
  }
  const auto ms = raster::to_unit(ms_in);
  const auto pan = raster::to_unit(pan_in);
  std::vector<float> ms_f, pan_f;
  append_planes(ms_f, ms);
  append_planes(pan_f, pan);
  NoGradGuard guard;
  const auto out = forward(Tensor<float>({1, 4, ms.height, ms.width}, std::move(ms_f)),
                           Tensor<float>({1, 1, pan.height, pan.width}, std::move(pan_f)), weights);
  auto img = plane_to_raster(out, 0);
  img.bit_depth = ms_in.bit_depth;
  img.band_names = ms_in.band_names;
  return img;
}

metrics::MetricReport evaluate(const MessfnWeights<float>& weights,
                               const std::vector<wald::SamplePair>& samples,
                               const std::set<std::string>& selection, std::size_t batch_size) {
  if (samples.empty()) throw std::invalid_argument("evaluate: validation set is empty");
  if (batch_size == 0) batch_size = 1;
  NoGradGuard guard;
  std::vector<metrics::MetricReport> reports;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, samples.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto batch = make_batch(samples, idx);
    const auto pred = forward(batch.ms, batch.pan, weights);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      reports.push_back(metrics::reference_report(plane_to_raster(pred, k), samples[idx[k]].ms_ref,
                                                  weights.config.r, selection));
    }
  }
  return metrics::average(reports);
}

}  // namespace messfn
