#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "messfn/metrics.h"
#include "messfn/net.h"
#include "messfn/wald.h"

namespace messfn {

// Training stopped because the loss or the network output became non-finite.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::size_t epochs = 350;
  std::size_t batch_size = 64;
  double lr0 = 1e-4;
  std::size_t decay_epoch = 150;
  double decay_factor = 0.1;
  double beta1 = 0.7;
  double beta2 = 0.99;
  std::uint64_t seed = 0;
  // Epochs between numbered checkpoints; 0 keeps only last.ckpt.
  std::size_t checkpoint_every = 10;
  // Upper bound on training patches used (0 = all).
  std::size_t max_patches = 0;

  void validate() const;
};

ConfigEntries train_config_entries(const TrainConfig& cfg);
// Applies recognized keys on top of base; unknown keys are ignored.
TrainConfig train_config_from_entries(const ConfigEntries& entries, TrainConfig base = {});

// Learning rate in effect during zero-based epoch: lr0 before decay_epoch,
// lr0 * decay_factor from then on.
double lr_at(const TrainConfig& cfg, std::size_t epoch);

struct LossReport {
  std::size_t epoch = 0;
  double train_l1 = 0.0;
  std::optional<double> val_l1;
  std::optional<double> val_psnr;
  double lr = 0.0;
  double wall_time = 0.0;

  std::string to_line() const;
};

struct TrainOptions {
  // Directory for checkpoints (last.ckpt, epoch_NNNN.ckpt) and loss.log;
  // empty disables persistence.
  std::filesystem::path out_dir;
  // Starting weights instead of init_weights(mcfg, seed).
  std::optional<MessfnWeights<float>> initial;
  // Continue from a checkpoint written by an earlier run with the same configs.
  std::optional<std::filesystem::path> resume_from;
  // Stop after this many epochs counted from the start of the schedule (0 = epochs).
  std::size_t stop_after_epoch = 0;
  // Called with the loss of every optimizer step.
  std::function<void(std::size_t iteration, double loss)> on_iteration;
};

struct TrainResult {
  MessfnWeights<float> weights;
  std::vector<LossReport> reports;
};

// Seeded shuffle per epoch, drop-last batches, L1 loss, Adam. The batch size
// is clipped to the number of training patches.
TrainResult train(const wald::DatasetManifest& manifest, const MessfnConfig& mcfg,
                  const TrainConfig& tcfg, const TrainOptions& options = {});

// Order in which training samples are visited during epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

// Stacks samples into network tensors: ms [N,4,h,w], pan [N,1,H,W], ref [N,4,H,W].
struct Batch {
  Tensor<float> ms, pan, ref;
};
Batch make_batch(const std::vector<wald::SamplePair>& samples,
                 const std::vector<std::size_t>& indices);

// Network fusion of unit-domain rasters; output in (-1, 1).
raster::RasterImage fuse_with_network(const MessfnWeights<float>& weights,
                                      const raster::RasterImage& ms,
                                      const raster::RasterImage& pan);

// Mean reference metrics over samples (no gradient tape).
metrics::MetricReport evaluate(const MessfnWeights<float>& weights,
                               const std::vector<wald::SamplePair>& samples,
                               const std::set<std::string>& selection =
                                   metrics::reference_metric_names(),
                               std::size_t batch_size = 16);

}  // namespace messfn
