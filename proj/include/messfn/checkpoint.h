#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>

#include "messfn/net.h"

namespace messfn {

// Corrupt, truncated or incompatible checkpoint.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  MessfnWeights<float> weights;
  ConfigEntries train_echo;
  std::uint64_t epoch = 0;
};

// Binary container: magic, version, model config, training config echo,
// epoch, then one blob per parameter in canonical order (name, shape, Adam
// step count, values, first and second moments) each followed by its CRC-32.
// The file is written to a sibling temporary and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const MessfnWeights<float>& weights,
                     const ConfigEntries& train_echo, std::uint64_t epoch);

Checkpoint load_checkpoint(const std::filesystem::path& path);
// Additionally rejects a checkpoint whose model config differs from expected.
Checkpoint load_checkpoint(const std::filesystem::path& path, const MessfnConfig& expected);

}  // namespace messfn
