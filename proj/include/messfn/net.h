#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "messfn/ops.h"
#include "messfn/tensor.h"

namespace messfn {

// Raised when the forward pass produces non-finite values.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Ablation { none, no_rsab, no_rmsab };

struct MessfnConfig {
  std::size_t blocks = 9;
  std::size_t channels = 64;
  std::size_t sa_kernel = 3;
  std::size_t isa_kernel = 7;
  std::size_t r = 4;
  Ablation ablation = Ablation::none;
  // Fusion levels (0..blocks+1) at which the MS and PAN streams are cut off.
  std::set<std::size_t> disconnect;

  std::size_t levels() const { return blocks + 2; }
  void validate() const;
  bool operator==(const MessfnConfig&) const = default;
};

using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

const char* ablation_name(Ablation a);
// Accepts none, no-rsab, no-rmsab (underscores also accepted) and
// disconnect=i,j,...; throws std::invalid_argument otherwise.
void apply_ablation(const std::string& text, MessfnConfig& cfg);
std::string format_index_set(const std::set<std::size_t>& s);
std::set<std::size_t> parse_index_set(const std::string& text);

ConfigEntries config_entries(const MessfnConfig& cfg);
MessfnConfig config_from_entries(const ConfigEntries& entries);

inline constexpr std::size_t kNoParam = std::numeric_limits<std::size_t>::max();

struct ConvLayer {
  ConvSpec spec;
  std::size_t weight = kNoParam;
  std::size_t bias = kNoParam;
};

// Spectral attention block: body conv, channel mask from a 1-D conv over
// pooled channel statistics.
struct RsabLayers {
  ConvLayer body;
  std::size_t attn = kNoParam;
};

// Multi-scale inception with improved spatial attention.
struct RmsabLayers {
  ConvLayer branch1, branch3a, branch3b, branch5a, branch5b, merge, isa;
};

struct ResidualLayers {
  ConvLayer conv1, conv2;
};

template <typename T>
struct MessfnWeights {
  MessfnConfig config;
  std::vector<std::string> names;
  std::vector<Parameter<T>> params;

  ConvLayer brc;
  ConvLayer ms_general[2];
  ConvLayer pan_general[2];
  ConvLayer ss_general;
  std::vector<RsabLayers> rsab;          // empty under no_rsab
  std::vector<ResidualLayers> ms_plain;  // used under no_rsab
  std::vector<RmsabLayers> rmsab;        // empty under no_rmsab
  std::vector<ResidualLayers> pan_plain; // used under no_rmsab
  std::vector<ResidualLayers> ss_rb;
  ConvLayer aggregate;
  ConvLayer reconstruct;

  MessfnWeights() = default;
  // Zero-valued parameters laid out in the canonical order.
  explicit MessfnWeights(const MessfnConfig& cfg);

  // Copies share parameter storage; clone() duplicates it.
  MessfnWeights clone() const;

  std::size_t parameter_count() const;
  std::size_t index_of(const std::string& name) const;
  std::vector<Parameter<T>*> parameters();

  const Tensor<T>& value(std::size_t index) const { return params[index].value; }
};

// He-normal kernels (std sqrt(2 / fan_in)), with residual-branch outputs and
// the reconstruction layer scaled down; zero biases; deterministic per seed.
template <typename T>
MessfnWeights<T> init_weights(const MessfnConfig& cfg, std::uint64_t seed);

template <typename T>
Tensor<T> apply_conv(const MessfnWeights<T>& w, const ConvLayer& layer, const Tensor<T>& x);

template <typename T>
Tensor<T> brc_upsample(const Tensor<T>& ms, const MessfnWeights<T>& w);

template <typename T>
Tensor<T> rsab_forward(const Tensor<T>& f, const MessfnWeights<T>& w, const RsabLayers& layers,
                       Tensor<T>* mask_out = nullptr);

template <typename T>
Tensor<T> rmsab_forward(const Tensor<T>& f, const MessfnWeights<T>& w, const RmsabLayers& layers,
                        Tensor<T>* mask_out = nullptr);

template <typename T>
Tensor<T> residual_forward(const Tensor<T>& f, const MessfnWeights<T>& w,
                           const ResidualLayers& layers);

template <typename T>
Tensor<T> fuse_level(const Tensor<T>& f_ms, const Tensor<T>& f_pan, const Tensor<T>& f_ss,
                     std::size_t level, const MessfnConfig& cfg);

// ms [N,4,h,w], pan [N,1,r*h,r*w] -> [N,4,r*h,r*w] in (-1, 1).
template <typename T>
Tensor<T> forward(const Tensor<T>& ms, const Tensor<T>& pan, const MessfnWeights<T>& w);

}  // namespace messfn
