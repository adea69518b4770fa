#pragma once

// Gradient-check cases shared by the unit tests and the acceptance binary.

#include <string>
#include <vector>

#include "messfn/grad_check.h"
#include "messfn/net.h"
#include "messfn/ops.h"
#include "test_util.h"

namespace gradsuite {

using messfn::GradCheckFn;
using messfn::GradCheckOptions;
using messfn::GradCheckReport;
using messfn::MessfnConfig;
using messfn::MessfnWeights;
using messfn::Shape;
using messfn::Tensor;

struct Case {
  std::string name;
  GradCheckFn fn;
  std::vector<Tensor<double>> inputs;
  GradCheckOptions options;
};

// Every differentiable op on random shapes drawn from seed.
inline std::vector<Case> op_cases(std::uint64_t seed) {
  using T = Tensor<double>;
  messfn::Rng rng(seed);
  const std::size_t c = 1 + rng.index(4);
  const std::size_t h = 2 + rng.index(5);
  const std::size_t w = 2 + rng.index(5);
  const Shape shape{1, c, h, w};
  auto x = testutil::random_tensor(shape, 100 + seed, true);
  auto y = testutil::random_tensor(shape, 200 + seed, true);
  // relu inputs kept away from the kink
  std::vector<double> away(x.data().begin(), x.data().end());
  for (auto& v : away) v = v >= 0 ? v + 0.1 : v - 0.1;
  T xr(shape, away, true);
  const std::size_t k = 1 + 2 * rng.index(2);
  const auto spec = messfn::ConvSpec::same(c, 2, k);
  auto cw = testutil::random_tensor(spec.weight_shape(), 300 + seed, true);
  auto cb = testutil::random_tensor(spec.bias_shape(), 400 + seed, true);
  auto cmask = testutil::random_tensor({1, c}, 500 + seed, true);
  auto smask = testutil::random_tensor({1, 1, h, w}, 600 + seed, true);
  auto k1 = testutil::random_tensor({3}, 700 + seed, true);

  GradCheckOptions opt;
  opt.seed = seed;
  std::vector<Case> cases{
      {"conv2d", [spec](auto& in) { return messfn::conv2d(in[0], spec, in[1], in[2]); },
       {x, cw, cb}, opt},
      {"conv1d", [](auto& in) { return messfn::conv1d(messfn::global_avg_pool(in[0]), 3, in[1]); },
       {x, k1}, opt},
      {"bicubic", [](auto& in) { return messfn::bicubic_resize(in[0], {2, 1}); }, {x}, opt},
      {"gap", [](auto& in) { return messfn::global_avg_pool(in[0]); }, {x}, opt},
      {"channel_mean", [](auto& in) { return messfn::channel_mean(in[0]); }, {x}, opt},
      {"gvp", [](auto& in) { return messfn::global_var_pool(in[0]); }, {x}, opt},
      {"add", [](auto& in) { return messfn::add(in[0], in[1]); }, {x, y}, opt},
      {"mul", [](auto& in) { return messfn::mul(in[0], in[1]); }, {x, y}, opt},
      {"scale", [](auto& in) { return messfn::scale(in[0], -1.7); }, {x}, opt},
      {"concat", [](auto& in) { return messfn::concat_channels<double>({in[0], in[1], in[0]}); },
       {x, y}, opt},
      {"sigmoid", [](auto& in) { return messfn::sigmoid(in[0]); }, {x}, opt},
      {"tanh", [](auto& in) { return messfn::tanh(in[0]); }, {x}, opt},
      {"relu", [](auto& in) { return messfn::relu(in[0]); }, {xr}, opt},
      {"bmul_channel", [](auto& in) { return messfn::broadcast_mul_channel(in[0], in[1]); },
       {x, cmask}, opt},
      {"bmul_spatial", [](auto& in) { return messfn::broadcast_mul_spatial(in[0], in[1]); },
       {x, smask}, opt},
      {"sum", [](auto& in) { return messfn::sum(in[0]); }, {x}, opt},
      {"l1", [](auto& in) { return messfn::l1_loss(in[0], in[1]); }, {x, y}, opt},
  };
  return cases;
}

inline Tensor<double> leaf_copy(const Tensor<double>& t) {
  return Tensor<double>(t.shape(), std::vector<double>(t.data().begin(), t.data().end()), true);
}

inline std::vector<std::size_t> indices_with_prefix(const MessfnWeights<double>& w,
                                                    const std::string& prefix) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < w.names.size(); ++i)
    if (w.names[i].rfind(prefix, 0) == 0) out.push_back(i);
  return out;
}

// Moves every bias off zero so no rectifier input sits exactly on its kink.
inline MessfnWeights<double> generic_point(const MessfnConfig& cfg, std::uint64_t seed) {
  auto w = messfn::init_weights<double>(cfg, seed);
  messfn::Rng rng(seed ^ 0xb1a5);
  for (std::size_t i = 0; i < w.params.size(); ++i)
    if (w.names[i].ends_with(".bias"))
      for (auto& v : w.params[i].value.mutable_data()) v = rng.uniform(-0.2, 0.2);
  return w;
}

// Block gradient with respect to its input and the listed parameters.
template <typename Block>
Case block_case(std::string name, const MessfnWeights<double>& base, const Shape& in_shape,
                const std::vector<std::size_t>& param_ids, std::uint64_t seed, Block block) {
  std::vector<Tensor<double>> inputs{testutil::random_tensor(in_shape, seed, true)};
  for (auto id : param_ids) inputs.push_back(leaf_copy(base.value(id)));
  auto fn = [base, param_ids, block](const std::vector<Tensor<double>>& in) {
    MessfnWeights<double> w = base;
    for (std::size_t k = 0; k < param_ids.size(); ++k) w.params[param_ids[k]].value = in[k + 1];
    return block(in[0], w);
  };
  GradCheckOptions opt;
  opt.seed = seed;
  return {std::move(name), fn, inputs, opt};
}

// RSAB, RMSAB and SS residual block of a 1-block, 4-channel network.
inline std::vector<Case> block_cases(std::uint64_t seed) {
  MessfnConfig cfg;
  cfg.blocks = 1;
  cfg.channels = 4;
  const auto w = generic_point(cfg, 100 + seed);
  return {
      block_case("rsab", w, {1, 4, 5, 5}, indices_with_prefix(w, "ms_block.0"), seed,
                 [](const Tensor<double>& x, const MessfnWeights<double>& w) {
                   return messfn::rsab_forward(x, w, w.rsab[0]);
                 }),
      block_case("rmsab", w, {1, 4, 6, 6}, indices_with_prefix(w, "pan_block.0"), seed,
                 [](const Tensor<double>& x, const MessfnWeights<double>& w) {
                   return messfn::rmsab_forward(x, w, w.rmsab[0]);
                 }),
      block_case("ss_rb", w, {1, 4, 5, 5}, indices_with_prefix(w, "ss_block.0"), seed,
                 [](const Tensor<double>& x, const MessfnWeights<double>& w) {
                   return messfn::residual_forward(x, w, w.ss_rb[0]);
                 }),
  };
}

// L1 objective of the full B=2, C=8 network on an 8x8 MS input, with respect
// to both images and a sample of coordinates from every parameter.
inline Case forward_case(std::uint64_t seed, std::size_t coords_per_input = 4) {
  MessfnConfig cfg;
  cfg.blocks = 2;
  cfg.channels = 8;
  const auto base = generic_point(cfg, 200 + seed);
  const auto target = testutil::random_tensor({1, 4, 32, 32}, 500 + seed);
  std::vector<Tensor<double>> inputs{testutil::random_tensor({1, 4, 8, 8}, 300 + seed, true),
                                     testutil::random_tensor({1, 1, 32, 32}, 400 + seed, true)};
  for (const auto& p : base.params) inputs.push_back(leaf_copy(p.value));
  auto fn = [base, target](const std::vector<Tensor<double>>& in) {
    MessfnWeights<double> w = base;
    for (std::size_t i = 2; i < in.size(); ++i) w.params[i - 2].value = in[i];
    return messfn::l1_loss(messfn::forward(in[0], in[1], w), target);
  };
  GradCheckOptions opt;
  opt.seed = seed;
  opt.max_coords_per_input = coords_per_input;
  return {"forward", fn, inputs, opt};
}

inline GradCheckReport run_case(const Case& c) { return messfn::grad_check(c.fn, c.inputs, c.options); }

}  // namespace gradsuite
