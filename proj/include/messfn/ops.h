#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "messfn/resample.h"
#include "messfn/tensor.h"

namespace messfn {

struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;
  bool has_bias = true;

  // Square kernel, "same" padding for odd sizes.
  static ConvSpec same(std::size_t in, std::size_t out, std::size_t k, bool bias = true) {
    return {in, out, k, k, 1, k / 2, k / 2, bias};
  }
  // 1 x n (horizontal) or n x 1 (vertical) kernel with length-preserving padding.
  static ConvSpec row(std::size_t in, std::size_t out, std::size_t n, bool bias = true) {
    return {in, out, 1, n, 1, 0, n / 2, bias};
  }
  static ConvSpec col(std::size_t in, std::size_t out, std::size_t n, bool bias = true) {
    return {in, out, n, 1, 1, n / 2, 0, bias};
  }

  Shape weight_shape() const { return {out_channels, in_channels, kernel_h, kernel_w}; }
  Shape bias_shape() const { return {out_channels}; }
  std::size_t out_height(std::size_t in_h) const;
  std::size_t out_width(std::size_t in_w) const;
};

// 2-D cross-correlation over [N,Cin,H,W]; weight [Cout,Cin,kh,kw], bias [Cout]
// (pass an undefined tensor when spec.has_bias is false).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvSpec& spec, const Tensor<T>& weight,
                 const Tensor<T>& bias);
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvSpec& spec, const Parameter<T>& weight,
                 const Parameter<T>* bias);

// Length-preserving 1-D correlation of [N,1,C] (or [N,C]) with an odd kernel
// [kernel_size], zero padded.
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, std::size_t kernel_size, const Tensor<T>& weight);

template <typename T>
Tensor<T> bicubic_resize(const Tensor<T>& x, Scale scale);

// [N,C,H,W] -> [N,C], spatial mean per channel.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

// [N,C,H,W] -> [N,1,H,W], mean across channels at each pixel.
template <typename T>
Tensor<T> channel_mean(const Tensor<T>& x);

// [N,C,H,W] -> [N,1,H,W], population variance across channels (divisor C).
template <typename T>
Tensor<T> global_var_pool(const Tensor<T>& x);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> tanh(const Tensor<T>& x);
template <typename T>
Tensor<T> relu(const Tensor<T>& x);

// x [N,C,H,W] scaled by mask [N,C] (or [N,C,1,1]) per channel.
template <typename T>
Tensor<T> broadcast_mul_channel(const Tensor<T>& x, const Tensor<T>& mask);
// x [N,C,H,W] scaled by mask [N,1,H,W] per pixel.
template <typename T>
Tensor<T> broadcast_mul_spatial(const Tensor<T>& x, const Tensor<T>& mask);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

// Mean absolute error over every element; subgradient 0 at exact ties.
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target);

}  // namespace messfn
