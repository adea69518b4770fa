#pragma once

#include <vector>

#include "messfn/tensor.h"

namespace messfn {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.7;
  double beta2 = 0.99;
  double epsilon = 1e-8;
};

// One bias-corrected Adam update over every parameter, then zeroes the
// gradients. Throws std::invalid_argument for betas outside [0,1) or lr <= 0.
template <typename T>
void adam_step(const std::vector<Parameter<T>*>& params, const AdamOptions& options);

}  // namespace messfn
