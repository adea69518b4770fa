#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "messfn/tensor.h"

namespace messfn {

struct GradCheckOptions {
  double tolerance = 1e-4;
  // Per-coordinate error is max(0, |analytic - numeric| - resolution) /
  // max(|analytic|, |numeric|, abs_floor), where resolution bounds the
  // rounding noise of the difference quotient (64 eps |f| / h).
  double abs_floor = 1e-7;
  // 0 checks every coordinate; otherwise this many coordinates per input,
  // drawn deterministically from seed.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
  // Left and right slopes differing by more than this (relative, beyond
  // rounding noise) mark curvature or a kink near x, e.g. a rectifier input
  // close to zero. Second-order one-sided differences then serve as the
  // reference, shrinking the step by 4 up to max_refinements times until they
  // agree; if they never do, the side that matches the analytic value is used
  // and the coordinate is counted in kinks_detected.
  double smooth_tolerance = 1e-5;
  std::size_t max_refinements = 4;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t kinks_detected = 0;
  bool passed = false;
  // Input index and coordinate of the worst offender.
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
};

using GradCheckFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

// Compares reverse-mode gradients of fn against central differences with
// step h = 1e-5 * max(1, |x|). Inputs must be leaves with requires_grad set;
// non-scalar outputs are reduced with a fixed random projection. Input grads
// are overwritten.
GradCheckReport grad_check(const GradCheckFn& fn, std::vector<Tensor<double>> inputs,
                           const GradCheckOptions& options = {});

std::string describe(const GradCheckReport& report);

}  // namespace messfn
