#include "messfn/grad_check.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "messfn/ops.h"
#include "messfn/rng.h"

namespace messfn {

namespace {

constexpr double kRoundoff = 64.0 * std::numeric_limits<double>::epsilon();

// Scalar objective: the output itself, or <out, projection> for tensors.
Tensor<double> reduce(const Tensor<double>& out, const Tensor<double>& projection) {
  if (out.numel() == 1) return out;
  return sum(mul(out, projection));
}

}  // namespace

GradCheckReport grad_check(const GradCheckFn& fn, std::vector<Tensor<double>> inputs,
                           const GradCheckOptions& options) {
  for (const auto& in : inputs) {
    if (!in.requires_grad() || !in.node()->is_leaf()) {
      throw TapeError("grad_check: inputs must be leaf tensors with requires_grad");
    }
  }
  Rng rng(options.seed ^ 0x9e3779b97f4a7c15ULL);

  Tensor<double> projection;
  {
    NoGradGuard guard;
    auto probe = fn(inputs);
    if (probe.numel() != 1) {
      std::vector<double> w(probe.numel());
      for (auto& v : w) v = rng.uniform(-1.0, 1.0);
      projection = Tensor<double>(probe.shape(), std::move(w));
    }
  }

  for (auto& in : inputs) {
    in.node()->ensure_grad();
    in.zero_grad();
  }
  backward(reduce(fn(inputs), projection));

  GradCheckReport report;
  // Finite-difference objective accumulated in extended precision.
  auto objective = [&] {
    NoGradGuard guard;
    const auto out = fn(inputs);
    if (out.numel() == 1) return out.item();
    long double acc = 0.0L;
    for (std::size_t i = 0; i < out.numel(); ++i) {
      acc += static_cast<long double>(out.data()[i]) * projection.data()[i];
    }
    return static_cast<double>(acc);
  };
  const double f0 = objective();

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& in = inputs[k];
    std::vector<std::size_t> coords(in.numel());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_input > 0 && coords.size() > options.max_coords_per_input) {
      rng.shuffle(coords);
      coords.resize(options.max_coords_per_input);
      std::sort(coords.begin(), coords.end());
    }
    const std::vector<double> analytic(in.grad().begin(), in.grad().end());
    auto values = in.mutable_data();
    for (auto idx : coords) {
      const double x0 = values[idx];
      auto at = [&](double offset) {
        values[idx] = x0 + offset;
        const double f = objective();
        values[idx] = x0;
        return f;
      };
      const double a = analytic[idx];
      double h = 1e-5 * std::max(1.0, std::abs(x0));
      double f_p1 = at(h), f_m1 = at(-h);
      auto noise_at = [&](double step) {
        return kRoundoff * (std::abs(f_p1) + std::abs(f_m1) + std::abs(f0)) / step;
      };
      // Rounding noise bound on the central difference.
      double resolution = kRoundoff * (std::abs(f_p1) + std::abs(f_m1)) / (2.0 * h);
      double numeric = (f_p1 - f_m1) / (2.0 * h);
      const double right1 = (f_p1 - f0) / h, left1 = (f0 - f_m1) / h;
      const double scale_ref = std::max(std::abs(numeric), options.abs_floor);
      if (std::abs(right1 - left1) > options.smooth_tolerance * scale_ref) {
        // Curvature or a kink. Second-order one-sided stencils agree under
        // curvature; while they disagree a kink lies within 2h, so shrink h.
        for (std::size_t level = 0;; ++level) {
          const double f_p2 = at(2.0 * h), f_m2 = at(-2.0 * h);
          const double right2 = (-3.0 * f0 + 4.0 * f_p1 - f_p2) / (2.0 * h);
          const double left2 = (3.0 * f0 - 4.0 * f_m1 + f_m2) / (2.0 * h);
          const double side_ref =
              std::max({std::abs(right2), std::abs(left2), options.abs_floor});
          resolution = 4.0 * noise_at(2.0 * h);
          if (std::abs(right2 - left2) <= options.smooth_tolerance * side_ref + 4.0 * noise_at(h)) {
            numeric = 0.5 * (right2 + left2);
            break;
          }
          if (level == options.max_refinements) {
            // The kink is closer to x than the finest stencil; the derivative
            // at x is the slope on the side away from it.
            numeric = std::abs(right2 - a) < std::abs(left2 - a) ? right2 : left2;
            ++report.kinks_detected;
            break;
          }
          h /= 4.0;
          f_p1 = at(h);
          f_m1 = at(-h);
        }
      }
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
      const double rel = std::max(0.0, abs_err - resolution) / denom;
      ++report.coords_checked;
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_input = k;
        report.worst_index = idx;
      }
    }
  }
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

std::string describe(const GradCheckReport& report) {
  std::ostringstream os;
  os << (report.passed ? "pass" : "FAIL") << " max_rel=" << report.max_rel_error
     << " max_abs=" << report.max_abs_error << " coords=" << report.coords_checked
     << " kinks=" << report.kinks_detected << " worst=input" << report.worst_input << "["
     << report.worst_index << "]";
  return os.str();
}

}  // namespace messfn
