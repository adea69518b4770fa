#include "messfn/optim.h"

#include <cmath>
#include <stdexcept>

namespace messfn {

template <typename T>
void adam_step(const std::vector<Parameter<T>*>& params, const AdamOptions& options) {
  if (!(options.beta1 >= 0.0 && options.beta1 < 1.0) ||
      !(options.beta2 >= 0.0 && options.beta2 < 1.0)) {
    throw std::invalid_argument("adam: betas must lie in [0, 1)");
  }
  if (!(options.lr > 0.0)) throw std::invalid_argument("adam: learning rate must be positive");
  if (!(options.epsilon > 0.0)) throw std::invalid_argument("adam: epsilon must be positive");

  for (auto* p : params) {
    auto value = p->value.mutable_data();
    auto grad = p->value.mutable_grad();
    if (grad.size() != value.size()) {
      throw TapeError("adam: parameter has no gradient buffer");
    }
    ++p->step_count;
    const double t = static_cast<double>(p->step_count);
    const double c1 = 1.0 - std::pow(options.beta1, t);
    const double c2 = 1.0 - std::pow(options.beta2, t);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      const double m = options.beta1 * p->adam_m[i] + (1.0 - options.beta1) * g;
      const double v = options.beta2 * p->adam_v[i] + (1.0 - options.beta2) * g * g;
      p->adam_m[i] = static_cast<T>(m);
      p->adam_v[i] = static_cast<T>(v);
      const double m_hat = m / c1;
      const double v_hat = v / c2;
      value[i] = static_cast<T>(value[i] - options.lr * m_hat / (std::sqrt(v_hat) + options.epsilon));
      grad[i] = T(0);
    }
  }
}

template void adam_step(const std::vector<Parameter<float>*>&, const AdamOptions&);
template void adam_step(const std::vector<Parameter<double>*>&, const AdamOptions&);

}  // namespace messfn
