#include <doctest.h>

#include <cmath>

#include "messfn/ops.h"
#include "messfn/optim.h"
#include "oracles.h"

using messfn::Parameter;

TEST_CASE("adam first step moves by about lr") {
  Parameter<double> p({1}, {0.5});
  p.value.mutable_grad()[0] = 1.0;
  messfn::adam_step<double>({&p}, {.lr = 0.01});
  CHECK(p.value.data()[0] == doctest::Approx(0.5 - 0.01 / (1.0 + 1e-8)).epsilon(1e-14));
  CHECK(p.step_count == 1);
  CHECK(p.value.grad()[0] == 0.0);
}

TEST_CASE("adam with zero gradient leaves the parameter but counts the step") {
  Parameter<double> p({2}, {0.5, -1.0});
  messfn::adam_step<double>({&p}, {});
  CHECK(p.value.data()[0] == 0.5);
  CHECK(p.value.data()[1] == -1.0);
  CHECK(p.step_count == 1);
}

TEST_CASE("adam on |theta| matches the scalar trace") {
  Parameter<double> p({1}, {1.0});
  const auto trace = oracle::adam_abs_trace(1.0, 0.1, 0.7, 0.99, 1e-8, 3);
  for (int step = 0; step < 3; ++step) {
    auto loss = messfn::sum(messfn::l1_loss(p.value, messfn::Tensor<double>::zeros({1})));
    messfn::backward(loss);
    messfn::adam_step<double>({&p}, {.lr = 0.1, .beta1 = 0.7, .beta2 = 0.99, .epsilon = 1e-8});
    CHECK(std::abs(p.value.data()[0] - trace[step]) < 1e-12);
  }
}

TEST_CASE("adam rejects betas outside [0,1)") {
  Parameter<double> p({1});
  CHECK_THROWS_AS(messfn::adam_step<double>({&p}, {.beta1 = 1.0}), std::invalid_argument);
  CHECK_THROWS_AS(messfn::adam_step<double>({&p}, {.beta2 = -0.1}), std::invalid_argument);
  CHECK(p.step_count == 0);
}

TEST_CASE("adam moments start at zero with the value's shape") {
  Parameter<float> p({2, 3});
  CHECK(p.adam_m.size() == 6);
  CHECK(p.adam_v.size() == 6);
  for (float v : p.adam_m) CHECK(v == 0.0f);
}
