#include <doctest.h>

#include <cmath>
#include <string>

#include "messfn/grad_check.h"
#include "messfn/ops.h"
#include "grad_suites.h"
#include "oracles.h"
#include "test_util.h"

using messfn::ConvSpec;
using messfn::Tensor;
using T = Tensor<double>;

namespace {

T no_bias() { return T(); }

}  // namespace

TEST_CASE("conv2d 1x1 identity kernel returns the input") {
  auto x = testutil::random_tensor({1, 1, 4, 5}, 11);
  T w({1, 1, 1, 1}, {1.0});
  T b({1}, {0.0});
  auto y = messfn::conv2d(x, ConvSpec::same(1, 1, 1), w, b);
  REQUIRE(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d all-ones 3x3 with padding: center 9, corners 4") {
  auto x = T::full({1, 1, 3, 3}, 1.0);
  auto w = T::full({1, 1, 3, 3}, 1.0);
  auto y = messfn::conv2d(x, ConvSpec::same(1, 1, 3, false), w, no_bias());
  CHECK(y.data()[4] == 9.0);
  CHECK(y.data()[0] == 4.0);
  CHECK(y.data()[2] == 4.0);
  CHECK(y.data()[6] == 4.0);
  CHECK(y.data()[8] == 4.0);
  CHECK(y.data()[1] == 6.0);
}

TEST_CASE("conv2d matches direct summation with stride and asymmetric padding") {
  ConvSpec spec{3, 2, 3, 2, 2, 1, 0, true};
  auto x = testutil::random_tensor({2, 3, 7, 6}, 12);
  auto w = testutil::random_tensor(spec.weight_shape(), 13);
  auto b = testutil::random_tensor(spec.bias_shape(), 14);
  auto y = messfn::conv2d(x, spec, w, b);
  std::size_t ho = 0, wo = 0;
  auto ref = oracle::conv2d({x.data().begin(), x.data().end()}, 2, 3, 7, 6,
                            {w.data().begin(), w.data().end()}, {b.data().begin(), b.data().end()},
                            2, 3, 2, 2, 1, 0, ho, wo);
  REQUIRE(y.shape() == messfn::Shape{2, 2, ho, wo});
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("conv2d gradient matches central differences") {
  auto x = testutil::random_tensor({1, 2, 5, 5}, 15, true);
  auto w = testutil::random_tensor({3, 2, 3, 3}, 16, true);
  auto b = testutil::random_tensor({3}, 17, true);
  auto spec = ConvSpec::same(2, 3, 3);
  auto report = messfn::grad_check(
      [&](const std::vector<T>& in) { return messfn::conv2d(in[0], spec, in[1], in[2]); },
      {x, w, b}, {.tolerance = 1e-6});
  CHECK_MESSAGE(report.passed, messfn::describe(report));
}

TEST_CASE("conv2d shape errors name the offending dimension") {
  auto x = testutil::random_tensor({1, 2, 5, 5}, 18);
  auto w = testutil::random_tensor({3, 3, 3, 3}, 19);
  try {
    messfn::conv2d(x, ConvSpec::same(3, 3, 3, false), w, no_bias());
    FAIL("expected ShapeError");
  } catch (const messfn::ShapeError& e) {
    CHECK(std::string(e.what()).find("input channels 2") != std::string::npos);
  }
  CHECK_THROWS_AS(messfn::conv2d(x, ConvSpec::same(2, 3, 3, false), w, no_bias()),
                  messfn::ShapeError);
  CHECK_THROWS_AS(messfn::conv2d(x, ConvSpec{2, 1, 7, 7, 1, 0, 0, false},
                                 T::zeros({1, 2, 7, 7}), no_bias()),
                  messfn::ShapeError);
}

TEST_CASE("conv2d with odd kernel and same padding preserves spatial size") {
  for (std::size_t k : {1, 3, 5, 7}) {
    auto x = testutil::random_tensor({1, 2, 6, 9}, 20 + k);
    auto spec = ConvSpec::same(2, 1, k);
    auto y = messfn::conv2d(x, spec, T::zeros(spec.weight_shape()), T::zeros(spec.bias_shape()));
    CHECK(y.dim(2) == 6);
    CHECK(y.dim(3) == 9);
  }
}

TEST_CASE("conv1d delta kernel is the identity") {
  T x({1, 1, 4}, {1, 2, 3, 4});
  auto y = messfn::conv1d(x, 3, T({3}, {0, 1, 0}));
  for (std::size_t i = 0; i < 4; ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv1d box kernel with zero padding") {
  T x({1, 1, 4}, {1, 2, 3, 4});
  auto y = messfn::conv1d(x, 3, T({3}, {1, 1, 1}));
  CHECK(y.data()[0] == 3.0);
  CHECK(y.data()[1] == 6.0);
  CHECK(y.data()[2] == 9.0);
  CHECK(y.data()[3] == 7.0);
}

TEST_CASE("conv1d rejects even kernels and checks gradients") {
  CHECK_THROWS_AS(messfn::conv1d(T::zeros({1, 4}), 2, T::zeros({2})), messfn::ShapeError);
  auto x = testutil::random_tensor({2, 6}, 21, true);
  auto w = testutil::random_tensor({5}, 22, true);
  auto report = messfn::grad_check(
      [](const std::vector<T>& in) { return messfn::conv1d(in[0], 5, in[1]); }, {x, w},
      {.tolerance = 1e-6});
  CHECK_MESSAGE(report.passed, messfn::describe(report));
}

TEST_CASE("bicubic resize keeps constant fields constant") {
  auto x = T::full({1, 2, 3, 5}, 0.37);
  for (auto s : {messfn::Scale{4, 1}, messfn::Scale{2, 1}, messfn::Scale{1, 1}}) {
    auto y = messfn::bicubic_resize(x, s);
    for (double v : y.data()) CHECK(v == doctest::Approx(0.37).epsilon(1e-14));
  }
  auto big = T::full({1, 1, 8, 8}, -0.2);
  auto small = messfn::bicubic_resize(big, {1, 4});
  CHECK(small.dim(2) == 2);
  for (double v : small.data()) CHECK(v == doctest::Approx(-0.2).epsilon(1e-14));
}

TEST_CASE("bicubic resize preserves vertical invariance") {
  T x({1, 1, 2, 2}, {0, 1, 0, 1});
  auto y = messfn::bicubic_resize(x, {2, 1});
  REQUIRE(y.dim(2) == 4);
  for (std::size_t r = 1; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) CHECK(y.data()[r * 4 + c] == y.data()[c]);
}

TEST_CASE("bicubic resize matches the pointwise kernel evaluation") {
  std::vector<double> ramp(16);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) ramp[y * 4 + x] = 0.3 * x + 0.7 * y + 0.05 * x * y;
  T img({1, 1, 4, 4}, ramp);
  auto up = messfn::bicubic_resize(img, {4, 1});
  for (auto [oy, ox] : {std::pair{7, 9}, std::pair{5, 6}, std::pair{10, 3}}) {
    const double sy = (oy + 0.5) / 4.0 - 0.5;
    const double sx = (ox + 0.5) / 4.0 - 0.5;
    CHECK(std::abs(up.data()[oy * 16 + ox] - oracle::bicubic_at(ramp, 4, 4, sy, sx)) < 1e-6);
  }
}

TEST_CASE("bicubic resize rejects non-integral targets") {
  CHECK_THROWS_AS(messfn::bicubic_resize(T::zeros({1, 1, 5, 5}), {1, 2}), messfn::ShapeError);
}

TEST_CASE("global average pooling") {
  CHECK(messfn::global_avg_pool(T::full({1, 1, 3, 2}, 2.5)).item() == 2.5);
  auto y = messfn::global_avg_pool(T({1, 1, 2, 2}, {1, 3, 5, 7}));
  CHECK(y.item() == 4.0);
  auto x = testutil::random_tensor({2, 3, 4, 5}, 23, true);
  messfn::backward(messfn::sum(messfn::global_avg_pool(x)));
  for (double g : x.grad()) CHECK(g == doctest::Approx(1.0 / 20.0));
}

TEST_CASE("global variance pooling") {
  auto same = T::full({1, 3, 2, 2}, 1.5);
  auto zero = messfn::global_var_pool(same);
  for (double v : zero.data()) CHECK(v == 0.0);

  T two({1, 2, 1, 1}, {0.0, 2.0});
  CHECK(messfn::global_var_pool(two).item() == 1.0);

  auto x = testutil::random_tensor({1, 4, 3, 3}, 24);
  auto y = messfn::global_var_pool(x);
  auto ref = oracle::channel_variance({x.data().begin(), x.data().end()}, 1, 4, 9);
  REQUIRE(y.shape() == messfn::Shape{1, 1, 3, 3});
  for (std::size_t i = 0; i < 9; ++i) {
    CHECK(std::abs(y.data()[i] - ref[i]) < 1e-7);
    CHECK(y.data()[i] >= 0.0);
  }
}

TEST_CASE("pointwise fixed points and layouts") {
  CHECK(messfn::sigmoid(T({1}, {0.0})).item() == 0.5);
  CHECK(messfn::tanh(T({1}, {0.0})).item() == 0.0);

  auto x = testutil::random_tensor({2, 3, 2, 2}, 25);
  auto id = messfn::broadcast_mul_channel(x, T::full({2, 3}, 1.0));
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(id.data()[i] == x.data()[i]);

  auto a = testutil::random_tensor({1, 64, 2, 2}, 26);
  auto b = testutil::random_tensor({1, 64, 2, 2}, 27);
  auto c = messfn::concat_channels<double>({a, b});
  REQUIRE(c.dim(1) == 128);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(c.data()[i] == a.data()[i]);
  for (std::size_t i = 0; i < b.numel(); ++i) CHECK(c.data()[a.numel() + i] == b.data()[i]);
}

TEST_CASE("undeclared broadcasts are shape errors") {
  auto x = testutil::random_tensor({1, 3, 2, 2}, 28);
  CHECK_THROWS_AS(messfn::add(x, T::zeros({1, 3, 2, 1})), messfn::ShapeError);
  CHECK_THROWS_AS(messfn::mul(x, T::zeros({3, 2, 2})), messfn::ShapeError);
  CHECK_THROWS_AS(messfn::broadcast_mul_channel(x, T::zeros({1, 2})), messfn::ShapeError);
  CHECK_THROWS_AS(messfn::broadcast_mul_spatial(x, T::zeros({1, 3, 2, 2})), messfn::ShapeError);
}

TEST_CASE("l1 loss values and subgradient") {
  auto t = testutil::random_tensor({2, 3}, 29);
  CHECK(messfn::l1_loss(t, t).item() == 0.0);
  std::vector<double> shifted(t.data().begin(), t.data().end());
  for (auto& v : shifted) v += 0.5;
  CHECK(messfn::l1_loss(T(t.shape(), shifted), t).item() == doctest::Approx(0.5).epsilon(1e-15));

  T pred({4}, {1.0, -2.0, 0.5, 3.0}, true);
  T target({4}, {0.0, 1.0, 0.5, 2.0});
  messfn::backward(messfn::l1_loss(pred, target));
  CHECK(pred.grad()[0] == 0.25);
  CHECK(pred.grad()[1] == -0.25);
  CHECK(pred.grad()[2] == 0.0);
  CHECK(pred.grad()[3] == 0.25);
  CHECK_THROWS_AS(messfn::l1_loss(pred, T::zeros({3})), messfn::ShapeError);
}

TEST_CASE("grad_check is exact for linear maps and sigmoid at zero") {
  auto x = testutil::random_tensor({3, 4}, 30, true);
  auto lin = messfn::grad_check(
      [](const std::vector<T>& in) { return messfn::scale(in[0], 2.5); }, {x});
  CHECK(lin.max_rel_error < 1e-9);

  T z({1}, {0.0}, true);
  auto sig = messfn::grad_check([](const std::vector<T>& in) { return messfn::sigmoid(in[0]); },
                                {z}, {.tolerance = 1e-8});
  CHECK(z.grad()[0] == 0.25);
  CHECK(sig.max_rel_error < 1e-8);
}

// Every differentiable op at randomized small shapes, 20 seeds, f64.
TEST_CASE("property: every op passes grad_check at 1e-4") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (const auto& c : gradsuite::op_cases(seed)) {
      const auto report = gradsuite::run_case(c);
      CHECK_MESSAGE(report.passed, c.name << " seed " << seed << ": " << messfn::describe(report));
    }
  }
}

namespace {

// Rectifier-like op whose backward scales the slope on one side by error.
T leaky_with_error(const T& x, double error, bool wrong_on_positive) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.data()[i];
    out[i] = v > 0 ? 2.0 * v : 0.5 * v;
  }
  return T::make_result(x.shape(), std::move(out), {x},
                        [error, wrong_on_positive](messfn::TensorNode<double>& self) {
                          auto& p = *self.parents[0];
                          auto g = p.ensure_grad();
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            const bool pos = p.data[i] > 0;
                            double slope = pos ? 2.0 : 0.5;
                            if (pos == wrong_on_positive) slope *= 1.0 + error;
                            g[i] += self.grad[i] * slope;
                          }
                        });
}

}  // namespace

TEST_CASE("grad_check rejects wrong backward passes") {
  for (bool positive_side : {true, false}) {
    auto fn = [positive_side](double error) {
      return [=](const std::vector<T>& in) {
        return messfn::sum(messfn::mul(leaky_with_error(in[0], error, positive_side), in[0]));
      };
    };
    // Inputs straddling zero, some within a step of the kink.
    std::vector<double> v = testutil::random_values(40, 9, -1, 1);
    v[3] = 2e-6;
    v[4] = -3e-6;
    const T x({40}, v, true);
    CHECK(messfn::grad_check(fn(0.0), {x}).passed);
    const auto wrong = messfn::grad_check(fn(1e-3), {x});
    CHECK_FALSE(wrong.passed);
    CHECK(wrong.max_rel_error > 1e-4);
  }
}

TEST_CASE("grad_check resolves kinks next to the evaluation point") {
  // Piecewise-linear in x with a slope change 3e-6 to the right of x.
  auto fn = [](const std::vector<T>& in) {
    const T shifted = messfn::add(in[0], T({1}, {-3e-6}));
    return messfn::sum(leaky_with_error(shifted, 0.0, true));
  };
  const T x({1}, {0.0}, true);
  const auto report = messfn::grad_check(fn, {x});
  CHECK_MESSAGE(report.passed, messfn::describe(report));
}
