#include <doctest.h>

#include <cstring>

#include "icdc/grad_check.hpp"
#include "icdc/ops.hpp"
#include "icdc/tensor.hpp"

using namespace icdc;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("construction and invariants") {
  auto t = Tensor32::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK_THROWS_AS(Tensor32::from({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(t.item(), ShapeError);
  CHECK(Tensor32::scalar(3.5f).item() == doctest::Approx(3.5f));
}

TEST_CASE("sum of squares gradient is 2x") {
  auto x = Tensor64::from({2}, {1.0, 2.0}, true);
  auto loss = sum(mul(x, x));
  loss.backward();
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("repeated backward without reset accumulates") {
  auto x = Tensor64::from({2}, {1.0, 2.0}, true);
  auto loss = sum(mul(x, x));
  loss.backward();
  loss.backward();
  CHECK(x.grad()[0] == doctest::Approx(4.0));
  CHECK(x.grad()[1] == doctest::Approx(8.0));
  x.zero_grad();
  loss.backward();
  CHECK(x.grad()[0] == doctest::Approx(2.0));
}

TEST_CASE("backward rejects non-scalar and detached roots") {
  auto x = Tensor64::from({2}, {1.0, 2.0}, true);
  CHECK_THROWS_AS(mul(x, x).backward(), ShapeError);
  auto leaf = Tensor64::from({1}, {1.0}, true);
  CHECK_THROWS_AS(leaf.backward(), std::invalid_argument);
}

TEST_CASE("cross-entropy gradient is softmax minus one-hot") {
  auto z = Tensor64::from({1, 3}, {0.2, -0.1, 1.3}, true);
  auto loss = cross_entropy(z, {2});
  loss.backward();
  double denom = std::exp(0.2) + std::exp(-0.1) + std::exp(1.3);
  CHECK(z.grad()[0] == doctest::Approx(std::exp(0.2) / denom).epsilon(1e-10));
  CHECK(z.grad()[1] == doctest::Approx(std::exp(-0.1) / denom).epsilon(1e-10));
  CHECK(z.grad()[2] == doctest::Approx(std::exp(1.3) / denom - 1.0).epsilon(1e-10));
}

TEST_CASE("three-op composite matches finite differences") {
  RngStream rng(42, "composite");
  auto w = Tensor64::randn({3, 4}, rng, 1.0);
  auto rep = grad_check([&](const Tensor64& x) { return mean(gelu(matmul(x, w))); },
                        Tensor64::randn({2, 3}, rng, 1.0));
  CHECK(rep.pass);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("negative control: a perturbed gradient buffer fails the check") {
  RngStream rng(43, "negcontrol");
  auto point = Tensor64::randn({2, 3}, rng, 1.0);
  TensorProgram fn = [](const Tensor64& x) { return sum(mul(x, x)); };
  auto analytic = analytic_grad(fn, point);
  for (auto& g : analytic) g *= 1.01;
  auto rep = compare_grads(analytic, finite_difference_grad(fn, point), 1e-4);
  CHECK_FALSE(rep.pass);
}

TEST_CASE("constant program passes under the absolute fallback") {
  auto rep = grad_check([](const Tensor64& x) { return scale(sum(mul(x, Tensor64::zeros(x.shape()))), 1.0); },
                        Tensor64::from({3}, {1.0, -2.0, 0.5}));
  CHECK(rep.pass);
  for (double g : rep.analytic) CHECK(g == 0.0);
}

TEST_CASE("non-finite outputs raise NumericError") {
  auto big = Tensor32::from({2}, {1e30f, 1e30f});
  CHECK_THROWS_AS(mul(big, big), NumericError);
}

TEST_CASE("ops are bit-deterministic across repeated evaluation") {
  RngStream rng(7, "determinism");
  auto a = Tensor32::randn({7, 9}, rng, 1.0);
  auto b = Tensor32::randn({9, 5}, rng, 1.0);
  auto c1 = matmul(a, b);
  auto c2 = matmul(a, b);
  CHECK(std::memcmp(c1.values().data(), c2.values().data(), c1.size() * sizeof(float)) == 0);
}

TEST_SUITE_END();
