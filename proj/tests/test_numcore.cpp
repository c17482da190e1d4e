#include <cmath>
#include <numeric>

#include "doctest.h"
#include "imusic/numcore.hpp"
#include "support/gradcheck.hpp"

using namespace imusic;
using namespace imusic::nc;

TEST_CASE("matmul by identity returns the left operand") {
  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor y = matmul(a, eye);
  CHECK(y.shape() == Shape{2, 2});
  for (int i = 0; i < 4; ++i) CHECK(y.data()[i] == a.data()[i]);
}

TEST_CASE("softmax of equal logits is uniform") {
  const Tensor y = softmax(Tensor::from({3}, {0, 0, 0}));
  for (float v : y.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-7));
}

TEST_CASE("cross entropy of uniform logits is ln V and its gradient is softmax minus one-hot") {
  Tensor logits = Tensor::zeros({1, 8}, true);
  const std::vector<int> target{0};
  Tensor loss = cross_entropy(logits, target);
  CHECK(loss.item() == doctest::Approx(std::log(8.0)).epsilon(1e-6));
  backward(loss);
  for (int k = 0; k < 8; ++k) {
    const double expect = 1.0 / 8.0 - (k == 0 ? 1.0 : 0.0);
    CHECK(logits.grad()[k] == doctest::Approx(expect).epsilon(1e-6));
  }
}

TEST_CASE("cross entropy ignores padded targets") {
  Tensor logits = Tensor::from({2, 3}, {1, 2, 3, 50, -50, 0}, true);
  const std::vector<int> with_pad{2, -1};
  const std::vector<int> alone{2};
  const float padded = cross_entropy(logits, with_pad).item();
  const float single = cross_entropy(slice_rows(logits, 0, 1), alone).item();
  clear_tape();
  CHECK(padded == doctest::Approx(single).epsilon(1e-7));
}

TEST_CASE("gradient of x squared at 3 is 6") {
  Tensor x = Tensor::scalar(3, true);
  backward(mul(x, x));
  CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("backward twice without a new forward pass throws") {
  Tensor x = Tensor::scalar(2, true);
  Tensor y = mul(x, x);
  backward(y);
  CHECK_THROWS_AS(backward(y), UsageError);
}

TEST_CASE("shape mismatch names both shapes") {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({4, 5});
  try {
    (void)matmul(a, b);
    FAIL("expected an error");
  } catch (const UsageError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,5]") != std::string::npos);
  }
}

TEST_CASE("non-finite results raise") {
  CHECK_THROWS_AS(exp(Tensor::scalar(1000)), NumericError);
}

TEST_CASE("identical seeds give bit-identical forward results") {
  auto run = [] {
    std::mt19937_64 rng(42);
    const Tensor x = Tensor::randn({4, 8}, rng);
    const Tensor w = Tensor::randn({3, 4, 3}, rng);
    return conv1d(x, w, Tensor{}, 1, 1, 1);
  };
  const Tensor a = run();
  const Tensor b = run();
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST_CASE("adam: first step moves each parameter by about lr against the gradient sign") {
  Tensor p = Tensor::from({3}, {1, -2, 0.5}, true);
  Adam opt({p});
  backward(sum(mul(p, Tensor::from({3}, {3, -0.25, 40}))));
  opt.step(0.01f);
  CHECK(p.data()[0] == doctest::Approx(1 - 0.01).epsilon(1e-5));
  CHECK(p.data()[1] == doctest::Approx(-2 + 0.01).epsilon(1e-5));
  CHECK(p.data()[2] == doctest::Approx(0.5 - 0.01).epsilon(1e-5));
  CHECK(opt.state().t == 1);
}

TEST_CASE("adam: zero gradients leave parameters unchanged and still count steps") {
  Tensor p = Tensor::from({2}, {0.3f, -0.7f}, true);
  Adam opt({p});
  for (int i = 0; i < 5; ++i) opt.step(0.1f);
  CHECK(p.data()[0] == 0.3f);
  CHECK(p.data()[1] == -0.7f);
  CHECK(opt.state().t == 5);
}

TEST_CASE("adam: two steps on x^2 match a scalar hand simulation") {
  // Oracle: the textbook update written out in double precision.
  double x = 1, m = 0, v = 0;
  std::vector<double> expected;
  for (int t = 1; t <= 2; ++t) {
    const double g = 2 * x;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    x -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    expected.push_back(x);
  }
  Tensor p = Tensor::scalar(1, true);
  Adam opt({p});
  double prev = 1;
  for (int t = 0; t < 2; ++t) {
    opt.zero_grad();
    backward(mul(p, p));
    opt.step(0.1f);
    CHECK(p.item() == doctest::Approx(expected[t]).epsilon(1e-6));
    CHECK(p.item() < prev);
    CHECK(p.item() > 0);
    prev = p.item();
  }
}

TEST_CASE("adam rejects a non-finite gradient without touching state") {
  Tensor p = Tensor::scalar(1, true);
  Adam opt({p});
  p.node()->grad = {std::numeric_limits<float>::quiet_NaN()};
  CHECK_THROWS_AS(opt.step(0.1f), NumericError);
  CHECK(p.item() == 1.0f);
  CHECK(opt.state().t == 0);
}

TEST_CASE("global-norm clipping rescales to the limit") {
  Tensor a = Tensor::zeros({2}, true);
  Tensor b = Tensor::zeros({1}, true);
  a.node()->grad = {3, 0};
  b.node()->grad = {4};
  const std::vector<Tensor> ps{a, b};
  CHECK(clip_grad_norm(ps, 1.0) == doctest::Approx(5.0));
  CHECK(a.grad()[0] == doctest::Approx(0.6));
  CHECK(b.grad()[0] == doctest::Approx(0.8));
}

TEST_CASE("warm-up schedule") {
  const LrSchedule s{1e-4, 5000};
  CHECK(lr_at(s, 0) == 0.0);
  CHECK(lr_at(s, 5000) == doctest::Approx(1e-4));
  CHECK(lr_at(s, 2500) == doctest::Approx(5e-5));
  CHECK(lr_at(s, 100000) == doctest::Approx(1e-4));
  double prev = -1;
  for (int step = 0; step <= 6000; step += 50) {
    const double lr = lr_at(s, step);
    CHECK(lr >= prev);
    if (step >= 5000) CHECK(lr == doctest::Approx(1e-4));
    prev = lr;
  }
}

TEST_CASE("reverse-mode gradients agree with central differences") {
  const auto chain = imusic::testing::run_matmul_chain_check(10, 1e-3, 7);
  CHECK(chain.worst_rel_err < 1e-4);
  for (const auto& r : imusic::testing::run_gradient_suite(10, 1e-3, 11)) {
    INFO(r.op);
    CHECK(r.worst_rel_err < 1e-4);
  }
}

TEST_CASE("no-grad guard records nothing") {
  Tensor x = Tensor::scalar(2, true);
  {
    NoGradGuard g;
    Tensor y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(Tape::current().empty());
}
