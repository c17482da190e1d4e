#include <cmath>
#include <random>

#include "doctest.h"
#include "imusic/error.hpp"
#include "imusic/srfm.hpp"

using namespace imusic;
using namespace imusic::srfm;

namespace {

FlowConfig tiny() {
  FlowConfig c;
  c.v_sem = 16;
  c.latent_dim = 8;
  c.cond_dim = 8;
  c.hidden = 16;
  c.blocks = 1;
  c.time_dim = 8;
  return c;
}

nc::Tensor randn(int rows, int cols, std::mt19937_64& rng) { return nc::Tensor::randn({rows, cols}, rng); }

}  // namespace

TEST_CASE("conditioning is repeated onto the latent grid") {
  const FlowNet net(tiny(), 1);
  std::vector<int> toks(75, 3);
  CHECK(net.upsample_conditioning(toks).dim(0) == 150);
  const auto one = net.upsample_conditioning(std::vector<int>{5});
  REQUIRE(one.dim(0) == 2);
  const int w = one.dim(1);
  for (int j = 0; j < w; ++j) CHECK(one.data()[j] == one.data()[w + j]);
  CHECK(kUpsample == 2);
}

TEST_CASE("flow matching loss oracles") {
  std::mt19937_64 rng(2);
  const auto x0 = randn(6, 4, rng), x1 = randn(6, 4, rng);
  CHECK(cfm_loss(nc::sub(x1, x0), x0, x1).data()[0] == 0.0f);
  CHECK(cfm_loss(nc::Tensor::zeros({6, 4}), x0, x0).data()[0] == 0.0f);
  CHECK(cfm_loss(nc::Tensor::zeros({6, 4}), x0, x1).data()[0] > 0.0f);
  const auto mid = interpolate(x0, x1, 0.25);
  for (int i = 0; i < 24; ++i) {
    CHECK(mid.data()[i] == doctest::Approx(0.75 * x0.data()[i] + 0.25 * x1.data()[i]).epsilon(1e-6));
  }
}

TEST_CASE("single Euler step is x0 + v(x0, 0)") {
  const std::vector<float> x0{1.0f, -2.0f};
  const VelocityFn v = [](const std::vector<float>& x, double t) {
    return std::vector<float>{static_cast<float>(x[0] * 0.5 + t), static_cast<float>(x[1] - 1)};
  };
  const auto x1 = integrate(x0, 1, Solver::kEuler, v);
  CHECK(x1[0] == doctest::Approx(1.5));
  CHECK(x1[1] == doctest::Approx(-5.0));
}

TEST_CASE("solvers on analytic fields") {
  // dx/dt = t: Euler with n steps under-shoots by 1/(2n); midpoint is exact.
  const VelocityFn lin = [](const std::vector<float>& x, double t) {
    return std::vector<float>(x.size(), static_cast<float>(t));
  };
  for (int n : {1, 4, 10}) {
    CHECK(integrate({0.0f}, n, Solver::kEuler, lin)[0] == doctest::Approx(0.5 - 0.5 / n));
    CHECK(integrate({0.0f}, n, Solver::kMidpoint, lin)[0] == doctest::Approx(0.5));
  }
  // dx/dt = x from 1: error shrinks with the step count.
  const VelocityFn expo = [](const std::vector<float>& x, double) { return x; };
  double prev = 1e9;
  for (int n : {2, 4, 8, 16, 32}) {
    const double err = std::abs(integrate({1.0f}, n, Solver::kEuler, expo)[0] - std::exp(1.0));
    CHECK(err < prev);
    prev = err;
  }
  CHECK(std::abs(integrate({1.0f}, 8, Solver::kMidpoint, expo)[0] - std::exp(1.0)) <
        std::abs(integrate({1.0f}, 8, Solver::kEuler, expo)[0] - std::exp(1.0)));
  CHECK_THROWS_AS(integrate({1.0f}, 0, Solver::kEuler, expo), UsageError);
}

TEST_CASE("velocity keeps the latent shape") {
  const FlowNet net(tiny(), 3);
  std::mt19937_64 rng(3);
  const auto x = randn(10, 8, rng);
  const auto cond = net.upsample_conditioning(std::vector<int>{1, 2, 3, 4, 5});
  const auto v = net.velocity(x, 0.3, cond);
  CHECK(v.shape() == x.shape());
}

TEST_CASE("guidance at scale one is the conditional velocity") {
  const FlowNet net(tiny(), 4);
  std::mt19937_64 rng(4);
  const auto x = randn(6, 8, rng);
  const auto cond = net.upsample_conditioning(std::vector<int>{1, 2, 3});
  const auto null = net.upsample_conditioning(std::vector<int>(3, net.null_id()));
  const auto vc = net.velocity(x, 0.5, cond);
  const auto g1 = guided_velocity(net, x, 0.5, cond, null, 1.0);
  for (std::size_t i = 0; i < vc.numel(); ++i) REQUIRE(g1.data()[i] == vc.data()[i]);
  const auto vu = net.velocity(x, 0.5, null);
  const auto g0 = guided_velocity(net, x, 0.5, cond, null, 0.0);
  for (std::size_t i = 0; i < vu.numel(); ++i) CHECK(g0.data()[i] == doctest::Approx(vu.data()[i]));
}

TEST_CASE("sampling shape and determinism") {
  const FlowNet net(tiny(), 5);
  const std::vector<int> toks{1, 2, 3, 4};
  OdeParams p;
  p.steps = 3;
  const auto a = sample(net, toks, p, 11);
  const auto b = sample(net, toks, p, 11);
  const auto c = sample(net, toks, p, 12);
  CHECK(a.frames == 8);
  CHECK(a.channels == 8);
  CHECK(a.values == b.values);
  CHECK(a.values != c.values);
  p.cfg_scale = 3.0;
  p.solver = Solver::kMidpoint;
  CHECK(sample(net, toks, p, 11).values.size() == 64u);
}

TEST_CASE("trainer rejects misaligned pairs and learns a fixed pair") {
  FlowNet net(tiny(), 6);
  FlowTrainerOptions o;
  o.lr = 3e-3;
  FlowTrainer trainer(net, o, 6);
  std::mt19937_64 rng(6);
  FlowPair bad;
  bad.tokens.assign(75, 1);
  bad.latent = {149, 8, std::vector<float>(149u * 8u, 0.0f)};
  CHECK_THROWS_AS(trainer.step(std::vector<FlowPair>{bad}), DataError);

  FlowPair good;
  good.tokens = {1, 2, 3, 4, 5, 6};
  good.latent.frames = 12;
  good.latent.channels = 8;
  for (int i = 0; i < 96; ++i) good.latent.values.push_back(static_cast<float>(std::sin(0.3 * i)));
  const std::vector<FlowPair> batch{good, good, good, good};
  double head = 0, tail = 0;
  for (int i = 0; i < 200; ++i) {
    const double l = trainer.step(batch);
    if (i < 20) head += l;
    if (i >= 180) tail += l;
  }
  CHECK(tail < head);
  CHECK(trainer.steps() == 200);
}

TEST_CASE("solver names") {
  CHECK(parse_solver("euler") == Solver::kEuler);
  CHECK(parse_solver("midpoint") == Solver::kMidpoint);
  CHECK_THROWS_AS(parse_solver("rk4"), UsageError);
}
