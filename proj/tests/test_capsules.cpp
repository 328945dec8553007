#include <doctest.h>

#include <cmath>
#include <numeric>

#include "capstraffic/capsules.hpp"
#include "capstraffic/error.hpp"
#include "capstraffic/gradcheck.hpp"
#include "oracles.hpp"

using namespace capstraffic;

namespace {

std::vector<double> row(const Tensor& t, std::size_t r) {
  const std::size_t d = t.shape().back();
  return {t.data().begin() + r * d, t.data().begin() + (r + 1) * d};
}

}  // namespace

TEST_CASE("squash examples") {
  CHECK(squash(Tensor({1, 4})) == Tensor({1, 4}));
  const Tensor unit = squash(Tensor({1, 2}, std::vector<double>{0.6, 0.8}));
  CHECK(oracle::norm(row(unit, 0)) == doctest::Approx(0.5).epsilon(1e-14));
  const Tensor three = squash(Tensor({1, 2}, std::vector<double>{1.8, -2.4}));
  CHECK(oracle::norm(row(three, 0)) == doctest::Approx(0.9).epsilon(1e-14));
  CHECK(three[0] / three[1] == doctest::Approx(1.8 / -2.4).epsilon(1e-14));
  CHECK_THROWS_AS(squash(Tensor({1, 2}, std::vector<double>{std::nan(""), 0})), NumericError);
}

TEST_CASE("squash norm is below one and increases with the input norm") {
  Rng rng(2);
  const Tensor dir = oracle::random_tensor({1, 8}, rng);
  double prev = -1.0;
  for (double scale = 0.01; scale < 50; scale *= 1.7) {
    Tensor s = dir;
    for (double& v : s.data()) v *= scale;
    const double n = oracle::norm(row(squash(s), 0));
    CHECK(n < 1.0);
    CHECK(n > prev);
    prev = n;
  }
}

TEST_CASE("capsule lengths") {
  CHECK(capsule_lengths(Tensor({2, 16})) == Tensor({2}));
  Tensor v({1, 16});
  v[3] = 0.6;
  CHECK(capsule_lengths(v)[0] == 0.6);
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = oracle::random_tensor({3, 16}, rng);
    CHECK(finite_difference_check([](Tape&, Var a) { return sum(capsule_lengths(a)); }, x) < 1e-4);
  }
  // differentiable at the origin
  Tape tape;
  const Var z = tape.variable(Tensor({1, 4}));
  const Tensor g = tape.backward(sum(capsule_lengths(z)))[z];
  for (double e : g.data()) CHECK(std::isfinite(e));
}

TEST_CASE("primary capsules") {
  Rng rng(5);
  const PrimaryCapsLayer layer = PrimaryCapsLayer::create(32, 128, 8, rng);
  CHECK(layer.capsule_types() == 16);
  const Tensor feat = oracle::random_tensor({10, 20, 32}, rng, 0, 1);
  const Tensor caps = primary_caps_forward(feat, layer);
  CHECK(caps.shape() == Shape{3200, 8});
  for (std::size_t i = 0; i < 3200; ++i) CHECK(oracle::norm(row(caps, i)) < 1.0);
  CHECK(capsule_lengths(caps).size() == 3200);
  CHECK_THROWS_AS(primary_caps_forward(Tensor({4, 4, 3}), layer), ShapeError);

  // capsule (y * W + x) * types + t holds channels t*dim .. t*dim+dim-1 of location (y, x)
  const PrimaryCapsLayer small = PrimaryCapsLayer::create(2, 6, 3, rng);
  const Tensor f = oracle::random_tensor({3, 4, 2}, rng);
  Tensor conv = oracle::conv2d(f, small.conv.kernels, small.conv.bias, 1, true);
  for (double& e : conv.data()) e = std::max(e, 0.0);
  const Tensor got = primary_caps_forward(f, small);
  CHECK(got.shape() == Shape{24, 3});
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 4; ++x)
      for (std::size_t t = 0; t < 2; ++t) {
        std::vector<double> s(3);
        for (std::size_t k = 0; k < 3; ++k) s[k] = conv.at({y, x, t * 3 + k});
        const auto want = oracle::squash(s);
        const auto have = row(got, (y * 4 + x) * 2 + t);
        for (std::size_t k = 0; k < 3; ++k) CHECK(have[k] == doctest::Approx(want[k]).epsilon(1e-12));
      }
}

TEST_CASE("primary capsule count for the wide tasks") {
  Rng rng(1);
  const PrimaryCapsLayer layer = PrimaryCapsLayer::create(32, 128, 8, rng);
  CHECK(primary_caps_forward(Tensor({14, 50, 32}), layer).shape() == Shape{11200, 8});
}

TEST_CASE("prediction transforms") {
  Rng rng(3);
  TrafficCapsLayer layer = TrafficCapsLayer::create(4, 2, 8, 16, rng);
  layer.transforms.fill(0.0);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t k = 0; k < 8; ++k) layer.transforms.at({i, j, k, k}) = 1.0;
  const Tensor u = oracle::random_tensor({4, 8}, rng);
  const Tensor uh = predict_transforms(u, layer);
  CHECK(uh.shape() == Shape{4, 2, 16});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t k = 0; k < 16; ++k) CHECK(uh.at({i, j, k}) == (k < 8 ? u.at({i, k}) : 0.0));

  CHECK(TrafficCapsLayer::create(3200, 20, 8, 16, rng).parameter_count() == 8'192'000);
  CHECK_THROWS_AS(predict_transforms(Tensor({4, 7}), layer), ShapeError);

  for (int trial = 0; trial < 20; ++trial) {
    const Tensor uu = oracle::random_tensor({2, 3, 4}, rng);
    const Tensor w = oracle::random_tensor({3, 2, 4, 5}, rng);
    const LossBuilder loss = [](Tape&, std::span<const Var> in) {
      return sum(square(predict_transforms(in[0], in[1])));
    };
    CHECK(finite_difference_check(loss, {uu, w}) < 1e-4);
  }
}

TEST_CASE("routing matches the loop oracle") {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t ni = 1 + rng.below(6), nj = 1 + rng.below(4), d = 1 + rng.below(5);
    const std::size_t iters = 1 + rng.below(4);
    const Tensor uh = oracle::random_tensor({ni, nj, d}, rng);
    std::vector<Tensor> want_c;
    const Tensor want = oracle::routing(uh, iters, &want_c);
    RoutingTrace trace;
    const Tensor got = dynamic_routing(uh, iters, &trace);
    CHECK(max_abs_diff(got, want) < 1e-14);
    REQUIRE(trace.coefficients.size() == iters);
    for (std::size_t it = 0; it < iters; ++it) CHECK(max_abs_diff(trace.coefficients[it], want_c[it]) < 1e-14);
  }
}

TEST_CASE("routing invariants") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t ni = 2 + rng.below(10), nj = 1 + rng.below(6);
    const Tensor uh = oracle::random_tensor({ni, nj, 16}, rng, -2, 2);
    RoutingTrace trace;
    const Tensor v = dynamic_routing(uh, 3, &trace);
    for (const Tensor& c : trace.coefficients)
      for (std::size_t i = 0; i < ni; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < nj; ++j) {
          CHECK(c.at({i, j}) >= 0.0);
          s += c.at({i, j});
        }
        CHECK(std::abs(s - 1.0) <= 1e-12);
      }
    for (std::size_t j = 0; j < nj; ++j) CHECK(oracle::norm(row(v, j)) < 1.0);
    for (std::size_t i = 0; i < ni; ++i)
      for (std::size_t j = 0; j < nj; ++j)
        CHECK(trace.coefficients[0].at({i, j}) == doctest::Approx(1.0 / nj).epsilon(1e-15));
  }
}

TEST_CASE("single output capsule ignores the iteration count") {
  Rng rng(4);
  const Tensor uh = oracle::random_tensor({5, 1, 6}, rng);
  std::vector<double> s(6, 0.0);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t k = 0; k < 6; ++k) s[k] += uh.at({i, 0, k});
  const auto want = oracle::squash(s);
  for (std::size_t it : {1u, 2u, 3u, 5u}) {
    const Tensor v = dynamic_routing(uh, it);
    for (std::size_t k = 0; k < 6; ++k) CHECK(v[k] == doctest::Approx(want[k]).epsilon(1e-13));
  }
  CHECK_THROWS_AS(dynamic_routing(uh, 0), Error);
}

TEST_CASE("one routing iteration is the squash of the uniform average") {
  Rng rng(6);
  const Tensor uh = oracle::random_tensor({7, 3, 4}, rng);
  const Tensor v = dynamic_routing(uh, 1);
  for (std::size_t j = 0; j < 3; ++j) {
    std::vector<double> s(4, 0.0);
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t k = 0; k < 4; ++k) s[k] += uh.at({i, j, k}) / 3.0;
    const auto want = oracle::squash(s);
    for (std::size_t k = 0; k < 4; ++k) CHECK(v.at({j, k}) == doctest::Approx(want[k]).epsilon(1e-13));
  }
}

TEST_CASE("hand-picked agreement converges to the agreeing pairs") {
  // input 1 predicts a strong vector for output 1 and a weak opposing one for
  // output 2; input 2 mirrors it
  Tensor uh({2, 2, 2});
  uh.at({0, 0, 0}) = 2.0;
  uh.at({0, 1, 1}) = -0.5;
  uh.at({1, 1, 1}) = 2.0;
  uh.at({1, 0, 0}) = -0.5;
  RoutingTrace trace;
  (void)dynamic_routing(uh, 3, &trace);
  const Tensor& c = trace.coefficients.back();
  CHECK(c.at({0, 0}) > c.at({0, 1}));
  CHECK(c.at({1, 1}) > c.at({1, 0}));
  // by hand: iteration 1 gives s_1 = (0.75, 0) and v_1 = (0.36, 0), so
  // b_11 = 0.72 and b_12 = -0.18
  CHECK(trace.coefficients[1].at({0, 0}) ==
        doctest::Approx(1.0 / (1.0 + std::exp(-0.9))).epsilon(1e-12));
}

TEST_CASE("routing is equivariant under output permutations") {
  Rng rng(23);
  const Tensor uh = oracle::random_tensor({5, 3, 4}, rng);
  const std::size_t perm[3] = {2, 0, 1};
  Tensor p = uh;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k) p.at({i, perm[j], k}) = uh.at({i, j, k});
  const Tensor v = dynamic_routing(uh, 3);
  const Tensor vp = dynamic_routing(p, 3);
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t k = 0; k < 4; ++k) CHECK(vp.at({perm[j], k}) == doctest::Approx(v.at({j, k})).epsilon(1e-13));
}

TEST_CASE("scaling one output's predictions keeps its first-iteration direction") {
  Rng rng(29);
  const Tensor uh = oracle::random_tensor({6, 2, 5}, rng);
  Tensor scaled = uh;
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t k = 0; k < 5; ++k) scaled.at({i, 1, k}) *= 4.0;
  const Tensor a = dynamic_routing(uh, 1), b = dynamic_routing(scaled, 1);
  const double na = oracle::norm(row(a, 1)), nb = oracle::norm(row(b, 1));
  for (std::size_t k = 0; k < 5; ++k) CHECK(a.at({1, k}) / na == doctest::Approx(b.at({1, k}) / nb).epsilon(1e-12));
}

TEST_CASE("capsule gradients match finite differences") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor s = oracle::random_tensor({3, 5}, rng, -2, 2);
    CHECK(finite_difference_check([](Tape&, Var v) { return sum(square(squash(v))); }, s) < 1e-4);
    const Tensor uh = oracle::random_tensor({4, 3, 5}, rng);
    CHECK(finite_difference_check(
              [](Tape&, Var v) { return sum(capsule_lengths(dynamic_routing(v, 3))); }, uh) < 1e-4);
    const Tensor batched = oracle::random_tensor({2, 3, 2, 4}, rng);
    CHECK(finite_difference_check(
              [](Tape&, Var v) { return sum(square(dynamic_routing(v, 2))); }, batched) < 1e-4);
    const Tensor logits = oracle::random_tensor({3, 4}, rng, -3, 3);
    const Tensor wts = oracle::random_tensor({3, 4}, rng);
    CHECK(finite_difference_check(
              [&](Tape& t, Var v) { return sum(mul(softmax_last(v), t.constant(wts))); }, logits) <
          1e-4);
  }
}
