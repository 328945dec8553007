#include <doctest.h>

#include <cmath>

#include "capstraffic/adam.hpp"
#include "capstraffic/error.hpp"
#include "capstraffic/gradcheck.hpp"
#include "capstraffic/layers.hpp"
#include "oracles.hpp"

using namespace capstraffic;

namespace {

Tensor conv_value(const Tensor& x, const Tensor& k, const Tensor& b, std::size_t stride = 1,
                  Padding pad = Padding::same) {
  Tape tape;
  return conv2d(tape.constant(x), tape.constant(k), tape.constant(b), stride, pad).value();
}

Tensor pool_value(const Tensor& x) {
  Tape tape;
  return maxpool2x2(tape.constant(x)).value();
}

}  // namespace

TEST_CASE("conv2d examples") {
  CHECK(conv_value(Tensor({1, 1, 1}, 5.0), Tensor({1, 1, 1, 1}, 2.0), Tensor({1})) ==
        Tensor({1, 1, 1}, 10.0));
  const Tensor y = conv_value(Tensor({3, 3, 1}, 1.0), Tensor({1, 3, 3, 1}, 1.0), Tensor({1}));
  CHECK(y.at({1, 1, 0}) == 9.0);
  CHECK(y.at({0, 0, 0}) == 4.0);
  CHECK(y.at({2, 2, 0}) == 4.0);
  CHECK(y.at({0, 1, 0}) == 6.0);

  Rng rng(1);
  const Conv2DLayer layer = Conv2DLayer::create(1, 256, 3, rng);
  CHECK(conv2d_forward(Tensor({10, 20, 1}), layer).shape() == Shape{10, 20, 256});
  CHECK(layer.parameter_count() == 2560);
}

TEST_CASE("conv2d channel mismatch names expected and actual") {
  Rng rng(1);
  const Conv2DLayer layer = Conv2DLayer::create(3, 4, 3, rng);
  try {
    (void)conv2d_forward(Tensor({5, 5, 2}), layer);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find('3') != std::string::npos);
    CHECK(msg.find('2') != std::string::npos);
  }
}

TEST_CASE("conv2d equals the direct-loop oracle") {
  Rng rng(42);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t h = 1 + rng.below(8), w = 1 + rng.below(8), c = 1 + rng.below(4);
    const std::size_t o = 1 + rng.below(4), k = 1 + 2 * rng.below(2);
    const std::size_t stride = 1 + rng.below(2);
    const bool same = rng.below(2) == 0 || h < k || w < k;
    const Tensor x = oracle::random_tensor({h, w, c}, rng);
    const Tensor kern = oracle::random_tensor({o, k, k, c}, rng);
    const Tensor bias = oracle::random_tensor({o}, rng);
    const Tensor got = conv_value(x, kern, bias, stride, same ? Padding::same : Padding::valid);
    const Tensor want = oracle::conv2d(x, kern, bias, stride, same);
    REQUIRE(got.shape() == want.shape());
    CHECK(max_abs_diff(got, want) < 1e-12);
  }
}

TEST_CASE("batched conv2d equals per-sample conv2d") {
  Rng rng(4);
  const Tensor x = oracle::random_tensor({3, 5, 6, 2}, rng);
  const Tensor kern = oracle::random_tensor({4, 3, 3, 2}, rng);
  const Tensor bias = oracle::random_tensor({4}, rng);
  const Tensor y = conv_value(x, kern, bias);
  for (std::size_t b = 0; b < 3; ++b) {
    Tensor xb({5, 6, 2}, std::vector<double>(x.data().begin() + b * 60, x.data().begin() + (b + 1) * 60));
    const Tensor want = oracle::conv2d(xb, kern, bias, 1, true);
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(y[b * want.size() + i] == doctest::Approx(want[i]).epsilon(1e-13));
  }
}

TEST_CASE("maxpool examples and shape chains") {
  CHECK(pool_value(Tensor({2, 2, 1}, std::vector<double>{1, 2, 3, 4})) == Tensor({1, 1, 1}, 4.0));
  Shape s{10, 20, 3};
  for (const Shape& want : {Shape{5, 10, 3}, Shape{2, 5, 3}, Shape{1, 2, 3}}) {
    s = pool_value(Tensor(s)).shape();
    CHECK(s == want);
  }
  s = Shape{14, 50, 1};
  for (const Shape& want : {Shape{7, 25, 1}, Shape{3, 12, 1}, Shape{1, 6, 1}}) {
    s = pool_value(Tensor(s)).shape();
    CHECK(s == want);
  }
  CHECK_THROWS_AS(pool_value(Tensor({1, 4, 1})), ShapeError);
  CHECK_THROWS_AS(pool_value(Tensor({4, 1, 1})), ShapeError);
}

TEST_CASE("maxpool equals the oracle and its properties hold") {
  Rng rng(9);
  for (int trial = 0; trial < 40; ++trial) {
    const Tensor x =
        oracle::random_tensor({2 + rng.below(7), 2 + rng.below(7), 1 + rng.below(4)}, rng, -5, 5);
    const Tensor y = pool_value(x);
    CHECK(max_abs_diff(y, oracle::maxpool2x2(x)) == 0.0);
    const double in_max = *std::max_element(x.data().begin(), x.data().end());
    for (double v : y.data()) CHECK(v <= in_max);
    Tensor shifted = x;
    for (double& v : shifted.data()) v += 3.25;
    const Tensor ys = pool_value(shifted);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(ys[i] - 3.25 == doctest::Approx(y[i]).epsilon(1e-15));
  }
}

TEST_CASE("maxpool ties send the gradient to the first maximum") {
  Tape tape;
  const Var x = tape.variable(Tensor({2, 2, 1}, 7.0));
  const Tensor g = tape.backward(sum(maxpool2x2(x)))[x];
  CHECK(g == Tensor({2, 2, 1}, std::vector<double>{1, 0, 0, 0}));
}

TEST_CASE("dense examples") {
  Tape tape;
  const Var in = tape.constant(Tensor::vector({1.5, -2, 3}));
  const Var eye = tape.constant(Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}));
  CHECK(dense(in, eye, tape.constant(Tensor({3}))).value() == in.value());
  CHECK_THROWS_AS(dense(in, tape.constant(Tensor({4, 2})), tape.constant(Tensor({2}))), ShapeError);
  const Var flat = tape.constant(Tensor({2, 128}));
  CHECK(dense(flat, tape.constant(Tensor({128, 20})), tape.constant(Tensor({20}))).shape() ==
        Shape{2, 20});
  CHECK(flatten(tape.constant(Tensor({3, 1, 6, 64}))).shape() == Shape{3, 384});
}

TEST_CASE("mse examples") {
  Tape tape;
  const Var p = tape.variable(Tensor::vector({1, 1}));
  const Var t = tape.constant(Tensor::vector({0, 2}));
  CHECK(mse_loss(p, p).value().item() == 0.0);
  const Var loss = mse_loss(p, t);
  CHECK(loss.value().item() == 1.0);
  CHECK(tape.backward(loss)[p] == Tensor::vector({1, -1}));
  CHECK_THROWS_AS(mse_loss(p, tape.constant(Tensor({3}))), ShapeError);
}

TEST_CASE("layer gradients match finite differences") {
  Rng rng(33);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = oracle::random_tensor({2, 4, 5, 2}, rng);
    const Tensor k = oracle::random_tensor({3, 3, 3, 2}, rng);
    const Tensor b = oracle::random_tensor({3}, rng);
    const Tensor w = oracle::random_tensor({12, 4}, rng);
    const Tensor wb = oracle::random_tensor({4}, rng);
    const Tensor target = oracle::random_tensor({2, 4}, rng);
    const LossBuilder loss = [&](Tape& t, std::span<const Var> in) {
      const Var h = relu(conv2d(in[0], in[1], in[2]));
      const Var p = flatten(maxpool2x2(h));
      return mse_loss(dense(p, in[3], in[4]), t.constant(target));
    };
    CHECK(finite_difference_check(loss, {x, k, b, w, wb}) < 1e-4);
  }
}

TEST_CASE("adam examples") {
  SUBCASE("zero gradient leaves parameters and counts the step") {
    std::vector<Parameter> p{{"w", Tensor::vector({1, -2})}};
    std::vector<Tensor> g{Tensor({2})};
    Adam adam;
    adam.step(p, g);
    CHECK(p[0].value == Tensor::vector({1, -2}));
    CHECK(adam.steps() == 1);
  }
  SUBCASE("first step moves by about lr against the gradient sign") {
    std::vector<Parameter> p{{"w", Tensor::scalar(1.0)}, {"v", Tensor::scalar(1.0)}};
    std::vector<Tensor> g{Tensor::scalar(0.1), Tensor::scalar(-3.0)};
    Adam adam;
    adam.step(p, g);
    // m_hat = g and v_hat = g^2, so the update is lr * g / (|g| + eps)
    CHECK(p[0].value.item() - 1.0 == doctest::Approx(-0.0005 * 0.1 / (0.1 + 1e-8)).epsilon(1e-12));
    CHECK(p[1].value.item() - 1.0 == doctest::Approx(0.0005 * 3.0 / (3.0 + 1e-8)).epsilon(1e-12));
  }
  SUBCASE("learning rate decays per step") {
    Adam adam;
    std::vector<Parameter> p{{"w", Tensor::scalar(0.0)}};
    std::vector<Tensor> g{Tensor::scalar(0.0)};
    double prev = adam.learning_rate();
    CHECK(prev == 0.0005);
    for (int i = 0; i < 10000; ++i) {
      adam.step(p, g);
      if (i < 5) {
        CHECK(adam.learning_rate() < prev);
        prev = adam.learning_rate();
      }
    }
    CHECK(adam.learning_rate() == doctest::Approx(1.839e-4).epsilon(1e-3));
    CHECK(adam.learning_rate() == doctest::Approx(0.0005 * std::pow(0.9999, 10000)).epsilon(1e-12));
  }
  SUBCASE("decay 1 is constant-rate Adam") {
    AdamConfig cfg;
    cfg.decay = 1.0;
    Adam adam(cfg);
    std::vector<Parameter> p{{"w", Tensor::scalar(0.0)}};
    std::vector<Tensor> g{Tensor::scalar(1.0)};
    for (int i = 0; i < 3; ++i) adam.step(p, g);
    CHECK(adam.learning_rate() == 0.0005);
    CHECK(adam.first_moments()[0].shape() == p[0].value.shape());
  }
  SUBCASE("non-finite gradient names the parameter and changes nothing") {
    std::vector<Parameter> p{{"conv1.kernels", Tensor::scalar(1.0)},
                             {"dense.bias", Tensor::scalar(2.0)}};
    std::vector<Tensor> g{Tensor::scalar(0.5), Tensor::scalar(std::nan(""))};
    Adam adam;
    try {
      adam.step(p, g);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("dense.bias") != std::string::npos);
    }
    CHECK(p[0].value.item() == 1.0);
    CHECK(adam.steps() == 0);
  }
}
