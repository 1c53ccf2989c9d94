#include <doctest.h>

#include <cmath>

#include "fusestyle/error.hpp"
#include "fusestyle/ops.hpp"
#include "fusestyle/tensor.hpp"
#include "test_helpers.hpp"

using namespace fusestyle;
using namespace testutil;

TEST_CASE("shape rejects non-positive extents") {
  CHECK_THROWS_AS(Shape({3, 0, 2}), DimensionError);
  CHECK_THROWS_AS(Shape({-1}), DimensionError);
  CHECK(Shape({2, 3, 4}).numel() == 24);
}

TEST_CASE("conv2d: all-ones 3x3 against all-ones kernel sums to 9") {
  Tensor in(Shape{1, 1, 3, 3}, 1.0);
  Tensor k(Shape{1, 1, 3, 3}, 1.0);
  Tensor b(Shape{1}, 0.0);
  Tensor out = conv2d(in, k, b, 1, 0);
  CHECK(out.shape() == Shape{1, 1, 1, 1});
  CHECK(out.values()[0] == doctest::Approx(9.0));
}

TEST_CASE("conv2d: zero kernel gives constant bias everywhere") {
  SeededRng rng(3);
  Tensor in = random_tensor(Shape{2, 3, 5, 5}, rng);
  Tensor k(Shape{4, 3, 3, 3}, 0.0);
  Tensor b(Shape{4}, {0.5, -1.0, 2.0, 0.0});
  Tensor out = conv2d(in, k, b, 1, 1);
  for (int64_t f = 0; f < 4; ++f) {
    for (int64_t i = 0; i < 25; ++i) {
      CHECK(out.values()[static_cast<size_t>(f * 25 + i)] == b.values()[static_cast<size_t>(f)]);
    }
  }
}

TEST_CASE("conv2d: random stride-2 padded case matches six-loop oracle") {
  SeededRng rng(11);
  Tensor in = random_tensor(Shape{1, 2, 5, 5}, rng);
  Tensor k = random_tensor(Shape{3, 2, 3, 3}, rng);
  Tensor b = random_tensor(Shape{3}, rng);
  Tensor out = conv2d(in, k, b, 2, 1);
  auto expected = naive_conv2d(in.values(), 1, 2, 5, 5, k.values(), 3, 3, b.values(), 2, 1);
  CHECK(out.values().size() == expected.size());
  CHECK(max_abs_diff(out.values(), expected) < 1e-12);
}

TEST_CASE("conv2d: stride-1 padded cases match six-loop oracle across shapes") {
  SeededRng rng(12);
  for (int trial = 0; trial < 8; ++trial) {
    const int64_t B = 1 + static_cast<int64_t>(rng.uniform_int(3));
    const int64_t C = 1 + static_cast<int64_t>(rng.uniform_int(4));
    const int64_t F = 1 + static_cast<int64_t>(rng.uniform_int(6));
    const int64_t H = 4 + static_cast<int64_t>(rng.uniform_int(5));
    const int64_t W = 4 + static_cast<int64_t>(rng.uniform_int(5));
    Tensor in = random_tensor(Shape{B, C, H, W}, rng);
    Tensor k = random_tensor(Shape{F, C, 3, 3}, rng);
    Tensor b = random_tensor(Shape{F}, rng);
    Tensor out = conv2d(in, k, b, 1, 1);
    auto expected = naive_conv2d(in.values(), B, C, H, W, k.values(), F, 3, b.values(), 1, 1);
    CHECK(max_abs_diff(out.values(), expected) < 1e-12);
  }
}

TEST_CASE("conv2d: channel mismatch raises dimension error") {
  Tensor in(Shape{1, 2, 4, 4}, 1.0);
  Tensor k(Shape{1, 3, 3, 3}, 1.0);
  Tensor b(Shape{1}, 0.0);
  CHECK_THROWS_AS(conv2d(in, k, b, 1, 0), DimensionError);
}

TEST_CASE("conv2d forward is bit-identical across runs") {
  SeededRng rng(5);
  Tensor in = random_tensor(Shape{2, 3, 8, 8}, rng);
  Tensor k = random_tensor(Shape{4, 3, 3, 3}, rng);
  Tensor b = random_tensor(Shape{4}, rng);
  Tensor a = conv2d(in, k, b, 1, 1);
  Tensor c = conv2d(in, k, b, 1, 1);
  CHECK(a.values() == c.values());
}

TEST_CASE("relu basics") {
  Tensor x(Shape{3}, {-1.0, 0.0, 2.0});
  CHECK(relu(x).values() == std::vector<double>{0.0, 0.0, 2.0});
  Tensor neg(Shape{4}, {-3.0, -0.5, -1e9, -1e-9});
  Tensor neg_out = relu(neg);
  for (double v : neg_out.values()) CHECK(v == 0.0);
}

TEST_CASE("relu gradient of sum at [-1, 2] is [0, 1]") {
  Tensor x(Shape{2}, {-1.0, 2.0}, true);
  GradientTape tape;
  {
    TapeScope scope(tape);
    backward(sum(relu(x)));
  }
  CHECK(x.grad() == std::vector<double>{0.0, 1.0});
}

TEST_CASE("avgpool2d: 2x2 mean and constant propagation") {
  Tensor x(Shape{1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  CHECK(avgpool2d(x, 2).values()[0] == doctest::Approx(2.5));

  Tensor c(Shape{2, 3, 4, 4}, 0.7);
  Tensor pooled = avgpool2d(c, 2);
  for (double v : pooled.values()) CHECK(v == doctest::Approx(0.7));
}

TEST_CASE("avgpool2d: random 4x4 matches nested-loop oracle") {
  SeededRng rng(7);
  Tensor x = random_tensor(Shape{1, 1, 4, 4}, rng);
  Tensor out = avgpool2d(x, 2);
  auto expected = naive_avgpool(x.values(), 1, 1, 4, 4, 2);
  CHECK(max_abs_diff(out.values(), expected) < 1e-12);
}

TEST_CASE("avgpool2d: non-divisible window raises dimension error") {
  Tensor x(Shape{1, 1, 5, 4}, 0.0);
  CHECK_THROWS_AS(avgpool2d(x, 2), DimensionError);
}

TEST_CASE("dense: identity weight and zero bias reproduce the input") {
  Tensor in(Shape{2, 3}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0});
  std::vector<double> eye = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  Tensor w(Shape{3, 3}, eye);
  Tensor b(Shape{3}, 0.0);
  CHECK(dense(in, w, b).values() == in.values());
}

TEST_CASE("dense: zero weight gives bias rows") {
  Tensor in(Shape{2, 3}, 1.5);
  Tensor w(Shape{4, 3}, 0.0);
  Tensor b(Shape{4}, {1.0, 2.0, 3.0, 4.0});
  Tensor out = dense(in, w, b);
  for (int64_t r = 0; r < 2; ++r)
    for (int64_t m = 0; m < 4; ++m) CHECK(out.values()[static_cast<size_t>(r * 4 + m)] == b.values()[static_cast<size_t>(m)]);
}

TEST_CASE("dense: random case matches triple-loop oracle") {
  SeededRng rng(9);
  Tensor in = random_tensor(Shape{2, 3}, rng);
  Tensor w = random_tensor(Shape{4, 3}, rng);
  Tensor b = random_tensor(Shape{4}, rng);
  auto expected = naive_dense(in.values(), 2, 3, w.values(), 4, b.values());
  CHECK(max_abs_diff(dense(in, w, b).values(), expected) < 1e-12);
}

TEST_CASE("dense: inner dimension mismatch raises dimension error") {
  Tensor in(Shape{2, 3}, 0.0);
  Tensor w(Shape{4, 5}, 0.0);
  Tensor b(Shape{4}, 0.0);
  CHECK_THROWS_AS(dense(in, w, b), DimensionError);
}

TEST_CASE("dense linearity in the input") {
  SeededRng rng(21);
  Tensor x = random_tensor(Shape{2, 5}, rng);
  Tensor y = random_tensor(Shape{2, 5}, rng);
  Tensor w = random_tensor(Shape{3, 5}, rng);
  Tensor zero_bias(Shape{3}, 0.0);
  const double a = 1.7, b = -0.4;
  Tensor combined = dense(add(scale(x, a), scale(y, b)), w, zero_bias);
  Tensor separate = add(scale(dense(x, w, zero_bias), a), scale(dense(y, w, zero_bias), b));
  CHECK(max_abs_diff(combined.values(), separate.values()) < 1e-10);
}

TEST_CASE("sigmoid_bce_loss values") {
  SUBCASE("logit 0, target 1 -> ln 2") {
    Tensor z(Shape{1, 1}, {0.0});
    Tensor t(Shape{1, 1}, {1.0});
    CHECK(sigmoid_bce_loss(z, t).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("large logit stays finite and tiny") {
    Tensor z(Shape{1, 1}, {20.0});
    Tensor t(Shape{1, 1}, {1.0});
    const double loss = sigmoid_bce_loss(z, t).item();
    CHECK(std::isfinite(loss));
    CHECK(loss == doctest::Approx(2.0611536e-9).epsilon(1e-4));
  }
  SUBCASE("finite for |logit| <= 50") {
    for (double z : {-50.0, -30.0, 30.0, 50.0}) {
      Tensor zt(Shape{1, 1}, {z});
      Tensor t(Shape{1, 1}, {0.0});
      CHECK(std::isfinite(sigmoid_bce_loss(zt, t).item()));
    }
  }
  SUBCASE("target outside {0,1} raises validation error") {
    Tensor z(Shape{1, 1}, {0.0});
    Tensor t(Shape{1, 1}, {0.5});
    CHECK_THROWS_AS(sigmoid_bce_loss(z, t), ValidationError);
  }
}

TEST_CASE("sigmoid_bce_loss gradient at logit 0, target 1 is -0.5") {
  Tensor z(Shape{1, 1}, {0.0}, true);
  Tensor t(Shape{1, 1}, {1.0});
  GradientTape tape;
  {
    TapeScope scope(tape);
    backward(sigmoid_bce_loss(z, t));
  }
  CHECK(z.grad()[0] == doctest::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("backward: sum gives all-ones gradient") {
  SeededRng rng(13);
  Tensor x = random_tensor(Shape{2, 3, 2, 2}, rng, true);
  GradientTape tape;
  {
    TapeScope scope(tape);
    backward(sum(x));
  }
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward: sum of squares doubles the input") {
  Tensor x(Shape{2}, {1.0, 2.0}, true);
  GradientTape tape;
  {
    TapeScope scope(tape);
    backward(sum(mul(x, x)));
  }
  CHECK(x.grad() == std::vector<double>{2.0, 4.0});
}

TEST_CASE("backward contract errors") {
  Tensor x(Shape{2}, {1.0, 2.0}, true);
  GradientTape tape;
  {
    TapeScope scope(tape);
    Tensor loss = sum(x);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), ContractError);
  }
  GradientTape tape2;
  {
    TapeScope scope(tape2);
    Tensor y = mul(x, x);  // non-scalar
    CHECK_THROWS_AS(tape2.backward(y), ContractError);
  }
  tape.reset();
  {
    TapeScope scope(tape);
    Tensor loss = sum(x);
    CHECK_NOTHROW(tape.backward(loss));
  }
}

TEST_CASE("gradient accumulation is additive and zero_grad resets") {
  Tensor x(Shape{2}, {1.0, 2.0}, true);
  for (int round = 0; round < 2; ++round) {
    GradientTape tape;
    TapeScope scope(tape);
    backward(sum(x));
  }
  CHECK(x.grad() == std::vector<double>{2.0, 2.0});
  x.zero_grad();
  CHECK(x.grad() == std::vector<double>{0.0, 0.0});
}

TEST_CASE("finite_difference_gradient basics") {
  SUBCASE("sum of squares at [3] gives about 6") {
    Tensor p(Shape{1}, {3.0});
    Tensor g = finite_difference_gradient(
        [](const Tensor& t) {
          double s = 0;
          for (double v : t.values()) s += v * v;
          return s;
        },
        p, 1e-5);
    CHECK(g.values()[0] == doctest::Approx(6.0).epsilon(1e-6));
  }
  SUBCASE("constant function gives zeros") {
    Tensor p(Shape{4}, {1.0, -2.0, 0.5, 3.0});
    Tensor g = finite_difference_gradient([](const Tensor&) { return 42.0; }, p, 1e-5);
    for (double v : g.values()) CHECK(v == 0.0);
  }
  SUBCASE("h must be positive") {
    Tensor p(Shape{1}, {0.0});
    CHECK_THROWS_AS(finite_difference_gradient([](const Tensor&) { return 0.0; }, p, 0.0), ContractError);
  }
}

TEST_CASE("bce loss: autodiff gradient matches finite differences") {
  SeededRng rng(17);
  Tensor z = random_tensor(Shape{4, 1}, rng, true, -3.0, 3.0);
  Tensor t(Shape{4, 1}, {1.0, 0.0, 0.0, 1.0});
  GradientTape tape;
  {
    TapeScope scope(tape);
    backward(sigmoid_bce_loss(z, t));
  }
  Tensor fd = finite_difference_gradient(
      [&](const Tensor& probe) {
        Tensor zz(z.shape(), probe.values());
        return sigmoid_bce_loss(zz, t).item();
      },
      z, 1e-5);
  CHECK(max_rel_diff(z.grad(), fd.values()) < 1e-4);
}

TEST_CASE("no operation produces NaN on finite inputs") {
  SeededRng rng(23);
  Tensor x = random_tensor(Shape{2, 2, 4, 4}, rng, false, -100.0, 100.0);
  Tensor k = random_tensor(Shape{2, 2, 3, 3}, rng, false, -10.0, 10.0);
  Tensor b = random_tensor(Shape{2}, rng);
  CHECK_NOTHROW(conv2d(x, k, b, 1, 1));
  CHECK_NOTHROW(relu(x));
  CHECK_NOTHROW(avgpool2d(x, 2));
  CHECK_NOTHROW(instance_sigma(x, 1e-6));
}
