// SPDX-License-Identifier: Apache-2.0
#include "evf/ops.hpp"
#include "evf/tensor.hpp"
#include "gradcheck.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace evf {
namespace {

using testing::gradcheck;
using testing::random_tensor;

constexpr double kGradTol = 1e-5;

TEST(Tensor, RejectsMismatchedShape) {
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), std::invalid_argument);
  EXPECT_THROW(Tensor({0}, {}), std::invalid_argument);
}

TEST(Tensor, AddElementwise) {
  auto r = add(Tensor::vector({1, 2}), Tensor::vector({3, 4}));
  EXPECT_EQ(r[0], 4.0);
  EXPECT_EQ(r[1], 6.0);
}

TEST(Tensor, MulByZerosIsZeros) {
  std::mt19937_64 gen(1);
  auto a = random_tensor({3, 4}, gen);
  auto r = mul(a, Tensor::zeros({3, 4}));
  for (double v : r.data())
    EXPECT_EQ(v, 0.0);
}

TEST(Tensor, ProductRuleGrad) {
  auto a = Tensor::vector({2}, true);
  auto b = Tensor::vector({3}, true);
  sum(mul(a, b)).backward();
  EXPECT_EQ(a.grad()[0], 3.0);
  EXPECT_EQ(b.grad()[0], 2.0);
}

TEST(Tensor, BroadcastTrailingAndErrorNamesShapes) {
  auto a = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  auto r = add(a, Tensor::vector({10, 20, 30}));
  EXPECT_EQ(r.at(1, 2), 36.0);
  auto col = add(a, Tensor::matrix(2, 1, {100, 200}));
  EXPECT_EQ(col.at(1, 0), 204.0);
  try {
    add(a, Tensor::vector({1, 2}));
    FAIL() << "expected broadcast failure";
  } catch (const std::invalid_argument &e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("[2]"), std::string::npos);
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
  }
}

TEST(Tensor, MatmulIdentityAndHandCase) {
  auto eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  auto a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  auto r = matmul(eye, a);
  for (std::size_t i = 0; i < 4; ++i)
    EXPECT_EQ(r[i], a[i]);
  auto c = matmul(a, Tensor::matrix(2, 1, {5, 6}));
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c[0], 17.0);
  EXPECT_EQ(c[1], 39.0);
  EXPECT_THROW(matmul(a, Tensor::matrix(3, 1, {1, 2, 3})),
               std::invalid_argument);
}

TEST(Tensor, MatmulAgreesWithTripleLoop) {
  std::mt19937_64 gen(7);
  std::uniform_int_distribution<std::size_t> ext(1, 8);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t m = ext(gen), k = ext(gen), n = ext(gen);
    auto a = random_tensor({m, k}, gen);
    auto b = random_tensor({k, n}, gen);
    auto c = matmul(a, b);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double ref = 0.0;
        for (std::size_t p = 0; p < k; ++p)
          ref += a.at(i, p) * b.at(p, j);
        EXPECT_NEAR(c.at(i, j), ref, 1e-12);
      }
  }
}

TEST(Tensor, MatmulGradMatchesFiniteDifferences) {
  std::mt19937_64 gen(3);
  auto a = random_tensor({3, 4}, gen);
  auto b = random_tensor({4, 2}, gen);
  auto w = random_tensor({3, 2}, gen);
  w.set_requires_grad(false);
  EXPECT_LT(gradcheck([&] { return sum(mul(matmul(a, b), w)); }, {a, b}), 1e-7);
}

TEST(Tensor, Conv1dIdentityKernel) {
  auto x = Tensor::matrix(2, 5, {1, 2, 3, 4, 5, -1, -2, -3, -4, -5});
  auto w = Tensor({2, 2, 1}, {1, 0, 0, 1});
  auto y = conv1d(x, w, 1, 0);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i)
    EXPECT_EQ(y[i], x[i]);
}

TEST(Tensor, Conv1dDirectSum) {
  auto y = conv1d(Tensor::matrix(1, 3, {1, 2, 3}), Tensor({1, 1, 2}, {1, 1}), 1,
                  0);
  ASSERT_EQ(y.shape(), (Shape{1, 2}));
  EXPECT_EQ(y[0], 3.0);
  EXPECT_EQ(y[1], 5.0);
}

TEST(Tensor, Conv1dOutputLengthAndDirectOracle) {
  std::mt19937_64 gen(11);
  for (std::size_t stride : {1u, 2u, 3u})
    for (std::size_t pad : {0u, 1u, 2u}) {
      auto x = random_tensor({2, 9}, gen);
      auto w = random_tensor({3, 2, 3}, gen);
      auto y = conv1d(x, w, stride, pad);
      const std::size_t t_out = (9 + 2 * pad - 3) / stride + 1;
      ASSERT_EQ(y.shape(), (Shape{3, t_out}));
      for (std::size_t o = 0; o < 3; ++o)
        for (std::size_t t = 0; t < t_out; ++t) {
          double ref = 0.0;
          for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t j = 0; j < 3; ++j) {
              long idx = static_cast<long>(t * stride + j) - static_cast<long>(pad);
              if (idx >= 0 && idx < 9)
                ref += w[(o * 2 + c) * 3 + j] * x[c * 9 + static_cast<std::size_t>(idx)];
            }
          EXPECT_NEAR(y.at(o, t), ref, 1e-12);
        }
    }
}

TEST(Tensor, Conv1dRejectsLongKernel) {
  EXPECT_THROW(conv1d(Tensor::matrix(1, 2, {1, 2}), Tensor::zeros({1, 1, 5}), 1, 1),
               std::invalid_argument);
}

TEST(Tensor, Conv1dGradMatchesFiniteDifferences) {
  std::mt19937_64 gen(5);
  for (std::size_t stride : {1u, 2u}) {
    auto x = random_tensor({2, 11}, gen);
    auto w = random_tensor({3, 2, 5}, gen);
    auto probe = random_tensor({3, (11 + 4 - 5) / stride + 1}, gen);
    probe.set_requires_grad(false);
    EXPECT_LT(gradcheck([&] { return sum(mul(conv1d(x, w, stride, 2), probe)); },
                        {x, w}),
              1e-7);
  }
}

TEST(Tensor, SoftmaxClosedForms) {
  auto c = softmax(Tensor::vector({3, 3, 3, 3}), 0);
  for (double v : c.data())
    EXPECT_DOUBLE_EQ(v, 0.25);
  auto r = softmax(Tensor::vector({0.0, std::log(2.0)}), 0);
  EXPECT_NEAR(r[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(r[1], 2.0 / 3.0, 1e-15);
}

TEST(Tensor, SoftmaxShiftInvarianceAndRowSums) {
  std::mt19937_64 gen(9);
  auto x = random_tensor({5, 7}, gen);
  auto shifted = add_scalar(x, 123.456);
  auto a = softmax(x, 1);
  auto b = softmax(shifted, 1);
  for (std::size_t i = 0; i < a.numel(); ++i)
    EXPECT_NEAR(a[i], b[i], 1e-12);
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 7; ++c) {
      EXPECT_GT(a.at(r, c), 0.0);
      s += a.at(r, c);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  auto cols = softmax(x, 0);
  for (std::size_t c = 0; c < 7; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < 5; ++r)
      s += cols.at(r, c);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Tensor, SoftmaxRejectsNaN) {
  EXPECT_THROW(softmax(Tensor::vector({0.0, std::nan("")}), 0),
               std::domain_error);
}

TEST(Tensor, ReductionsAndNorms) {
  EXPECT_EQ(mean(Tensor::vector({2, 4})).item(), 3.0);
  EXPECT_EQ(var(Tensor::vector({5, 5, 5}), 0).item(), 0.0);
  auto n = l2_normalize(Tensor::vector({3, 4}), 0);
  EXPECT_NEAR(n[0], 0.6, 1e-15);
  EXPECT_NEAR(n[1], 0.8, 1e-15);
  auto m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  auto s0 = sum(m, 0);
  EXPECT_EQ(s0.shape(), (Shape{3}));
  EXPECT_EQ(s0[2], 9.0);
  auto s1 = mean(m, 1, true);
  EXPECT_EQ(s1.shape(), (Shape{2, 1}));
  EXPECT_EQ(s1[1], 5.0);
}

TEST(Tensor, DomainErrors) {
  EXPECT_THROW(log(Tensor::vector({1.0, 0.0})), std::domain_error);
  EXPECT_THROW(log(Tensor::vector({-1.0})), std::domain_error);
  EXPECT_THROW(sqrt(Tensor::vector({-1e-3})), std::domain_error);
  EXPECT_THROW(l2_normalize(Tensor::vector({0.0, 0.0}), 0), std::domain_error);
}

TEST(Tensor, BackwardBasics) {
  auto x = Tensor::matrix(2, 2, {1, 2, 3, 4}, true);
  sum(x).backward();
  for (double g : x.grad())
    EXPECT_EQ(g, 1.0);
  // Repeated backward accumulates.
  auto y = Tensor::vector({1, 2}, true);
  auto loss = sum(mul(y, y));
  loss.backward();
  loss.backward();
  EXPECT_EQ(y.grad()[0], 4.0);
  EXPECT_EQ(y.grad()[1], 8.0);
  EXPECT_THROW(mul(y, y).backward(), std::invalid_argument);
}

TEST(Tensor, DisconnectedLeafGetsNoGradient) {
  auto used = Tensor::vector({1, 2}, true);
  auto unused = Tensor::vector({3, 4}, true);
  sum(used).backward();
  EXPECT_FALSE(unused.has_grad());
  for (double g : unused.grad())
    EXPECT_EQ(g, 0.0);
}

TEST(Tensor, NoGradLeafNeverAccumulates) {
  auto frozen = Tensor::vector({1, 2}, false);
  auto live = Tensor::vector({3, 4}, true);
  sum(mul(frozen, live)).backward();
  EXPECT_FALSE(frozen.has_grad());
  EXPECT_TRUE(live.has_grad());
}

TEST(Tensor, NoGradGuardSkipsHistory) {
  auto x = Tensor::vector({1, 2}, true);
  Tensor y;
  {
    NoGradGuard guard;
    y = mul(x, x);
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(grad_enabled());
}

TEST(Tensor, SharedSubexpressionSumsContributions) {
  auto x = Tensor::vector({1.5}, true);
  auto y = mul(x, x);
  auto loss = sum(add(y, mul(y, x))); // x^2 + x^3
  loss.backward();
  EXPECT_NEAR(x.grad()[0], 2 * 1.5 + 3 * 1.5 * 1.5, 1e-14);
}

TEST(Tensor, ReverseTopologicalVisitOrder) {
  auto x = Tensor::vector({1, 2}, true);
  auto a = exp(x);
  auto b = mul(a, x);
  auto loss = sum(b);
  auto order = topological_order(loss);
  ASSERT_EQ(order.back(), loss.node().get());
  auto pos = [&](const Tensor &t) {
    return std::find(order.begin(), order.end(), t.node().get()) - order.begin();
  };
  EXPECT_LT(pos(x), pos(a));
  EXPECT_LT(pos(a), pos(b));
  EXPECT_LT(pos(b), pos(loss));
}

TEST(Tensor, ForwardOpsAreBitwiseDeterministic) {
  std::mt19937_64 gen(21);
  auto x = random_tensor({4, 16}, gen);
  auto w = random_tensor({3, 4, 3}, gen);
  auto run = [&] { return gelu(l2_normalize(conv1d(x, w, 2, 1), 0)); };
  auto a = run();
  auto b = run();
  ASSERT_EQ(a.numel(), b.numel());
  for (std::size_t i = 0; i < a.numel(); ++i)
    EXPECT_EQ(a[i], b[i]);
}

// Every differentiable primitive against central differences on [-1, 1].
class PrimitiveGrad : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGrad, MatchesFiniteDifferences) {
  std::mt19937_64 gen(100 + GetParam());
  auto a = random_tensor({3, 4}, gen);
  auto b = random_tensor({3, 4}, gen);
  auto row = random_tensor({4}, gen);
  auto col = random_tensor({3, 1}, gen);
  auto pos = random_tensor({3, 4}, gen, 0.5, 2.0);
  auto weights = random_tensor({3, 4}, gen);
  weights.set_requires_grad(false);
  auto probe = [&](const Tensor &t) {
    if (t.shape() == weights.shape())
      return sum(mul(t, weights));
    return sum(mul(t, Tensor::full(t.shape(), 0.7)));
  };
  double err = 0.0;
  switch (GetParam()) {
  case 0: err = gradcheck([&] { return probe(add(a, row)); }, {a, row}); break;
  case 1: err = gradcheck([&] { return probe(sub(a, col)); }, {a, col}); break;
  case 2: err = gradcheck([&] { return probe(mul(a, b)); }, {a, b}); break;
  case 3: err = gradcheck([&] { return probe(div(a, pos)); }, {a, pos}); break;
  case 4: err = gradcheck([&] { return probe(softmax(a, 1)); }, {a}); break;
  case 5: err = gradcheck([&] { return probe(softmax(a, 0)); }, {a}); break;
  case 6: err = gradcheck([&] { return probe(log_softmax(a, 1)); }, {a}); break;
  case 7: err = gradcheck([&] { return sum(mul(sum(a, 1), Tensor::vector({1, -2, 3}))); }, {a}); break;
  case 8: err = gradcheck([&] { return probe(sub(a, mean(a, 1, true))); }, {a}); break;
  case 9: err = gradcheck([&] { return sum(mul(var(a, 0), Tensor::vector({1, 2, 3, 4}))); }, {a}); break;
  case 10: err = gradcheck([&] { return probe(exp(a)); }, {a}); break;
  case 11: err = gradcheck([&] { return probe(log(pos)); }, {pos}); break;
  case 12: err = gradcheck([&] { return probe(sqrt(pos)); }, {pos}); break;
  case 13: err = gradcheck([&] { return probe(relu(add_scalar(a, 0.05))); }, {a}); break;
  case 14: err = gradcheck([&] { return probe(gelu(a)); }, {a}); break;
  case 15: err = gradcheck([&] { return probe(sigmoid(a)); }, {a}); break;
  case 16: err = gradcheck([&] { return probe(l2_normalize(a, 1)); }, {a}); break;
  case 17: err = gradcheck([&] { return probe(l2_normalize(a, 0)); }, {a}); break;
  case 18: err = gradcheck([&] { return sum(mul(transpose(a), transpose(weights))); }, {a}); break;
  case 19: err = gradcheck([&] { return probe(reshape(slice(concat({a, b}, 0), 0, 2, 5), {3, 4})); }, {a, b}); break;
  case 20: err = gradcheck([&] { return sum(mul(gather(row, {0, 3, 3, 1, 2, 0}, {2, 3}), Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}))); }, {row}); break;
  case 21: err = gradcheck([&] { return probe(square(abs(add_scalar(a, 2.0)))); }, {a}); break;
  case 22: err = gradcheck([&] { return probe(rsub_scalar(1.0, mul_scalar(a, 3.0))); }, {a}); break;
  case 23: err = gradcheck([&] { return mean(concat({a, b}, 1)); }, {a, b}); break;
  }
  EXPECT_LT(err, kGradTol) << "primitive case " << GetParam();
}

INSTANTIATE_TEST_SUITE_P(AllOps, PrimitiveGrad, ::testing::Range(0, 24));

} // namespace
} // namespace evf
