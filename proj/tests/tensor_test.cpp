#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "debias/params.hpp"
#include "debias/tensor.hpp"
#include "support/support.hpp"

using namespace debias;

namespace {

std::vector<double> vec(std::span<const double> s) { return {s.begin(), s.end()}; }

TEST(Tensor, SoftmaxOfEqualLogitsIsUniform) {
  auto y = softmax_lastdim(Tensor::from({3}, {0, 0, 0}));
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Tensor, SigmoidAtZero) { EXPECT_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5); }

TEST(Tensor, ElementwiseMul) {
  EXPECT_EQ(vec(mul(Tensor::from({2}, {1, 2}), Tensor::from({2}, {3, 4})).values()),
            (std::vector<double>{3, 8}));
}

TEST(Tensor, SigmoidStaysFiniteForLargeInputs) {
  auto y = sigmoid(Tensor::from({2}, {-800.0, 800.0}));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 1.0);
}

TEST(Backward, SumOfSquares) {
  auto x = Tensor::from({2}, {1, 2}, true);
  backward(sum(mul(x, x)));
  EXPECT_EQ(vec(x.grad()), (std::vector<double>{2, 4}));
}

TEST(Backward, SigmoidSlopeAtZero) {
  auto x = Tensor::scalar(0.0, true);
  backward(sigmoid(x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.25);
}

TEST(Backward, MatmulTanhChainMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    auto a = Tensor::from({3, 3}, testkit::random_values(9, rng), true);
    auto b = Tensor::from({3, 3}, testkit::random_values(9, rng), true);
    EXPECT_LT(testkit::gradient_error([&] { return sum(tanh(matmul(a, b))); }, {a, b}), 1e-6);
  }
}

TEST(Backward, RepeatedCallsAccumulateLeafGrads) {
  auto x = Tensor::from({2}, {1, 2}, true);
  auto y = sum(mul(x, x));
  backward(y);
  backward(y);
  EXPECT_EQ(vec(x.grad()), (std::vector<double>{4, 8}));
}

TEST(Backward, SharedSubexpressionGetsBothContributions) {
  auto x = Tensor::scalar(3.0, true);
  auto t = mul(x, x);
  backward(add(t, scale(t, 2.0)));  // 3 x^2
  EXPECT_DOUBLE_EQ(x.grad()[0], 18.0);
}

TEST(Backward, NonScalarRootIsAContractError) {
  auto x = Tensor::from({2}, {1, 2}, true);
  EXPECT_THROW(backward(mul(x, x)), ContractError);
}

TEST(Backward, NoGradGuardStopsRecording) {
  auto x = Tensor::from({2}, {1, 2}, true);
  Tensor y;
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    y = sum(mul(x, x));
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.is_leaf());
}

TEST(GradientReversal, ForwardIsIdentity) {
  auto x = Tensor::from({2}, {1, 2}, true);
  EXPECT_EQ(vec(gradient_reversal(x, 0.5).values()), (std::vector<double>{1, 2}));
}

TEST(GradientReversal, NegatesGradient) {
  auto x = Tensor::from({2}, {1, 1}, true);
  backward(sum(gradient_reversal(x, 1.0)));
  EXPECT_EQ(vec(x.grad()), (std::vector<double>{-1, -1}));
}

TEST(GradientReversal, ZeroLambdaBlocksGradient) {
  auto x = Tensor::from({2}, {1, 1}, true);
  backward(sum(gradient_reversal(x, 0.0)));
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 0.0);
}

TEST(GradientReversal, NegativeLambdaRejected) {
  EXPECT_THROW(gradient_reversal(Tensor::scalar(1.0, true), -0.1), DomainError);
}

TEST(Ops, ShapeMismatchNamesOpAndShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4, 2]"), std::string::npos) << msg;
  }
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({2})), ShapeError);
  EXPECT_THROW(reshape(Tensor::zeros({2, 3}), {4}), ShapeError);
}

TEST(Ops, LogOfNonPositiveIsDomainError) {
  EXPECT_THROW(log(Tensor::from({2}, {1.0, 0.0})), DomainError);
  EXPECT_THROW(log(Tensor::from({1}, {-2.0})), DomainError);
  EXPECT_TRUE(std::isnan(log(Tensor::from({1}, {NAN}))[0]));
}

TEST(Ops, EmbeddingLookupRejectsOutOfRangeIds) {
  EXPECT_THROW(embedding_lookup(Tensor::zeros({3, 2}), {3}, {1}), DomainError);
}

TEST(Ops, FullyMaskedSoftmaxRowIsZero) {
  auto y = masked_softmax_lastdim(Tensor::from({2, 2}, {1, 2, 3, 4}), {0, 0, 1, 0});
  EXPECT_EQ(vec(y.values()), (std::vector<double>{0, 0, 1, 0}));
}

TEST(Dropout, IdentityOutsideTraining) {
  auto x = Tensor::from({4}, {1, 2, 3, 4});
  EXPECT_EQ(vec(dropout(x, 0.5, 1, false).values()), vec(x.values()));
  EXPECT_EQ(vec(dropout(x, 0.0, 1, true).values()), vec(x.values()));
}

TEST(Dropout, ScalesKeptEntriesAndIsSeeded) {
  auto x = Tensor::full({1000}, 1.0);
  auto a = dropout(x, 0.25, 9, true);
  auto b = dropout(x, 0.25, 9, true);
  EXPECT_EQ(vec(a.values()), vec(b.values()));
  std::size_t kept = 0;
  for (double v : a.values()) {
    if (v != 0.0) {
      EXPECT_DOUBLE_EQ(v, 1.0 / 0.75);
      ++kept;
    }
  }
  EXPECT_NEAR(static_cast<double>(kept) / 1000.0, 0.75, 0.05);
  EXPECT_THROW(dropout(x, 1.0, 9, true), DomainError);
}

TEST(Gradients, EveryOpMatchesFiniteDifferences) {
  for (const auto& c : testkit::op_gradient_cases()) {
    for (std::uint64_t seed = 0; seed < 10; ++seed)
      EXPECT_LT(c.error(seed), 1e-6) << c.name << " seed " << seed;
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamStore p;
  p.add("x", Tensor::scalar(0.0, true));
  p.get("x").mutable_grad()[0] = 1.0;
  AdamState st;
  st.config.learning_rate = 0.1;
  adam_step(p, st);
  EXPECT_NEAR(p.get("x").item(), -0.1, 1e-8);
  EXPECT_EQ(st.step, 1);
  EXPECT_EQ(p.get("x").grad()[0], 0.0);
}

TEST(Adam, TwoStepsMatchScalarReference) {
  ParamStore p;
  p.add("x", Tensor::scalar(0.3, true));
  AdamState st;
  st.config.learning_rate = 0.05;
  double x = 0.3, m = 0.0, v = 0.0;
  const double g = -0.7, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int t = 1; t <= 2; ++t) {
    p.get("x").mutable_grad()[0] = g;
    adam_step(p, st);
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    x -= 0.05 * mh / (std::sqrt(vh) + eps);
    EXPECT_NEAR(p.get("x").item(), x, 1e-15) << "step " << t;
  }
}

TEST(Adam, MissingGradientNamesParameter) {
  ParamStore p;
  p.add("a", Tensor::scalar(1.0, true));
  p.add("b", Tensor::scalar(1.0, true));
  p.get("a").zero_grad();
  AdamState st;
  try {
    adam_step(p, st);
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("'b'"), std::string::npos);
  }
}

TEST(Adam, MomentShapesFollowParameters) {
  ParamStore p;
  p.add("w", Tensor::zeros({2, 3}, true));
  p.add("b", Tensor::zeros({3}, true));
  p.zero_grad();
  AdamState st;
  adam_step(p, st);
  ASSERT_EQ(st.m.size(), 2u);
  EXPECT_EQ(st.m[0].size(), 6u);
  EXPECT_EQ(st.v[1].size(), 3u);
}

TEST(Adam, ZeroLearningRateLeavesValues) {
  ParamStore p;
  p.add("w", Tensor::from({2}, {0.3, -0.7}, true));
  p.get("w").mutable_grad()[0] = 5.0;
  AdamState st;
  st.config.learning_rate = 0.0;
  adam_step(p, st);
  EXPECT_EQ(vec(p.get("w").values()), (std::vector<double>{0.3, -0.7}));
}

}  // namespace
