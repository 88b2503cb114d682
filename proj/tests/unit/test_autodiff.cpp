#include <gtest/gtest.h>

#include <random>

#include "support/op_suite.hpp"
#include "tridiff/autodiff/grad_check.hpp"
#include "tridiff/autodiff/nn.hpp"

using namespace tridiff;
using T = ad::Tensor<double>;

TEST(Autodiff, SquareDerivative) {
  ad::Tape<double> tape;
  ad::TapeScope<double> scope(tape);
  auto x = T::parameter({}, {3.0});
  auto y = x * x;
  tape.backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Autodiff, SumOfIdentityGivesOnes) {
  ad::Tape<double> tape;
  ad::TapeScope<double> scope(tape);
  auto x = T::parameter({2, 3}, {1, 2, 3, 4, 5, 6});
  tape.backward(ad::sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Autodiff, ProductGradients) {
  ad::Tape<double> tape;
  ad::TapeScope<double> scope(tape);
  auto a = T::parameter({2}, {1, 2});
  auto b = T::parameter({2}, {3, 4});
  tape.backward(ad::sum(a * b));
  EXPECT_EQ(a.grad_or_zeros(), (std::vector<double>{3, 4}));
  EXPECT_EQ(b.grad_or_zeros(), (std::vector<double>{1, 2}));
}

TEST(Autodiff, GradientsAccumulateAcrossUses) {
  ad::Tape<double> tape;
  ad::TapeScope<double> scope(tape);
  auto x = T::parameter({}, {5.0});
  tape.backward(x + x);
  EXPECT_EQ(x.grad()[0], 2.0);
}

TEST(Autodiff, BackwardRejectsNonScalar) {
  ad::Tape<double> tape;
  ad::TapeScope<double> scope(tape);
  auto x = T::parameter({2, 2}, {1, 2, 3, 4});
  auto y = x * 2.0;
  try {
    tape.backward(y);
    FAIL() << "expected ShapeError";
  } catch (const ad::ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[2, 2]"), std::string::npos);
  }
}

TEST(Autodiff, DisconnectedParameterKeepsZeroGrad) {
  ad::Tape<double> tape;
  ad::TapeScope<double> scope(tape);
  auto used = T::parameter({2}, {1, 2});
  auto unused = T::parameter({2}, {3, 4});
  tape.backward(ad::sum(ad::exp(used)));
  EXPECT_FALSE(unused.has_grad());
  EXPECT_EQ(unused.grad_or_zeros(), (std::vector<double>{0, 0}));
}

TEST(Autodiff, LeafParameterHasNoGraphNode) {
  auto p = T::parameter({3}, {1, 2, 3});
  EXPECT_TRUE(p.is_leaf());
  ad::Tape<double> tape;
  ad::TapeScope<double> scope(tape);
  auto q = ad::exp(p);
  EXPECT_FALSE(q.is_leaf());
  EXPECT_EQ(tape.size(), 1u);
  EXPECT_EQ(tape.entries()[0].op, "exp");
}

TEST(Autodiff, ShapeMismatchNamesBothShapes) {
  T a({2, 3}), b({4, 5});
  try {
    ad::matmul(a, b);
    FAIL();
  } catch (const ad::ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[4, 5]"), std::string::npos);
  }
  EXPECT_THROW(ad::add(a, b), ad::ShapeError);
}

TEST(Autodiff, NonFiniteForwardNamesOpAndIndex) {
  T x({3}, {1.0, 0.0, 2.0});
  try {
    ad::log(x);
    FAIL();
  } catch (const ad::NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("log"), std::string::npos);
    EXPECT_NE(msg.find("index 1"), std::string::npos);
  }
}

TEST(Autodiff, ForwardValuesIndependentOfRecording) {
  std::mt19937_64 rng(3);
  for (const auto& c : test_support::op_cases()) {
    std::mt19937_64 r1(11), r2(11);
    auto s1 = c.make(r1);
    auto s2 = c.make(r2);
    double untaped = s1.f().item();
    ad::Tape<double> tape;
    ad::TapeScope<double> scope(tape);
    double taped = s2.f().item();
    EXPECT_EQ(untaped, taped) << c.name;
  }
}

TEST(Autodiff, ConvKernelGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(42);
  auto x = T({1, 1, 8, 8}, test_support::uniform_values(rng, 64, -1, 1));
  auto k = test_support::param(rng, {1, 1, 3, 3});
  auto w = test_support::weights_like(rng, {1, 1, 8, 8});
  std::function<T()> f = [=] { return ad::sum(ad::conv2d(x, k, 1, 1) * w); };
  auto report = ad::grad_check<double>(f, std::vector<T>{k}, 1e-3, 1e-4);
  EXPECT_TRUE(report.passed) << report.max_rel_error;
  EXPECT_EQ(report.params[0].compared, 9u);
}

TEST(GradCheck, SigmoidPasses) {
  std::mt19937_64 rng(5);
  auto x = test_support::param(rng, {10}, -3, 3);
  std::function<T()> f = [=] { return ad::sum(ad::sigmoid(x)); };
  EXPECT_TRUE(ad::grad_check<double>(f, std::vector<T>{x}, 1e-5, 1e-4).passed);
}

TEST(GradCheck, ConstantFunctionPasses) {
  auto x = T::parameter({3}, {1, 2, 3});
  std::function<T()> f = [] { return T::scalar(4.0); };
  auto report = ad::grad_check<double>(f, std::vector<T>{x}, 1e-5, 1e-4);
  EXPECT_TRUE(report.passed);
  EXPECT_EQ(report.params[0].compared, 0u);
}

TEST(GradCheck, CorruptedBackwardRuleFails) {
  // y = x^2 with a backward rule claiming dy/dx = 3x.
  auto bad_square = [](const T& x) {
    std::vector<double> y(x.vec().size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * x[i];
    return ad::make_result<double>("bad_square", x.shape(), y, {&x},
                                   [xn = x.node_ptr()](const ad::Node<double>& out) {
                                     if (double* g = ad::grad_of(xn))
                                       for (std::size_t i = 0; i < out.grad.size(); ++i)
                                         g[i] += out.grad[i] * 3.0 * xn->data[i];
                                   });
  };
  auto x = T::parameter({4}, {0.5, -1.0, 2.0, 1.5});
  std::function<T()> f = [=] { return ad::sum(bad_square(x)); };
  auto report = ad::grad_check<double>(f, std::vector<T>{x}, 1e-5, 1e-4);
  EXPECT_FALSE(report.passed);
  EXPECT_GT(report.max_rel_error, 0.1);
}

TEST(GradCheck, NonDeterministicFunctionRejected) {
  auto x = T::parameter({2}, {1, 2});
  auto counter = std::make_shared<int>(0);
  std::function<T()> f = [=] { return ad::sum(x) + static_cast<double>((*counter)++); };
  EXPECT_THROW(ad::grad_check<double>(f, std::vector<T>{x}, 1e-5, 1e-4), ad::NonDeterministicError);
}

TEST(Autodiff, ClampGradientInsideAndOutside) {
  ad::Tape<double> tape;
  ad::TapeScope<double> scope(tape);
  auto x = T::parameter({3}, {-2.0, 0.0, 2.0});
  tape.backward(ad::sum(ad::clamp(x, -1.0, 1.0)));
  EXPECT_EQ(x.grad_or_zeros(), (std::vector<double>{0, 1, 0}));
}

TEST(Autodiff, CumsumExclusiveValues) {
  T x({1, 4}, {1, 2, 3, 4});
  auto y = ad::cumsum(x, 1, true);
  EXPECT_EQ(y.vec(), (std::vector<double>{0, 1, 3, 6}));
  auto z = ad::cumsum(x, 1);
  EXPECT_EQ(z.vec(), (std::vector<double>{1, 3, 6, 10}));
}

TEST(Autodiff, GridSampleHitsNodesExactly) {
  // 2x2 map with one channel; corners of [-1, 1]^2 land on the nodes.
  T input({2, 2, 1}, {1, 2, 3, 4});
  T grid({5, 2}, {-1, -1, 1, -1, -1, 1, 1, 1, 0, 0});
  auto y = ad::grid_sample(input, grid);
  EXPECT_EQ(y.vec(), (std::vector<double>{1, 2, 3, 4, 2.5}));
  T outside({1, 2}, {1.01, 0});
  EXPECT_EQ(ad::grid_sample(input, outside).vec(), (std::vector<double>{0}));
}

// Every op against central differences over 20 seeds.
class OpGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OpGradient, MatchesFiniteDifferences) {
  const auto cases = test_support::op_cases();
  const auto& c = cases.at(GetParam());
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    auto setup = c.make(rng);
    auto report = ad::grad_check<double>(setup.f, setup.params, 1e-5, 1e-4);
    ASSERT_TRUE(report.passed) << c.name << " seed " << seed << " rel err " << report.max_rel_error;
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient,
                         ::testing::Range<std::size_t>(0, test_support::op_cases().size()),
                         [](const ::testing::TestParamInfo<std::size_t>& info) {
                           return test_support::op_cases().at(info.param).name;
                         });
