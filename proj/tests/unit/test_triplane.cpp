#include <gtest/gtest.h>

#include <random>

#include "support/op_suite.hpp"
#include "tridiff/autodiff/grad_check.hpp"
#include "tridiff/model/triplane.hpp"

using namespace tridiff;
using T = ad::Tensor<double>;

namespace {

Triplane<double> random_planes(std::mt19937_64& rng, std::int64_t n, std::int64_t nf, double lo = -1, double hi = 1) {
  Triplane<double> p;
  p.xy = test_support::param(rng, {n, n, nf}, lo, hi);
  p.xz = test_support::param(rng, {n, n, nf}, lo, hi);
  p.yz = test_support::param(rng, {n, n, nf}, lo, hi);
  p.extent = 1.5;
  return p;
}

// Feature stored at integer node (row, col) of a [N, N, nf] plane.
double node(const T& plane, std::int64_t row, std::int64_t col, std::int64_t c) {
  return plane[static_cast<std::size_t>((row * plane.dim(1) + col) * plane.dim(2) + c)];
}

}  // namespace

TEST(Triplane, FromChannelsLayout) {
  const std::int64_t nf = 2, n = 3;
  std::vector<double> v(3 * nf * n * n);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  auto p = triplane_from_channels(T({3 * nf, n, n}, v), 1.5);
  EXPECT_EQ(p.xy.shape(), (ad::Shape{n, n, nf}));
  // stack[c, row, col] = (c * n + row) * n + col
  EXPECT_EQ(node(p.xy, 1, 2, 1), (1 * n + 1) * n + 2);
  EXPECT_EQ(node(p.xz, 0, 1, 0), (2 * n + 0) * n + 1);
  EXPECT_EQ(node(p.yz, 2, 0, 1), (5 * n + 2) * n + 0);
  EXPECT_THROW(triplane_from_channels(T({4, n, n})), ad::ShapeError);
}

TEST(Triplane, NodeLookupSumsStoredFeatures) {
  std::mt19937_64 rng(1);
  auto p = random_planes(rng, 5, 3);
  // Plane coordinate u maps to node (u + 1) / 2 * (N - 1); multiples of 0.5 land on nodes for N = 5.
  const double x = -0.5 * 1.5, y = 1.0 * 1.5, z = 0.0;
  auto f = sample_triplane(p, T({1, 3}, {x, y, z}));
  for (int c = 0; c < 3; ++c) {
    const double expected = node(p.xy, 4, 1, c) + node(p.xz, 2, 1, c) + node(p.yz, 2, 4, c);
    EXPECT_NEAR(f[c], expected, 1e-12);
  }
}

TEST(Triplane, FarOutsideIsZero) {
  std::mt19937_64 rng(2);
  auto p = random_planes(rng, 4, 3);
  auto f = sample_triplane(p, T({1, 3}, {10.0, -7.0, 4.0}));
  for (double v : f.vec()) EXPECT_EQ(v, 0.0);
}

TEST(Triplane, LinearInPlaneFeatures) {
  std::mt19937_64 rng(3);
  auto a = random_planes(rng, 6, 4), b = random_planes(rng, 6, 4);
  Triplane<double> s{a.xy + b.xy, a.xz + b.xz, a.yz + b.yz, 1.5};
  auto pts = T({50, 3}, test_support::uniform_values(rng, 150, -1.8, 1.8));
  auto fs = sample_triplane(s, pts), fa = sample_triplane(a, pts), fb = sample_triplane(b, pts);
  for (std::size_t i = 0; i < fs.vec().size(); ++i) EXPECT_NEAR(fs[i], fa[i] + fb[i], 1e-10);
}

TEST(Triplane, ContinuousUnderTinyDisplacement) {
  std::mt19937_64 rng(4);
  auto p = random_planes(rng, 8, 4, -10, 10);
  std::uniform_real_distribution<double> u(-1.4, 1.4), dir(-1, 1);
  for (int k = 0; k < 200; ++k) {
    Eigen::Vector3d a(u(rng), u(rng), u(rng)), d(dir(rng), dir(rng), dir(rng));
    Eigen::Vector3d b = a + 1e-6 * d.normalized();
    auto fa = sample_triplane(p, T({1, 3}, {a.x(), a.y(), a.z()}));
    auto fb = sample_triplane(p, T({1, 3}, {b.x(), b.y(), b.z()}));
    for (int c = 0; c < 4; ++c) EXPECT_LT(std::abs(fa[c] - fb[c]), 1e-3);
  }
}

TEST(Triplane, PlaneGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  auto p = random_planes(rng, 4, 2);
  auto pts = T({20, 3}, test_support::uniform_values(rng, 60, -1.6, 1.6));
  auto w = test_support::weights_like(rng, {20, 2});
  std::function<T()> f = [=] { return ad::sum(sample_triplane(p, pts) * w); };
  auto r = ad::grad_check<double>(f, {{"xy", p.xy}, {"xz", p.xz}, {"yz", p.yz}}, 1e-5, 1e-4);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
  EXPECT_GT(r.params[0].compared, 0u);
}

TEST(Embedding, OriginAndDimension) {
  for (int nf : {0, 1, 6}) {
    auto e = positional_embedding(T({1, 3}, {0, 0, 0}), nf);
    ASSERT_EQ(e.dim(1), 6 * nf + 3);
    for (int k = 0; k < nf; ++k)
      for (int c = 0; c < 3; ++c) {
        EXPECT_EQ(e[6 * k + c], 0.0);
        EXPECT_EQ(e[6 * k + 3 + c], 1.0);
      }
    for (int c = 0; c < 3; ++c) EXPECT_EQ(e[6 * nf + c], 0.0);
  }
  EXPECT_THROW(positional_embedding(T({1, 3}), -1), std::invalid_argument);
}

TEST(Embedding, SinePeriodPerFrequency) {
  const int nf = 4;
  std::mt19937_64 rng(6);
  auto base = test_support::uniform_values(rng, 3, -1, 1);
  auto e0 = positional_embedding(T({1, 3}, base), nf);
  for (int k = 0; k < nf; ++k) {
    const double f = std::ldexp(1.0, k);
    for (int axis = 0; axis < 3; ++axis) {
      auto moved = base;
      moved[axis] += 2.0 * std::numbers::pi / f;
      auto e1 = positional_embedding(T({1, 3}, moved), nf);
      EXPECT_NEAR(e1[6 * k + axis], e0[6 * k + axis], 1e-12);
      auto half = base;
      half[axis] += std::numbers::pi / f;
      EXPECT_NEAR(positional_embedding(T({1, 3}, half), nf)[6 * k + axis], -e0[6 * k + axis], 1e-12);
    }
  }
}

TEST(Decoder, ZeroWeightsGiveActivationsAtZero) {
  std::mt19937_64 rng(7);
  auto dec = init_decoder<double>(rng, 5);
  for (auto* t : {&dec.w1, &dec.b1, &dec.w2, &dec.b2})
    for (auto& v : t->mutable_data()) v = 0.0;
  auto out = decode(dec, T({2, 3}, {0.1, 0.2, 0.3, -1, 0, 2}), T({2, 5}, 1.0));
  for (double g : out.density.vec()) EXPECT_NEAR(g, std::log(2.0), 1e-15);
  for (double c : out.color.vec()) EXPECT_EQ(c, 0.5);
}

TEST(Decoder, PureFunctionOfInputs) {
  std::mt19937_64 rng(8);
  auto dec = init_decoder<double>(rng, 4);
  auto pts = T({2, 3}, {0.3, -0.2, 0.5, 0.3, -0.2, 0.5});
  auto feat = T({2, 4}, {1, 2, 3, 4, 1, 2, 3, 4});
  auto out = decode(dec, pts, feat);
  EXPECT_EQ(out.density[0], out.density[1]);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(out.color[c], out.color[3 + c]);
}

TEST(Decoder, OutputsStayInRange) {
  std::mt19937_64 rng(9);
  auto dec = init_decoder<double>(rng, 4);
  for (auto* t : {&dec.w1, &dec.w2})
    for (auto& v : t->mutable_data()) v *= 30.0;
  auto pts = T({500, 3}, test_support::uniform_values(rng, 1500, -20, 20));
  auto feat = T({500, 4}, test_support::uniform_values(rng, 2000, -50, 50));
  auto out = decode(dec, pts, feat);
  for (double g : out.density.vec()) EXPECT_GE(g, 0.0);
  for (double c : out.color.vec()) {
    EXPECT_GE(c, 0.0);
    EXPECT_LE(c, 1.0);
  }
}

TEST(Decoder, RejectsWrongFeatureWidth) {
  std::mt19937_64 rng(10);
  auto dec = init_decoder<double>(rng, 4);
  EXPECT_THROW(decode(dec, T({2, 3}), T({2, 5})), ad::ShapeError);
}

TEST(Decoder, DensityGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  auto dec = init_decoder<double>(rng, 3, 2, 8);
  auto pts = T({6, 3}, test_support::uniform_values(rng, 18, -1, 1));
  auto feat = T({6, 3}, test_support::uniform_values(rng, 18, -1, 1));
  std::function<T()> f = [=] { return ad::sum(decode(dec, pts, feat).density); };
  NamedParams<double> params;
  dec.collect("dec.", params);
  auto r = ad::grad_check<double>(f, params, 1e-5, 1e-4);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}
