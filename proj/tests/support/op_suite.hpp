#pragma once

// Randomised gradient-check cases for every autodiff op. Each case builds a
// scalar objective sum(op(inputs) * W) with a fixed random weighting W so that
// no op's gradient collapses to a trivial constant.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "tridiff/autodiff/grad_check.hpp"
#include "tridiff/autodiff/nn.hpp"
#include "tridiff/autodiff/ops.hpp"

namespace tridiff::test_support {

using T = ad::Tensor<double>;

struct OpSetup {
  std::function<T()> f;
  std::vector<T> params;
};

struct OpCase {
  std::string name;
  std::function<OpSetup(std::mt19937_64&)> make;
};

inline std::vector<double> uniform_values(std::mt19937_64& rng, std::int64_t n, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = d(rng);
  return v;
}

// Values in [lo, hi] kept at least `gap` away from `kink`.
inline std::vector<double> away_from(std::mt19937_64& rng, std::int64_t n, double lo, double hi,
                                     double kink, double gap) {
  auto v = uniform_values(rng, n, lo, hi);
  for (auto& x : v)
    if (std::abs(x - kink) < gap) x = kink + (x < kink ? -gap : gap);
  return v;
}

inline T param(std::mt19937_64& rng, ad::Shape shape, double lo = -1.0, double hi = 1.0) {
  auto n = ad::numel(shape);
  return T::parameter(std::move(shape), uniform_values(rng, n, lo, hi));
}

inline T weights_like(std::mt19937_64& rng, const ad::Shape& shape) {
  return T(shape, uniform_values(rng, ad::numel(shape), -1.0, 1.0));
}

// sum(y * W) where W is drawn once per case.
inline std::function<T()> weighted(std::mt19937_64& rng, const ad::Shape& out_shape,
                                   std::function<T()> body) {
  auto w = weights_like(rng, out_shape);
  return [w, body] { return ad::sum(ad::mul(body(), w)); };
}

inline std::vector<OpCase> op_cases() {
  using namespace ad;
  std::vector<OpCase> cases;
  auto binary_case = [&](std::string name, auto op, double blo, double bhi) {
    cases.push_back({name, [op, blo, bhi](std::mt19937_64& rng) {
                       auto a = param(rng, {3, 4});
                       auto b = param(rng, {3, 4}, blo, bhi);
                       return OpSetup{weighted(rng, {3, 4}, [=] { return op(a, b); }), {a, b}};
                     }});
  };
  binary_case("add", [](const T& a, const T& b) { return add(a, b); }, -1.0, 1.0);
  binary_case("sub", [](const T& a, const T& b) { return sub(a, b); }, -1.0, 1.0);
  binary_case("mul", [](const T& a, const T& b) { return mul(a, b); }, -1.0, 1.0);
  binary_case("div", [](const T& a, const T& b) { return div(a, b); }, 0.5, 2.0);

  cases.push_back({"broadcast", [](std::mt19937_64& rng) {
                     auto a = param(rng, {2, 3, 4});
                     auto b = param(rng, {3, 1});
                     auto c = param(rng, {4});
                     return OpSetup{weighted(rng, {2, 3, 4}, [=] { return mul(add(a, b), c); }), {a, b, c}};
                   }});
  cases.push_back({"scalar", [](std::mt19937_64& rng) {
                     auto a = param(rng, {5});
                     return OpSetup{weighted(rng, {5}, [=] { return (2.5 * a + 0.3) / 1.7 - 4.0; }), {a}};
                   }});
  cases.push_back({"neg", [](std::mt19937_64& rng) {
                     auto a = param(rng, {6});
                     return OpSetup{weighted(rng, {6}, [=] { return neg(a); }), {a}};
                   }});

  auto unary_case = [&](std::string name, auto op, double lo, double hi, double kink = 1e9) {
    cases.push_back({name, [op, lo, hi, kink](std::mt19937_64& rng) {
                       auto a = T::parameter({2, 5}, away_from(rng, 10, lo, hi, kink, 0.05));
                       return OpSetup{weighted(rng, {2, 5}, [=] { return op(a); }), {a}};
                     }});
  };
  unary_case("exp", [](const T& a) { return ad::exp(a); }, -2.0, 2.0);
  unary_case("log", [](const T& a) { return ad::log(a); }, 0.3, 3.0);
  unary_case("pow", [](const T& a) { return ad::pow(a, 1.7); }, 0.3, 3.0);
  unary_case("abs", [](const T& a) { return ad::abs(a); }, -2.0, 2.0, 0.0);
  unary_case("relu", [](const T& a) { return ad::relu(a); }, -2.0, 2.0, 0.0);
  unary_case("sigmoid", [](const T& a) { return ad::sigmoid(a); }, -4.0, 4.0);
  unary_case("softplus", [](const T& a) { return ad::softplus(a); }, -4.0, 4.0);
  unary_case("silu", [](const T& a) { return ad::silu(a); }, -4.0, 4.0);
  cases.push_back({"clamp", [](std::mt19937_64& rng) {
                     auto v = away_from(rng, 12, -2.0, 2.0, -0.5, 0.05);
                     for (auto& x : v)
                       if (std::abs(x - 0.8) < 0.05) x += 0.1;
                     auto a = T::parameter({12}, v);
                     return OpSetup{weighted(rng, {12}, [=] { return clamp(a, -0.5, 0.8); }), {a}};
                   }});

  cases.push_back({"matmul", [](std::mt19937_64& rng) {
                     auto a = param(rng, {3, 4});
                     auto b = param(rng, {4, 5});
                     return OpSetup{weighted(rng, {3, 5}, [=] { return matmul(a, b); }), {a, b}};
                   }});
  cases.push_back({"linear", [](std::mt19937_64& rng) {
                     auto x = param(rng, {6, 4});
                     auto w = param(rng, {4, 3});
                     auto b = param(rng, {3});
                     return OpSetup{weighted(rng, {6, 3}, [=] { return linear(x, w, b); }), {x, w, b}};
                   }});
  cases.push_back({"conv2d_stride1", [](std::mt19937_64& rng) {
                     auto x = param(rng, {2, 3, 5, 5});
                     auto w = param(rng, {4, 3, 3, 3});
                     return OpSetup{weighted(rng, {2, 4, 5, 5}, [=] { return conv2d(x, w, 1, 1); }), {x, w}};
                   }});
  cases.push_back({"conv2d_stride2", [](std::mt19937_64& rng) {
                     auto x = param(rng, {1, 2, 6, 6});
                     auto w = param(rng, {3, 2, 3, 3});
                     return OpSetup{weighted(rng, {1, 3, 3, 3}, [=] { return conv2d(x, w, 2, 1); }), {x, w}};
                   }});
  cases.push_back({"conv2d_nopad", [](std::mt19937_64& rng) {
                     auto x = param(rng, {1, 2, 5, 4});
                     auto w = param(rng, {2, 2, 2, 3});
                     return OpSetup{weighted(rng, {1, 2, 4, 2}, [=] { return conv2d(x, w, 1, 0); }), {x, w}};
                   }});
  cases.push_back({"upsample_nearest", [](std::mt19937_64& rng) {
                     auto x = param(rng, {1, 2, 3, 3});
                     return OpSetup{weighted(rng, {1, 2, 6, 6}, [=] { return upsample_nearest(x, 2); }), {x}};
                   }});
  cases.push_back({"upsample_bilinear", [](std::mt19937_64& rng) {
                     auto x = param(rng, {1, 2, 3, 4});
                     return OpSetup{weighted(rng, {1, 2, 6, 8}, [=] { return upsample_bilinear(x, 2); }), {x}};
                   }});
  cases.push_back({"grid_sample", [](std::mt19937_64& rng) {
                     auto input = param(rng, {4, 5, 3});
                     // Keep lookups away from cell edges where the coordinate gradient jumps.
                     std::vector<double> uv;
                     std::uniform_real_distribution<double> cell(0.05, 0.95);
                     std::uniform_int_distribution<int> ix(0, 3), iy(0, 2);
                     for (int p = 0; p < 7; ++p) {
                       uv.push_back(-1.0 + 2.0 * (ix(rng) + cell(rng)) / 4.0);
                       uv.push_back(-1.0 + 2.0 * (iy(rng) + cell(rng)) / 3.0);
                     }
                     uv.push_back(1.5);  // outside: contributes zero
                     uv.push_back(0.1);
                     auto grid = T::parameter({8, 2}, uv);
                     return OpSetup{weighted(rng, {8, 3}, [=] { return grid_sample(input, grid); }), {input, grid}};
                   }});
  cases.push_back({"group_norm", [](std::mt19937_64& rng) {
                     auto x = param(rng, {2, 4, 3, 3});
                     return OpSetup{weighted(rng, {2, 4, 3, 3}, [=] { return group_norm(x, 2); }), {x}};
                   }});
  cases.push_back({"add_channel_bias", [](std::mt19937_64& rng) {
                     auto x = param(rng, {2, 3, 2, 2});
                     auto b = param(rng, {3});
                     return OpSetup{weighted(rng, {2, 3, 2, 2}, [=] { return add_channel_bias(x, b); }), {x, b}};
                   }});
  cases.push_back({"channel_affine", [](std::mt19937_64& rng) {
                     auto x = param(rng, {2, 3, 2, 2});
                     auto a = param(rng, {3});
                     auto s = param(rng, {3});
                     return OpSetup{weighted(rng, {2, 3, 2, 2}, [=] { return channel_affine(x, a, s); }), {x, a, s}};
                   }});
  cases.push_back({"softmax", [](std::mt19937_64& rng) {
                     auto x = param(rng, {3, 5}, -2.0, 2.0);
                     return OpSetup{weighted(rng, {3, 5}, [=] { return softmax(x); }), {x}};
                   }});
  cases.push_back({"sum", [](std::mt19937_64& rng) {
                     auto x = param(rng, {3, 4});
                     return OpSetup{[=] { return ad::pow(ad::sum(x) + 5.0, 2.0); }, {x}};
                   }});
  cases.push_back({"mean", [](std::mt19937_64& rng) {
                     auto x = param(rng, {3, 4});
                     return OpSetup{[=] { return ad::pow(ad::mean(x) + 5.0, 2.0); }, {x}};
                   }});
  cases.push_back({"sum_axis", [](std::mt19937_64& rng) {
                     auto x = param(rng, {2, 3, 4});
                     return OpSetup{weighted(rng, {2, 4}, [=] { return ad::pow(ad::sum(x, 1) + 5.0, 2.0); }), {x}};
                   }});
  cases.push_back({"mean_axis", [](std::mt19937_64& rng) {
                     auto x = param(rng, {2, 3, 4});
                     return OpSetup{weighted(rng, {2, 3, 1}, [=] { return ad::pow(ad::mean(x, -1, true) + 5.0, 2.0); }), {x}};
                   }});
  cases.push_back({"cumsum", [](std::mt19937_64& rng) {
                     auto x = param(rng, {2, 5});
                     return OpSetup{weighted(rng, {2, 5}, [=] { return ad::pow(ad::cumsum(x, 1) + 5.0, 2.0); }), {x}};
                   }});
  cases.push_back({"cumsum_exclusive", [](std::mt19937_64& rng) {
                     auto x = param(rng, {4, 3});
                     return OpSetup{weighted(rng, {4, 3}, [=] { return ad::exp(ad::cumsum(x, 0, true)); }), {x}};
                   }});
  cases.push_back({"concat", [](std::mt19937_64& rng) {
                     auto a = param(rng, {2, 3});
                     auto b = param(rng, {2, 2});
                     return OpSetup{weighted(rng, {2, 5}, [=] { return ad::exp(concat<double>({a, b}, 1)); }), {a, b}};
                   }});
  cases.push_back({"slice", [](std::mt19937_64& rng) {
                     auto a = param(rng, {3, 6});
                     return OpSetup{weighted(rng, {3, 2}, [=] { return ad::exp(slice(a, 1, 2, 4)); }), {a}};
                   }});
  cases.push_back({"reshape", [](std::mt19937_64& rng) {
                     auto a = param(rng, {3, 4});
                     return OpSetup{weighted(rng, {2, 6}, [=] { return ad::exp(reshape(a, {2, -1})); }), {a}};
                   }});
  cases.push_back({"permute", [](std::mt19937_64& rng) {
                     auto a = param(rng, {2, 3, 4});
                     return OpSetup{weighted(rng, {4, 2, 3}, [=] { return ad::exp(permute(a, {2, 0, 1})); }), {a}};
                   }});
  return cases;
}

}  // namespace tridiff::test_support
