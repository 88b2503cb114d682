#pragma once

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tridiff/autodiff/tensor.hpp"

namespace tridiff {

template <class S>
using NamedParams = std::vector<std::pair<std::string, ad::Tensor<S>>>;

// Leaf parameter with entries uniform in [-bound, bound].
template <class S, class Rng>
ad::Tensor<S> uniform_param(Rng& rng, ad::Shape shape, double bound) {
  std::uniform_real_distribution<double> d(-bound, bound);
  std::vector<S> v(static_cast<std::size_t>(ad::numel(shape)));
  for (auto& x : v) x = static_cast<S>(d(rng));
  return ad::Tensor<S>::parameter(std::move(shape), std::move(v));
}

template <class S>
ad::Tensor<S> constant_param(ad::Shape shape, S value) {
  std::vector<S> v(static_cast<std::size_t>(ad::numel(shape)), value);
  return ad::Tensor<S>::parameter(std::move(shape), std::move(v));
}

template <class S>
std::int64_t parameter_count(const NamedParams<S>& params) {
  std::int64_t n = 0;
  for (const auto& [_, p] : params) n += p.numel();
  return n;
}

}  // namespace tridiff
