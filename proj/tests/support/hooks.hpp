#pragma once

#include <memory>
#include <vector>

#include "tridiff/model/denoiser.hpp"

namespace tridiff::test_support {


// Denoiser stand-in that always predicts `target` and records what it was fed.
template <class S>
struct FixedTargetHook {
  ad::Tensor<S> target;
  std::shared_ptr<std::vector<int>> steps = std::make_shared<std::vector<int>>();
  std::shared_ptr<std::vector<std::vector<S>>> inputs = std::make_shared<std::vector<std::vector<S>>>();

  DenoiseFn<S> fn() const {
    return [*this](const ad::Tensor<S>& xt, int t, const Camera&, std::uint64_t) {
      steps->push_back(t);
      inputs->push_back(xt.vec());
      Denoised<S> d;
      d.image = target.detach();
      return d;
    };
  }
};

// Smooth target image in [-0.9, 0.9].
template <class S>
ad::Tensor<S> smooth_target(std::int64_t m) {
  std::vector<S> v(static_cast<std::size_t>(m * m * 3));
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < m; ++j)
      for (int c = 0; c < 3; ++c)
        v[static_cast<std::size_t>((i * m + j) * 3 + c)] = static_cast<S>(0.9 * std::sin(0.3 * i + 0.2 * j + 1.1 * c));
  return ad::Tensor<S>({m, m, 3}, std::move(v));
}

}  // namespace tridiff::test_support
