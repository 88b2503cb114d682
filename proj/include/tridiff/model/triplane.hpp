#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "tridiff/autodiff/nn.hpp"
#include "tridiff/autodiff/ops.hpp"
#include "tridiff/model/params.hpp"

namespace tridiff {

inline constexpr double kDefaultExtent = 1.5;
inline constexpr int kDefaultFrequencies = 6;
inline constexpr int kDefaultDecoderHidden = 64;

// Three channels-last feature maps [N, N, nf]. Plane coordinates are world
// coordinates divided by extent: XY reads (x, y), XZ reads (x, z), YZ reads (y, z),
// the first coordinate running along the map's columns.
template <class S>
struct Triplane {
  ad::Tensor<S> xy, xz, yz;
  double extent = kDefaultExtent;

  std::int64_t resolution() const { return xy.dim(0); }
  std::int64_t features() const { return xy.dim(2); }

  void validate() const {
    if (xy.rank() != 3 || xz.shape() != xy.shape() || yz.shape() != xy.shape() || xy.dim(0) != xy.dim(1))
      throw ad::ShapeError("triplane: planes must share one [N, N, nf] shape, got " + ad::to_string(xy.shape()) +
                           ", " + ad::to_string(xz.shape()) + ", " + ad::to_string(yz.shape()));
    if (!(extent > 0.0)) throw std::invalid_argument("triplane: extent must be positive");
  }
};

// Splits a [3 nf, N, N] (or [1, 3 nf, N, N]) channel stack into three planes.
template <class S>
Triplane<S> triplane_from_channels(const ad::Tensor<S>& stack, double extent = kDefaultExtent) {
  ad::Tensor<S> x = stack;
  if (x.rank() == 4) {
    if (x.dim(0) != 1) throw ad::ShapeError("triplane_from_channels: batch must be 1, got " + ad::to_string(x.shape()));
    x = ad::reshape(x, {x.dim(1), x.dim(2), x.dim(3)});
  }
  if (x.rank() != 3 || x.dim(0) % 3 != 0)
    throw ad::ShapeError("triplane_from_channels: expected [3 nf, N, N], got " + ad::to_string(x.shape()));
  const std::int64_t nf = x.dim(0) / 3;
  Triplane<S> p;
  p.extent = extent;
  p.xy = ad::permute(ad::slice(x, 0, 0, nf), {1, 2, 0});
  p.xz = ad::permute(ad::slice(x, 0, nf, 2 * nf), {1, 2, 0});
  p.yz = ad::permute(ad::slice(x, 0, 2 * nf, 3 * nf), {1, 2, 0});
  p.validate();
  return p;
}

// Sum of the bilinear lookups in the three planes. points: [P, 3] -> [P, nf].
template <class S>
ad::Tensor<S> sample_triplane(const Triplane<S>& planes, const ad::Tensor<S>& points) {
  if (points.rank() != 2 || points.dim(1) != 3)
    throw ad::ShapeError("sample_triplane: points must be [P, 3], got " + ad::to_string(points.shape()));
  const S inv = static_cast<S>(1.0 / planes.extent);
  const auto x = ad::slice(points, 1, 0, 1), y = ad::slice(points, 1, 1, 2), z = ad::slice(points, 1, 2, 3);
  auto coords = [&](const ad::Tensor<S>& a, const ad::Tensor<S>& b) {
    return ad::mul_scalar(ad::concat<S>({a, b}, 1), inv);
  };
  return ad::grid_sample(planes.xy, coords(x, y)) + ad::grid_sample(planes.xz, coords(x, z)) +
         ad::grid_sample(planes.yz, coords(y, z));
}

inline std::int64_t embedding_dim(int n_freq) { return 6 * static_cast<std::int64_t>(n_freq) + 3; }

// Per point: [sin(2^k p), cos(2^k p)] for k = 0..n_freq-1 (3 values each), then p.
// The points are treated as constants.
template <class S>
ad::Tensor<S> positional_embedding(const ad::Tensor<S>& points, int n_freq) {
  if (n_freq < 0) throw std::invalid_argument("positional_embedding: n_freq must be >= 0");
  if (points.rank() != 2 || points.dim(1) != 3)
    throw ad::ShapeError("positional_embedding: points must be [P, 3], got " + ad::to_string(points.shape()));
  const std::int64_t n = points.dim(0), d = embedding_dim(n_freq);
  std::vector<S> out(static_cast<std::size_t>(n * d));
  const auto p = points.data();
  for (std::int64_t i = 0; i < n; ++i) {
    S* row = out.data() + i * d;
    for (int k = 0; k < n_freq; ++k) {
      const S f = static_cast<S>(std::ldexp(1.0, k));
      for (int c = 0; c < 3; ++c) {
        row[6 * k + c] = std::sin(f * p[3 * i + c]);
        row[6 * k + 3 + c] = std::cos(f * p[3 * i + c]);
      }
    }
    for (int c = 0; c < 3; ++c) row[6 * n_freq + c] = p[3 * i + c];
  }
  return ad::Tensor<S>({n, d}, std::move(out));
}

template <class S>
struct FieldSamples {
  ad::Tensor<S> density;  // [P], >= 0
  ad::Tensor<S> color;    // [P, 3], in [0, 1]
};

// Two fully connected layers over [features | embedding]; softplus hidden
// activation, softplus density, sigmoid colour.
template <class S>
struct DecoderParams {
  ad::Tensor<S> w1, b1, w2, b2;
  int n_freq = kDefaultFrequencies;

  std::int64_t features() const { return w1.dim(0) - embedding_dim(n_freq); }

  void collect(const std::string& prefix, NamedParams<S>& out) const {
    out.emplace_back(prefix + "w1", w1);
    out.emplace_back(prefix + "b1", b1);
    out.emplace_back(prefix + "w2", w2);
    out.emplace_back(prefix + "b2", b2);
  }
};

template <class S, class Rng>
DecoderParams<S> init_decoder(Rng& rng, std::int64_t features, int n_freq = kDefaultFrequencies,
                              std::int64_t hidden = kDefaultDecoderHidden) {
  DecoderParams<S> d;
  d.n_freq = n_freq;
  const std::int64_t in = features + embedding_dim(n_freq);
  d.w1 = uniform_param<S>(rng, {in, hidden}, 1.0 / std::sqrt(static_cast<double>(in)));
  d.b1 = constant_param<S>({hidden}, S(0));
  d.w2 = uniform_param<S>(rng, {hidden, 4}, 1.0 / std::sqrt(static_cast<double>(hidden)));
  d.b2 = constant_param<S>({4}, S(0));
  return d;
}

template <class S>
FieldSamples<S> decode(const DecoderParams<S>& dec, const ad::Tensor<S>& points, const ad::Tensor<S>& feat) {
  if (feat.rank() != 2 || feat.dim(0) != points.dim(0) || feat.dim(1) != dec.features())
    throw ad::shape_mismatch("decode", ad::Shape{points.dim(0), dec.features()}, feat.shape());
  const auto input = ad::concat<S>({feat, positional_embedding(points, dec.n_freq)}, 1);
  const auto hidden = ad::softplus(ad::linear(input, dec.w1, dec.b1));
  const auto out = ad::linear(hidden, dec.w2, dec.b2);
  FieldSamples<S> f;
  f.density = ad::reshape(ad::softplus(ad::slice(out, 1, 0, 1)), {points.dim(0)});
  f.color = ad::sigmoid(ad::slice(out, 1, 1, 4));
  return f;
}

// Triplane plus decoder, callable on [P, 3] points.
template <class S>
struct TriplaneField {
  Triplane<S> planes;
  const DecoderParams<S>* decoder = nullptr;

  FieldSamples<S> operator()(const ad::Tensor<S>& points) const {
    return decode(*decoder, points, sample_triplane(planes, points));
  }
};

}  // namespace tridiff
