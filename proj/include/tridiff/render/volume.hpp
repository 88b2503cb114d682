#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tridiff/autodiff/ops.hpp"
#include "tridiff/model/triplane.hpp"
#include "tridiff/render/camera.hpp"
#include "tridiff/util/rng.hpp"

namespace tridiff {

struct RenderConfig {
  int n_coarse = 32;
  int n_fine = 32;
  Eigen::Vector3d background = Eigen::Vector3d::Ones();
  bool stochastic = true;  // false: bin midpoints and evenly spaced inverse-CDF quantiles

  void validate() const {
    if (n_coarse < 1) throw std::invalid_argument("render config: n_coarse must be >= 1");
    if (n_fine < 0) throw std::invalid_argument("render config: n_fine must be >= 0");
  }
};

// Segment boundaries around sorted depths: near, midpoints of neighbours, far.
inline std::vector<double> segment_edges(std::span<const double> depths, double near, double far) {
  std::vector<double> e(depths.size() + 1);
  e.front() = near;
  e.back() = far;
  for (std::size_t i = 1; i < depths.size(); ++i) e[i] = 0.5 * (depths[i - 1] + depths[i]);
  return e;
}

inline std::vector<double> segment_lengths(std::span<const double> depths, double near, double far) {
  const auto e = segment_edges(depths, near, far);
  std::vector<double> d(depths.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = e[i + 1] - e[i];
  return d;
}

// One depth per equal-width bin of [near, far]; bin midpoints when rng is null.
inline std::vector<double> stratified_samples(double near, double far, int n, std::mt19937_64* rng) {
  if (n < 1) throw std::invalid_argument("stratified_samples: need at least one sample");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double width = (far - near) / n;
  std::vector<double> t(n);
  for (int i = 0; i < n; ++i) t[i] = near + width * (i + (rng ? unit(*rng) : 0.5));
  return t;
}

inline std::vector<double> stratified_samples(const Ray& ray, int n, std::mt19937_64* rng) {
  return stratified_samples(ray.near, ray.far, n, rng);
}

// Sorted merge; equal neighbours are pushed apart by one ulp so depths stay strictly increasing.
inline std::vector<double> merge_depths(std::vector<double> a, std::span<const double> b) {
  a.insert(a.end(), b.begin(), b.end());
  std::sort(a.begin(), a.end());
  for (std::size_t i = 1; i < a.size(); ++i)
    if (a[i] <= a[i - 1]) a[i] = std::nextafter(a[i - 1], std::numeric_limits<double>::infinity());
  return a;
}

// Inverse-CDF draws from the piecewise-constant density that gives coarse sample i
// the mass weights[i] spread over its segment. Quantiles are stratified (one per
// 1/n_fine slice), or the slice centres when rng is null. Returns only the new
// depths; a weight vector with no positive mass falls back to stratified sampling.
inline std::vector<double> fine_samples(std::span<const double> coarse, std::span<const double> weights, int n_fine,
                                        double near, double far, std::mt19937_64* rng) {
  if (coarse.size() != weights.size()) throw std::invalid_argument("importance_samples: depth/weight size mismatch");
  if (n_fine <= 0) return {};
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("importance_samples: weights must be finite and >= 0");
    total += w;
  }
  if (!(total > 0.0)) return stratified_samples(near, far, n_fine, rng);
  const auto edges = segment_edges(coarse, near, far);
  std::vector<double> cdf(weights.size() + 1, 0.0);
  for (std::size_t i = 0; i < weights.size(); ++i) cdf[i + 1] = cdf[i] + weights[i] / total;
  cdf.back() = 1.0;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> out(n_fine);
  for (int k = 0; k < n_fine; ++k) {
    const double u = (k + (rng ? unit(*rng) : 0.5)) / n_fine;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    std::size_t bin = static_cast<std::size_t>(std::distance(cdf.begin(), it)) - 1;
    bin = std::min(bin, weights.size() - 1);
    while (weights[bin] <= 0.0 && bin + 1 < weights.size()) ++bin;  // u landed on a boundary of an empty bin
    const double frac = std::clamp((u - cdf[bin]) / (cdf[bin + 1] - cdf[bin]), 0.0, 1.0);
    out[k] = edges[bin] + frac * (edges[bin + 1] - edges[bin]);
  }
  return out;
}

// Coarse and fine depths merged into one sorted list.
inline std::vector<double> importance_samples(std::span<const double> coarse, std::span<const double> weights,
                                              int n_fine, double near, double far, std::mt19937_64* rng) {
  return merge_depths(std::vector<double>(coarse.begin(), coarse.end()),
                      fine_samples(coarse, weights, n_fine, near, far, rng));
}

// Sample depths and segment lengths for a batch of rays, row-major [rays, per_ray].
struct SamplePlan {
  std::int64_t rays = 0;
  std::int64_t per_ray = 0;
  std::vector<double> depths;
  std::vector<double> deltas;
  std::vector<double> far;  // per ray

  bool empty() const { return rays == 0; }
};

class RayError : public ad::NumericError {
 public:
  RayError(std::int64_t ray, const std::string& what) : ad::NumericError(what), ray_(ray) {}
  std::int64_t ray() const { return ray_; }

 private:
  std::int64_t ray_;
};

inline void validate_plan(const SamplePlan& plan) {
  if (static_cast<std::int64_t>(plan.depths.size()) != plan.rays * plan.per_ray ||
      plan.deltas.size() != plan.depths.size() || static_cast<std::int64_t>(plan.far.size()) != plan.rays)
    throw std::invalid_argument("sample plan: inconsistent sizes");
  for (std::int64_t r = 0; r < plan.rays; ++r)
    for (std::int64_t k = 0; k < plan.per_ray; ++k) {
      const std::size_t i = static_cast<std::size_t>(r * plan.per_ray + k);
      if (!(plan.deltas[i] > 0.0))
        throw std::invalid_argument("sample plan: ray " + std::to_string(r) + " has a non-positive segment length");
      if (k > 0 && !(plan.depths[i] > plan.depths[i - 1]))
        throw std::invalid_argument("sample plan: ray " + std::to_string(r) + " depths are not strictly increasing");
    }
}

template <class S>
void check_density(std::span<const S> dens, std::int64_t per_ray) {
  for (std::size_t i = 0; i < dens.size(); ++i)
    if (!std::isfinite(static_cast<double>(dens[i]))) {
      const auto ray = static_cast<std::int64_t>(i) / per_ray;
      throw RayError(ray, "composite: non-finite density on ray " + std::to_string(ray) + " sample " +
                              std::to_string(static_cast<std::int64_t>(i) % per_ray));
    }
}

template <class S>
struct Composite {
  ad::Tensor<S> rgb;        // [R, 3]
  ad::Tensor<S> opacity;    // [R]
  ad::Tensor<S> weights;    // [R, K]
  std::vector<double> depth;  // [R], no gradient
};

inline constexpr double kDepthOpacityFloor = 1e-3;

// alpha_i = 1 - exp(-density_i delta_i); T_i = exp(-sum_{j<i} density_j delta_j); w_i = T_i alpha_i.
// density: [R, K], color: [R, K, 3].
template <class S>
Composite<S> composite(const ad::Tensor<S>& density, const ad::Tensor<S>& color, const SamplePlan& plan,
                       const Eigen::Vector3d& background) {
  const std::int64_t R = plan.rays, K = plan.per_ray;
  if (density.shape() != ad::Shape{R, K}) throw ad::shape_mismatch("composite", ad::Shape{R, K}, density.shape());
  if (color.shape() != ad::Shape{R, K, 3}) throw ad::shape_mismatch("composite", ad::Shape{R, K, 3}, color.shape());
  validate_plan(plan);
  check_density<S>(density.data(), K);

  std::vector<S> delta(plan.deltas.begin(), plan.deltas.end());
  const auto sd = ad::mul(density, ad::Tensor<S>({R, K}, std::move(delta)));
  const auto alpha = ad::add_scalar(ad::neg(ad::exp(ad::neg(sd))), S(1));
  const auto trans = ad::exp(ad::neg(ad::cumsum(sd, 1, true)));
  Composite<S> out;
  out.weights = ad::mul(trans, alpha);
  out.opacity = ad::sum(out.weights, 1);
  const ad::Tensor<S> bg({3}, std::vector<S>{static_cast<S>(background.x()), static_cast<S>(background.y()),
                                             static_cast<S>(background.z())});
  const auto lit = ad::sum(ad::mul(ad::reshape(out.weights, {R, K, 1}), color), 1);
  const auto rest = ad::add_scalar(ad::neg(ad::reshape(out.opacity, {R, 1})), S(1));
  out.rgb = ad::add(lit, ad::mul(rest, bg));

  out.depth.resize(static_cast<std::size_t>(R));
  const auto w = out.weights.data();
  for (std::int64_t r = 0; r < R; ++r) {
    double acc = 0.0, tw = 0.0;
    for (std::int64_t k = 0; k < K; ++k) {
      const double wk = w[r * K + k];
      acc += wk * plan.depths[r * K + k];
      tw += wk;
    }
    out.depth[r] = tw < kDepthOpacityFloor ? plan.far[r] : acc / std::max(tw, 1e-10);
  }
  return out;
}

template <class S>
struct RenderOutput {
  ad::Tensor<S> rgb;      // [M, M, 3]
  ad::Tensor<S> opacity;  // [M, M]
  std::vector<double> depth;  // M * M, row-major
  int resolution = 0;
};

template <class S>
ad::Tensor<S> plan_points(const std::vector<Ray>& rays, const SamplePlan& plan) {
  std::vector<S> pts(static_cast<std::size_t>(plan.rays * plan.per_ray * 3));
  for (std::int64_t r = 0; r < plan.rays; ++r)
    for (std::int64_t k = 0; k < plan.per_ray; ++k) {
      const std::size_t i = static_cast<std::size_t>(r * plan.per_ray + k);
      const Eigen::Vector3d p = rays[r].origin + plan.depths[i] * rays[r].direction;
      for (int c = 0; c < 3; ++c) pts[3 * i + c] = static_cast<S>(p[c]);
    }
  return ad::Tensor<S>({plan.rays * plan.per_ray, 3}, std::move(pts));
}

template <class S>
SamplePlan plan_from_depths(const std::vector<Ray>& rays, std::vector<std::vector<double>> per_ray) {
  SamplePlan plan;
  plan.rays = static_cast<std::int64_t>(rays.size());
  plan.per_ray = per_ray.empty() ? 0 : static_cast<std::int64_t>(per_ray.front().size());
  for (std::size_t r = 0; r < rays.size(); ++r) {
    const auto d = segment_lengths(per_ray[r], rays[r].near, rays[r].far);
    plan.depths.insert(plan.depths.end(), per_ray[r].begin(), per_ray[r].end());
    plan.deltas.insert(plan.deltas.end(), d.begin(), d.end());
    plan.far.push_back(rays[r].far);
  }
  return plan;
}

// Evaluates a field on the plan's points and composites; field maps [P, 3] points
// to FieldSamples.
template <class S, class Field>
Composite<S> shade(const Field& field, const std::vector<Ray>& rays, const SamplePlan& plan,
                   const Eigen::Vector3d& background) {
  const FieldSamples<S> f = field(plan_points<S>(rays, plan));
  if (f.density.numel() == plan.rays * plan.per_ray) check_density<S>(f.density.data(), plan.per_ray);
  return composite(ad::reshape(f.density, {plan.rays, plan.per_ray}),
                   ad::reshape(f.color, {plan.rays, plan.per_ray, 3}), plan, background);
}

// Coarse stratified pass (no gradient) followed by importance sampling. Each ray
// draws from its own stream derived from (seed, ray index).
template <class S, class Field>
SamplePlan plan_samples(const Field& field, const std::vector<Ray>& rays, const RenderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::vector<std::mt19937_64> streams;
  std::vector<std::vector<double>> coarse(rays.size());
  for (std::size_t r = 0; r < rays.size(); ++r) {
    if (cfg.stochastic) streams.emplace_back(derive_seed(seed, {static_cast<std::uint64_t>(r)}));
    coarse[r] = stratified_samples(rays[r], cfg.n_coarse, cfg.stochastic ? &streams[r] : nullptr);
  }
  SamplePlan coarse_plan = plan_from_depths<S>(rays, coarse);
  if (cfg.n_fine == 0) return coarse_plan;
  std::vector<double> weights;
  {
    ad::NoGradScope<S> no_grad;
    const auto c = shade<S>(field, rays, coarse_plan, cfg.background);
    weights.assign(c.weights.data().begin(), c.weights.data().end());
  }
  std::vector<std::vector<double>> merged(rays.size());
  for (std::size_t r = 0; r < rays.size(); ++r) {
    std::span<const double> w(weights.data() + r * cfg.n_coarse, static_cast<std::size_t>(cfg.n_coarse));
    merged[r] = importance_samples(coarse[r], w, cfg.n_fine, rays[r].near, rays[r].far,
                                   cfg.stochastic ? &streams[r] : nullptr);
  }
  return plan_from_depths<S>(rays, std::move(merged));
}

// Renders every pixel of cam. A non-empty `plan` fixes the sample depths (used to
// hold sample placement constant); an empty one is filled with the plan used.
template <class S, class Field>
RenderOutput<S> render(const Field& field, const Camera& cam, const RenderConfig& cfg, std::uint64_t seed,
                       SamplePlan* plan = nullptr) {
  const auto rays = camera_rays(cam);
  SamplePlan local;
  SamplePlan& p = plan ? *plan : local;
  try {
    if (p.empty()) p = plan_samples<S>(field, rays, cfg, seed);
    if (p.rays != static_cast<std::int64_t>(rays.size()))
      throw std::invalid_argument("render: sample plan covers " + std::to_string(p.rays) + " rays, camera has " +
                                  std::to_string(rays.size()));
    auto c = shade<S>(field, rays, p, cfg.background);
    const std::int64_t M = cam.resolution;
    RenderOutput<S> out;
    out.resolution = cam.resolution;
    out.rgb = ad::reshape(c.rgb, {M, M, 3});
    out.opacity = ad::reshape(c.opacity, {M, M});
    out.depth = std::move(c.depth);
    return out;
  } catch (const RayError& e) {
    const std::int64_t i = e.ray() / cam.resolution, j = e.ray() % cam.resolution;
    throw ad::NumericError("render: pixel (" + std::to_string(i) + ", " + std::to_string(j) + "): " + e.what());
  }
}

}  // namespace tridiff
