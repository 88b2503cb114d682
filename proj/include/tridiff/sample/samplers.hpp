#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tridiff/diffusion/schedule.hpp"
#include "tridiff/model/denoiser.hpp"
#include "tridiff/util/rng.hpp"

namespace tridiff {

// Canonical reverse-process viewpoint: azimuth 0, elevation 30 degrees.
inline Camera canonical_camera(int resolution, const Eigen::Vector3d& target = Eigen::Vector3d(0.0, 0.0, 0.5)) {
  return make_camera(resolution, look_at_pose(0.0, radians(30.0), camera_defaults::kRadius, target));
}

struct SamplerConfig {
  bool keep_trace = false;  // store every denoiser input x_t
};

template <class S>
struct SampleRun {
  std::uint64_t seed = 0;
  Camera view;
  int start_step = 0;                  // T for generation, t_r for reconstruction
  std::vector<int> call_steps;         // t of each denoiser call, in order
  std::vector<std::vector<S>> trace;   // x_t fed to each call (keep_trace)
  Triplane<S> triplane;                // from the last denoiser call
  ad::Tensor<S> x0_hat;                // last clamped prediction
  ad::Tensor<S> image;                 // final x_0, [M, M, 3] in [-1, 1]

  int denoiser_calls() const { return static_cast<int>(call_steps.size()); }
};

// Pixel mask, 1 = unknown (to be generated), 0 = known.
struct Mask {
  int resolution = 0;
  std::vector<std::uint8_t> unknown;

  static Mask filled(int m, std::uint8_t value) { return {m, std::vector<std::uint8_t>(static_cast<std::size_t>(m) * m, value)}; }
  std::uint8_t at(int i, int j) const { return unknown[static_cast<std::size_t>(i) * resolution + j]; }
};

// Square of side round(0.4 M) whose centre lies in the centred square of side 5M/16;
// the top-left corner is uniform over the positions satisfying that.
template <class Rng>
Mask mask_for_eval(Rng& rng, int M) {
  if (M < 16) throw std::invalid_argument("mask_for_eval: resolution must be >= 16");
  const int side = static_cast<int>(std::lround(0.4 * M));
  const double half_region = 5.0 * M / 32.0;
  std::vector<int> tops;
  for (int top = 0; top + side <= M; ++top)
    if (std::abs(top + side / 2.0 - M / 2.0) <= half_region) tops.push_back(top);
  std::uniform_int_distribution<std::size_t> pick(0, tops.size() - 1);
  const int r0 = tops[pick(rng)], c0 = tops[pick(rng)];
  auto mask = Mask::filled(M, 0);
  for (int i = r0; i < r0 + side; ++i)
    for (int j = c0; j < c0 + side; ++j) mask.unknown[static_cast<std::size_t>(i) * M + j] = 1;
  return mask;
}

namespace detail {

template <class S>
std::vector<S> clamp_unit(std::span<const S> x) {
  std::vector<S> out(x.begin(), x.end());
  for (auto& v : out) v = std::clamp(v, S(-1), S(1));
  return out;
}

// Stream seeds: noise for x_T and ancestral steps, the renderer, and the
// inpainting replacement noise are independent.
inline std::uint64_t chain_seed(std::uint64_t seed) { return derive_seed(seed, {0}); }
inline std::uint64_t render_seed(std::uint64_t seed, int t) { return derive_seed(seed, {1, static_cast<std::uint64_t>(t)}); }
inline std::uint64_t replace_seed(std::uint64_t seed) { return derive_seed(seed, {2}); }

// Called after each ancestral step with the new x_{t-1}; may edit it in place.
template <class S>
using StepHook = std::function<void(int t_minus_1, std::vector<S>& x)>;

// Runs t = start..1 from x_start, recording calls into run.
template <class S>
void reverse_chain(const DenoiseFn<S>& g, const diffusion::NoiseSchedule& sched, std::vector<S> x, int start,
                   std::mt19937_64& rng, SampleRun<S>& run, const SamplerConfig& cfg, const StepHook<S>& hook = {}) {
  const std::int64_t M = run.view.resolution;
  ad::NoGradScope<S> no_grad;
  for (int t = start; t >= 1; --t) {
    if (cfg.keep_trace) run.trace.push_back(x);
    run.call_steps.push_back(t);
    auto out = g(ad::Tensor<S>({M, M, 3}, x), t, run.view, render_seed(run.seed, t));
    const auto x0_hat = clamp_unit<S>(out.image.data());
    const auto noise = standard_normal<S>(rng, x.size());
    x = diffusion::ancestral_step<S>(x, x0_hat, t, noise, sched);
    if (hook) hook(t - 1, x);
    run.triplane = std::move(out.triplane);
    run.x0_hat = ad::Tensor<S>({M, M, 3}, x0_hat);
  }
  run.image = ad::Tensor<S>({M, M, 3}, std::move(x));
}

}  // namespace detail

// x_T ~ N(0, I), then T ancestral steps with a fixed viewpoint.
template <class S>
SampleRun<S> generate(const DenoiseFn<S>& g, const diffusion::NoiseSchedule& sched, const Camera& view,
                      std::uint64_t seed, const SamplerConfig& cfg = {}) {
  SampleRun<S> run;
  run.seed = seed;
  run.view = view;
  run.start_step = sched.steps;
  std::mt19937_64 rng(detail::chain_seed(seed));
  auto x = standard_normal<S>(rng, static_cast<std::size_t>(3 * view.resolution * view.resolution));
  detail::reverse_chain(g, sched, std::move(x), sched.steps, rng, run, cfg);
  return run;
}

// t_r = 0: one denoiser pass on the clean image. Otherwise noise to t_r and run
// the reverse chain from there.
template <class S>
SampleRun<S> reconstruct(const DenoiseFn<S>& g, const diffusion::NoiseSchedule& sched, const ad::Tensor<S>& image,
                         const Camera& view, int t_r, std::uint64_t seed, const SamplerConfig& cfg = {}) {
  sched.check_step(t_r, 0, "reconstruct");
  const std::int64_t M = view.resolution;
  if (image.shape() != ad::Shape{M, M, 3}) throw ad::shape_mismatch("reconstruct", ad::Shape{M, M, 3}, image.shape());
  SampleRun<S> run;
  run.seed = seed;
  run.view = view;
  run.start_step = t_r;
  if (t_r == 0) {
    ad::NoGradScope<S> no_grad;
    if (cfg.keep_trace) run.trace.push_back(image.vec());
    run.call_steps.push_back(0);
    auto out = g(image.detach(), 0, view, detail::render_seed(seed, 0));
    run.x0_hat = ad::Tensor<S>({M, M, 3}, detail::clamp_unit<S>(out.image.data()));
    run.image = run.x0_hat;
    run.triplane = std::move(out.triplane);
    return run;
  }
  std::mt19937_64 rng(detail::chain_seed(seed));
  const auto eps = standard_normal<S>(rng, image.vec().size());
  detail::reverse_chain(g, sched, diffusion::q_sample<S>(image.data(), t_r, eps, sched), t_r, rng, run, cfg);
  return run;
}

struct InpaintTask {
  Mask mask;  // 1 = unknown
  Camera view;
};

// Generation whose known pixels are replaced after every step by the target
// noised to the new level (exactly the target at level 0). The chain itself
// draws the same random numbers as generate(), so an all-unknown mask
// reproduces it.
template <class S>
SampleRun<S> inpaint(const DenoiseFn<S>& g, const diffusion::NoiseSchedule& sched, const ad::Tensor<S>& target,
                     const InpaintTask& task, std::uint64_t seed, const SamplerConfig& cfg = {}) {
  const std::int64_t M = task.view.resolution;
  if (target.shape() != ad::Shape{M, M, 3}) throw ad::shape_mismatch("inpaint", ad::Shape{M, M, 3}, target.shape());
  if (task.mask.resolution != M || task.mask.unknown.size() != static_cast<std::size_t>(M * M))
    throw std::invalid_argument("inpaint: mask resolution " + std::to_string(task.mask.resolution) +
                                " does not match image resolution " + std::to_string(M));
  SampleRun<S> run;
  run.seed = seed;
  run.view = task.view;
  run.start_step = sched.steps;
  std::mt19937_64 rng(detail::chain_seed(seed));
  std::mt19937_64 replace_rng(detail::replace_seed(seed));
  auto x = standard_normal<S>(rng, static_cast<std::size_t>(3 * M * M));
  const auto x0 = target.data();
  const detail::StepHook<S> hook = [&](int level, std::vector<S>& xs) {
    const auto eps = standard_normal<S>(replace_rng, xs.size());
    const auto noised = level == 0 ? std::vector<S>(x0.begin(), x0.end()) : diffusion::q_sample<S>(x0, level, eps, sched);
    for (std::size_t p = 0; p < task.mask.unknown.size(); ++p)
      if (!task.mask.unknown[p])
        for (int c = 0; c < 3; ++c) xs[3 * p + c] = noised[3 * p + c];
  };
  detail::reverse_chain(g, sched, std::move(x), sched.steps, rng, run, cfg, hook);
  return run;
}

// Deterministic (midpoint) render of the run's final triplane.
template <class S>
RenderOutput<S> novel_view(const DenoiserParams<S>& params, const SampleRun<S>& run, const Camera& cam) {
  if (!run.triplane.xy.defined()) throw std::invalid_argument("novel_view: run holds no triplane");
  ad::NoGradScope<S> no_grad;
  auto cfg = params.cfg.render;
  cfg.stochastic = false;
  return render<S>(TriplaneField<S>{run.triplane, &params.decoder}, cam, cfg, 0);
}

}  // namespace tridiff
