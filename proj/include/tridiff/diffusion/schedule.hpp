#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tridiff::diffusion {

// Per-step quantities indexed by t = 0..T; entry 0 is the clean-data boundary
// (beta = 0, alpha = alpha_bar = 1, posterior variance = 0).
struct NoiseSchedule {
  int steps = 0;
  double offset = 0.0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> posterior_var;

  void check_step(int t, int lo, const char* op) const {
    if (t < lo || t > steps)
      throw std::out_of_range(std::string(op) + ": step " + std::to_string(t) + " outside [" +
                              std::to_string(lo) + ", " + std::to_string(steps) + "]");
  }
};

inline constexpr double kMaxBeta = 0.999;

// Signal fraction of the cosine schedule before any clipping: f(t) / f(0) with
// f(t) = cos^2(((t / T + s) / (1 + s)) * pi / 2).
inline double cosine_alpha_bar(int t, int steps, double offset) {
  auto f = [&](double u) {
    const double c = std::cos((u / steps + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
    return c * c;
  };
  return f(t) / f(0);
}

inline NoiseSchedule build_cosine_schedule(int steps, double offset = 0.008) {
  if (steps < 1) throw std::invalid_argument("cosine schedule: step count must be >= 1");
  if (!(offset > 0.0 && offset < 1.0)) throw std::invalid_argument("cosine schedule: offset must lie in (0, 1)");
  NoiseSchedule s;
  s.steps = steps;
  s.offset = offset;
  const auto n = static_cast<std::size_t>(steps) + 1;
  s.beta.assign(n, 0.0);
  s.alpha.assign(n, 1.0);
  s.alpha_bar.assign(n, 1.0);
  s.posterior_var.assign(n, 0.0);
  for (int t = 1; t <= steps; ++t) {
    const double ratio = cosine_alpha_bar(t, steps, offset) / cosine_alpha_bar(t - 1, steps, offset);
    s.beta[t] = std::min(1.0 - ratio, kMaxBeta);
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    s.posterior_var[t] = (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]) * s.beta[t];
  }
  return s;
}

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
template <class S>
std::vector<S> q_sample(std::span<const S> x0, int t, std::span<const S> eps, const NoiseSchedule& sched) {
  sched.check_step(t, 0, "q_sample");
  if (eps.size() != x0.size()) throw std::invalid_argument("q_sample: noise and image sizes differ");
  std::vector<S> out(x0.size());
  if (t == 0) {
    out.assign(x0.begin(), x0.end());
    return out;
  }
  const S a = static_cast<S>(std::sqrt(sched.alpha_bar[t]));
  const S b = static_cast<S>(std::sqrt(1.0 - sched.alpha_bar[t]));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

template <class S>
struct Posterior {
  std::vector<S> mean;
  double variance = 0.0;
};

// Closed-form q(x_{t-1} | x_t, x_0).
template <class S>
Posterior<S> posterior_mean_var(std::span<const S> x0, std::span<const S> xt, int t,
                                const NoiseSchedule& sched) {
  sched.check_step(t, 1, "posterior_mean_var");
  if (x0.size() != xt.size()) throw std::invalid_argument("posterior_mean_var: size mismatch");
  const double denom = 1.0 - sched.alpha_bar[t];
  const S c0 = static_cast<S>(std::sqrt(sched.alpha_bar[t - 1]) * sched.beta[t] / denom);
  const S ct = static_cast<S>(std::sqrt(sched.alpha[t]) * (1.0 - sched.alpha_bar[t - 1]) / denom);
  Posterior<S> p;
  p.mean.resize(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) p.mean[i] = c0 * x0[i] + ct * xt[i];
  p.variance = sched.posterior_var[t];
  return p;
}

// Posterior mean written in terms of a predicted clean image:
// (1 / sqrt(alpha_t)) (x_t - (1 - alpha_t) / (1 - abar_t) (x_t - sqrt(abar_t) x0_hat))
template <class S>
std::vector<S> mu_from_x0hat(std::span<const S> xt, std::span<const S> x0hat, int t,
                             const NoiseSchedule& sched) {
  sched.check_step(t, 1, "mu_from_x0hat");
  if (x0hat.size() != xt.size()) throw std::invalid_argument("mu_from_x0hat: size mismatch");
  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha[t]);
  const double k = (1.0 - sched.alpha[t]) / (1.0 - sched.alpha_bar[t]);
  const double sqrt_abar = std::sqrt(sched.alpha_bar[t]);
  std::vector<S> mu(xt.size());
  for (std::size_t i = 0; i < xt.size(); ++i) {
    const double x = xt[i];
    mu[i] = static_cast<S>(inv_sqrt_alpha * (x - k * (x - sqrt_abar * x0hat[i])));
  }
  return mu;
}

// One reverse step: mu_t(x_t, x0_hat) + sigma_t * noise, with no noise at t = 1.
template <class S>
std::vector<S> ancestral_step(std::span<const S> xt, std::span<const S> x0hat, int t,
                              std::span<const S> noise, const NoiseSchedule& sched) {
  auto mu = mu_from_x0hat(xt, x0hat, t, sched);
  if (t == 1) return mu;
  if (noise.size() != xt.size()) throw std::invalid_argument("ancestral_step: noise size mismatch");
  const S sigma = static_cast<S>(std::sqrt(sched.posterior_var[t]));
  for (std::size_t i = 0; i < mu.size(); ++i) mu[i] += sigma * noise[i];
  return mu;
}

}  // namespace tridiff::diffusion
