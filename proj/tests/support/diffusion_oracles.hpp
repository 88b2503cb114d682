#pragma once

// Monte-Carlo and closed-form oracles for the noise schedule. Shared by the
// unit tests and the acceptance binary.

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "tridiff/diffusion/schedule.hpp"

namespace tridiff::test_support {

// Cosine signal fraction written out directly, without going through the
// cumulative product the library uses.
inline double closed_form_alpha_bar(int t, int steps, double s) {
  const double a = std::cos((static_cast<double>(t) / steps + s) / (1.0 + s) * std::numbers::pi / 2.0);
  const double b = std::cos(s / (1.0 + s) * std::numbers::pi / 2.0);
  return (a * a) / (b * b);
}

struct MomentCheck {
  double mean = 0.0, var = 0.0;
  double expected_mean = 0.0, expected_var = 0.0;
  double mean_se = 0.0, var_se = 0.0;
  bool within(double k = 3.0) const {
    return std::abs(mean - expected_mean) <= k * mean_se && std::abs(var - expected_var) <= k * var_se;
  }
};

inline MomentCheck moments(const std::vector<double>& xs, double expected_mean, double expected_var) {
  MomentCheck m;
  const double n = static_cast<double>(xs.size());
  for (double x : xs) m.mean += x;
  m.mean /= n;
  double m4 = 0.0;
  for (double x : xs) {
    const double d = x - m.mean;
    m.var += d * d;
    m4 += d * d * d * d;
  }
  m.var /= (n - 1.0);
  m4 /= n;
  m.expected_mean = expected_mean;
  m.expected_var = expected_var;
  m.mean_se = std::sqrt(m.var / n);
  // Standard error of the sample variance from the empirical fourth moment.
  m.var_se = std::sqrt(std::max(m4 - m.var * m.var, 0.0) / n);
  return m;
}

// Forward noising of a scalar x0 two ways: the one-shot closed form, and t
// sequential beta steps. Both are compared against the closed-form marginal.
struct MarginalCheck {
  MomentCheck single_step;
  MomentCheck sequential;
};

inline MarginalCheck forward_marginals(const diffusion::NoiseSchedule& sched, int t, double x0, int draws,
                                       std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  std::vector<double> one(draws), seq(draws);
  for (int k = 0; k < draws; ++k) {
    double e = n01(rng);
    one[k] = diffusion::q_sample<double>(std::span<const double>(&x0, 1), t, std::span<const double>(&e, 1), sched)[0];
    double x = x0;
    for (int s = 1; s <= t; ++s) x = std::sqrt(sched.alpha[s]) * x + std::sqrt(sched.beta[s]) * n01(rng);
    seq[k] = x;
  }
  const double mean = std::sqrt(sched.alpha_bar[t]) * x0;
  const double var = 1.0 - sched.alpha_bar[t];
  return {moments(one, mean, var), moments(seq, mean, var)};
}

// E[x_{t-1} | x_t, x_0] estimated from simulated forward chains whose x_t lands
// in a window around the marginal mean. The true conditional mean is affine in
// x_t, so the window average is compared against the closed form evaluated at
// the window's mean x_t.
struct PosteriorCheck {
  int t = 0;
  std::size_t in_window = 0;
  double empirical = 0.0;
  double closed_form = 0.0;
  double se = 0.0;
  bool within(double k = 3.0) const { return std::abs(empirical - closed_form) <= k * se; }
};

inline std::vector<PosteriorCheck> posterior_chain_oracle(const diffusion::NoiseSchedule& sched, double x0,
                                                          int chains, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  std::vector<std::vector<double>> path(chains, std::vector<double>(sched.steps + 1));
  for (auto& p : path) {
    p[0] = x0;
    for (int s = 1; s <= sched.steps; ++s) p[s] = std::sqrt(sched.alpha[s]) * p[s - 1] + std::sqrt(sched.beta[s]) * n01(rng);
  }
  std::vector<PosteriorCheck> out;
  for (int t = 1; t <= sched.steps; ++t) {
    const double centre = std::sqrt(sched.alpha_bar[t]) * x0;
    const double half = 0.25 * std::sqrt(1.0 - sched.alpha_bar[t]);
    std::vector<double> prev, cur;
    for (const auto& p : path)
      if (std::abs(p[t] - centre) < half) {
        prev.push_back(p[t - 1]);
        cur.push_back(p[t]);
      }
    PosteriorCheck c;
    c.t = t;
    c.in_window = prev.size();
    double mean_xt = 0.0;
    for (std::size_t i = 0; i < prev.size(); ++i) {
      c.empirical += prev[i];
      mean_xt += cur[i];
    }
    const double n = static_cast<double>(prev.size());
    c.empirical /= n;
    mean_xt /= n;
    const double coef_x0 = std::sqrt(sched.alpha_bar[t - 1]) * sched.beta[t] / (1.0 - sched.alpha_bar[t]);
    const double coef_xt = std::sqrt(sched.alpha[t]) * (1.0 - sched.alpha_bar[t - 1]) / (1.0 - sched.alpha_bar[t]);
    c.closed_form = coef_x0 * x0 + coef_xt * mean_xt;
    // Residuals about the affine conditional mean carry the posterior spread.
    double ss = 0.0;
    for (std::size_t i = 0; i < prev.size(); ++i) {
      const double r = prev[i] - (coef_x0 * x0 + coef_xt * cur[i]);
      ss += r * r;
    }
    c.se = std::sqrt(ss / (n - 1.0) / n);
    if (t == 1) c.se = std::max(c.se, 1e-12);
    out.push_back(c);
  }
  return out;
}

// Maximum |mu_from_x0hat - posterior mean| over random inputs.
inline double mean_identity_gap(const diffusion::NoiseSchedule& sched, int trials, int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  std::uniform_int_distribution<int> pick(1, sched.steps);
  double worst = 0.0;
  for (int k = 0; k < trials; ++k) {
    std::vector<double> x0(dim), xt(dim);
    for (auto& v : x0) v = u(rng);
    for (auto& v : xt) v = u(rng);
    const int t = pick(rng);
    const auto a = diffusion::mu_from_x0hat<double>(xt, x0, t, sched);
    const auto b = diffusion::posterior_mean_var<double>(x0, xt, t, sched).mean;
    for (int i = 0; i < dim; ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  return worst;
}

}  // namespace tridiff::test_support
