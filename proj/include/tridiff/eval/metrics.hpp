#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "tridiff/io/image.hpp"

namespace tridiff {

inline constexpr double kPsnrCap = 99.0;

inline void expect_same_shape(const Image& a, const Image& b, const char* op) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels)
    throw std::invalid_argument(std::string(op) + ": image shapes differ (" + std::to_string(a.height) + "x" +
                                std::to_string(a.width) + "x" + std::to_string(a.channels) + " vs " +
                                std::to_string(b.height) + "x" + std::to_string(b.width) + "x" +
                                std::to_string(b.channels) + ")");
}

// 10 log10(1 / MSE) for images in [0, 1], capped at 99 dB.
inline double psnr(const Image& a, const Image& b) {
  expect_same_shape(a, b, "psnr");
  if (a.size() == 0) throw std::invalid_argument("psnr: empty image");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) se += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  const double mse = se / static_cast<double>(a.size());
  if (mse < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01, k2 = 0.03;
  double range = 1.0;
};

inline std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < size; ++i) total += k[i] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
  for (auto& v : k) v /= total;
  return k;
}

namespace detail {

// Separable Gaussian filter over the valid region of one channel.
inline std::vector<double> filter_valid(const std::vector<double>& x, int h, int w, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size()), oh = h - n + 1, ow = w - n + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow), out(static_cast<std::size_t>(oh) * ow);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < ow; ++j) {
      double s = 0.0;
      for (int t = 0; t < n; ++t) s += k[t] * x[static_cast<std::size_t>(i) * w + j + t];
      rows[static_cast<std::size_t>(i) * ow + j] = s;
    }
  for (int i = 0; i < oh; ++i)
    for (int j = 0; j < ow; ++j) {
      double s = 0.0;
      for (int t = 0; t < n; ++t) s += k[t] * rows[static_cast<std::size_t>(i + t) * ow + j];
      out[static_cast<std::size_t>(i) * ow + j] = s;
    }
  return out;
}

}  // namespace detail

// Mean local SSIM over all valid window positions, averaged over channels.
inline double ssim(const Image& a, const Image& b, const SsimConfig& cfg = {}) {
  expect_same_shape(a, b, "ssim");
  if (a.height < cfg.window || a.width < cfg.window)
    throw std::invalid_argument("ssim: image " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                                " smaller than the " + std::to_string(cfg.window) + "x" + std::to_string(cfg.window) +
                                " window");
  const auto k = gaussian_kernel(cfg.window, cfg.sigma);
  const double c1 = std::pow(cfg.k1 * cfg.range, 2), c2 = std::pow(cfg.k2 * cfg.range, 2);
  const int h = a.height, w = a.width, C = a.channels;
  const std::size_t n = static_cast<std::size_t>(h) * w;
  double total = 0.0;
  for (int c = 0; c < C; ++c) {
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t p = 0; p < n; ++p) {
      x[p] = a.data[p * C + c];
      y[p] = b.data[p * C + c];
      xx[p] = x[p] * x[p];
      yy[p] = y[p] * y[p];
      xy[p] = x[p] * y[p];
    }
    const auto mx = detail::filter_valid(x, h, w, k), my = detail::filter_valid(y, h, w, k);
    const auto sxx = detail::filter_valid(xx, h, w, k), syy = detail::filter_valid(yy, h, w, k),
               sxy = detail::filter_valid(xy, h, w, k);
    double acc = 0.0;
    for (std::size_t p = 0; p < mx.size(); ++p) {
      const double vx = sxx[p] - mx[p] * mx[p], vy = syy[p] - my[p] * my[p], cov = sxy[p] - mx[p] * my[p];
      acc += ((2 * mx[p] * my[p] + c1) * (2 * cov + c2)) /
             ((mx[p] * mx[p] + my[p] * my[p] + c1) * (vx + vy + c2));
    }
    total += acc / static_cast<double>(mx.size());
  }
  return total / C;
}

}  // namespace tridiff
