#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <vector>

#include "tridiff/autodiff/ops.hpp"

namespace tridiff::ad {

namespace detail {

template <class S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MapMat = Eigen::Map<RowMat<S>>;
template <class S>
using ConstMapMat = Eigen::Map<const RowMat<S>>;

inline void expect_rank(std::string_view op, const Shape& shape, std::size_t rank) {
  if (shape.size() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     to_string(shape));
}

}  // namespace detail

// [n, k] x [k, m] -> [n, m]
template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::expect_rank("matmul", a.shape(), 2);
  detail::expect_rank("matmul", b.shape(), 2);
  const std::int64_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (b.dim(0) != k) throw shape_mismatch("matmul", Shape{k, m}, b.shape());
  std::vector<S> y(static_cast<std::size_t>(n * m));
  detail::MapMat<S>(y.data(), n, m).noalias() =
      detail::ConstMapMat<S>(a.vec().data(), n, k) * detail::ConstMapMat<S>(b.vec().data(), k, m);
  return make_result<S>("matmul", Shape{n, m}, std::move(y), {&a, &b},
                        [an = a.node_ptr(), bn = b.node_ptr(), n, k, m](const Node<S>& out) {
                          detail::ConstMapMat<S> g(out.grad.data(), n, m);
                          if (S* ga = grad_of(an))
                            detail::MapMat<S>(ga, n, k).noalias() +=
                                g * detail::ConstMapMat<S>(bn->data.data(), k, m).transpose();
                          if (S* gb = grad_of(bn))
                            detail::MapMat<S>(gb, k, m).noalias() +=
                                detail::ConstMapMat<S>(an->data.data(), n, k).transpose() * g;
                        });
}

// x [n, k] times w [k, m] plus bias [m].
template <class S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias) {
  detail::expect_rank("linear", x.shape(), 2);
  detail::expect_rank("linear", w.shape(), 2);
  const std::int64_t n = x.dim(0), k = x.dim(1), m = w.dim(1);
  if (w.dim(0) != k) throw shape_mismatch("linear", Shape{k, m}, w.shape());
  if (bias.shape() != Shape{m}) throw shape_mismatch("linear", Shape{m}, bias.shape());
  std::vector<S> y(static_cast<std::size_t>(n * m));
  detail::MapMat<S> ym(y.data(), n, m);
  ym.noalias() = detail::ConstMapMat<S>(x.vec().data(), n, k) * detail::ConstMapMat<S>(w.vec().data(), k, m);
  ym.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(bias.vec().data(), m);
  return make_result<S>("linear", Shape{n, m}, std::move(y), {&x, &w, &bias},
                        [xn = x.node_ptr(), wn = w.node_ptr(), bn = bias.node_ptr(), n, k, m](const Node<S>& out) {
                          detail::ConstMapMat<S> g(out.grad.data(), n, m);
                          if (S* gx = grad_of(xn))
                            detail::MapMat<S>(gx, n, k).noalias() +=
                                g * detail::ConstMapMat<S>(wn->data.data(), k, m).transpose();
                          if (S* gw = grad_of(wn))
                            detail::MapMat<S>(gw, k, m).noalias() +=
                                detail::ConstMapMat<S>(xn->data.data(), n, k).transpose() * g;
                          if (S* gb = grad_of(bn)) {
                            // Evaluated first: a lazy partial sum into gb would depend on gb's alignment.
                            const Eigen::Matrix<S, 1, Eigen::Dynamic> colsum = g.colwise().sum();
                            Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>(gb, m) += colsum;
                          }
                        });
}

struct Conv2dGeometry {
  std::int64_t channels, height, width;
  std::int64_t kernel_h, kernel_w;
  std::int64_t stride, padding;
  std::int64_t out_h() const { return (height + 2 * padding - kernel_h) / stride + 1; }
  std::int64_t out_w() const { return (width + 2 * padding - kernel_w) / stride + 1; }
  std::int64_t rows() const { return channels * kernel_h * kernel_w; }
};

namespace detail {

template <class S>
void im2col(const S* x, const Conv2dGeometry& g, S* col) {
  const std::int64_t oh = g.out_h(), ow = g.out_w();
  for (std::int64_t c = 0; c < g.channels; ++c)
    for (std::int64_t ki = 0; ki < g.kernel_h; ++ki)
      for (std::int64_t kj = 0; kj < g.kernel_w; ++kj) {
        S* row = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * oh * ow;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          const std::int64_t iy = oy * g.stride - g.padding + ki;
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            const std::int64_t ix = ox * g.stride - g.padding + kj;
            row[oy * ow + ox] = (iy >= 0 && iy < g.height && ix >= 0 && ix < g.width)
                                    ? x[(c * g.height + iy) * g.width + ix]
                                    : S(0);
          }
        }
      }
}

template <class S>
void col2im_add(const S* col, const Conv2dGeometry& g, S* x) {
  const std::int64_t oh = g.out_h(), ow = g.out_w();
  for (std::int64_t c = 0; c < g.channels; ++c)
    for (std::int64_t ki = 0; ki < g.kernel_h; ++ki)
      for (std::int64_t kj = 0; kj < g.kernel_w; ++kj) {
        const S* row = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * oh * ow;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          const std::int64_t iy = oy * g.stride - g.padding + ki;
          if (iy < 0 || iy >= g.height) continue;
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            const std::int64_t ix = ox * g.stride - g.padding + kj;
            if (ix >= 0 && ix < g.width) x[(c * g.height + iy) * g.width + ix] += row[oy * ow + ox];
          }
        }
      }
}

}  // namespace detail

// x: [B, C, H, W], weight: [O, C, kh, kw] -> [B, O, H', W']. Bias is added separately.
template <class S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& weight, std::int64_t stride = 1,
                 std::int64_t padding = 0) {
  detail::expect_rank("conv2d", x.shape(), 4);
  detail::expect_rank("conv2d", weight.shape(), 4);
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: invalid stride or padding");
  const std::int64_t batch = x.dim(0), out_c = weight.dim(0);
  const Conv2dGeometry geo{x.dim(1), x.dim(2), x.dim(3), weight.dim(2), weight.dim(3), stride, padding};
  if (weight.dim(1) != geo.channels)
    throw shape_mismatch("conv2d", Shape{out_c, geo.channels, geo.kernel_h, geo.kernel_w},
                         weight.shape());
  const std::int64_t oh = geo.out_h(), ow = geo.out_w();
  if (oh < 1 || ow < 1) throw ShapeError("conv2d: kernel larger than padded input " + to_string(x.shape()));
  const std::int64_t rows = geo.rows(), cols = oh * ow;
  const std::int64_t in_plane = geo.channels * geo.height * geo.width, out_plane = out_c * cols;
  std::vector<S> y(static_cast<std::size_t>(batch * out_plane));
  std::vector<S> col(static_cast<std::size_t>(rows * cols));
  detail::ConstMapMat<S> w(weight.vec().data(), out_c, rows);
  for (std::int64_t b = 0; b < batch; ++b) {
    detail::im2col(x.vec().data() + b * in_plane, geo, col.data());
    detail::MapMat<S>(y.data() + b * out_plane, out_c, cols).noalias() =
        w * detail::ConstMapMat<S>(col.data(), rows, cols);
  }
  return make_result<S>(
      "conv2d", Shape{batch, out_c, oh, ow}, std::move(y), {&x, &weight},
      [xn = x.node_ptr(), wn = weight.node_ptr(), geo, batch, out_c](const Node<S>& out) {
        const std::int64_t rows = geo.rows(), cols = geo.out_h() * geo.out_w();
        const std::int64_t in_plane = geo.channels * geo.height * geo.width, out_plane = out_c * cols;
        S* gx = grad_of(xn);
        S* gw = grad_of(wn);
        std::vector<S> col(static_cast<std::size_t>(rows * cols));
        detail::ConstMapMat<S> w(wn->data.data(), out_c, rows);
        for (std::int64_t b = 0; b < batch; ++b) {
          detail::ConstMapMat<S> g(out.grad.data() + b * out_plane, out_c, cols);
          if (gw) {
            detail::im2col(xn->data.data() + b * in_plane, geo, col.data());
            detail::MapMat<S>(gw, out_c, rows).noalias() +=
                g * detail::ConstMapMat<S>(col.data(), rows, cols).transpose();
          }
          if (gx) {
            detail::MapMat<S>(col.data(), rows, cols).noalias() = w.transpose() * g;
            detail::col2im_add(col.data(), geo, gx + b * in_plane);
          }
        }
      });
}

// Nearest-neighbour upsampling of [B, C, H, W] by an integer factor.
template <class S>
Tensor<S> upsample_nearest(const Tensor<S>& x, std::int64_t factor) {
  detail::expect_rank("upsample_nearest", x.shape(), 4);
  const std::int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t oh = h * factor, ow = w * factor;
  std::vector<S> y(static_cast<std::size_t>(planes * oh * ow));
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t i = 0; i < oh; ++i)
      for (std::int64_t j = 0; j < ow; ++j)
        y[(p * oh + i) * ow + j] = x.vec()[(p * h + i / factor) * w + j / factor];
  return make_result<S>("upsample_nearest", Shape{x.dim(0), x.dim(1), oh, ow}, std::move(y), {&x},
                        [xn = x.node_ptr(), planes, h, w, factor](const Node<S>& out) {
                          S* gx = grad_of(xn);
                          if (!gx) return;
                          const std::int64_t oh = h * factor, ow = w * factor;
                          for (std::int64_t p = 0; p < planes; ++p)
                            for (std::int64_t i = 0; i < oh; ++i)
                              for (std::int64_t j = 0; j < ow; ++j)
                                gx[(p * h + i / factor) * w + j / factor] += out.grad[(p * oh + i) * ow + j];
                        });
}

// Bilinear upsampling of [B, C, H, W] with half-pixel centres and edge clamping.
template <class S>
Tensor<S> upsample_bilinear(const Tensor<S>& x, std::int64_t factor) {
  detail::expect_rank("upsample_bilinear", x.shape(), 4);
  const std::int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t oh = h * factor, ow = w * factor;
  struct Tap {
    std::int64_t lo, hi;
    S frac;
  };
  auto taps = [factor](std::int64_t n_out, std::int64_t n_in) {
    std::vector<Tap> t(static_cast<std::size_t>(n_out));
    for (std::int64_t o = 0; o < n_out; ++o) {
      S src = (static_cast<S>(o) + S(0.5)) / static_cast<S>(factor) - S(0.5);
      src = std::max(src, S(0));
      auto lo = std::min(static_cast<std::int64_t>(std::floor(src)), n_in - 1);
      t[o] = {lo, std::min(lo + 1, n_in - 1), src - static_cast<S>(lo)};
    }
    return t;
  };
  auto ty = taps(oh, h), tx = taps(ow, w);
  std::vector<S> y(static_cast<std::size_t>(planes * oh * ow));
  for (std::int64_t p = 0; p < planes; ++p) {
    const S* src = x.vec().data() + p * h * w;
    for (std::int64_t i = 0; i < oh; ++i)
      for (std::int64_t j = 0; j < ow; ++j) {
        const auto& a = ty[i];
        const auto& b = tx[j];
        const S top = src[a.lo * w + b.lo] * (S(1) - b.frac) + src[a.lo * w + b.hi] * b.frac;
        const S bot = src[a.hi * w + b.lo] * (S(1) - b.frac) + src[a.hi * w + b.hi] * b.frac;
        y[(p * oh + i) * ow + j] = top * (S(1) - a.frac) + bot * a.frac;
      }
  }
  return make_result<S>("upsample_bilinear", Shape{x.dim(0), x.dim(1), oh, ow}, std::move(y), {&x},
                        [xn = x.node_ptr(), planes, h, w, oh, ow, ty, tx](const Node<S>& out) {
                          S* gx = grad_of(xn);
                          if (!gx) return;
                          for (std::int64_t p = 0; p < planes; ++p) {
                            S* dst = gx + p * h * w;
                            for (std::int64_t i = 0; i < oh; ++i)
                              for (std::int64_t j = 0; j < ow; ++j) {
                                const S g = out.grad[(p * oh + i) * ow + j];
                                const auto& a = ty[i];
                                const auto& b = tx[j];
                                dst[a.lo * w + b.lo] += g * (S(1) - a.frac) * (S(1) - b.frac);
                                dst[a.lo * w + b.hi] += g * (S(1) - a.frac) * b.frac;
                                dst[a.hi * w + b.lo] += g * a.frac * (S(1) - b.frac);
                                dst[a.hi * w + b.hi] += g * a.frac * b.frac;
                              }
                          }
                        });
}

// Bilinear lookup into a channels-last map.
//   input: [H, W, C]; grid: [P, 2] holding (u, v) in [-1, 1], u along W and v along H,
//   with -1 and +1 landing exactly on the first and last grid nodes.
// Points with |u| > 1 or |v| > 1 read as zero. Returns [P, C].
template <class S>
Tensor<S> grid_sample(const Tensor<S>& input, const Tensor<S>& grid) {
  detail::expect_rank("grid_sample", input.shape(), 3);
  detail::expect_rank("grid_sample", grid.shape(), 2);
  if (grid.dim(1) != 2) throw shape_mismatch("grid_sample", Shape{grid.dim(0), 2}, grid.shape());
  const std::int64_t h = input.dim(0), w = input.dim(1), c = input.dim(2), n = grid.dim(0);
  std::vector<S> y(static_cast<std::size_t>(n * c), S(0));
  const S* src = input.vec().data();
  const S* uv = grid.vec().data();

  struct Cell {
    std::int64_t x0, x1, y0, y1;
    S wx, wy;
    bool inside;
  };
  auto locate = [h, w](S u, S v) {
    Cell cell{0, 0, 0, 0, S(0), S(0), false};
    if (!(u >= S(-1) && u <= S(1) && v >= S(-1) && v <= S(1))) return cell;
    cell.inside = true;
    auto axis = [](S coord, std::int64_t size, std::int64_t& i0, std::int64_t& i1, S& frac) {
      if (size == 1) {
        i0 = i1 = 0;
        frac = S(0);
        return;
      }
      const S f = (coord + S(1)) * S(0.5) * static_cast<S>(size - 1);
      i0 = std::min(static_cast<std::int64_t>(std::floor(f)), size - 2);
      i1 = i0 + 1;
      frac = f - static_cast<S>(i0);
    };
    axis(u, w, cell.x0, cell.x1, cell.wx);
    axis(v, h, cell.y0, cell.y1, cell.wy);
    return cell;
  };

  for (std::int64_t p = 0; p < n; ++p) {
    const Cell cell = locate(uv[2 * p], uv[2 * p + 1]);
    if (!cell.inside) continue;
    const S w00 = (S(1) - cell.wx) * (S(1) - cell.wy), w01 = cell.wx * (S(1) - cell.wy);
    const S w10 = (S(1) - cell.wx) * cell.wy, w11 = cell.wx * cell.wy;
    const S* a = src + (cell.y0 * w + cell.x0) * c;
    const S* b = src + (cell.y0 * w + cell.x1) * c;
    const S* d = src + (cell.y1 * w + cell.x0) * c;
    const S* e = src + (cell.y1 * w + cell.x1) * c;
    S* out = y.data() + p * c;
    for (std::int64_t k = 0; k < c; ++k) out[k] = w00 * a[k] + w01 * b[k] + w10 * d[k] + w11 * e[k];
  }
  return make_result<S>(
      "grid_sample", Shape{n, c}, std::move(y), {&input, &grid},
      [in = input.node_ptr(), gn = grid.node_ptr(), h, w, c, n, locate](const Node<S>& out) {
        S* gi = grad_of(in);
        S* gg = grad_of(gn);
        const S* src = in->data.data();
        const S* uv = gn->data.data();
        for (std::int64_t p = 0; p < n; ++p) {
          const Cell cell = locate(uv[2 * p], uv[2 * p + 1]);
          if (!cell.inside) continue;
          const S* g = out.grad.data() + p * c;
          const std::int64_t o00 = (cell.y0 * w + cell.x0) * c, o01 = (cell.y0 * w + cell.x1) * c;
          const std::int64_t o10 = (cell.y1 * w + cell.x0) * c, o11 = (cell.y1 * w + cell.x1) * c;
          if (gi) {
            const S w00 = (S(1) - cell.wx) * (S(1) - cell.wy), w01 = cell.wx * (S(1) - cell.wy);
            const S w10 = (S(1) - cell.wx) * cell.wy, w11 = cell.wx * cell.wy;
            for (std::int64_t k = 0; k < c; ++k) {
              gi[o00 + k] += w00 * g[k];
              gi[o01 + k] += w01 * g[k];
              gi[o10 + k] += w10 * g[k];
              gi[o11 + k] += w11 * g[k];
            }
          }
          if (gg) {
            S dfx = S(0), dfy = S(0);
            for (std::int64_t k = 0; k < c; ++k) {
              const S v00 = src[o00 + k], v01 = src[o01 + k], v10 = src[o10 + k], v11 = src[o11 + k];
              dfx += g[k] * ((S(1) - cell.wy) * (v01 - v00) + cell.wy * (v11 - v10));
              dfy += g[k] * ((S(1) - cell.wx) * (v10 - v00) + cell.wx * (v11 - v01));
            }
            if (w > 1) gg[2 * p] += dfx * S(0.5) * static_cast<S>(w - 1);
            if (h > 1) gg[2 * p + 1] += dfy * S(0.5) * static_cast<S>(h - 1);
          }
        }
      });
}

// Normalises [B, C, ...] over each group of C / groups channels (and all trailing dims).
// No affine part; scale and shift are applied by the caller.
template <class S>
Tensor<S> group_norm(const Tensor<S>& x, std::int64_t groups, S eps = S(1e-5)) {
  if (x.rank() < 2) throw ShapeError("group_norm: expected rank >= 2, got " + to_string(x.shape()));
  const std::int64_t batch = x.dim(0), channels = x.dim(1);
  if (groups < 1 || channels % groups != 0)
    throw ShapeError("group_norm: " + std::to_string(channels) + " channels not divisible into " +
                     std::to_string(groups) + " groups");
  const std::int64_t spatial = x.numel() / (batch * channels);
  const std::int64_t count = channels / groups * spatial, blocks = batch * groups;
  std::vector<S> y(x.vec().size());
  std::vector<S> inv_std(static_cast<std::size_t>(blocks));
  for (std::int64_t blk = 0; blk < blocks; ++blk) {
    const S* src = x.vec().data() + blk * count;
    S m = S(0);
    for (std::int64_t i = 0; i < count; ++i) m += src[i];
    m /= static_cast<S>(count);
    S var = S(0);
    for (std::int64_t i = 0; i < count; ++i) var += (src[i] - m) * (src[i] - m);
    var /= static_cast<S>(count);
    const S r = S(1) / std::sqrt(var + eps);
    inv_std[blk] = r;
    S* dst = y.data() + blk * count;
    for (std::int64_t i = 0; i < count; ++i) dst[i] = (src[i] - m) * r;
  }
  return make_result<S>("group_norm", x.shape(), std::move(y), {&x},
                        [xn = x.node_ptr(), blocks, count, inv_std](const Node<S>& out) {
                          S* gx = grad_of(xn);
                          if (!gx) return;
                          for (std::int64_t blk = 0; blk < blocks; ++blk) {
                            const S* g = out.grad.data() + blk * count;
                            const S* xh = out.data.data() + blk * count;
                            S mg = S(0), mgx = S(0);
                            for (std::int64_t i = 0; i < count; ++i) {
                              mg += g[i];
                              mgx += g[i] * xh[i];
                            }
                            mg /= static_cast<S>(count);
                            mgx /= static_cast<S>(count);
                            S* dst = gx + blk * count;
                            for (std::int64_t i = 0; i < count; ++i)
                              dst[i] += inv_std[blk] * (g[i] - mg - xh[i] * mgx);
                          }
                        });
}

namespace detail {

inline void expect_channel_vector(std::string_view op, const Shape& x, const Shape& v) {
  if (x.size() < 2) throw ShapeError(std::string(op) + ": expected rank >= 2, got " + to_string(x));
  if (v != Shape{x[1]}) throw shape_mismatch(op, Shape{x[1]}, v);
}

}  // namespace detail

// x [B, C, ...] + bias[c] on every channel c.
template <class S>
Tensor<S> add_channel_bias(const Tensor<S>& x, const Tensor<S>& bias) {
  detail::expect_channel_vector("add_channel_bias", x.shape(), bias.shape());
  const std::int64_t batch = x.dim(0), channels = x.dim(1), spatial = x.numel() / (batch * channels);
  std::vector<S> y(x.vec());
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t c = 0; c < channels; ++c) {
      S* dst = y.data() + (b * channels + c) * spatial;
      const S v = bias[static_cast<std::size_t>(c)];
      for (std::int64_t i = 0; i < spatial; ++i) dst[i] += v;
    }
  return make_result<S>("add_channel_bias", x.shape(), std::move(y), {&x, &bias},
                        [xn = x.node_ptr(), bn = bias.node_ptr(), batch, channels, spatial](const Node<S>& out) {
                          if (S* gx = grad_of(xn))
                            for (std::size_t i = 0; i < out.grad.size(); ++i) gx[i] += out.grad[i];
                          if (S* gb = grad_of(bn))
                            for (std::int64_t b = 0; b < batch; ++b)
                              for (std::int64_t c = 0; c < channels; ++c) {
                                const S* g = out.grad.data() + (b * channels + c) * spatial;
                                S acc = S(0);
                                for (std::int64_t i = 0; i < spatial; ++i) acc += g[i];
                                gb[c] += acc;
                              }
                        });
}

// x [B, C, ...] * scale[c] + shift[c].
template <class S>
Tensor<S> channel_affine(const Tensor<S>& x, const Tensor<S>& scale, const Tensor<S>& shift) {
  detail::expect_channel_vector("channel_affine", x.shape(), scale.shape());
  detail::expect_channel_vector("channel_affine", x.shape(), shift.shape());
  const std::int64_t batch = x.dim(0), channels = x.dim(1), spatial = x.numel() / (batch * channels);
  std::vector<S> y(x.vec().size());
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t c = 0; c < channels; ++c) {
      const std::int64_t off = (b * channels + c) * spatial;
      const S a = scale[static_cast<std::size_t>(c)], s = shift[static_cast<std::size_t>(c)];
      for (std::int64_t i = 0; i < spatial; ++i) y[off + i] = x.vec()[off + i] * a + s;
    }
  return make_result<S>(
      "channel_affine", x.shape(), std::move(y), {&x, &scale, &shift},
      [xn = x.node_ptr(), an = scale.node_ptr(), sn = shift.node_ptr(), batch, channels, spatial](const Node<S>& out) {
        S* gx = grad_of(xn);
        S* ga = grad_of(an);
        S* gs = grad_of(sn);
        for (std::int64_t b = 0; b < batch; ++b)
          for (std::int64_t c = 0; c < channels; ++c) {
            const std::int64_t off = (b * channels + c) * spatial;
            const S* g = out.grad.data() + off;
            const S a = an->data[static_cast<std::size_t>(c)];
            S sum_g = S(0), sum_gx = S(0);
            for (std::int64_t i = 0; i < spatial; ++i) {
              sum_g += g[i];
              sum_gx += g[i] * xn->data[off + i];
              if (gx) gx[off + i] += g[i] * a;
            }
            if (ga) ga[c] += sum_gx;
            if (gs) gs[c] += sum_g;
          }
      });
}

// Softmax over the last axis.
template <class S>
Tensor<S> softmax(const Tensor<S>& x) {
  if (x.rank() < 1) throw ShapeError("softmax: expected rank >= 1");
  const std::int64_t n = x.dim(x.rank() - 1), rows = x.numel() / n;
  std::vector<S> y(x.vec().size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const S* src = x.vec().data() + r * n;
    S* dst = y.data() + r * n;
    const S mx = *std::max_element(src, src + n);
    S total = S(0);
    for (std::int64_t i = 0; i < n; ++i) total += dst[i] = std::exp(src[i] - mx);
    for (std::int64_t i = 0; i < n; ++i) dst[i] /= total;
  }
  return make_result<S>("softmax", x.shape(), std::move(y), {&x},
                        [xn = x.node_ptr(), rows, n](const Node<S>& out) {
                          S* gx = grad_of(xn);
                          if (!gx) return;
                          for (std::int64_t r = 0; r < rows; ++r) {
                            const S* g = out.grad.data() + r * n;
                            const S* yv = out.data.data() + r * n;
                            S dot = S(0);
                            for (std::int64_t i = 0; i < n; ++i) dot += g[i] * yv[i];
                            for (std::int64_t i = 0; i < n; ++i) gx[r * n + i] += yv[i] * (g[i] - dot);
                          }
                        });
}

}  // namespace tridiff::ad
