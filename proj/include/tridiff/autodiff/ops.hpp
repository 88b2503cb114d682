#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "tridiff/autodiff/tensor.hpp"

namespace tridiff::ad {

namespace detail {

inline std::vector<std::int64_t> contiguous_strides(const Shape& shape) {
  std::vector<std::int64_t> strides(shape.size(), 1);
  for (std::size_t d = shape.size(); d-- > 1;) strides[d - 1] = strides[d] * shape[d];
  return strides;
}

inline std::size_t normalize_axis(std::int64_t axis, std::size_t rank, std::string_view op) {
  const auto r = static_cast<std::int64_t>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    throw ShapeError(std::string(op) + ": axis out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(axis);
}

// Strides of `in` viewed with the rank of `out`; broadcast dimensions get stride 0.
inline std::vector<std::int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::int64_t> strides(out.size(), 0);
  const auto own = contiguous_strides(in);
  const std::size_t offset = out.size() - in.size();
  for (std::size_t d = 0; d < in.size(); ++d) strides[offset + d] = in[d] == 1 ? 0 : own[d];
  return strides;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b, std::string_view op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError(std::string(op) + ": shapes " + to_string(a) + " and " + to_string(b) +
                       " do not broadcast");
    out[i] = std::max(da, db);
  }
  return out;
}

// Calls f(out_offset, a_offset, b_offset) for every element of `out`.
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::int64_t>& sa,
                        const std::vector<std::int64_t>& sb, F&& f) {
  const std::size_t r = out.size();
  if (r == 0) {
    f(std::int64_t{0}, std::int64_t{0}, std::int64_t{0});
    return;
  }
  const std::int64_t total = numel(out);
  if (total == 0) return;
  const std::int64_t inner = out[r - 1];
  const std::int64_t ia = sa[r - 1], ib = sb[r - 1];
  std::vector<std::int64_t> idx(r - 1, 0);
  std::int64_t oa = 0, ob = 0;
  for (std::int64_t o = 0; o < total; o += inner) {
    for (std::int64_t j = 0; j < inner; ++j) f(o + j, oa + j * ia, ob + j * ib);
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out[d]) break;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

// Elementwise binary op with broadcasting. `da`/`db` give the partials given (a, b, y).
template <class S, class Fwd, class DA, class DB>
Tensor<S> binary(std::string_view op, const Tensor<S>& a, const Tensor<S>& b, Fwd fwd, DA da,
                 DB db) {
  const auto& av = a.vec();
  const auto& bv = b.vec();
  if (a.shape() == b.shape()) {
    std::vector<S> y(av.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = fwd(av[i], bv[i]);
    return make_result<S>(op, a.shape(), std::move(y), {&a, &b},
                          [an = a.node_ptr(), bn = b.node_ptr(), da, db](const Node<S>& out_node) {
        const auto& g = out_node.grad;
                            S* ga = grad_of(an);
                            S* gb = grad_of(bn);
                            const auto& x = an->data;
                            const auto& z = bn->data;
                            for (std::size_t i = 0; i < g.size(); ++i) {
                              if (ga) ga[i] += g[i] * da(x[i], z[i]);
                              if (gb) gb[i] += g[i] * db(x[i], z[i]);
                            }
                          });
  }
  Shape out = broadcast_shape(a.shape(), b.shape(), op);
  auto sa = broadcast_strides(a.shape(), out);
  auto sb = broadcast_strides(b.shape(), out);
  std::vector<S> y(static_cast<std::size_t>(numel(out)));
  for_each_broadcast(out, sa, sb, [&](std::int64_t o, std::int64_t i, std::int64_t k) {
    y[o] = fwd(av[i], bv[k]);
  });
  return make_result<S>(
      op, out, std::move(y), {&a, &b},
      [an = a.node_ptr(), bn = b.node_ptr(), out, sa, sb, da, db](const Node<S>& out_node) {
        const auto& g = out_node.grad;
        S* ga = grad_of(an);
        S* gb = grad_of(bn);
        const auto& x = an->data;
        const auto& z = bn->data;
        for_each_broadcast(out, sa, sb, [&](std::int64_t o, std::int64_t i, std::int64_t k) {
          if (ga) ga[i] += g[o] * da(x[i], z[k]);
          if (gb) gb[k] += g[o] * db(x[i], z[k]);
        });
      });
}

// Elementwise unary op; `df(x, y)` is the derivative given input and output.
template <class S, class Fwd, class DF>
Tensor<S> unary(std::string_view op, const Tensor<S>& a, Fwd fwd, DF df) {
  const auto& av = a.vec();
  std::vector<S> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = fwd(av[i]);
  return make_result<S>(op, a.shape(), std::move(y), {&a},
                        [an = a.node_ptr(), df](const Node<S>& out_node) {
                          S* ga = grad_of(an);
                          if (!ga) return;
                          const auto& g = out_node.grad;
                          const auto& x = an->data;
                          const auto& yv = out_node.data;
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i], yv[i]);
                        });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Arithmetic

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary<S>(
      "add", a, b, [](S x, S y) { return x + y; }, [](S, S) { return S(1); },
      [](S, S) { return S(1); });
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary<S>(
      "sub", a, b, [](S x, S y) { return x - y; }, [](S, S) { return S(1); },
      [](S, S) { return S(-1); });
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary<S>(
      "mul", a, b, [](S x, S y) { return x * y; }, [](S, S y) { return y; },
      [](S x, S) { return x; });
}

template <class S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary<S>(
      "div", a, b, [](S x, S y) { return x / y; }, [](S, S y) { return S(1) / y; },
      [](S x, S y) { return -x / (y * y); });
}

template <class S>
Tensor<S> neg(const Tensor<S>& a) {
  return detail::unary<S>("neg", a, [](S x) { return -x; }, [](S, S) { return S(-1); });
}

template <class S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
  return detail::unary<S>("add_scalar", a, [c](S x) { return x + c; }, [](S, S) { return S(1); });
}

template <class S>
Tensor<S> mul_scalar(const Tensor<S>& a, S c) {
  return detail::unary<S>("mul_scalar", a, [c](S x) { return x * c; }, [c](S, S) { return c; });
}

template <class S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <class S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <class S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }
template <class S>
Tensor<S> operator/(const Tensor<S>& a, const Tensor<S>& b) { return div(a, b); }
template <class S>
Tensor<S> operator-(const Tensor<S>& a) { return neg(a); }
template <class S>
Tensor<S> operator+(const Tensor<S>& a, S c) { return add_scalar(a, c); }
template <class S>
Tensor<S> operator+(S c, const Tensor<S>& a) { return add_scalar(a, c); }
template <class S>
Tensor<S> operator-(const Tensor<S>& a, S c) { return add_scalar(a, -c); }
template <class S>
Tensor<S> operator-(S c, const Tensor<S>& a) { return add_scalar(neg(a), c); }
template <class S>
Tensor<S> operator*(const Tensor<S>& a, S c) { return mul_scalar(a, c); }
template <class S>
Tensor<S> operator*(S c, const Tensor<S>& a) { return mul_scalar(a, c); }
template <class S>
Tensor<S> operator/(const Tensor<S>& a, S c) { return mul_scalar(a, S(1) / c); }

// ---------------------------------------------------------------------------
// Pointwise functions

template <class S>
Tensor<S> exp(const Tensor<S>& a) {
  return detail::unary<S>("exp", a, [](S x) { return std::exp(x); }, [](S, S y) { return y; });
}

template <class S>
Tensor<S> log(const Tensor<S>& a) {
  return detail::unary<S>("log", a, [](S x) { return std::log(x); }, [](S x, S) { return S(1) / x; });
}

template <class S>
Tensor<S> pow(const Tensor<S>& a, S p) {
  return detail::unary<S>(
      "pow", a, [p](S x) { return std::pow(x, p); },
      [p](S x, S) { return p * std::pow(x, p - S(1)); });
}

template <class S>
Tensor<S> abs(const Tensor<S>& a) {
  return detail::unary<S>(
      "abs", a, [](S x) { return std::abs(x); },
      [](S x, S) { return x > S(0) ? S(1) : (x < S(0) ? S(-1) : S(0)); });
}

// Gradient passes through strictly inside [lo, hi] and is zero outside.
template <class S>
Tensor<S> clamp(const Tensor<S>& a, S lo, S hi) {
  return detail::unary<S>(
      "clamp", a, [lo, hi](S x) { return std::clamp(x, lo, hi); },
      [lo, hi](S x, S) { return (x >= lo && x <= hi) ? S(1) : S(0); });
}

template <class S>
Tensor<S> relu(const Tensor<S>& a) {
  return detail::unary<S>(
      "relu", a, [](S x) { return x > S(0) ? x : S(0); },
      [](S x, S) { return x > S(0) ? S(1) : S(0); });
}

template <class S>
S sigmoid_value(S x) {
  return x >= S(0) ? S(1) / (S(1) + std::exp(-x)) : std::exp(x) / (S(1) + std::exp(x));
}

template <class S>
S softplus_value(S x) {
  return x > S(20) ? x : std::log1p(std::exp(x));
}

namespace detail {

template <class S>
using ArrayMap = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;

// Elementwise op evaluated with Eigen array expressions. fwd(x) returns y;
// bwd(x, y) returns dy/dx, both as array expressions.
template <class S, class Fwd, class DF>
Tensor<S> unary_array(std::string_view op, const Tensor<S>& a, Fwd fwd, DF df) {
  const auto n = static_cast<Eigen::Index>(a.vec().size());
  std::vector<S> y(a.vec().size());
  Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>(y.data(), n) = fwd(ArrayMap<S>(a.vec().data(), n));
  return make_result<S>(op, a.shape(), std::move(y), {&a}, [an = a.node_ptr(), df, n](const Node<S>& out_node) {
    S* ga = grad_of(an);
    if (!ga) return;
    const ArrayMap<S> g(out_node.grad.data(), n), x(an->data.data(), n), yv(out_node.data.data(), n);
    Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>(ga, n) += g * df(x, yv);
  });
}

template <class A>
auto sigmoid_array(const A& x) {
  using S = typename A::Scalar;
  return (S(1) + (-x).exp()).inverse();
}

}  // namespace detail

template <class S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  return detail::unary_array<S>(
      "sigmoid", a, [](const auto& x) { return detail::sigmoid_array(x).eval(); },
      [](const auto&, const auto& y) { return (y * (S(1) - y)).eval(); });
}

// max(x, 0) + log1p(exp(-|x|)), stable for large |x|.
template <class S>
Tensor<S> softplus(const Tensor<S>& a) {
  return detail::unary_array<S>(
      "softplus", a, [](const auto& x) { return (x.max(S(0)) + (-x.abs()).exp().log1p()).eval(); },
      [](const auto& x, const auto&) { return detail::sigmoid_array(x).eval(); });
}

template <class S>
Tensor<S> silu(const Tensor<S>& a) {
  return detail::unary_array<S>(
      "silu", a, [](const auto& x) { return (x * detail::sigmoid_array(x)).eval(); },
      [](const auto& x, const auto&) {
        const auto s = detail::sigmoid_array(x).eval();
        return (s * (S(1) + x * (S(1) - s))).eval();
      });
}

// ---------------------------------------------------------------------------
// Reductions

template <class S>
Tensor<S> sum(const Tensor<S>& a) {
  S total = S(0);
  for (S v : a.vec()) total += v;
  return make_result<S>("sum", Shape{}, std::vector<S>{total}, {&a},
                        [an = a.node_ptr()](const Node<S>& out_node) {
        const auto& g = out_node.grad;
                          if (S* ga = grad_of(an))
                            for (std::size_t i = 0; i < an->data.size(); ++i) ga[i] += g[0];
                        });
}

template <class S>
Tensor<S> mean(const Tensor<S>& a) {
  return mul_scalar(sum(a), S(1) / static_cast<S>(a.numel()));
}

// Sum over one axis; the axis is dropped unless keepdim.
template <class S>
Tensor<S> sum(const Tensor<S>& a, std::int64_t axis, bool keepdim = false) {
  const std::size_t ax = detail::normalize_axis(axis, a.rank(), "sum");
  const auto& sh = a.shape();
  std::int64_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= sh[d];
  for (std::size_t d = ax + 1; d < sh.size(); ++d) inner *= sh[d];
  const std::int64_t n = sh[ax];
  Shape out = sh;
  if (keepdim) out[ax] = 1;
  else out.erase(out.begin() + static_cast<std::ptrdiff_t>(ax));
  std::vector<S> y(static_cast<std::size_t>(outer * inner), S(0));
  const auto& x = a.vec();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t k = 0; k < n; ++k) {
      const S* src = x.data() + (o * n + k) * inner;
      S* dst = y.data() + o * inner;
      for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  return make_result<S>("sum_axis", std::move(out), std::move(y), {&a},
                        [an = a.node_ptr(), outer, n, inner](const Node<S>& out_node) {
        const auto& g = out_node.grad;
                          S* ga = grad_of(an);
                          if (!ga) return;
                          for (std::int64_t o = 0; o < outer; ++o)
                            for (std::int64_t k = 0; k < n; ++k) {
                              S* dst = ga + (o * n + k) * inner;
                              const S* src = g.data() + o * inner;
                              for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
                            }
                        });
}

template <class S>
Tensor<S> mean(const Tensor<S>& a, std::int64_t axis, bool keepdim = false) {
  const std::size_t ax = detail::normalize_axis(axis, a.rank(), "mean");
  return mul_scalar(sum(a, axis, keepdim), S(1) / static_cast<S>(a.dim(ax)));
}

// Running sum along an axis. With `exclusive`, element k holds the sum of elements < k.
template <class S>
Tensor<S> cumsum(const Tensor<S>& a, std::int64_t axis, bool exclusive = false) {
  const std::size_t ax = detail::normalize_axis(axis, a.rank(), "cumsum");
  const auto& sh = a.shape();
  std::int64_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= sh[d];
  for (std::size_t d = ax + 1; d < sh.size(); ++d) inner *= sh[d];
  const std::int64_t n = sh[ax];
  const auto& x = a.vec();
  std::vector<S> y(x.size());
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t i = 0; i < inner; ++i) {
      S run = S(0);
      for (std::int64_t k = 0; k < n; ++k) {
        const std::int64_t at = (o * n + k) * inner + i;
        if (exclusive) {
          y[at] = run;
          run += x[at];
        } else {
          run += x[at];
          y[at] = run;
        }
      }
    }
  return make_result<S>("cumsum", sh, std::move(y), {&a},
                        [an = a.node_ptr(), outer, n, inner, exclusive](const Node<S>& out_node) {
        const auto& g = out_node.grad;
                          S* ga = grad_of(an);
                          if (!ga) return;
                          for (std::int64_t o = 0; o < outer; ++o)
                            for (std::int64_t i = 0; i < inner; ++i) {
                              S run = S(0);
                              for (std::int64_t k = n; k-- > 0;) {
                                const std::int64_t at = (o * n + k) * inner + i;
                                if (exclusive) {
                                  ga[at] += run;
                                  run += g[at];
                                } else {
                                  run += g[at];
                                  ga[at] += run;
                                }
                              }
                            }
                        });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <class S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
  std::int64_t known = 1;
  int infer = -1;
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (shape[d] == -1) {
      if (infer >= 0) throw ShapeError("reshape: more than one inferred dimension");
      infer = static_cast<int>(d);
    } else {
      known *= shape[d];
    }
  }
  if (infer >= 0 && known > 0) shape[static_cast<std::size_t>(infer)] = a.numel() / known;
  if (numel(shape) != a.numel())
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  return make_result<S>("reshape", std::move(shape), a.vec(), {&a},
                        [an = a.node_ptr()](const Node<S>& out_node) {
        const auto& g = out_node.grad;
                          if (S* ga = grad_of(an))
                            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                        });
}

template <class S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, std::int64_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t ax = detail::normalize_axis(axis, parts[0].rank(), "concat");
  Shape out = parts[0].shape();
  out[ax] = 0;
  for (const auto& p : parts) {
    Shape expect = parts[0].shape();
    expect[ax] = p.shape().size() == expect.size() ? p.shape()[ax] : -1;
    if (p.shape() != expect) throw shape_mismatch("concat", expect, p.shape());
    out[ax] += p.dim(ax);
  }
  std::int64_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= out[d];
  for (std::size_t d = ax + 1; d < out.size(); ++d) inner *= out[d];
  const std::int64_t total_n = out[ax];
  std::vector<S> y(static_cast<std::size_t>(numel(out)));
  std::vector<std::int64_t> widths;
  std::int64_t at = 0;
  for (const auto& p : parts) {
    const std::int64_t w = p.dim(ax) * inner;
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy_n(p.vec().data() + o * w, w, y.data() + o * total_n * inner + at);
    at += w;
    widths.push_back(w);
  }
  std::vector<std::shared_ptr<Node<S>>> nodes;
  std::vector<const Tensor<S>*> inputs;
  for (const auto& p : parts) {
    nodes.push_back(p.node_ptr());
    inputs.push_back(&p);
  }
  return make_result<S>(
      "concat", out, std::move(y), inputs,
      [nodes, widths, outer, row = total_n * inner](const Node<S>& out_node) {
        const auto& g = out_node.grad;
        std::int64_t off = 0;
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          const std::int64_t w = widths[k];
          if (S* gk = grad_of(nodes[k]))
            for (std::int64_t o = 0; o < outer; ++o) {
              const S* src = g.data() + o * row + off;
              S* dst = gk + o * w;
              for (std::int64_t i = 0; i < w; ++i) dst[i] += src[i];
            }
          off += w;
        }
      });
}

// Elements [start, stop) along an axis.
template <class S>
Tensor<S> slice(const Tensor<S>& a, std::int64_t axis, std::int64_t start, std::int64_t stop) {
  const std::size_t ax = detail::normalize_axis(axis, a.rank(), "slice");
  const auto& sh = a.shape();
  if (start < 0 || stop > sh[ax] || start >= stop)
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(stop) +
                     ") invalid for axis of size " + std::to_string(sh[ax]));
  std::int64_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= sh[d];
  for (std::size_t d = ax + 1; d < sh.size(); ++d) inner *= sh[d];
  Shape out = sh;
  out[ax] = stop - start;
  const std::int64_t in_row = sh[ax] * inner, out_row = out[ax] * inner, off = start * inner;
  std::vector<S> y(static_cast<std::size_t>(outer * out_row));
  for (std::int64_t o = 0; o < outer; ++o)
    std::copy_n(a.vec().data() + o * in_row + off, out_row, y.data() + o * out_row);
  return make_result<S>("slice", std::move(out), std::move(y), {&a},
                        [an = a.node_ptr(), outer, in_row, out_row, off](const Node<S>& out_node) {
        const auto& g = out_node.grad;
                          S* ga = grad_of(an);
                          if (!ga) return;
                          for (std::int64_t o = 0; o < outer; ++o)
                            for (std::int64_t i = 0; i < out_row; ++i)
                              ga[o * in_row + off + i] += g[o * out_row + i];
                        });
}

template <class S>
Tensor<S> permute(const Tensor<S>& a, const std::vector<std::size_t>& perm) {
  const auto& sh = a.shape();
  if (perm.size() != sh.size()) throw ShapeError("permute: permutation rank mismatch");
  Shape out(sh.size());
  const auto in_strides = detail::contiguous_strides(sh);
  std::vector<std::int64_t> src_strides(sh.size());
  for (std::size_t d = 0; d < perm.size(); ++d) {
    out[d] = sh.at(perm[d]);
    src_strides[d] = in_strides[perm[d]];
  }
  const std::vector<std::int64_t> dst_strides(out.size(), 0);
  std::vector<S> y(a.vec().size());
  std::vector<std::int64_t> gather(y.size());
  detail::for_each_broadcast(out, src_strides, dst_strides,
                             [&](std::int64_t o, std::int64_t i, std::int64_t) { gather[o] = i; });
  for (std::size_t o = 0; o < y.size(); ++o) y[o] = a.vec()[gather[o]];
  return make_result<S>("permute", std::move(out), std::move(y), {&a},
                        [an = a.node_ptr(), gather = std::move(gather)](const Node<S>& out_node) {
        const auto& g = out_node.grad;
                          if (S* ga = grad_of(an))
                            for (std::size_t o = 0; o < g.size(); ++o) ga[gather[o]] += g[o];
                        });
}

template <class S>
Tensor<S> transpose(const Tensor<S>& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + to_string(a.shape()));
  return permute(a, {1, 0});
}

}  // namespace tridiff::ad
