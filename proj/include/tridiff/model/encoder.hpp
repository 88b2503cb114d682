#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "tridiff/autodiff/nn.hpp"
#include "tridiff/autodiff/ops.hpp"
#include "tridiff/model/params.hpp"
#include "tridiff/model/triplane.hpp"

namespace tridiff {

struct EncoderConfig {
  int image_res = 32;   // M
  int plane_res = 32;   // N, M times a power of two
  int features = 32;    // nf per plane
  std::vector<int> widths{32, 64, 128};  // one entry per resolution level
  int res_blocks = 2;
  int groups = 8;
  bool attention = false;  // self-attention block at the lowest resolution

  int depth() const { return static_cast<int>(widths.size()); }
  int time_dim() const { return 4 * widths.front(); }

  int extra_up_blocks() const {
    int k = 0;
    for (int r = image_res; r < plane_res; r *= 2) ++k;
    return k;
  }

  void validate() const {
    if (widths.empty()) throw std::invalid_argument("encoder: need at least one level");
    if (image_res < 1 || features < 1 || res_blocks < 1 || groups < 1)
      throw std::invalid_argument("encoder: sizes must be positive");
    if (image_res % (1 << (depth() - 1)) != 0)
      throw std::invalid_argument("encoder: image resolution " + std::to_string(image_res) + " not divisible by 2^" +
                                  std::to_string(depth() - 1));
    if (plane_res < image_res || image_res << extra_up_blocks() != plane_res)
      throw std::invalid_argument("encoder: plane resolution must be the image resolution times a power of two");
    for (int w : widths)
      if (w < 1 || w % groups != 0)
        throw std::invalid_argument("encoder: width " + std::to_string(w) + " not divisible by " +
                                    std::to_string(groups) + " groups");
  }
};

// Sinusoidal embedding: [sin(t f_i), cos(t f_i)] with f_i = 10000^(-i / (dim/2)).
template <class S>
ad::Tensor<S> timestep_embed(int t, int dim) {
  if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("timestep_embed: dim must be even and >= 2");
  const int half = dim / 2;
  std::vector<S> e(static_cast<std::size_t>(dim));
  for (int i = 0; i < half; ++i) {
    const double f = std::exp(-std::log(10000.0) * i / half);
    e[i] = static_cast<S>(std::sin(t * f));
    e[half + i] = static_cast<S>(std::cos(t * f));
  }
  return ad::Tensor<S>({1, dim}, std::move(e));
}

template <class S>
struct Conv {
  ad::Tensor<S> w, b;
  int stride = 1, padding = 1;

  ad::Tensor<S> operator()(const ad::Tensor<S>& x) const {
    return ad::add_channel_bias(ad::conv2d(x, w, stride, padding), b);
  }
  void collect(const std::string& p, NamedParams<S>& out) const {
    out.emplace_back(p + "w", w);
    out.emplace_back(p + "b", b);
  }
};

template <class S, class Rng>
Conv<S> make_conv(Rng& rng, int in, int out, int kernel, int stride = 1) {
  Conv<S> c;
  c.stride = stride;
  c.padding = kernel / 2;
  c.w = uniform_param<S>(rng, {out, in, kernel, kernel}, 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel)));
  c.b = constant_param<S>({out}, S(0));
  return c;
}

template <class S>
struct Dense {
  ad::Tensor<S> w, b;
  ad::Tensor<S> operator()(const ad::Tensor<S>& x) const { return ad::linear(x, w, b); }
  void collect(const std::string& p, NamedParams<S>& out) const {
    out.emplace_back(p + "w", w);
    out.emplace_back(p + "b", b);
  }
};

template <class S, class Rng>
Dense<S> make_dense(Rng& rng, int in, int out) {
  return {uniform_param<S>(rng, {in, out}, 1.0 / std::sqrt(static_cast<double>(in))), constant_param<S>({out}, S(0))};
}

template <class S>
struct Norm {
  ad::Tensor<S> scale, shift;
  int groups = 8;
  ad::Tensor<S> operator()(const ad::Tensor<S>& x) const {
    return ad::channel_affine(ad::group_norm(x, groups), scale, shift);
  }
  void collect(const std::string& p, NamedParams<S>& out) const {
    out.emplace_back(p + "scale", scale);
    out.emplace_back(p + "shift", shift);
  }
};

template <class S>
Norm<S> make_norm(int channels, int groups) {
  return {constant_param<S>({channels}, S(1)), constant_param<S>({channels}, S(0)), groups};
}

// GN -> SiLU -> conv, plus the projected time embedding, then GN -> SiLU -> conv,
// added to a 1x1-projected (or identity) shortcut.
template <class S>
struct ResBlock {
  Norm<S> norm1, norm2;
  Conv<S> conv1, conv2;
  Dense<S> time;
  bool project = false;
  Conv<S> skip;

  ad::Tensor<S> operator()(const ad::Tensor<S>& x, const ad::Tensor<S>& temb) const {
    auto h = conv1(ad::silu(norm1(x)));
    h = ad::add_channel_bias(h, ad::reshape(time(ad::silu(temb)), {h.dim(1)}));
    h = conv2(ad::silu(norm2(h)));
    return ad::add(project ? skip(x) : x, h);
  }
  void collect(const std::string& p, NamedParams<S>& out) const {
    norm1.collect(p + "norm1.", out);
    conv1.collect(p + "conv1.", out);
    time.collect(p + "time.", out);
    norm2.collect(p + "norm2.", out);
    conv2.collect(p + "conv2.", out);
    if (project) skip.collect(p + "skip.", out);
  }
};

template <class S, class Rng>
ResBlock<S> make_res_block(Rng& rng, int in, int out, int time_dim, int groups) {
  ResBlock<S> r;
  r.norm1 = make_norm<S>(in, groups);
  r.conv1 = make_conv<S>(rng, in, out, 3);
  r.time = make_dense<S>(rng, time_dim, out);
  r.norm2 = make_norm<S>(out, groups);
  r.conv2 = make_conv<S>(rng, out, out, 3);
  r.project = in != out;
  if (r.project) r.skip = make_conv<S>(rng, in, out, 1);
  return r;
}

// Single-head self-attention over spatial positions with a residual connection.
template <class S>
struct Attention {
  Norm<S> norm;
  Conv<S> q, k, v, proj;

  ad::Tensor<S> operator()(const ad::Tensor<S>& x) const {
    const std::int64_t c = x.dim(1), hw = x.dim(2) * x.dim(3);
    const auto h = norm(x);
    auto tokens = [&](const Conv<S>& f) { return ad::transpose(ad::reshape(f(h), {c, hw})); };  // [hw, c]
    const auto qt = tokens(q), kt = tokens(k), vt = tokens(v);
    const auto att = ad::softmax(ad::mul_scalar(ad::matmul(qt, ad::transpose(kt)), S(1.0 / std::sqrt(double(c)))));
    const auto mixed = ad::reshape(ad::transpose(ad::matmul(att, vt)), {1, c, x.dim(2), x.dim(3)});
    return ad::add(x, proj(mixed));
  }
  void collect(const std::string& p, NamedParams<S>& out) const {
    norm.collect(p + "norm.", out);
    q.collect(p + "q.", out);
    k.collect(p + "k.", out);
    v.collect(p + "v.", out);
    proj.collect(p + "proj.", out);
  }
};

template <class S>
struct EncoderParams {
  EncoderConfig cfg;
  Dense<S> time1, time2;
  Conv<S> conv_in;
  std::vector<std::vector<ResBlock<S>>> down;  // [level][block]
  std::vector<Conv<S>> downsample;             // level -> level + 1
  ResBlock<S> mid;
  std::vector<Attention<S>> attention;         // zero or one
  std::vector<std::vector<ResBlock<S>>> up;    // [level][block], level D-1 first
  std::vector<Conv<S>> upsample;               // after each up level except the last
  std::vector<Conv<S>> extra_upsample;         // no-skip blocks for N > M
  std::vector<ResBlock<S>> extra_blocks;
  Norm<S> norm_out;
  Conv<S> conv_out;

  void collect(const std::string& p, NamedParams<S>& out) const {
    time1.collect(p + "time1.", out);
    time2.collect(p + "time2.", out);
    conv_in.collect(p + "conv_in.", out);
    for (std::size_t l = 0; l < down.size(); ++l) {
      for (std::size_t b = 0; b < down[l].size(); ++b)
        down[l][b].collect(p + "down" + std::to_string(l) + ".res" + std::to_string(b) + ".", out);
      if (l < downsample.size()) downsample[l].collect(p + "down" + std::to_string(l) + ".sample.", out);
    }
    mid.collect(p + "mid.", out);
    for (const auto& a : attention) a.collect(p + "attn.", out);
    for (std::size_t i = 0; i < up.size(); ++i) {
      for (std::size_t b = 0; b < up[i].size(); ++b)
        up[i][b].collect(p + "up" + std::to_string(i) + ".res" + std::to_string(b) + ".", out);
      if (i < upsample.size()) upsample[i].collect(p + "up" + std::to_string(i) + ".sample.", out);
    }
    for (std::size_t i = 0; i < extra_blocks.size(); ++i) {
      extra_upsample[i].collect(p + "extra" + std::to_string(i) + ".sample.", out);
      extra_blocks[i].collect(p + "extra" + std::to_string(i) + ".res.", out);
    }
    norm_out.collect(p + "norm_out.", out);
    conv_out.collect(p + "conv_out.", out);
  }
};

template <class S, class Rng>
EncoderParams<S> init_encoder(Rng& rng, const EncoderConfig& cfg) {
  cfg.validate();
  EncoderParams<S> e;
  e.cfg = cfg;
  const int D = cfg.depth(), td = cfg.time_dim(), g = cfg.groups;
  e.time1 = make_dense<S>(rng, cfg.widths.front(), td);
  e.time2 = make_dense<S>(rng, td, td);
  e.conv_in = make_conv<S>(rng, 3, cfg.widths.front(), 3);
  int ch = cfg.widths.front();
  e.down.resize(D);
  for (int l = 0; l < D; ++l) {
    for (int b = 0; b < cfg.res_blocks; ++b) {
      e.down[l].push_back(make_res_block<S>(rng, ch, cfg.widths[l], td, g));
      ch = cfg.widths[l];
    }
    if (l + 1 < D) e.downsample.push_back(make_conv<S>(rng, ch, ch, 3, 2));
  }
  e.mid = make_res_block<S>(rng, ch, ch, td, g);
  if (cfg.attention) {
    Attention<S> a;
    a.norm = make_norm<S>(ch, g);
    a.q = make_conv<S>(rng, ch, ch, 1);
    a.k = make_conv<S>(rng, ch, ch, 1);
    a.v = make_conv<S>(rng, ch, ch, 1);
    a.proj = make_conv<S>(rng, ch, ch, 1);
    e.attention.push_back(std::move(a));
  }
  for (int l = D - 1; l >= 0; --l) {
    std::vector<ResBlock<S>> blocks;
    int in = ch + cfg.widths[l];  // skip from the same level
    for (int b = 0; b < cfg.res_blocks; ++b) {
      blocks.push_back(make_res_block<S>(rng, in, cfg.widths[l], td, g));
      in = ch = cfg.widths[l];
    }
    e.up.push_back(std::move(blocks));
    if (l > 0) {
      e.upsample.push_back(make_conv<S>(rng, ch, cfg.widths[l - 1], 3));
      ch = cfg.widths[l - 1];
    }
  }
  for (int i = 0; i < cfg.extra_up_blocks(); ++i) {
    e.extra_upsample.push_back(make_conv<S>(rng, ch, ch, 3));
    e.extra_blocks.push_back(make_res_block<S>(rng, ch, ch, td, g));
  }
  e.norm_out = make_norm<S>(ch, g);
  e.conv_out = make_conv<S>(rng, ch, 3 * cfg.features, 3);
  return e;
}

// image: [M, M, 3] in roughly [-1, 1]; returns the [1, 3 nf, N, N] channel stack.
template <class S>
ad::Tensor<S> encoder_forward(const EncoderParams<S>& e, const ad::Tensor<S>& image, int t) {
  const auto& cfg = e.cfg;
  const std::int64_t M = cfg.image_res;
  if (image.shape() != ad::Shape{M, M, 3}) throw ad::shape_mismatch("encode", ad::Shape{M, M, 3}, image.shape());
  const auto temb = e.time2(ad::silu(e.time1(timestep_embed<S>(t, cfg.widths.front()))));
  auto h = e.conv_in(ad::reshape(ad::permute(image, {2, 0, 1}), {1, 3, M, M}));
  std::vector<ad::Tensor<S>> skips;
  for (std::size_t l = 0; l < e.down.size(); ++l) {
    for (const auto& block : e.down[l]) h = block(h, temb);
    skips.push_back(h);
    if (l < e.downsample.size()) h = e.downsample[l](h);
  }
  h = e.mid(h, temb);
  for (const auto& a : e.attention) h = a(h);
  for (std::size_t i = 0; i < e.up.size(); ++i) {
    h = ad::concat<S>({h, skips[skips.size() - 1 - i]}, 1);
    for (const auto& block : e.up[i]) h = block(h, temb);
    if (i < e.upsample.size()) h = e.upsample[i](ad::upsample_nearest(h, 2));
  }
  for (std::size_t i = 0; i < e.extra_blocks.size(); ++i)
    h = e.extra_blocks[i](e.extra_upsample[i](ad::upsample_nearest(h, 2)), temb);
  return e.conv_out(ad::silu(e.norm_out(h)));
}

template <class S>
Triplane<S> encode(const EncoderParams<S>& e, const ad::Tensor<S>& image, int t, double extent = kDefaultExtent) {
  return triplane_from_channels(encoder_forward(e, image, t), extent);
}

}  // namespace tridiff
