#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

#include "tridiff/model/encoder.hpp"
#include "tridiff/model/params.hpp"
#include "tridiff/model/triplane.hpp"
#include "tridiff/render/volume.hpp"

namespace tridiff {

struct ModelConfig {
  EncoderConfig encoder;
  int n_freq = kDefaultFrequencies;
  int decoder_hidden = kDefaultDecoderHidden;
  double extent = kDefaultExtent;
  RenderConfig render;

  int image_res() const { return encoder.image_res; }

  void validate() const {
    encoder.validate();
    render.validate();
    if (n_freq < 0) throw std::invalid_argument("model: n_freq must be >= 0");
    if (decoder_hidden < 1) throw std::invalid_argument("model: decoder hidden width must be >= 1");
    if (!(extent > 0.0)) throw std::invalid_argument("model: triplane extent must be positive");
  }
};

// Tiny configuration used by the gradient oracles: M = N = 8, nf = 4, one level.
inline ModelConfig tiny_model_config() {
  ModelConfig c;
  c.encoder.image_res = 8;
  c.encoder.plane_res = 8;
  c.encoder.features = 4;
  c.encoder.widths = {8};
  c.encoder.res_blocks = 1;
  c.encoder.groups = 4;
  c.decoder_hidden = 16;
  c.n_freq = 2;
  c.render.n_coarse = 4;
  c.render.n_fine = 4;
  return c;
}

template <class S>
struct DenoiserParams {
  ModelConfig cfg;
  EncoderParams<S> encoder;
  DecoderParams<S> decoder;

  NamedParams<S> named() const {
    NamedParams<S> out;
    encoder.collect("encoder.", out);
    decoder.collect("decoder.", out);
    return out;
  }
};

template <class S>
DenoiserParams<S> init_denoiser(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  DenoiserParams<S> p;
  p.cfg = cfg;
  p.encoder = init_encoder<S>(rng, cfg.encoder);
  p.decoder = init_decoder<S>(rng, cfg.encoder.features, cfg.n_freq, cfg.decoder_hidden);
  return p;
}

template <class S>
struct Denoised {
  ad::Tensor<S> image;  // x0 estimate [M, M, 3] in [-1, 1]
  Triplane<S> triplane;
  RenderOutput<S> render;
};

// Signature shared by the model and by test hooks that stand in for it.
template <class S>
using DenoiseFn = std::function<Denoised<S>(const ad::Tensor<S>& xt, int t, const Camera& view, std::uint64_t seed)>;

// Renders `planes` from `view`; the image is mapped from [0, 1] to [-1, 1].
template <class S>
Denoised<S> render_triplane(const DenoiserParams<S>& params, Triplane<S> planes, const Camera& view,
                            const RenderConfig& render_cfg, std::uint64_t seed, SamplePlan* plan = nullptr) {
  Denoised<S> out;
  out.triplane = std::move(planes);
  out.render = render<S>(TriplaneField<S>{out.triplane, &params.decoder}, view, render_cfg, seed, plan);
  out.image = ad::add_scalar(ad::mul_scalar(out.render.rgb, S(2)), S(-1));
  return out;
}

// g(x_t, t, v): the encoder sees only (x_t, t); v is used by the renderer alone.
template <class S>
Denoised<S> denoise(const DenoiserParams<S>& params, const ad::Tensor<S>& xt, int t, const Camera& view,
                    std::uint64_t seed, SamplePlan* plan = nullptr) {
  if (view.resolution != params.cfg.image_res())
    throw std::invalid_argument("denoise: camera resolution " + std::to_string(view.resolution) +
                                " differs from model resolution " + std::to_string(params.cfg.image_res()));
  return render_triplane(params, encode(params.encoder, xt, t, params.cfg.extent), view, params.cfg.render, seed, plan);
}

template <class S>
DenoiseFn<S> model_denoiser(const DenoiserParams<S>& params) {
  return [&params](const ad::Tensor<S>& xt, int t, const Camera& view, std::uint64_t seed) {
    return denoise(params, xt, t, view, seed);
  };
}

}  // namespace tridiff
