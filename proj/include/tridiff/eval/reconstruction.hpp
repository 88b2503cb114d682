#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tridiff/data/clevr.hpp"
#include "tridiff/eval/metrics.hpp"
#include "tridiff/sample/samplers.hpp"

namespace tridiff {

// [M, M, 3] renderer colour in [0, 1] to an Image.
template <class S>
Image rgb_to_image(const ad::Tensor<S>& rgb) {
  if (rgb.rank() != 3 || rgb.dim(2) != 3) throw ad::ShapeError("rgb_to_image: expected [H, W, 3], got " + ad::to_string(rgb.shape()));
  Image img(static_cast<int>(rgb.dim(0)), static_cast<int>(rgb.dim(1)));
  for (std::size_t i = 0; i < img.size(); ++i) img.data[i] = std::clamp(static_cast<double>(rgb[i]), 0.0, 1.0);
  return img;
}

struct ImageScore {
  int scene = 0, view = 0;
  double psnr = 0.0, ssim = 0.0;
};

struct SceneScore {
  int scene = 0;
  int images = 0;
  double psnr = 0.0, ssim = 0.0;
};

struct MetricReport {
  std::vector<ImageScore> images;
  std::vector<SceneScore> scenes;
  double psnr = 0.0, ssim = 0.0;  // mean over all images

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["psnr"] = psnr;
    j["ssim"] = ssim;
    j["n_images"] = images.size();
    for (const auto& s : scenes) j["scenes"].push_back({{"scene", s.scene}, {"images", s.images}, {"psnr", s.psnr}, {"ssim", s.ssim}});
    for (const auto& i : images) j["images"].push_back({{"scene", i.scene}, {"view", i.view}, {"psnr", i.psnr}, {"ssim", i.ssim}});
    return j;
  }

  std::string to_text() const {
    std::ostringstream o;
    o.setf(std::ios::fixed);
    o.precision(4);
    o << "scene  images  psnr_db  ssim\n";
    for (const auto& s : scenes) o << s.scene << "  " << s.images << "  " << s.psnr << "  " << s.ssim << "\n";
    o << "mean  " << images.size() << "  " << psnr << "  " << ssim << "\n";
    return o.str();
  }
};

inline MetricReport summarize(std::vector<ImageScore> scores) {
  if (scores.empty()) throw std::invalid_argument("metric report: no images to evaluate");
  MetricReport r;
  std::map<int, SceneScore> by_scene;
  for (const auto& s : scores) {
    auto& sc = by_scene[s.scene];
    sc.scene = s.scene;
    ++sc.images;
    sc.psnr += s.psnr;
    sc.ssim += s.ssim;
    r.psnr += s.psnr;
    r.ssim += s.ssim;
  }
  for (auto& [_, sc] : by_scene) {
    sc.psnr /= sc.images;
    sc.ssim /= sc.images;
    r.scenes.push_back(sc);
  }
  r.psnr /= static_cast<double>(scores.size());
  r.ssim /= static_cast<double>(scores.size());
  r.images = std::move(scores);
  return r;
}

// Renders a reconstructed scene from a camera.
using SceneRenderer = std::function<Image(const Camera&)>;
// Builds a reconstruction from one posed input image.
using Reconstructor = std::function<SceneRenderer(const PosedImage& input)>;

// Model reconstructor: reconstruct(t_r) from the input view, then midpoint
// renders of the final triplane.
template <class S>
Reconstructor model_reconstructor(const DenoiserParams<S>& params, const diffusion::NoiseSchedule& sched, int t_r,
                                  std::uint64_t seed) {
  return [&params, &sched, t_r, seed](const PosedImage& input) -> SceneRenderer {
    const auto run = std::make_shared<SampleRun<S>>(reconstruct<S>(
        model_denoiser(params), sched, image_to_tensor<S>(input.image), input.camera, t_r,
        derive_seed(seed, {static_cast<std::uint64_t>(input.scene)})));
    return [&params, run](const Camera& cam) { return rgb_to_image(novel_view(params, *run, cam).rgb); };
  };
}

// One reconstruction per scene from inputs[k]; every target of that scene is
// scored against its render.
inline MetricReport evaluate_views(const Reconstructor& recon, const std::vector<PosedImage>& inputs,
                                   const std::vector<PosedImage>& targets) {
  std::vector<ImageScore> scores;
  for (const auto& in : inputs) {
    SceneRenderer render_view;
    for (const auto& tgt : targets) {
      if (tgt.scene != in.scene) continue;
      if (!render_view) render_view = recon(in);
      const Image pred = render_view(tgt.camera);
      scores.push_back({tgt.scene, tgt.view, psnr(pred, tgt.image), ssim(pred, tgt.image)});
    }
  }
  return summarize(std::move(scores));
}

// First view per scene (manifest order) is the input; all views of the split,
// the input included, are scored.
inline std::vector<PosedImage> first_view_per_scene(const std::vector<PosedImage>& views) {
  std::vector<PosedImage> out;
  for (const auto& v : views)
    if (std::none_of(out.begin(), out.end(), [&](const PosedImage& o) { return o.scene == v.scene; })) out.push_back(v);
  return out;
}

inline MetricReport evaluate_reconstruction(const Reconstructor& recon, const std::vector<PosedImage>& test_views) {
  if (test_views.empty()) throw std::invalid_argument("evaluate_reconstruction: empty test split");
  return evaluate_views(recon, first_view_per_scene(test_views), test_views);
}

}  // namespace tridiff
