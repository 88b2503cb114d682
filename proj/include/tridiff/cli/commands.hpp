#pragma once

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "tridiff/cli/artifacts.hpp"
#include "tridiff/cli/config.hpp"
#include "tridiff/data/clevr.hpp"
#include "tridiff/eval/reconstruction.hpp"
#include "tridiff/model/checkpoint.hpp"
#include "tridiff/sample/samplers.hpp"
#include "tridiff/train/train.hpp"

namespace tridiff::cli {

inline constexpr int kMetadataVersion = 1;

struct CommandResult {
  std::filesystem::path out;  // run directory (or dataset directory)
  nlohmann::json summary;
};

// Seed streams used by the commands.
enum class SeedTag : std::uint64_t { init = 1, sample = 2, mask = 3 };

inline std::uint64_t tagged(std::uint64_t seed, SeedTag tag, std::uint64_t index = 0) {
  return derive_seed(seed, {static_cast<std::uint64_t>(tag), index});
}

inline std::filesystem::path dataset_dir(const RunConfig& cfg) {
  return cfg.dataset.empty() ? default_data_root() / "clevr1" : cfg.dataset;
}

inline std::filesystem::path out_root(const RunConfig& cfg) {
  return cfg.out_root.empty() ? default_data_root() / "runs" : cfg.out_root;
}

inline nlohmann::json base_metadata(const std::string& command, const RunConfig& cfg) {
  return {{"command", command},
          {"seed", cfg.seed},
          {"workers", cfg.workers},
          {"deterministic", cfg.deterministic},
          {"precision", cfg.precision},
          {"format_versions",
           {{"metadata", kMetadataVersion}, {"checkpoint", kCheckpointVersion}, {"dataset", kDatasetFormatVersion}}}};
}

// Creates the run directory and echoes the resolved config into it.
inline std::filesystem::path begin_run(const std::string& command, const RunConfig& cfg) {
  const auto ini = to_ini(cfg);
  const auto dir = create_run_dir(out_root(cfg), command + "\n" + ini);
  write_text(dir / "config.ini", ini);
  return dir;
}

inline DatasetManifest open_dataset(const RunConfig& cfg) {
  const auto dir = dataset_dir(cfg);
  if (!std::filesystem::exists(dir / "manifest.json")) throw IoError("dataset not found: " + (dir / "manifest.json").string());
  return load_manifest(dir);
}

inline void expect_resolution(int model_res, int data_res) {
  if (model_res != data_res)
    throw ConfigError("model resolution " + std::to_string(model_res) + " does not match dataset resolution " +
                      std::to_string(data_res));
}

// Held-out views: those of test scenes when the dataset has any, otherwise the
// held-out views of the training scenes.
inline std::vector<PosedImage> held_out_views(const std::filesystem::path& root, const DatasetManifest& m) {
  const bool has_test_scenes = std::any_of(m.scenes.begin(), m.scenes.end(), [](const SceneRecord& s) { return !s.train; });
  return load_views(root, m, !has_test_scenes, false);
}

inline PosedImage dataset_view(const std::filesystem::path& root, const DatasetManifest& m, int scene, int view,
                               const std::string& split) {
  for (const auto& s : m.scenes) {
    if (s.index != scene) continue;
    for (const auto& v : s.views)
      if (v.index == view) {
        if (v.train != (split == "train"))
          throw ConfigError("view " + std::to_string(view) + " of scene " + std::to_string(scene) + " is not in the " +
                            split + " split");
        return {s.index, v.index, read_png(root / v.file), v.camera};
      }
    throw ConfigError("scene " + std::to_string(scene) + " has no view " + std::to_string(view));
  }
  throw ConfigError("dataset has no scene " + std::to_string(scene));
}

template <class S>
struct LoadedModel {
  Checkpoint<S> ck;
  diffusion::NoiseSchedule sched;
  std::string hash;
};

template <class S>
LoadedModel<S> load_model(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw ConfigError("a checkpoint is required (--ckpt)");
  if (!std::filesystem::exists(cfg.checkpoint)) throw IoError("checkpoint not found: " + cfg.checkpoint.string());
  LoadedModel<S> m{load_checkpoint<S>(cfg.checkpoint), {}, sha256_file(cfg.checkpoint)};
  if (cfg.sampler.use_ema && !use_ema_weights(m.ck))
    throw ConfigError("--use-ema: checkpoint has no EMA weights (train with --ema)");
  m.sched = diffusion::build_cosine_schedule(m.ck.schedule.steps, m.ck.schedule.offset);
  if (cfg.sampler.t_r > m.ck.schedule.steps)
    throw ConfigError("t_r = " + std::to_string(cfg.sampler.t_r) + " exceeds the checkpoint's T = " +
                      std::to_string(m.ck.schedule.steps));
  return m;
}

inline nlohmann::json schedule_json(const ScheduleConfig& s) {
  nlohmann::json j = {{"steps", s.steps}, {"offset", s.offset}};
  j["hash"] = sha256_hex(j.dump()).substr(0, 16);
  return j;
}

// Runs body(i) for i in [0, n) on up to `workers` threads; each i writes its
// own files, so the output does not depend on scheduling.
template <class F>
void parallel_for(int n, int workers, F&& body) {
  workers = std::max(1, std::min(workers, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += workers) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

template <class S>
void write_render(const std::filesystem::path& dir, const std::string& stem, const RenderOutput<S>& r) {
  write_png(dir / (stem + ".png"), rgb_to_image(r.rgb));
  write_depth_png(dir / (stem + "_depth.png"), r.depth, r.resolution, DepthEncoding{});
}

inline Camera orbit_camera(int resolution, double azimuth_deg, double elevation_deg, double radius) {
  return make_camera(resolution, look_at_pose(radians(azimuth_deg), radians(elevation_deg), radius, oracle::kSceneTarget));
}

// ---------------------------------------------------------------------------

inline CommandResult cmd_gen_dataset(const RunConfig& cfg) {
  auto dc = cfg.data;
  dc.out_dir = dataset_dir(cfg);
  const auto m = generate_dataset(dc);
  write_text(dc.out_dir / "config.ini", to_ini(cfg));
  int images = 0;
  for (const auto& s : m.scenes) images += static_cast<int>(s.views.size());
  return {dc.out_dir, {{"scenes", m.scenes.size()}, {"images", images}}};
}

template <class S>
CommandResult cmd_train(const RunConfig& cfg, std::ostream& log = std::cout) {
  const auto root = dataset_dir(cfg);
  const auto m = open_dataset(cfg);
  expect_resolution(cfg.model.image_res(), m.config.resolution);
  auto data = training_examples<S>(load_views(root, m, true, true));

  auto params = init_denoiser<S>(cfg.model, tagged(cfg.seed, SeedTag::init));
  Trainer<S> trainer(std::move(params), cfg.schedule, cfg.train, std::move(data));
  auto meta = base_metadata("train", cfg);
  meta["dataset_manifest_sha256"] = sha256_file(root / "manifest.json");
  if (!cfg.checkpoint.empty()) {
    if (!std::filesystem::exists(cfg.checkpoint)) throw IoError("checkpoint not found: " + cfg.checkpoint.string());
    const auto ck = load_checkpoint<S>(cfg.checkpoint);
    if (ck.schedule.steps != cfg.schedule.steps || ck.schedule.offset != cfg.schedule.offset)
      throw ConfigError("resume: checkpoint schedule differs from the run config");
    try {
      trainer.restore(ck);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    meta["resumed_from"] = {{"path", cfg.checkpoint.string()}, {"sha256", sha256_file(cfg.checkpoint)}, {"step", trainer.step_index()}};
  }

  const auto dir = begin_run("train", cfg);
  log << "run directory: " << dir.string() << "\n";
  meta["schedule"] = schedule_json(cfg.schedule);
  write_json(dir / "metadata.json", meta);
  TrainRunOptions opt{dir, [&](const StepRecord& r) {
                        if (r.step % 50 == 0 || r.step == cfg.train.steps)
                          log << "step " << r.step << " denoise_loss " << r.denoise_loss << " sd_loss " << r.sd_loss << "\n";
                      }};
  const auto summary = run_training(trainer, opt);
  meta["final_step"] = trainer.step_index();
  meta["final_checkpoint"] = summary.last_checkpoint.filename().string();
  meta["final_checkpoint_sha256"] = sha256_file(summary.last_checkpoint);
  write_json(dir / "metadata.json", meta);
  return {dir, {{"steps", summary.records.size()}, {"checkpoint", summary.last_checkpoint.string()}}};
}

template <class S>
CommandResult cmd_generate(const RunConfig& cfg) {
  const auto model = load_model<S>(cfg);
  const auto& params = model.ck.params;
  const auto g = model_denoiser(params);
  const auto& sc = cfg.sampler;
  const Camera view = orbit_camera(params.cfg.image_res(), sc.azimuth_deg, sc.elevation_deg, sc.radius);
  const auto dir = begin_run("generate", cfg);

  std::vector<nlohmann::json> samples(static_cast<std::size_t>(sc.seeds));
  parallel_for(sc.seeds, cfg.workers, [&](int i) {
    const auto seed = tagged(cfg.seed, SeedTag::sample, static_cast<std::uint64_t>(i));
    const auto run = generate<S>(g, model.sched, view, seed);
    const std::string stem = "sample_" + std::to_string(i);
    write_png(dir / (stem + ".png"), tensor_to_image(run.image));
    write_render(dir, stem + "_render", novel_view(params, run, view));
    for (int j = 0; j < sc.novel_views; ++j) {
      const auto cam = orbit_camera(view.resolution, sc.azimuth_deg + 360.0 * (j + 1) / (sc.novel_views + 1),
                                    sc.elevation_deg, sc.radius);
      write_render(dir, stem + "_view_" + std::to_string(j), novel_view(params, run, cam));
    }
    samples[i] = {{"index", i}, {"seed", seed}, {"denoiser_calls", run.denoiser_calls()}};
  });

  auto meta = base_metadata("generate", cfg);
  meta["checkpoint"] = {{"path", cfg.checkpoint.string()}, {"sha256", model.hash}};
  meta["schedule"] = schedule_json(model.ck.schedule);
  meta["pose"] = pose_json(view);
  meta["samples"] = samples;
  meta["depth"] = DepthEncoding{}.to_json();
  write_json(dir / "metadata.json", meta);
  return {dir, {{"samples", sc.seeds}}};
}

template <class S>
CommandResult cmd_reconstruct(const RunConfig& cfg) {
  const auto model = load_model<S>(cfg);
  const auto& params = model.ck.params;
  const auto root = dataset_dir(cfg);
  const auto m = open_dataset(cfg);
  expect_resolution(params.cfg.image_res(), m.config.resolution);
  const auto& sc = cfg.sampler;
  const auto input = dataset_view(root, m, sc.scene, sc.view, sc.split);
  const auto dir = begin_run("reconstruct", cfg);

  const auto seed = tagged(cfg.seed, SeedTag::sample);
  const auto run = reconstruct<S>(model_denoiser(params), model.sched, image_to_tensor<S>(input.image), input.camera,
                                  sc.t_r, seed);
  write_png(dir / "input.png", input.image);
  write_png(dir / "reconstruction.png", tensor_to_image(run.image));
  write_render(dir, "reconstruction_render", novel_view(params, run, input.camera));

  nlohmann::json views = nlohmann::json::array();
  for (const auto& s : m.scenes) {
    if (s.index != input.scene) continue;
    for (const auto& v : s.views) {
      const auto r = novel_view(params, run, v.camera);
      const std::string stem = "view_" + std::to_string(v.index);
      write_render(dir, stem, r);
      const auto truth = read_png(root / v.file);
      const auto pred = rgb_to_image(r.rgb);
      nlohmann::json score = {{"view", v.index}, {"train", v.train}, {"psnr", psnr(pred, truth)}, {"ssim", nullptr}};
      if (pred.height >= SsimConfig{}.window) score["ssim"] = ssim(pred, truth);
      views.push_back(score);
    }
  }
  auto meta = base_metadata("reconstruct", cfg);
  meta["checkpoint"] = {{"path", cfg.checkpoint.string()}, {"sha256", model.hash}};
  meta["schedule"] = schedule_json(model.ck.schedule);
  meta["input"] = {{"scene", input.scene}, {"view", input.view}, {"split", sc.split}};
  meta["t_r"] = sc.t_r;
  meta["sample_seed"] = seed;
  meta["denoiser_calls"] = run.denoiser_calls();
  meta["pose"] = pose_json(input.camera);
  meta["views"] = views;
  meta["depth"] = DepthEncoding{}.to_json();
  write_json(dir / "metadata.json", meta);
  return {dir, {{"denoiser_calls", run.denoiser_calls()}}};
}

inline Mask centered_mask(int M) {
  const int side = static_cast<int>(std::lround(0.4 * M)), r0 = (M - side) / 2;
  auto mask = Mask::filled(M, 0);
  for (int i = r0; i < r0 + side; ++i)
    for (int j = r0; j < r0 + side; ++j) mask.unknown[static_cast<std::size_t>(i) * M + j] = 1;
  return mask;
}

template <class S>
CommandResult cmd_inpaint(const RunConfig& cfg) {
  const auto model = load_model<S>(cfg);
  const auto& params = model.ck.params;
  const auto root = dataset_dir(cfg);
  const auto m = open_dataset(cfg);
  const int M = params.cfg.image_res();
  expect_resolution(M, m.config.resolution);
  const auto& sc = cfg.sampler;
  const auto input = dataset_view(root, m, sc.scene, sc.view, sc.split);
  Mask mask;
  if (sc.mask == "eval") {
    if (M < 16) throw ConfigError("the evaluation mask needs resolution >= 16");
    std::mt19937_64 rng(tagged(cfg.seed, SeedTag::mask));
    mask = mask_for_eval(rng, M);
  } else {
    mask = centered_mask(M);
  }
  const auto dir = begin_run("inpaint", cfg);

  Image mask_img(M, M, 1), masked = input.image;
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < M; ++j)
      if (mask.at(i, j)) {
        mask_img.at(i, j) = 1.0;
        for (int c = 0; c < 3; ++c) masked.at(i, j, c) = 0.5;
      }
  write_png(dir / "mask.png", mask_img);
  write_png(dir / "masked_input.png", masked);

  const auto g = model_denoiser(params);
  const auto target = image_to_tensor<S>(input.image);
  std::vector<nlohmann::json> completions(static_cast<std::size_t>(sc.seeds));
  parallel_for(sc.seeds, cfg.workers, [&](int i) {
    const auto seed = tagged(cfg.seed, SeedTag::sample, static_cast<std::uint64_t>(i));
    const auto run = inpaint<S>(g, model.sched, target, {mask, input.camera}, seed);
    const std::string stem = "completion_" + std::to_string(i);
    write_png(dir / (stem + ".png"), tensor_to_image(run.image));
    write_render(dir, stem + "_render", novel_view(params, run, input.camera));
    completions[i] = {{"index", i}, {"seed", seed}, {"denoiser_calls", run.denoiser_calls()}};
  });

  int unknown = 0;
  for (auto u : mask.unknown) unknown += u;
  auto meta = base_metadata("inpaint", cfg);
  meta["checkpoint"] = {{"path", cfg.checkpoint.string()}, {"sha256", model.hash}};
  meta["schedule"] = schedule_json(model.ck.schedule);
  meta["input"] = {{"scene", input.scene}, {"view", input.view}, {"split", sc.split}};
  meta["mask"] = {{"rule", sc.mask}, {"unknown_pixels", unknown}};
  meta["pose"] = pose_json(input.camera);
  meta["completions"] = completions;
  meta["depth"] = DepthEncoding{}.to_json();
  write_json(dir / "metadata.json", meta);
  return {dir, {{"completions", sc.seeds}}};
}

template <class S>
CommandResult cmd_eval(const RunConfig& cfg, std::ostream& log = std::cout) {
  const auto model = load_model<S>(cfg);
  const auto& params = model.ck.params;
  const auto root = dataset_dir(cfg);
  const auto m = open_dataset(cfg);
  expect_resolution(params.cfg.image_res(), m.config.resolution);
  const auto views = held_out_views(root, m);
  if (views.empty()) throw ConfigError("dataset has no held-out views to evaluate");
  if (m.config.resolution < SsimConfig{}.window)
    throw ConfigError("eval: SSIM needs images of at least " + std::to_string(SsimConfig{}.window) + " pixels");

  const auto report =
      evaluate_reconstruction(model_reconstructor(params, model.sched, cfg.sampler.t_r, tagged(cfg.seed, SeedTag::sample)), views);
  const auto dir = begin_run("eval", cfg);
  write_text(dir / "report.txt", report.to_text());
  write_json(dir / "report.json", report.to_json());
  std::ostringstream kv;
  kv.precision(17);
  kv << "psnr=" << report.psnr << "\nssim=" << report.ssim << "\nimages=" << report.images.size()
     << "\nscenes=" << report.scenes.size() << "\nt_r=" << cfg.sampler.t_r << "\n";
  write_text(dir / "report.kv", kv.str());
  auto meta = base_metadata("eval", cfg);
  meta["checkpoint"] = {{"path", cfg.checkpoint.string()}, {"sha256", model.hash}};
  meta["schedule"] = schedule_json(model.ck.schedule);
  meta["t_r"] = cfg.sampler.t_r;
  write_json(dir / "metadata.json", meta);
  log << report.to_text();
  return {dir, {{"psnr", report.psnr}, {"ssim", report.ssim}}};
}

}  // namespace tridiff::cli
