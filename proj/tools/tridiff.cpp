// tridiff command-line driver.
//
//   tridiff gen-dataset --scenes 16 --views-train 8 --res 32 --out data/clevr1
//   tridiff train --data data/clevr1 --steps 2000
//   tridiff generate --ckpt run/ckpt_002000.bin --seeds 4 --novel-views 8
//   tridiff reconstruct --ckpt ... --data ... --scene 0 --view 0 --tr 50
//   tridiff inpaint --ckpt ... --data ... --mask-eval --seeds 4
//   tridiff eval --ckpt ... --data ... --tr 0
//
// Exit status: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tridiff/cli/commands.hpp"

namespace {

using namespace tridiff;
using namespace tridiff::cli;

struct Flag {
  const char* name;
  const char* key;  // section.key in the config tree
  const char* help;
};

// Flags every subcommand accepts.
const std::vector<Flag> kGlobalFlags = {
    {"--seed", "run.seed", "master seed"},
    {"--workers", "run.workers", "worker threads"},
    {"--precision", "run.precision", "f32 or f64"},
    {"--out-root", "paths.out_root", "directory for run directories"},
};

const std::vector<Flag> kModelFlags = {
    {"--image-res", "model.image_res", "image resolution M"},
    {"--plane-res", "model.plane_res", "triplane resolution N"},
    {"--features", "model.features", "triplane channels"},
    {"--widths", "model.widths", "encoder widths, comma separated"},
    {"--n-coarse", "render.n_coarse", "coarse samples per ray"},
    {"--n-fine", "render.n_fine", "fine samples per ray"},
    {"--T", "schedule.steps", "diffusion steps"},
};

const std::map<std::string, std::vector<Flag>> kCommandFlags = {
    {"gen-dataset",
     {{"--scenes", "data.scenes", "number of scenes"},
      {"--test-scenes", "data.test_scenes", "trailing scenes held out"},
      {"--views-train", "data.views_train", "training views per scene"},
      {"--views-test", "data.views_test", "held-out views per scene"},
      {"--res", "data.resolution", "image resolution"},
      {"--data-seed", "data.seed", "scene sampling seed (defaults to 1)"},
      {"--out", "paths.dataset", "output directory"}}},
    {"train",
     {{"--data", "paths.dataset", "dataset directory"},
      {"--steps", "train.steps", "optimizer steps"},
      {"--batch", "train.batch", "batch size"},
      {"--lr", "train.lr", "learning rate"},
      {"--lambda-sd", "train.lambda_sd", "score distillation weight"},
      {"--rho-sd", "train.rho_sd", "score distillation probability"},
      {"--ckpt-every", "train.checkpoint_every", "checkpoint cadence in steps"},
      {"--ema", "train.ema_decay", "parameter EMA decay (0 = off)"},
      {"--resume", "paths.checkpoint", "checkpoint to resume from"}}},
    {"generate",
     {{"--ckpt", "paths.checkpoint", "model checkpoint"},
      {"--seeds", "sampler.seeds", "number of samples"},
      {"--azimuth", "sampler.azimuth", "view azimuth in degrees"},
      {"--elevation", "sampler.elevation", "view elevation in degrees"},
      {"--radius", "sampler.radius", "camera distance"},
      {"--novel-views", "sampler.novel_views", "extra orbit renders per sample"}}},
    {"reconstruct",
     {{"--ckpt", "paths.checkpoint", "model checkpoint"},
      {"--data", "paths.dataset", "dataset directory"},
      {"--tr", "sampler.t_r", "starting noise level t_r"},
      {"--scene", "sampler.scene", "scene index"},
      {"--view", "sampler.view", "view index"},
      {"--split", "sampler.split", "view split of the input (train or test)"}}},
    {"inpaint",
     {{"--ckpt", "paths.checkpoint", "model checkpoint"},
      {"--data", "paths.dataset", "dataset directory"},
      {"--seeds", "sampler.seeds", "number of completions"},
      {"--mask", "sampler.mask", "eval or center"},
      {"--scene", "sampler.scene", "scene index"},
      {"--view", "sampler.view", "view index"},
      {"--split", "sampler.split", "view split of the input (train or test)"}}},
    {"eval",
     {{"--ckpt", "paths.checkpoint", "model checkpoint"},
      {"--data", "paths.dataset", "dataset directory"},
      {"--tr", "sampler.t_r", "starting noise level t_r"}}},
};

const std::map<std::string, const char*> kDescriptions = {
    {"gen-dataset", "render a synthetic multi-view dataset"},
    {"train", "train the denoiser"},
    {"generate", "sample new scenes"},
    {"reconstruct", "reconstruct a scene from one view"},
    {"inpaint", "complete a masked view"},
    {"eval", "single-view reconstruction metrics on held-out views"},
};

struct Parsed {
  std::string config;
  std::vector<std::string> overrides;
  std::map<std::string, std::string> values;  // config key -> flag value
  bool deterministic = false, mask_eval = false, score_distillation = false, use_ema = false;
};

template <class S>
CommandResult dispatch_typed(const std::string& cmd, const RunConfig& cfg) {
  if (cmd == "train") return cmd_train<S>(cfg);
  if (cmd == "generate") return cmd_generate<S>(cfg);
  if (cmd == "reconstruct") return cmd_reconstruct<S>(cfg);
  if (cmd == "inpaint") return cmd_inpaint<S>(cfg);
  return cmd_eval<S>(cfg);
}

CommandResult dispatch(const std::string& cmd, const RunConfig& cfg) {
  if (cmd == "gen-dataset") return cmd_gen_dataset(cfg);
  return cfg.precision == "f64" ? dispatch_typed<double>(cmd, cfg) : dispatch_typed<float>(cmd, cfg);
}

RunConfig resolve(const Parsed& p) {
  boost::property_tree::ptree pt;
  if (!p.config.empty()) pt = read_config_file(p.config);
  for (const auto& o : p.overrides) apply_override(pt, o);
  for (const auto& [key, value] : p.values) pt.put(key, value);
  if (p.deterministic) pt.put("run.deterministic", "true");
  if (p.mask_eval) pt.put("sampler.mask", "eval");
  if (p.score_distillation) pt.put("train.score_distillation", "true");
  if (p.use_ema) pt.put("sampler.use_ema", "true");
  auto cfg = from_ptree(pt);
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"3D-aware diffusion with a triplane denoiser"};
  app.require_subcommand(1);
  std::map<std::string, Parsed> parsed;
  for (const auto& [name, flags] : kCommandFlags) {
    auto* sub = app.add_subcommand(name, kDescriptions.at(name));
    auto& p = parsed[name];
    sub->add_option("--config", p.config, "INI config file");
    sub->add_option("--set", p.overrides, "override, section.key=value (repeatable)");
    sub->add_flag("--deterministic", p.deterministic, "single worker, no timing fields");
    auto add = [&](const Flag& f) {
      sub->add_option_function<std::string>(f.name, [&p, key = std::string(f.key)](const std::string& v) { p.values[key] = v; },
                                            f.help);
    };
    for (const auto& f : kGlobalFlags) add(f);
    for (const auto& f : flags) add(f);
    if (name != "gen-dataset")
      for (const auto& f : kModelFlags) add(f);
    if (name == "inpaint") sub->add_flag("--mask-eval", p.mask_eval, "use the evaluation mask rule");
    if (name == "train") sub->add_flag("--sd", p.score_distillation, "enable score distillation");
    if (name != "train" && name != "gen-dataset") sub->add_flag("--use-ema", p.use_ema, "sample with EMA weights");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    const auto cfg = resolve(parsed.at(cmd));
    const auto result = dispatch(cmd, cfg);
    std::cout << cmd << ": " << result.out.string() << "\n" << result.summary.dump() << "\n";
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
