#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "tridiff/data/clevr.hpp"
#include "tridiff/model/checkpoint.hpp"
#include "tridiff/train/train.hpp"

namespace tridiff::cli {

// Bad flags, bad config values, failed validation: exit status 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kDataRootEnv = "TRIDIFF_DATA_ROOT";

// $TRIDIFF_DATA_ROOT, or ./data when unset.
inline std::filesystem::path default_data_root() {
  const char* env = std::getenv(kDataRootEnv);
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("data");
}

struct SamplerOptions {
  int t_r = 0;
  int seeds = 1;           // number of samples / completions
  std::string mask = "eval";  // eval | center
  double azimuth_deg = 0.0, elevation_deg = 30.0, radius = camera_defaults::kRadius;
  int novel_views = 0;     // extra orbit renders of the final triplane
  int scene = 0, view = 0;
  std::string split = "test";  // which view split the input image comes from
  bool use_ema = false;        // sample with the checkpoint's EMA weights

  void validate() const {
    if (t_r < 0) throw ConfigError("sampler.t_r must be >= 0");
    if (seeds < 1) throw ConfigError("sampler.seeds must be >= 1");
    if (mask != "eval" && mask != "center") throw ConfigError("sampler.mask must be eval or center, got " + mask);
    if (!(radius > 0.0)) throw ConfigError("sampler.radius must be positive");
    if (!(elevation_deg > -90.0 && elevation_deg <= 90.0)) throw ConfigError("sampler.elevation must be in (-90, 90]");
    if (novel_views < 0) throw ConfigError("sampler.novel_views must be >= 0");
    if (scene < 0 || view < 0) throw ConfigError("sampler.scene and sampler.view must be >= 0");
    if (split != "train" && split != "test") throw ConfigError("sampler.split must be train or test, got " + split);
  }
};

struct RunConfig {
  ModelConfig model;
  ScheduleConfig schedule;
  TrainConfig train;
  DatasetConfig data;
  SamplerOptions sampler;
  std::filesystem::path dataset;     // dataset directory read by train/reconstruct/inpaint/eval
  std::filesystem::path checkpoint;  // read by generate/reconstruct/inpaint/eval; train --resume
  std::filesystem::path out_root;    // run directories are created here
  std::string precision = "f32";
  std::uint64_t seed = 0;
  int workers = 1;
  bool deterministic = false;

  void validate() const {
    try {
      model.validate();
      schedule.validate();
      train.validate();
      data.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    sampler.validate();
    if (sampler.t_r > schedule.steps)
      throw ConfigError("sampler.t_r = " + std::to_string(sampler.t_r) + " exceeds schedule.steps = " +
                        std::to_string(schedule.steps));
    if (precision != "f32" && precision != "f64") throw ConfigError("run.precision must be f32 or f64");
    if (workers < 1) throw ConfigError("run.workers must be >= 1");
  }
};

namespace detail {

inline std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::vector<int> split_ints(const std::string& s, const std::string& key) {
  std::vector<int> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(key + ": expected comma-separated integers, got '" + s + "'");
    }
  }
  return out;
}

template <class T>
T get(const boost::property_tree::ptree& pt, const std::string& key, const T& fallback) {
  if (!pt.get_child_optional(key)) return fallback;
  try {
    return pt.get<T>(key);  // the defaulted overload swallows parse errors
  } catch (const boost::property_tree::ptree_error&) {
    throw ConfigError("config key " + key + ": cannot parse '" + pt.get<std::string>(key, "") + "'");
  }
}

}  // namespace detail

// Every key the config understands, written in section.key form.
inline boost::property_tree::ptree to_ptree(const RunConfig& c) {
  boost::property_tree::ptree pt;
  const auto& e = c.model.encoder;
  pt.put("model.image_res", e.image_res);
  pt.put("model.plane_res", e.plane_res);
  pt.put("model.features", e.features);
  pt.put("model.widths", detail::join_ints(e.widths));
  pt.put("model.res_blocks", e.res_blocks);
  pt.put("model.groups", e.groups);
  pt.put("model.attention", e.attention);
  pt.put("model.n_freq", c.model.n_freq);
  pt.put("model.decoder_hidden", c.model.decoder_hidden);
  pt.put("model.extent", c.model.extent);
  pt.put("render.n_coarse", c.model.render.n_coarse);
  pt.put("render.n_fine", c.model.render.n_fine);
  pt.put("render.background", std::to_string(c.model.render.background.x()) + "," +
                                  std::to_string(c.model.render.background.y()) + "," +
                                  std::to_string(c.model.render.background.z()));
  pt.put("render.stochastic", c.model.render.stochastic);
  pt.put("schedule.steps", c.schedule.steps);
  pt.put("schedule.offset", c.schedule.offset);
  pt.put("train.batch", c.train.batch);
  pt.put("train.steps", c.train.steps);
  pt.put("train.lr", c.train.adam.lr);
  pt.put("train.beta1", c.train.adam.beta1);
  pt.put("train.beta2", c.train.adam.beta2);
  pt.put("train.eps", c.train.adam.eps);
  pt.put("train.weight_decay", c.train.adam.weight_decay);
  pt.put("train.score_distillation", c.train.score_distillation);
  pt.put("train.lambda_sd", c.train.lambda_sd);
  pt.put("train.rho_sd", c.train.rho_sd);
  pt.put("train.checkpoint_every", c.train.checkpoint_every);
  pt.put("train.ema_decay", c.train.ema_decay);
  pt.put("data.scenes", c.data.n_scenes);
  pt.put("data.test_scenes", c.data.n_test_scenes);
  pt.put("data.views_train", c.data.n_views_train);
  pt.put("data.views_test", c.data.n_views_test);
  pt.put("data.resolution", c.data.resolution);
  pt.put("data.seed", c.data.seed);
  pt.put("data.min_size", c.data.scene.min_size);
  pt.put("data.max_size", c.data.scene.max_size);
  pt.put("sampler.t_r", c.sampler.t_r);
  pt.put("sampler.seeds", c.sampler.seeds);
  pt.put("sampler.mask", c.sampler.mask);
  pt.put("sampler.azimuth", c.sampler.azimuth_deg);
  pt.put("sampler.elevation", c.sampler.elevation_deg);
  pt.put("sampler.radius", c.sampler.radius);
  pt.put("sampler.novel_views", c.sampler.novel_views);
  pt.put("sampler.scene", c.sampler.scene);
  pt.put("sampler.view", c.sampler.view);
  pt.put("sampler.split", c.sampler.split);
  pt.put("sampler.use_ema", c.sampler.use_ema);
  pt.put("paths.dataset", c.dataset.string());
  pt.put("paths.checkpoint", c.checkpoint.string());
  pt.put("paths.out_root", c.out_root.string());
  pt.put("run.precision", c.precision);
  pt.put("run.seed", c.seed);
  pt.put("run.workers", c.workers);
  pt.put("run.deterministic", c.deterministic);
  return pt;
}

// Unknown keys are rejected so that typos do not pass silently.
inline RunConfig from_ptree(const boost::property_tree::ptree& pt) {
  const auto known = to_ptree(RunConfig{});
  for (const auto& [section, body] : pt) {
    if (body.empty() && !body.data().empty()) throw ConfigError("config key outside a section: " + section);
    for (const auto& [key, _] : body)
      if (!known.get_child_optional(section + "." + key)) throw ConfigError("unknown config key " + section + "." + key);
  }
  RunConfig c;
  using detail::get;
  auto& e = c.model.encoder;
  e.image_res = get(pt, "model.image_res", e.image_res);
  e.plane_res = get(pt, "model.plane_res", e.plane_res);
  e.features = get(pt, "model.features", e.features);
  if (auto w = pt.get_optional<std::string>("model.widths")) e.widths = detail::split_ints(*w, "model.widths");
  e.res_blocks = get(pt, "model.res_blocks", e.res_blocks);
  e.groups = get(pt, "model.groups", e.groups);
  e.attention = get(pt, "model.attention", e.attention);
  c.model.n_freq = get(pt, "model.n_freq", c.model.n_freq);
  c.model.decoder_hidden = get(pt, "model.decoder_hidden", c.model.decoder_hidden);
  c.model.extent = get(pt, "model.extent", c.model.extent);
  auto& r = c.model.render;
  r.n_coarse = get(pt, "render.n_coarse", r.n_coarse);
  r.n_fine = get(pt, "render.n_fine", r.n_fine);
  if (auto bg = pt.get_optional<std::string>("render.background")) {
    std::stringstream in(*bg);
    std::string item;
    std::vector<double> v;
    while (std::getline(in, item, ',')) {
      try {
        v.push_back(std::stod(item));
      } catch (const std::exception&) {
        v.clear();
        break;
      }
    }
    if (v.size() != 3) throw ConfigError("render.background: expected r,g,b, got '" + *bg + "'");
    r.background = Eigen::Vector3d(v[0], v[1], v[2]);
  }
  r.stochastic = get(pt, "render.stochastic", r.stochastic);
  c.schedule.steps = get(pt, "schedule.steps", c.schedule.steps);
  c.schedule.offset = get(pt, "schedule.offset", c.schedule.offset);
  auto& t = c.train;
  t.batch = get(pt, "train.batch", t.batch);
  t.steps = get(pt, "train.steps", t.steps);
  t.adam.lr = get(pt, "train.lr", t.adam.lr);
  t.adam.beta1 = get(pt, "train.beta1", t.adam.beta1);
  t.adam.beta2 = get(pt, "train.beta2", t.adam.beta2);
  t.adam.eps = get(pt, "train.eps", t.adam.eps);
  t.adam.weight_decay = get(pt, "train.weight_decay", t.adam.weight_decay);
  t.score_distillation = get(pt, "train.score_distillation", t.score_distillation);
  t.lambda_sd = get(pt, "train.lambda_sd", t.lambda_sd);
  t.rho_sd = get(pt, "train.rho_sd", t.rho_sd);
  t.checkpoint_every = get(pt, "train.checkpoint_every", t.checkpoint_every);
  t.ema_decay = get(pt, "train.ema_decay", t.ema_decay);
  auto& d = c.data;
  d.n_scenes = get(pt, "data.scenes", d.n_scenes);
  d.n_test_scenes = get(pt, "data.test_scenes", d.n_test_scenes);
  d.n_views_train = get(pt, "data.views_train", d.n_views_train);
  d.n_views_test = get(pt, "data.views_test", d.n_views_test);
  d.resolution = get(pt, "data.resolution", d.resolution);
  d.seed = get(pt, "data.seed", d.seed);
  d.scene.min_size = get(pt, "data.min_size", d.scene.min_size);
  d.scene.max_size = get(pt, "data.max_size", d.scene.max_size);
  auto& s = c.sampler;
  s.t_r = get(pt, "sampler.t_r", s.t_r);
  s.seeds = get(pt, "sampler.seeds", s.seeds);
  s.mask = get(pt, "sampler.mask", s.mask);
  s.azimuth_deg = get(pt, "sampler.azimuth", s.azimuth_deg);
  s.elevation_deg = get(pt, "sampler.elevation", s.elevation_deg);
  s.radius = get(pt, "sampler.radius", s.radius);
  s.novel_views = get(pt, "sampler.novel_views", s.novel_views);
  s.scene = get(pt, "sampler.scene", s.scene);
  s.view = get(pt, "sampler.view", s.view);
  s.split = get(pt, "sampler.split", s.split);
  s.use_ema = get(pt, "sampler.use_ema", s.use_ema);
  c.dataset = get<std::string>(pt, "paths.dataset", "");
  c.checkpoint = get<std::string>(pt, "paths.checkpoint", "");
  c.out_root = get<std::string>(pt, "paths.out_root", "");
  c.precision = get(pt, "run.precision", c.precision);
  c.seed = get(pt, "run.seed", c.seed);
  c.workers = get(pt, "run.workers", c.workers);
  c.deterministic = get(pt, "run.deterministic", c.deterministic);

  // Derived settings.
  t.seed = c.seed;
  if (c.deterministic) c.workers = 1;
  t.workers = c.workers;
  t.deterministic = c.deterministic;
  return c;
}

inline boost::property_tree::ptree read_config_file(const std::filesystem::path& path) {
  boost::property_tree::ptree pt;
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  try {
    boost::property_tree::read_ini(path.string(), pt);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("cannot parse config " + path.string() + ": " + e.message());
  }
  return pt;
}

// "section.key=value" overrides applied on top of `pt`.
inline void apply_override(boost::property_tree::ptree& pt, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like section.key=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  if (key.find('.') == std::string::npos) throw ConfigError("override key needs a section: " + key);
  pt.put(key, assignment.substr(eq + 1));
}

inline std::string to_ini(const RunConfig& c) {
  std::ostringstream out;
  boost::property_tree::write_ini(out, to_ptree(c));
  return out.str();
}

}  // namespace tridiff::cli
