#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tridiff/io/image.hpp"
#include "tridiff/render/camera.hpp"
#include "tridiff/util/rng.hpp"

namespace tridiff {

enum class Primitive { sphere, cube, cylinder };

inline const char* primitive_name(Primitive p) {
  switch (p) {
    case Primitive::sphere: return "sphere";
    case Primitive::cube: return "cube";
    case Primitive::cylinder: return "cylinder";
  }
  return "?";
}

inline Primitive parse_primitive(const std::string& s) {
  if (s == "sphere") return Primitive::sphere;
  if (s == "cube") return Primitive::cube;
  if (s == "cylinder") return Primitive::cylinder;
  throw std::invalid_argument("unknown primitive '" + s + "'");
}

struct PaletteColor {
  const char* name;
  std::array<int, 3> rgb;
};

// The eight CLEVR colours.
inline constexpr std::array<PaletteColor, 8> kPalette{{{"gray", {87, 87, 87}},
                                                       {"red", {173, 35, 35}},
                                                       {"blue", {42, 75, 215}},
                                                       {"green", {29, 105, 20}},
                                                       {"brown", {129, 74, 25}},
                                                       {"purple", {129, 38, 192}},
                                                       {"cyan", {41, 208, 208}},
                                                       {"yellow", {255, 238, 51}}}};

inline Eigen::Vector3d palette_rgb(int index) {
  const auto& c = kPalette.at(static_cast<std::size_t>(index)).rgb;
  return Eigen::Vector3d(c[0], c[1], c[2]) / 255.0;
}

// Sphere: radius size. Cube: half-extent size. Cylinder: radius size, height 2 size.
// Every primitive is centred on the z axis and rests on z = 0.
struct SceneSpec {
  Primitive shape = Primitive::sphere;
  double size = 0.5;
  int color = 0;  // palette index

  Eigen::Vector3d center() const { return {0.0, 0.0, size}; }
  Eigen::Vector3d albedo() const { return palette_rgb(color); }
};

struct SceneConfig {
  double min_size = 0.35;
  double max_size = 0.75;

  void validate() const {
    if (!(min_size > 0.0 && min_size <= max_size))
      throw std::invalid_argument("scene: need 0 < min_size <= max_size");
  }
};

template <class Rng>
SceneSpec sample_scene(Rng& rng, const SceneConfig& cfg = {}) {
  cfg.validate();
  SceneSpec s;
  s.shape = static_cast<Primitive>(std::uniform_int_distribution<int>(0, 2)(rng));
  s.size = std::uniform_real_distribution<double>(cfg.min_size, cfg.max_size)(rng);
  s.color = std::uniform_int_distribution<int>(0, static_cast<int>(kPalette.size()) - 1)(rng);
  return s;
}

namespace oracle {

inline constexpr double kAmbient = 0.3;
inline constexpr double kGroundAlbedo = 0.75;
inline const Eigen::Vector3d kLight = Eigen::Vector3d(0.45, 0.3, 0.85).normalized();  // towards the light
inline const Eigen::Vector3d kSceneTarget(0.0, 0.0, 0.5);

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Eigen::Vector3d normal = Eigen::Vector3d::Zero();
  bool valid() const { return std::isfinite(t); }
};

inline void keep_nearer(Hit& best, double t, const Eigen::Vector3d& n, double t_min) {
  if (t > t_min && t < best.t) {
    best.t = t;
    best.normal = n;
  }
}

inline Hit intersect_sphere(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const Eigen::Vector3d& c, double r,
                            double t_min) {
  Hit h;
  const Eigen::Vector3d oc = o - c;
  const double b = oc.dot(d), cc = oc.squaredNorm() - r * r, disc = b * b - cc;
  if (disc < 0.0) return h;
  const double s = std::sqrt(disc);
  for (double t : {-b - s, -b + s}) keep_nearer(h, t, (o + t * d - c).normalized(), t_min);
  return h;
}

// Axis-aligned box [lo, hi] by slabs.
inline Hit intersect_box(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const Eigen::Vector3d& lo,
                         const Eigen::Vector3d& hi, double t_min) {
  double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
  int axis0 = -1, axis1 = -1;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] < lo[a] || o[a] > hi[a]) return {};
      continue;
    }
    double ta = (lo[a] - o[a]) / d[a], tb = (hi[a] - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    if (ta > t0) {
      t0 = ta;
      axis0 = a;
    }
    if (tb < t1) {
      t1 = tb;
      axis1 = a;
    }
  }
  Hit h;
  if (t0 > t1) return h;
  auto normal = [&](int a, double t) {
    Eigen::Vector3d n = Eigen::Vector3d::Zero();
    const Eigen::Vector3d p = o + t * d;
    n[a] = std::abs(p[a] - hi[a]) < std::abs(p[a] - lo[a]) ? 1.0 : -1.0;
    return n;
  };
  if (axis0 >= 0) keep_nearer(h, t0, normal(axis0, t0), t_min);
  if (!h.valid() && axis1 >= 0) keep_nearer(h, t1, normal(axis1, t1), t_min);
  return h;
}

// Upright cylinder around the z axis between z0 and z1.
inline Hit intersect_cylinder(const Eigen::Vector3d& o, const Eigen::Vector3d& d, double r, double z0, double z1,
                              double t_min) {
  Hit h;
  const double a = d.x() * d.x() + d.y() * d.y();
  if (a > 1e-15) {
    const double b = o.x() * d.x() + o.y() * d.y(), c = o.x() * o.x() + o.y() * o.y() - r * r;
    const double disc = b * b - a * c;
    if (disc >= 0.0) {
      const double s = std::sqrt(disc);
      for (double t : {(-b - s) / a, (-b + s) / a}) {
        const Eigen::Vector3d p = o + t * d;
        if (p.z() >= z0 && p.z() <= z1) keep_nearer(h, t, Eigen::Vector3d(p.x(), p.y(), 0.0).normalized(), t_min);
      }
    }
  }
  if (std::abs(d.z()) > 1e-15) {
    for (double zc : {z0, z1}) {
      const double t = (zc - o.z()) / d.z();
      const Eigen::Vector3d p = o + t * d;
      if (p.x() * p.x() + p.y() * p.y() <= r * r) keep_nearer(h, t, Eigen::Vector3d(0, 0, zc == z1 ? 1.0 : -1.0), t_min);
    }
  }
  return h;
}

inline Hit intersect_object(const SceneSpec& s, const Eigen::Vector3d& o, const Eigen::Vector3d& d, double t_min) {
  const double r = s.size;
  switch (s.shape) {
    case Primitive::sphere: return intersect_sphere(o, d, s.center(), r, t_min);
    case Primitive::cube: return intersect_box(o, d, Eigen::Vector3d(-r, -r, 0), Eigen::Vector3d(r, r, 2 * r), t_min);
    case Primitive::cylinder: return intersect_cylinder(o, d, r, 0.0, 2 * r, t_min);
  }
  return {};
}

inline Hit intersect_ground(const Eigen::Vector3d& o, const Eigen::Vector3d& d, double t_min) {
  Hit h;
  if (std::abs(d.z()) > 1e-15) keep_nearer(h, -o.z() / d.z(), Eigen::Vector3d::UnitZ(), t_min);
  return h;
}

inline double lambert(const Eigen::Vector3d& n, bool shadowed) {
  return kAmbient + (1.0 - kAmbient) * (shadowed ? 0.0 : std::max(0.0, n.dot(kLight)));
}

}  // namespace oracle

struct OracleImage {
  Image rgb;                       // [M, M, 3], white background
  std::vector<std::uint8_t> mask;  // 1 where the primary ray hits the object
  std::vector<double> depth;       // hit distance, far for background
};

// Analytic ray tracer: object and ground plane z = 0, Lambertian shading from one
// directional light plus ambient, hard shadows cast by the object. Hits beyond the
// camera's far distance show the background.
inline OracleImage oracle_render(const SceneSpec& scene, const Camera& cam) {
  const int M = cam.resolution;
  OracleImage out;
  out.rgb = Image(M, M, 3, 1.0);
  out.mask.assign(static_cast<std::size_t>(M) * M, 0);
  out.depth.assign(static_cast<std::size_t>(M) * M, cam.far);
  const auto rays = camera_rays(cam);
  for (std::size_t k = 0; k < rays.size(); ++k) {
    const Eigen::Vector3d& o = rays[k].origin;
    const Eigen::Vector3d& d = rays[k].direction;
    const auto obj = oracle::intersect_object(scene, o, d, 0.0);
    const auto gnd = oracle::intersect_ground(o, d, 0.0);
    const bool is_obj = obj.valid() && obj.t <= gnd.t;
    const oracle::Hit& h = is_obj ? obj : gnd;
    if (!h.valid() || h.t > cam.far) continue;
    Eigen::Vector3d albedo = is_obj ? scene.albedo() : Eigen::Vector3d::Constant(oracle::kGroundAlbedo);
    bool shadowed = false;
    if (!is_obj) {
      const Eigen::Vector3d p = o + h.t * d + 1e-7 * h.normal;
      shadowed = oracle::intersect_object(scene, p, oracle::kLight, 0.0).valid();
    }
    const Eigen::Vector3d c = albedo * oracle::lambert(h.normal, shadowed);
    for (int ch = 0; ch < 3; ++ch) out.rgb.data[3 * k + ch] = c[ch];
    out.mask[k] = is_obj ? 1 : 0;
    out.depth[k] = h.t;
  }
  return out;
}

// ---------------------------------------------------------------------------
// On-disk dataset

inline constexpr int kDatasetFormatVersion = 1;

struct DatasetConfig {
  int n_scenes = 16;
  int n_test_scenes = 0;  // trailing scenes held out entirely
  int n_views_train = 8;
  int n_views_test = 4;
  int resolution = 32;
  std::uint64_t seed = 1;
  SceneConfig scene;
  std::filesystem::path out_dir;

  void validate() const {
    if (n_scenes < 1) throw std::invalid_argument("dataset: scene count must be >= 1");
    if (n_test_scenes < 0 || n_test_scenes >= n_scenes)
      throw std::invalid_argument("dataset: test scene count must be in [0, scenes)");
    if (n_views_train < 1 || n_views_test < 0) throw std::invalid_argument("dataset: need >= 1 train view");
    if (resolution < 1) throw std::invalid_argument("dataset: resolution must be positive");
    scene.validate();
  }
};

struct ViewRecord {
  int index = 0;
  bool train = true;  // view split within the scene
  std::string file;   // relative to the dataset root
  double azimuth = 0.0, elevation = 0.0;
  Camera camera;
};

struct SceneRecord {
  int index = 0;
  bool train = true;  // scene split
  SceneSpec spec;
  std::vector<ViewRecord> views;

  std::vector<const ViewRecord*> split(bool train_views) const {
    std::vector<const ViewRecord*> out;
    for (const auto& v : views)
      if (v.train == train_views) out.push_back(&v);
    return out;
  }
};

struct DatasetManifest {
  int format_version = kDatasetFormatVersion;
  DatasetConfig config;
  std::vector<SceneRecord> scenes;
};

inline nlohmann::json camera_to_json(const Camera& c) {
  nlohmann::json rot = nlohmann::json::array();
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k) rot.push_back(c.pose.rotation(r, k));
  return {{"rotation", rot},
          {"position", {c.pose.position.x(), c.pose.position.y(), c.pose.position.z()}},
          {"focal", c.focal},
          {"principal_point", {c.cx, c.cy}},
          {"resolution", c.resolution},
          {"near", c.near},
          {"far", c.far}};
}

inline Camera camera_from_json(const nlohmann::json& j) {
  Camera c;
  const auto& rot = j.at("rotation");
  if (rot.size() != 9) throw std::invalid_argument("camera: rotation needs 9 numbers");
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k) c.pose.rotation(r, k) = rot.at(3 * r + k).get<double>();
  const auto& p = j.at("position");
  c.pose.position = Eigen::Vector3d(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>());
  c.focal = j.at("focal").get<double>();
  c.cx = j.at("principal_point").at(0).get<double>();
  c.cy = j.at("principal_point").at(1).get<double>();
  c.resolution = j.at("resolution").get<int>();
  c.near = j.value("near", camera_defaults::kNear);
  c.far = j.value("far", camera_defaults::kFar);
  c.validate();
  return c;
}

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json scenes = nlohmann::json::array();
  for (const auto& s : m.scenes) {
    nlohmann::json views = nlohmann::json::array();
    for (const auto& v : s.views)
      views.push_back({{"index", v.index},
                       {"split", v.train ? "train" : "test"},
                       {"file", v.file},
                       {"azimuth", v.azimuth},
                       {"elevation", v.elevation},
                       {"camera", camera_to_json(v.camera)}});
    scenes.push_back({{"index", s.index},
                      {"split", s.train ? "train" : "test"},
                      {"shape", primitive_name(s.spec.shape)},
                      {"size", s.spec.size},
                      {"color", kPalette.at(static_cast<std::size_t>(s.spec.color)).name},
                      {"color_index", s.spec.color},
                      {"views", views}});
  }
  const auto& c = m.config;
  return {{"format_version", m.format_version},
          {"scene_count", c.n_scenes},
          {"test_scene_count", c.n_test_scenes},
          {"views_train", c.n_views_train},
          {"views_test", c.n_views_test},
          {"resolution", c.resolution},
          {"seed", c.seed},
          {"size_range", {c.scene.min_size, c.scene.max_size}},
          {"scenes", scenes}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.format_version = j.at("format_version").get<int>();
  if (m.format_version != kDatasetFormatVersion)
    throw std::invalid_argument("manifest: unsupported format version " + std::to_string(m.format_version));
  auto& c = m.config;
  c.n_scenes = j.at("scene_count").get<int>();
  c.n_test_scenes = j.at("test_scene_count").get<int>();
  c.n_views_train = j.at("views_train").get<int>();
  c.n_views_test = j.at("views_test").get<int>();
  c.resolution = j.at("resolution").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.scene.min_size = j.at("size_range").at(0).get<double>();
  c.scene.max_size = j.at("size_range").at(1).get<double>();
  for (const auto& js : j.at("scenes")) {
    SceneRecord s;
    s.index = js.at("index").get<int>();
    s.train = js.at("split").get<std::string>() == "train";
    s.spec.shape = parse_primitive(js.at("shape").get<std::string>());
    s.spec.size = js.at("size").get<double>();
    s.spec.color = js.at("color_index").get<int>();
    for (const auto& jv : js.at("views")) {
      ViewRecord v;
      v.index = jv.at("index").get<int>();
      v.train = jv.at("split").get<std::string>() == "train";
      v.file = jv.at("file").get<std::string>();
      v.azimuth = jv.at("azimuth").get<double>();
      v.elevation = jv.at("elevation").get<double>();
      v.camera = camera_from_json(jv.at("camera"));
      s.views.push_back(std::move(v));
    }
    m.scenes.push_back(std::move(s));
  }
  if (static_cast<int>(m.scenes.size()) != c.n_scenes)
    throw std::invalid_argument("manifest: scene count does not match scene list");
  return m;
}

inline constexpr const char* kManifestName = "manifest.json";

inline void write_manifest(const std::filesystem::path& dir, const DatasetManifest& m) {
  const auto path = dir / kManifestName;
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << manifest_to_json(m).dump(2) << "\n";
  if (!f) throw IoError("write failed: " + path.string());
}

inline DatasetManifest load_manifest(const std::filesystem::path& dir) {
  const auto path = dir / kManifestName;
  std::ifstream f(path);
  if (!f) throw IoError("dataset manifest not found: " + path.string());
  try {
    return manifest_from_json(nlohmann::json::parse(f));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest " + path.string() + ": " + e.what());
  }
}

// Builds the manifest (scenes, poses, file names) without rendering.
inline DatasetManifest plan_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  DatasetManifest m;
  m.config = cfg;
  for (int k = 0; k < cfg.n_scenes; ++k) {
    std::mt19937_64 rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(k)}));
    SceneRecord s;
    s.index = k;
    s.train = k < cfg.n_scenes - cfg.n_test_scenes;
    s.spec = sample_scene(rng, cfg.scene);
    for (int j = 0; j < cfg.n_views_train + cfg.n_views_test; ++j) {
      const auto pose = sample_hemisphere_pose(rng, radians(camera_defaults::kMinElevationDegrees),
                                               camera_defaults::kRadius, oracle::kSceneTarget);
      ViewRecord v;
      v.index = j;
      v.train = j < cfg.n_views_train;
      v.file = "scene_" + std::to_string(k) + "/view_" + std::to_string(j) + ".png";
      v.azimuth = pose.azimuth;
      v.elevation = pose.elevation;
      v.camera = make_camera(cfg.resolution, pose.pose);
      s.views.push_back(std::move(v));
    }
    m.scenes.push_back(std::move(s));
  }
  return m;
}

inline DatasetManifest generate_dataset(const DatasetConfig& cfg) {
  auto m = plan_dataset(cfg);
  std::error_code ec;
  std::filesystem::create_directories(cfg.out_dir, ec);
  if (ec) throw IoError("cannot create " + cfg.out_dir.string() + ": " + ec.message());
  for (const auto& s : m.scenes) {
    std::filesystem::create_directories(cfg.out_dir / ("scene_" + std::to_string(s.index)), ec);
    if (ec) throw IoError("cannot create scene directory under " + cfg.out_dir.string() + ": " + ec.message());
    for (const auto& v : s.views) write_png(cfg.out_dir / v.file, oracle_render(s.spec, v.camera).rgb);
  }
  write_manifest(cfg.out_dir, m);
  return m;
}

// One posed image, loaded from disk.
struct PosedImage {
  int scene = 0, view = 0;
  Image image;
  Camera camera;
};

inline std::vector<PosedImage> load_views(const std::filesystem::path& root, const DatasetManifest& m,
                                          bool train_scenes, bool train_views) {
  std::vector<PosedImage> out;
  for (const auto& s : m.scenes) {
    if (s.train != train_scenes) continue;
    for (const auto* v : s.split(train_views)) {
      PosedImage p{s.index, v->index, read_png(root / v->file), v->camera};
      if (p.image.height != v->camera.resolution || p.image.width != v->camera.resolution)
        throw IoError("image size does not match camera: " + (root / v->file).string());
      out.push_back(std::move(p));
    }
  }
  return out;
}

}  // namespace tridiff
