#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "tridiff/io/image.hpp"
#include "tridiff/model/denoiser.hpp"

namespace tridiff {

// Layout (all integers little-endian):
//   8 bytes   magic "TRIDIFF\0"
//   u32       format version
//   u64       header length L
//   L bytes   JSON header: model, schedule and render config, free-form metadata,
//             and one entry {name, shape, dtype, offset, count} per blob
//   ...       blob payload; each blob is `count` raw f32/f64 values starting at
//             `offset` bytes after the header.
inline constexpr std::array<char, 8> kCheckpointMagic{'T', 'R', 'I', 'D', 'I', 'F', 'F', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct ScheduleConfig {
  int steps = 100;
  double offset = 0.008;

  void validate() const {
    if (steps < 1) throw std::invalid_argument("schedule: T must be >= 1");
    if (!(offset > 0.0)) throw std::invalid_argument("schedule: offset s must be positive");
  }
};

template <class S>
struct NamedArray {
  std::string name;
  ad::Shape shape;
  std::vector<S> data;
};

inline nlohmann::json render_config_to_json(const RenderConfig& r) {
  return {{"n_coarse", r.n_coarse},
          {"n_fine", r.n_fine},
          {"background", {r.background.x(), r.background.y(), r.background.z()}},
          {"stochastic", r.stochastic}};
}

inline RenderConfig render_config_from_json(const nlohmann::json& j) {
  RenderConfig r;
  r.n_coarse = j.at("n_coarse").get<int>();
  r.n_fine = j.at("n_fine").get<int>();
  const auto& b = j.at("background");
  r.background = Eigen::Vector3d(b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>());
  r.stochastic = j.at("stochastic").get<bool>();
  return r;
}

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  const auto& e = c.encoder;
  return {{"image_res", e.image_res},   {"plane_res", e.plane_res}, {"features", e.features},
          {"widths", e.widths},         {"res_blocks", e.res_blocks}, {"groups", e.groups},
          {"attention", e.attention},   {"n_freq", c.n_freq},       {"decoder_hidden", c.decoder_hidden},
          {"extent", c.extent},         {"render", render_config_to_json(c.render)}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  auto& e = c.encoder;
  e.image_res = j.at("image_res").get<int>();
  e.plane_res = j.at("plane_res").get<int>();
  e.features = j.at("features").get<int>();
  e.widths = j.at("widths").get<std::vector<int>>();
  e.res_blocks = j.at("res_blocks").get<int>();
  e.groups = j.at("groups").get<int>();
  e.attention = j.at("attention").get<bool>();
  c.n_freq = j.at("n_freq").get<int>();
  c.decoder_hidden = j.at("decoder_hidden").get<int>();
  c.extent = j.at("extent").get<double>();
  c.render = render_config_from_json(j.at("render"));
  c.validate();
  return c;
}

template <class S>
struct Checkpoint {
  ModelConfig model;
  ScheduleConfig schedule;
  DenoiserParams<S> params;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedArray<S>> extra;  // e.g. optimizer moments

  const NamedArray<S>* find_extra(const std::string& name) const {
    for (const auto& a : extra)
      if (a.name == name) return &a;
    return nullptr;
  }
};

namespace detail {

template <class S>
constexpr const char* dtype_name() {
  static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>);
  return std::is_same_v<S, float> ? "f32" : "f64";
}

inline void put_u32(std::ostream& o, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) o.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::ostream& o, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) o.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline std::uint64_t get_le(std::istream& in, int bytes, const std::string& where) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = in.get();
    if (c == EOF) throw IoError("checkpoint truncated: " + where);
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

}  // namespace detail

// Writes to a temporary sibling and renames, so an existing file is replaced only
// by a complete checkpoint.
template <class S>
void save_checkpoint(const std::filesystem::path& path, const DenoiserParams<S>& params, const ScheduleConfig& schedule,
                     const nlohmann::json& meta = nlohmann::json::object(),
                     const std::vector<NamedArray<S>>& extra = {}) {
  struct Entry {
    std::string name;
    ad::Shape shape;
    const S* data;
    std::size_t count;
  };
  std::vector<Entry> entries;
  for (const auto& [name, t] : params.named()) entries.push_back({name, t.shape(), t.vec().data(), t.vec().size()});
  for (const auto& a : extra) entries.push_back({"extra." + a.name, a.shape, a.data.data(), a.data.size()});

  nlohmann::json blobs = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& e : entries) {
    blobs.push_back({{"name", e.name}, {"shape", e.shape}, {"dtype", detail::dtype_name<S>()}, {"offset", offset},
                     {"count", e.count}});
    offset += e.count * sizeof(S);
  }
  const nlohmann::json header = {{"model", model_config_to_json(params.cfg)},
                                 {"schedule", {{"steps", schedule.steps}, {"offset", schedule.offset}}},
                                 {"meta", meta},
                                 {"blobs", blobs}};
  const std::string text = header.dump();

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& e : entries)
      out.write(reinterpret_cast<const char*>(e.data), static_cast<std::streamsize>(e.count * sizeof(S)));
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

inline nlohmann::json read_checkpoint_header(std::istream& in, const std::string& where) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kCheckpointMagic) throw IoError("not a checkpoint (bad magic): " + where);
  const auto version = static_cast<std::uint32_t>(detail::get_le(in, 4, where));
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) + ": " + where);
  const auto len = detail::get_le(in, 8, where);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("checkpoint truncated: " + where);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint header in " + where + ": " + e.what());
  }
}

// Blobs stored in a different precision are converted.
template <class S>
Checkpoint<S> load_checkpoint(const std::filesystem::path& path) {
  const std::string where = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint not found: " + where);
  const auto header = read_checkpoint_header(in, where);
  const auto payload_start = in.tellg();

  Checkpoint<S> ck;
  ck.model = model_config_from_json(header.at("model"));
  ck.schedule.steps = header.at("schedule").at("steps").get<int>();
  ck.schedule.offset = header.at("schedule").at("offset").get<double>();
  ck.meta = header.value("meta", nlohmann::json::object());
  ck.params = init_denoiser<S>(ck.model, 0);

  auto read_blob = [&](const nlohmann::json& b) {
    const auto count = b.at("count").get<std::size_t>();
    const auto dtype = b.at("dtype").get<std::string>();
    in.seekg(payload_start + static_cast<std::streamoff>(b.at("offset").get<std::uint64_t>()));
    std::vector<S> out(count);
    auto convert = [&](auto tag) {
      using D = decltype(tag);
      std::vector<D> raw(count);
      in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count * sizeof(D)));
      if (!in) throw IoError("checkpoint truncated in blob " + b.at("name").get<std::string>() + ": " + where);
      for (std::size_t i = 0; i < count; ++i) out[i] = static_cast<S>(raw[i]);
    };
    if (dtype == "f32") convert(float{});
    else if (dtype == "f64") convert(double{});
    else throw IoError("unknown blob dtype " + dtype + ": " + where);
    return out;
  };

  auto named = ck.params.named();
  std::vector<bool> seen(named.size(), false);
  for (const auto& b : header.at("blobs")) {
    const auto name = b.at("name").get<std::string>();
    const auto shape = b.at("shape").get<ad::Shape>();
    if (name.rfind("extra.", 0) == 0) {
      ck.extra.push_back({name.substr(6), shape, read_blob(b)});
      continue;
    }
    std::size_t k = 0;
    while (k < named.size() && named[k].first != name) ++k;
    if (k == named.size()) throw IoError("checkpoint has unknown parameter " + name + ": " + where);
    auto& t = named[k].second;
    if (t.shape() != shape)
      throw IoError("checkpoint parameter " + name + " has shape " + ad::to_string(shape) + ", model expects " +
                    ad::to_string(t.shape()) + ": " + where);
    const auto values = read_blob(b);
    auto dst = t.mutable_data();
    std::copy(values.begin(), values.end(), dst.begin());
    seen[k] = true;
  }
  for (std::size_t k = 0; k < named.size(); ++k)
    if (!seen[k]) throw IoError("checkpoint is missing parameter " + named[k].first + ": " + where);
  return ck;
}

}  // namespace tridiff
