#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "tridiff/io/image.hpp"
#include "tridiff/render/camera.hpp"

namespace tridiff::cli {

inline std::string to_hex(const unsigned char* bytes, std::size_t n) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(2 * n, '0');
  for (std::size_t i = 0; i < n; ++i) {
    s[2 * i] = kDigits[bytes[i] >> 4];
    s[2 * i + 1] = kDigits[bytes[i] & 15];
  }
  return s;
}

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 init failed");
  }
  Sha256& update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_.get(), data, n) != 1) throw std::runtime_error("sha256 update failed");
    return *this;
  }
  Sha256& update(const std::string& s) { return update(s.data(), s.size()); }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> out{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), out.data(), &len) != 1) throw std::runtime_error("sha256 final failed");
    return to_hex(out.data(), len);
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

inline std::string sha256_hex(const std::string& s) { return Sha256().update(s).hex(); }

inline std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  Sha256 h;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

// out_root/run_<UTC yyyymmddThhmmss>_<8 hex of key>; an existing name gets a
// numeric suffix, so earlier runs are never overwritten.
inline std::filesystem::path create_run_dir(const std::filesystem::path& out_root, const std::string& key) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm utc{};
  gmtime_r(&now, &utc);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%S", &utc);
  const std::string base = std::string("run_") + stamp + "_" + sha256_hex(key).substr(0, 8);
  std::error_code ec;
  std::filesystem::create_directories(out_root, ec);
  if (ec) throw IoError("cannot create " + out_root.string() + ": " + ec.message());
  for (int k = 0;; ++k) {
    const auto dir = out_root / (k == 0 ? base : base + "_" + std::to_string(k));
    if (std::filesystem::create_directory(dir, ec)) return dir;
    if (ec) throw IoError("cannot create run directory " + dir.string() + ": " + ec.message());
  }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

struct DepthEncoding {
  double near = camera_defaults::kNear, far = camera_defaults::kFar;

  nlohmann::json to_json() const {
    return {{"format", "png16"}, {"near", near}, {"far", far}, {"mapping", "value = round(65535 * clamp((depth - near) / (far - near), 0, 1))"}};
  }
};

// Expected ray depth, row-major M * M, as 16-bit grayscale.
inline void write_depth_png(const std::filesystem::path& path, const std::vector<double>& depth, int resolution,
                            const DepthEncoding& enc) {
  if (depth.size() != static_cast<std::size_t>(resolution) * resolution)
    throw std::invalid_argument("write_depth_png: depth size does not match resolution");
  Image gray(resolution, resolution, 1);
  for (std::size_t i = 0; i < depth.size(); ++i)
    gray.data[i] = std::clamp((depth[i] - enc.near) / (enc.far - enc.near), 0.0, 1.0);
  write_png16(path, gray);
}

inline nlohmann::json pose_json(const Camera& cam) {
  nlohmann::json rot = nlohmann::json::array();
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k) rot.push_back(cam.pose.rotation(r, k));
  return {{"position", {cam.pose.position.x(), cam.pose.position.y(), cam.pose.position.z()}},
          {"rotation", rot},
          {"focal", cam.focal},
          {"resolution", cam.resolution}};
}

}  // namespace tridiff::cli
