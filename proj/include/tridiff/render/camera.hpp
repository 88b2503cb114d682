#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace tridiff {

// World frame: right-handed, +z up, ground plane z = 0.
// Camera frame: x right, y down, z forward (pinhole, pixel (0, 0) top-left).

struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // world-from-camera; columns right, down, forward
  Eigen::Vector3d position = Eigen::Vector3d::Zero();

  Eigen::Vector3d right() const { return rotation.col(0); }
  Eigen::Vector3d down() const { return rotation.col(1); }
  Eigen::Vector3d forward() const { return rotation.col(2); }
};

struct Ray {
  Eigen::Vector3d origin;
  Eigen::Vector3d direction;
  double near = 0.0;
  double far = 0.0;
};

namespace camera_defaults {
inline constexpr double kFovDegrees = 40.0;
inline constexpr double kRadius = 2.5;
inline constexpr double kNear = 0.5;
inline constexpr double kFar = 6.0;
inline constexpr double kMinElevationDegrees = 12.0;
}  // namespace camera_defaults

inline double degrees(double rad) { return rad * 180.0 / std::numbers::pi; }
inline double radians(double deg) { return deg * std::numbers::pi / 180.0; }

inline double focal_from_fov(int resolution, double fov_radians) {
  return 0.5 * resolution / std::tan(0.5 * fov_radians);
}

struct Camera {
  int resolution = 32;
  double focal = focal_from_fov(32, radians(camera_defaults::kFovDegrees));
  double cx = 16.0, cy = 16.0;
  Pose pose;
  double near = camera_defaults::kNear;
  double far = camera_defaults::kFar;

  void validate() const {
    if (resolution < 1) throw std::invalid_argument("camera: resolution must be >= 1");
    if (!(focal > 0.0)) throw std::invalid_argument("camera: focal must be positive");
    if (!(near > 0.0 && near < far)) throw std::invalid_argument("camera: need 0 < near < far");
    const Eigen::Matrix3d& R = pose.rotation;
    if (!(R.transpose() * R).isApprox(Eigen::Matrix3d::Identity(), 1e-6) || std::abs(R.determinant() - 1.0) > 1e-6)
      throw std::invalid_argument("camera: rotation is not a proper orthonormal matrix");
  }
};

// Principal point at the image centre, default 40 degree field of view.
inline Camera make_camera(int resolution, const Pose& pose, double fov_radians = radians(camera_defaults::kFovDegrees),
                          double near = camera_defaults::kNear, double far = camera_defaults::kFar) {
  Camera c;
  c.resolution = resolution;
  c.focal = focal_from_fov(resolution, fov_radians);
  c.cx = c.cy = 0.5 * resolution;
  c.pose = pose;
  c.near = near;
  c.far = far;
  c.validate();
  return c;
}

// Camera at target + r (cos el cos az, cos el sin az, sin el) looking at target.
// Straight above or below the target the world-up reference degenerates and +x
// is used instead.
inline Pose look_at_pose(double azimuth, double elevation, double radius,
                         const Eigen::Vector3d& target = Eigen::Vector3d::Zero()) {
  if (!(radius > 0.0)) throw std::invalid_argument("look_at_pose: radius must be positive");
  if (!(elevation > -std::numbers::pi / 2 - 1e-12 && elevation <= std::numbers::pi / 2 + 1e-12))
    throw std::invalid_argument("look_at_pose: elevation outside (-pi/2, pi/2]");
  const Eigen::Vector3d dir(std::cos(elevation) * std::cos(azimuth), std::cos(elevation) * std::sin(azimuth),
                            std::sin(elevation));
  Pose p;
  p.position = target + radius * dir;
  const Eigen::Vector3d forward = -dir;
  Eigen::Vector3d right = forward.cross(Eigen::Vector3d::UnitZ());
  if (right.norm() < 1e-9) right = forward.cross(Eigen::Vector3d::UnitX());
  right.normalize();
  const Eigen::Vector3d down = forward.cross(right);
  p.rotation.col(0) = right;
  p.rotation.col(1) = down;
  p.rotation.col(2) = forward;
  return p;
}

// Ray through continuous image coordinates (u along columns, v along rows).
inline Ray ray_through(const Camera& cam, double u, double v) {
  const Eigen::Vector3d d_cam((u - cam.cx) / cam.focal, (v - cam.cy) / cam.focal, 1.0);
  Ray r;
  r.origin = cam.pose.position;
  r.direction = (cam.pose.rotation * d_cam).normalized();
  r.near = cam.near;
  r.far = cam.far;
  return r;
}

inline Ray pixel_ray(const Camera& cam, int i, int j) {
  if (i < 0 || j < 0 || i >= cam.resolution || j >= cam.resolution)
    throw std::out_of_range("pixel_ray: pixel (" + std::to_string(i) + ", " + std::to_string(j) +
                            ") outside " + std::to_string(cam.resolution) + "x" + std::to_string(cam.resolution));
  return ray_through(cam, j + 0.5, i + 0.5);
}

// Row-major rays for every pixel.
inline std::vector<Ray> camera_rays(const Camera& cam) {
  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(cam.resolution) * cam.resolution);
  for (int i = 0; i < cam.resolution; ++i)
    for (int j = 0; j < cam.resolution; ++j) rays.push_back(pixel_ray(cam, i, j));
  return rays;
}

struct Projection {
  double u = 0.0, v = 0.0;  // continuous image coordinates
  double depth = 0.0;       // along the forward axis
};

inline Projection project(const Camera& cam, const Eigen::Vector3d& world) {
  const Eigen::Vector3d c = cam.pose.rotation.transpose() * (world - cam.pose.position);
  return {cam.focal * c.x() / c.z() + cam.cx, cam.focal * c.y() / c.z() + cam.cy, c.z()};
}

struct HemisphereSample {
  double azimuth = 0.0;
  double elevation = 0.0;
  Pose pose;
};

// Directions uniform on the upper unit hemisphere (z = sin(elevation) uniform),
// redrawn while the elevation is below min_elevation.
template <class Rng>
HemisphereSample sample_hemisphere_pose(Rng& rng, double min_elevation = radians(camera_defaults::kMinElevationDegrees),
                                        double radius = camera_defaults::kRadius,
                                        const Eigen::Vector3d& target = Eigen::Vector3d::Zero()) {
  if (!(min_elevation >= 0.0 && min_elevation < std::numbers::pi / 2))
    throw std::invalid_argument("sample_hemisphere_pose: min elevation outside [0, pi/2)");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  HemisphereSample s;
  do {
    s.elevation = std::asin(unit(rng));
    s.azimuth = 2.0 * std::numbers::pi * unit(rng);
  } while (s.elevation < min_elevation);
  s.pose = look_at_pose(s.azimuth, s.elevation, radius, target);
  return s;
}

}  // namespace tridiff
