#include <gtest/gtest.h>

#include <random>

#include "support/stats.hpp"
#include "tridiff/render/camera.hpp"

using namespace tridiff;
using Eigen::Vector3d;

namespace {

void expect_proper_rotation(const Eigen::Matrix3d& R) {
  EXPECT_TRUE((R.transpose() * R).isApprox(Eigen::Matrix3d::Identity(), 1e-6));
  EXPECT_NEAR(R.determinant(), 1.0, 1e-6);
}

double distance_to_line(const Ray& r, const Vector3d& p) {
  const Vector3d d = p - r.origin;
  return (d - d.dot(r.direction) * r.direction).norm();
}

}  // namespace

TEST(LookAt, CanonicalPosition) {
  auto p = look_at_pose(0.0, 0.0, 1.0);
  EXPECT_TRUE(p.position.isApprox(Vector3d(1, 0, 0), 1e-12));
  EXPECT_TRUE(p.forward().isApprox(Vector3d(-1, 0, 0), 1e-12));
  EXPECT_TRUE(p.down().isApprox(Vector3d(0, 0, -1), 1e-12));
  expect_proper_rotation(p.rotation);
}

TEST(LookAt, StraightDownUsesFallbackUp) {
  Vector3d target(0.2, -0.1, 0.3);
  auto p = look_at_pose(1.0, std::numbers::pi / 2, 2.0, target);
  EXPECT_LT((p.position - (target + Vector3d(0, 0, 2))).norm(), 1e-12);
  EXPECT_LT((p.forward() - Vector3d(0, 0, -1)).norm(), 1e-12);
  expect_proper_rotation(p.rotation);
  EXPECT_TRUE(p.rotation.allFinite());
}

TEST(LookAt, RejectsBadArguments) {
  EXPECT_THROW(look_at_pose(0, 0, 0.0), std::invalid_argument);
  EXPECT_THROW(look_at_pose(0, 2.0, 1.0), std::invalid_argument);
  EXPECT_THROW(look_at_pose(0, -std::numbers::pi / 2 - 0.1, 1.0), std::invalid_argument);
}

TEST(LookAt, ForwardPointsAtTargetForRandomPoses) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> az(-4, 4), el(-1.5, 1.5), rad(0.5, 5), tgt(-1, 1);
  for (int k = 0; k < 100; ++k) {
    Vector3d target(tgt(rng), tgt(rng), tgt(rng));
    auto p = look_at_pose(az(rng), el(rng), rad(rng), target);
    EXPECT_NEAR(p.forward().dot((target - p.position).normalized()), 1.0, 1e-6);
    expect_proper_rotation(p.rotation);
  }
}

TEST(PixelRay, PrincipalPointLooksForward) {
  auto cam = make_camera(33, look_at_pose(0.7, 0.4, 2.5));
  auto r = pixel_ray(cam, 16, 16);
  EXPECT_LT((r.direction - cam.pose.forward()).norm(), 1e-12);
  EXPECT_EQ(r.near, cam.near);
  EXPECT_EQ(r.far, cam.far);
}

TEST(PixelRay, MirroredColumnsMirrorDirections) {
  auto cam = make_camera(16, look_at_pose(2.0, 0.5, 2.5));
  const Vector3d right = cam.pose.right();
  for (int i = 0; i < 16; i += 3)
    for (int j = 0; j < 16; j += 5) {
      const Vector3d a = pixel_ray(cam, i, j).direction;
      const Vector3d b = pixel_ray(cam, i, 15 - j).direction;
      const Vector3d reflected = a - 2.0 * a.dot(right) * right;
      EXPECT_LT((reflected - b).norm(), 1e-12);
    }
}

TEST(PixelRay, ProjectThenRaycast) {
  std::mt19937_64 rng(9);
  auto cam = make_camera(64, look_at_pose(0.3, 0.6, 2.5));
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  for (int k = 0; k < 100; ++k) {
    Vector3d p(u(rng), u(rng), u(rng) + 0.5);
    auto pr = project(cam, p);
    ASSERT_GT(pr.depth, 0.0);
    EXPECT_LT(distance_to_line(ray_through(cam, pr.u, pr.v), p), 1e-6);
  }
  // Pixel centres: a point on the pixel's ray projects back into that pixel's centre.
  for (int i = 0; i < 64; i += 7)
    for (int j = 0; j < 64; j += 9) {
      auto r = pixel_ray(cam, i, j);
      auto pr = project(cam, r.origin + 2.0 * r.direction);
      EXPECT_NEAR(pr.u, j + 0.5, 1e-9);
      EXPECT_NEAR(pr.v, i + 0.5, 1e-9);
    }
}

TEST(PixelRay, OutOfRangeThrows) {
  auto cam = make_camera(8, look_at_pose(0, 0.5, 2.5));
  EXPECT_THROW(pixel_ray(cam, 8, 0), std::out_of_range);
  EXPECT_THROW(pixel_ray(cam, 0, -1), std::out_of_range);
}

TEST(PixelRay, SharedOriginAndUnitDirections) {
  auto cam = make_camera(12, look_at_pose(1.1, 0.3, 2.5));
  for (const auto& r : camera_rays(cam)) {
    EXPECT_EQ(r.origin, cam.pose.position);
    EXPECT_NEAR(r.direction.norm(), 1.0, 1e-6);
  }
}

TEST(Camera, ValidateRejectsBadIntrinsics) {
  auto cam = make_camera(8, look_at_pose(0, 0.5, 2.5));
  cam.focal = -1.0;
  EXPECT_THROW(cam.validate(), std::invalid_argument);
  cam = make_camera(8, look_at_pose(0, 0.5, 2.5));
  cam.pose.rotation(0, 0) += 0.1;
  EXPECT_THROW(cam.validate(), std::invalid_argument);
}

TEST(Hemisphere, ElevationFloorAndUniformAzimuth) {
  std::mt19937_64 rng(12);
  std::vector<double> az;
  for (int k = 0; k < 10000; ++k) {
    auto s = sample_hemisphere_pose(rng);
    ASSERT_GE(s.elevation, radians(12.0));
    az.push_back(s.azimuth);
    EXPECT_NEAR((s.pose.position).norm(), camera_defaults::kRadius, 1e-12);
  }
  EXPECT_GT(test_support::chi_square_uniform_p(test_support::histogram(az, 0, 2 * std::numbers::pi, 16)), 0.001);
}

TEST(Hemisphere, NoFloorMatchesUniformHemisphere) {
  // Uniform on the hemisphere means the height sin(elevation) is uniform on [0, 1].
  std::mt19937_64 rng(13);
  std::vector<double> z;
  for (int k = 0; k < 10000; ++k) z.push_back(std::sin(sample_hemisphere_pose(rng, 0.0).elevation));
  EXPECT_GT(test_support::chi_square_uniform_p(test_support::histogram(z, 0, 1, 16)), 0.001);
}
