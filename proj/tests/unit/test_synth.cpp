#include <doctest.h>

#include "posfeat/synth.hpp"

#include <cmath>
#include <filesystem>

using namespace posfeat;

namespace {

double epipolar_residual(const Mat3& f, const Vec2& a, const Vec2& b) {
  return std::abs(b.homogeneous().dot(f * a.homogeneous())) / f.norm();
}

RelativePose<double> translation(const Vec3& t) {
  RelativePose<double> p;
  p.t = t;
  return p;
}

}  // namespace

TEST_CASE("texture") {
  const TextureImage a = texture(3, 64, 48), b = texture(3, 64, 48), c = texture(4, 64, 48);
  CHECK(a.image.rows() == 48);
  CHECK(a.image.cols() == 64);
  CHECK(a.image.isApprox(b.image, 0));
  CHECK(!c.image.isApprox(a.image, 1e-3f));
  CHECK(a.image.minCoeff() >= 0);
  CHECK(a.image.maxCoeff() <= 1);
  CHECK(a.repetitive_fraction >= 0.10);
  TextureConfig none;
  none.repetitive_band = 0;
  CHECK(texture(3, 64, 48, none).repetitive_fraction == 0);
  // enough contrast to learn from
  const double mean = a.image.cast<double>().mean();
  CHECK(std::sqrt((a.image.cast<double>() - mean).square().mean()) > 0.05);
}

TEST_CASE("planar pairs") {
  SUBCASE("identity pose") {
    TextureConfig tex;
    tex.photometric_jitter = false;
    const SynthScene s = make_planar_pair_from_pose(1, 32, 32, RelativePose<double>{}, Vec3(0, 0, 1), 5, tex);
    CHECK(s.homography->isApprox(Mat3::Identity(), 1e-12));
    CHECK(s.image1.isApprox(s.image2, 0));
  }
  SUBCASE("translation parallel to the plane is a pixel shift") {
    const SynthScene s = make_planar_pair_from_pose(1, 64, 64, translation(Vec3(0.5, 0, 0)), Vec3(0, 0, 1), 5);
    const Mat3& h = *s.homography;
    // focal 64, depth 5: 0.5 * 64 / 5 = 6.4 px
    CHECK(h.topLeftCorner<2, 2>().isApprox(Eigen::Matrix2d::Identity(), 1e-12));
    CHECK(h(0, 2) == doctest::Approx(6.4));
    CHECK(std::abs(h(1, 2)) < 1e-12);
    CHECK(h.row(2).isApprox(Eigen::RowVector3d(0, 0, 1), 1e-12));
  }
  SUBCASE("correspondences satisfy H and F") {
    for (std::uint64_t seed : {7u, 8u, 9u}) {
      const SynthScene s = make_planar_pair(seed, 96, 96);
      const Mat3 f = s.supervision.fundamental();
      const auto corr = s.sample_correspondences(500, 1);
      CHECK(corr.size() >= 400);
      for (const auto& [a, b] : corr) {
        CHECK(epipolar_residual(f, a, b) < 1e-9);
        CHECK(((*s.homography * a.homogeneous()).hnormalized() - b).norm() < 1e-9);
        CHECK(b(0) >= 0);
        CHECK(b(0) <= 96);
      }
    }
  }
  SUBCASE("deterministic") {
    const SynthScene a = make_planar_pair(5, 32, 48), b = make_planar_pair(5, 32, 48);
    CHECK(a.image2.isApprox(b.image2, 0));
    CHECK(*a.homography == *b.homography);
    CHECK_THROWS_AS(make_planar_pair(5, 30, 48), InputError);
  }
}

TEST_CASE("general two-view scenes") {
  SUBCASE("zero baseline is the identity field") {
    DepthSurface d;
    d.bumps.emplace_back(16, 16, 6, 1);
    const SynthScene s = make_two_view_scene_from_pose(2, 32, 32, RelativePose<double>{}, d);
    for (double x : {3.5, 10.25, 27.0})
      for (double y : {1.0, 16.0, 30.5}) {
        const auto c = s.correspondence(Vec2(x, y));
        REQUIRE(c);
        CHECK((*c - Vec2(x, y)).norm() < 1e-9);
      }
  }
  SUBCASE("forward motion radiates from the epipole") {
    DepthSurface d;
    d.base = 6;
    const SynthScene s = make_two_view_scene_from_pose(3, 64, 64, translation(Vec3(0, 0, -0.5)), d);
    const Vec2 e(32, 32);  // principal point
    for (const auto& [a, b] : s.sample_correspondences(100, 2)) {
      const Vec2 ra = a - e, rb = b - e;
      CHECK(std::abs(ra(0) * rb(1) - ra(1) * rb(0)) < 1e-6 * (1 + ra.norm() * rb.norm()));
      CHECK(ra.dot(rb) >= 0);
      CHECK(rb.norm() >= ra.norm() - 1e-9);
    }
  }
  SUBCASE("epipolar residuals") {
    const SynthScene s = make_two_view_scene(11, 64, 64);
    const Mat3 f = s.supervision.fundamental();
    const auto corr = s.sample_correspondences(500, 3);
    CHECK(corr.size() >= 300);
    for (const auto& [a, b] : corr) CHECK(epipolar_residual(f, a, b) < 1e-9);
  }
}

TEST_CASE("scene bundles round trip") {
  const SynthScene s = make_planar_pair(4, 32, 32);
  const auto dir = std::filesystem::temp_directory_path() / "posfeat_bundle";
  std::filesystem::remove_all(dir);
  write_scene_bundle((dir / "pair_0000").string(), s);
  const SceneBundle b = read_scene_bundle((dir / "pair_0000").string());
  CHECK(b.homography->isApprox(*s.homography, 1e-12));
  CHECK((b.image1 - s.image1).abs().maxCoeff() <= 0.5f / 255);
  CHECK(b.supervision.fundamental().isApprox(s.supervision.fundamental(), 1e-9));
  CHECK(read_scene_directory(dir.string()).size() == 1);
  std::filesystem::remove_all(dir);
}
