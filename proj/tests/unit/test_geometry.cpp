#include <doctest.h>

#include "posfeat/config.hpp"
#include "posfeat/geometry.hpp"
#include "posfeat/rng.hpp"

#include <cmath>
#include <set>

using namespace posfeat;

namespace {

PoseSupervision unit_setup(const Vec3& t) {
  PoseSupervision s;
  s.k1 = {1, 1, 0, 0};
  s.k2 = {1, 1, 0, 0};
  s.pose.t = t;
  return s;
}

Mat3 random_rotation(CounterRng& rng, double max_angle) {
  Vec3 axis(rng.normal(), rng.normal(), rng.normal());
  return Eigen::AngleAxisd(rng.uniform(-max_angle, max_angle), axis.normalized()).toRotationMatrix();
}

}  // namespace

TEST_CASE("fundamental from a pure x translation is the cross-product matrix") {
  const Mat3 f = unit_setup({1, 0, 0}).fundamental();
  Mat3 expected;
  expected << 0, 0, 0, 0, 0, -1, 0, 1, 0;
  expected /= expected.norm();
  CHECK((f - expected).norm() < 1e-15);
  CHECK(std::abs(f.norm() - 1) < 1e-15);
}

TEST_CASE("translation scale does not change the normalized lines") {
  const Mat3 f1 = unit_setup({1, 0, 0}).fundamental();
  const Mat3 f2 = unit_setup({2, 0, 0}).fundamental();
  const auto l1 = epipolar_line(f1, Vec2(3, 7));
  const auto l2 = epipolar_line(f2, Vec2(3, 7));
  CHECK((l1.coeffs - l2.coeffs).norm() < 1e-15);
}

TEST_CASE("zero translation is degenerate") {
  CHECK_THROWS_AS(unit_setup(Vec3::Zero()).fundamental(), DegenerateError);
}

TEST_CASE("non-rotation is rejected") {
  PoseSupervision s = unit_setup({1, 0, 0});
  s.pose.R(0, 0) = 1.01;
  CHECK_THROWS_AS(s.fundamental(), InputError);
  s.pose.R = -Mat3::Identity();
  CHECK_THROWS_AS(s.fundamental(), InputError);
}

TEST_CASE("epipolar line of (3,7) under x translation is v = 7") {
  // F (3,7,1) is proportional to (0,-1,7); normalized with c <= 0 gives (0,1,-7).
  const auto l = epipolar_line<double>(unit_setup({1, 0, 0}).fundamental(), Vec2(3, 7));
  CHECK(std::abs(l.a()) < 1e-15);
  CHECK(l.b() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(l.c() == doctest::Approx(-7.0).epsilon(1e-15));
}

TEST_CASE("projective scaling of F leaves the line unchanged") {
  CounterRng rng(4, 0);
  for (int k = 0; k < 100; ++k) {
    Mat3 f = Mat3::NullaryExpr([&](Eigen::Index, Eigen::Index) { return rng.normal(); });
    const Vec2 x(rng.uniform(0, 100), rng.uniform(0, 100));
    const double s = rng.uniform(-5, 5);
    const auto l1 = epipolar_line<double>(f, x);
    const auto l2 = epipolar_line<double>(Mat3(s * f), x);
    CHECK((l1.coeffs - l2.coeffs).norm() < 1e-12);
  }
}

TEST_CASE("normalized lines have unit normal") {
  CounterRng rng(5, 0);
  for (int k = 0; k < 1000; ++k) {
    Mat3 f = Mat3::NullaryExpr([&](Eigen::Index, Eigen::Index) { return rng.normal(); });
    const auto l = epipolar_line<double>(f, Vec2(rng.uniform(-50, 50), rng.uniform(-50, 50)));
    CHECK(std::abs(l.normal().squaredNorm() - 1) < 1e-12);
  }
}

TEST_CASE("query at the epipole is degenerate") {
  // R = I, t = (1,0,0), K = I: the epipole in image 1 is at infinity along x, so use a
  // finite one: t = (0,0,1) puts it at the origin.
  const Mat3 f = unit_setup({0, 0, 1}).fundamental();
  CHECK_THROWS_AS(epipolar_line(f, Vec2(0, 0)), DegenerateError);
  CHECK_NOTHROW(epipolar_line(f, Vec2(1, 0)));
}

TEST_CASE("point-line distance") {
  CHECK(point_line_distance(EpipolarLine<double>{Vec3(0, 1, -3)}, Vec2(10, 5)) == 2.0);
  CHECK(point_line_distance(EpipolarLine<double>{Vec3(0, 1, -3)}, Vec2(4, 3)) == 0.0);
  const auto l = normalize_line<double>(Vec3(3, 4, 0));
  CHECK(point_line_distance(l, Vec2(5, 0)) == doctest::Approx(3.0).epsilon(1e-15));
  // sign convention does not matter
  EpipolarLine<double> flipped{-l.coeffs};
  CHECK(point_line_distance(flipped, Vec2(5, 0)) == point_line_distance(l, Vec2(5, 0)));
}

TEST_CASE("clip_line_to_image") {
  SUBCASE("horizontal line") {
    const auto s = clip_line_to_image(EpipolarLine<double>{Vec3(0, 1, -7)}, 100.0, 100.0);
    REQUIRE(s);
    CHECK((s->p0 - Vec2(0, 7)).norm() < 1e-12);
    CHECK((s->p1 - Vec2(100, 7)).norm() < 1e-12);
  }
  SUBCASE("line outside") { CHECK_FALSE(clip_line_to_image(EpipolarLine<double>{Vec3(0, 1, 5)}, 100.0, 100.0)); }
  SUBCASE("diagonal in a 100x50 image") {
    const auto s = clip_line_to_image(normalize_line<double>(Vec3(1, -1, 0)), 100.0, 50.0);
    REQUIRE(s);
    CHECK((s->p0 - Vec2(0, 0)).norm() < 1e-12);
    CHECK((s->p1 - Vec2(50, 50)).norm() < 1e-12);
  }
  SUBCASE("corner graze shorter than a pixel") {
    // u + v = 0.5 cuts the top-left corner with length 0.5 * sqrt(2) < 1
    CHECK_FALSE(clip_line_to_image(normalize_line<double>(Vec3(1, 1, -0.5)), 100.0, 100.0));
  }
  SUBCASE("endpoints stay inside for random lines") {
    CounterRng rng(8, 0);
    for (int k = 0; k < 1000; ++k) {
      const auto l = normalize_line<double>(Vec3(rng.normal(), rng.normal(), rng.uniform(-150, 0)));
      const auto s = clip_line_to_image(l, 120.0, 80.0);
      if (!s) continue;
      for (const Vec2& p : {s->p0, s->p1}) {
        CHECK(p(0) >= -1e-9);
        CHECK(p(0) <= 120 + 1e-9);
        CHECK(p(1) >= -1e-9);
        CHECK(p(1) <= 80 + 1e-9);
        CHECK(point_line_distance(l, p) < 1e-9);
      }
      CHECK(s->length() >= 1.0);
    }
  }
}

TEST_CASE("epipolar reward is a step with an inclusive boundary") {
  const TrainConfig cfg;
  CHECK(epipolar_reward(1.5, cfg) == 1.0);
  CHECK(epipolar_reward(2.0, cfg) == 1.0);
  CHECK(epipolar_reward(std::nextafter(2.0, 3.0), cfg) == -0.25);
  CHECK(epipolar_reward(5.0, cfg) == -0.25);
  CHECK_THROWS_AS(epipolar_reward(-1.0, cfg), InputError);
  std::set<double> seen;
  for (int k = 0; k <= 1000; ++k) seen.insert(epipolar_reward(k * 0.01, cfg));
  CHECK(seen.size() == 2);
}

TEST_CASE("projected 3D points satisfy the epipolar constraint") {
  CounterRng rng(11, 0);
  for (int trial = 0; trial < 20; ++trial) {
    PoseSupervision s;
    s.k1 = {rng.uniform(50, 200), rng.uniform(50, 200), rng.uniform(20, 80), rng.uniform(20, 80)};
    s.k2 = {rng.uniform(50, 200), rng.uniform(50, 200), rng.uniform(20, 80), rng.uniform(20, 80)};
    s.pose.R = random_rotation(rng, 0.3);
    s.pose.t = Vec3(rng.normal(), rng.normal(), rng.normal());
    const Mat3 f = s.fundamental();
    double worst = 0;
    for (int k = 0; k < 100; ++k) {
      const Vec3 x(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(3, 8));
      const Vec3 y = s.pose.R * x + s.pose.t;
      const Vec3 p1 = s.k1.matrix() * x, p2 = s.k2.matrix() * y;
      const Vec2 x1 = p1.hnormalized(), x2 = p2.hnormalized();
      worst = std::max(worst, std::abs(x2.homogeneous().dot(f * x1.homogeneous())));
    }
    CHECK(worst < 1e-9);
    // rank 2
    Eigen::JacobiSVD<Mat3> svd(f);
    CHECK(svd.singularValues()(2) < 1e-8 * svd.singularValues()(0));
  }
}

TEST_CASE("pose json round trip") {
  CounterRng rng(12, 0);
  PoseSupervision s;
  s.k1 = {123.25, 120.5, 48, 47.75};
  s.k2 = {99.125, 101, 50, 40};
  s.pose.R = random_rotation(rng, 0.2);
  s.pose.t = Vec3(0.1, -0.7, 0.3);
  const PoseSupervision r = pose_from_json_string(pose_to_json_string(s));
  CHECK(r.pose.R == s.pose.R);
  CHECK(r.pose.t == s.pose.t);
  CHECK(r.k1.matrix() == s.k1.matrix());
  CHECK(r.k2.matrix() == s.k2.matrix());
  CHECK_THROWS_AS(pose_from_json_string("{\"K1\": [1]}"), FormatError);
  CHECK_THROWS(pose_from_json_string("not json"));
}
