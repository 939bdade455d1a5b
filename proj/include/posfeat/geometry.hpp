#pragma once

// Two-view epipolar geometry in pixel coordinates.
//
// Pixel coordinates are continuous: the pixel at column c, row r covers
// [c, c+1) x [r, r+1) and has its center at (c + 0.5, r + 0.5).

#include "posfeat/common.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <string>

namespace posfeat {

struct TrainConfig;

template <typename Scalar = double>
struct Intrinsics {
  using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;

  Scalar fx = 1, fy = 1, cx = 0, cy = 0;

  Matrix3 matrix() const {
    Matrix3 k;
    k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    return k;
  }
  Matrix3 inverse() const {
    Matrix3 k;
    k << 1 / fx, 0, -cx / fx, 0, 1 / fy, -cy / fy, 0, 0, 1;
    return k;
  }
  void validate() const {
    if (!(fx > 0) || !(fy > 0)) throw InputError("intrinsics: focal lengths must be positive");
  }
};

/// Maps camera-1 coordinates to camera-2 coordinates: X2 = R * X1 + t.
template <typename Scalar = double>
struct RelativePose {
  Eigen::Matrix<Scalar, 3, 3> R = Eigen::Matrix<Scalar, 3, 3>::Identity();
  Eigen::Matrix<Scalar, 3, 1> t = Eigen::Matrix<Scalar, 3, 1>::Zero();

  void validate() const {
    using std::abs;
    const Scalar orth = (R.transpose() * R - Eigen::Matrix<Scalar, 3, 3>::Identity()).norm();
    if (!(orth <= Scalar(1e-9)) || !(abs(R.determinant() - Scalar(1)) <= Scalar(1e-9)))
      throw InputError("relative pose: R is not a rotation");
  }
};

template <typename Scalar = double>
using FundamentalMatrix = Eigen::Matrix<Scalar, 3, 3>;

/// a*u + b*v + c = 0 with a^2 + b^2 = 1.
template <typename Scalar = double>
struct EpipolarLine {
  Eigen::Matrix<Scalar, 3, 1> coeffs = Eigen::Matrix<Scalar, 3, 1>::UnitY();

  Scalar a() const { return coeffs(0); }
  Scalar b() const { return coeffs(1); }
  Scalar c() const { return coeffs(2); }
  Eigen::Matrix<Scalar, 2, 1> normal() const { return coeffs.template head<2>(); }
};

template <typename Scalar = double>
struct LineSegment {
  Eigen::Matrix<Scalar, 2, 1> p0, p1;

  Scalar length() const { return (p1 - p0).norm(); }
};

template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> skew(const Eigen::Matrix<Scalar, 3, 1>& v) {
  Eigen::Matrix<Scalar, 3, 3> s;
  s << 0, -v(2), v(1), v(2), 0, -v(0), -v(1), v(0), 0;
  return s;
}

/// F = K2^-T [t]x R K1^-1, scaled to unit Frobenius norm.
template <typename Scalar>
FundamentalMatrix<Scalar> fundamental_from_pose(const Intrinsics<Scalar>& k1, const Intrinsics<Scalar>& k2,
                                                const RelativePose<Scalar>& pose) {
  k1.validate();
  k2.validate();
  pose.validate();
  if (!(pose.t.norm() > Scalar(0))) throw DegenerateError("relative pose: zero translation");
  FundamentalMatrix<Scalar> f = k2.inverse().transpose() * skew<Scalar>(pose.t) * pose.R * k1.inverse();
  return f / f.norm();
}

/// Normalizes raw line coefficients; sign fixed so that c <= 0 when |c| > 1e-12,
/// otherwise b >= 0 (then a >= 0).
template <typename Scalar>
EpipolarLine<Scalar> normalize_line(const Eigen::Matrix<Scalar, 3, 1>& raw) {
  using std::abs;
  using std::hypot;
  const Scalar n = hypot(raw(0), raw(1));
  if (!(n > Scalar(0)) || !std::isfinite(static_cast<double>(n)))
    throw DegenerateError("epipolar line: point maps to the null line");
  Eigen::Matrix<Scalar, 3, 1> l = raw / n;
  bool flip;
  if (abs(l(2)) > Scalar(1e-12))
    flip = l(2) > 0;
  else if (l(1) != Scalar(0))
    flip = l(1) < 0;
  else
    flip = l(0) < 0;
  if (flip) l = -l;
  return {l};
}

/// Line in image 2 on which the correspondence of pixel x (image 1) lies.
template <typename Scalar>
EpipolarLine<Scalar> epipolar_line(const FundamentalMatrix<Scalar>& f, const Eigen::Matrix<Scalar, 2, 1>& x) {
  using std::hypot;
  const Eigen::Matrix<Scalar, 3, 1> raw = f * x.homogeneous();
  const Scalar scale = f.norm() * x.homogeneous().norm();
  if (!(hypot(raw(0), raw(1)) > Scalar(1e-14) * scale))
    throw DegenerateError("epipolar line: query point coincides with the epipole");
  return normalize_line<Scalar>(raw);
}

template <typename Scalar>
Scalar point_line_distance(const EpipolarLine<Scalar>& line, const Eigen::Matrix<Scalar, 2, 1>& y) {
  using std::abs;
  return abs(line.a() * y(0) + line.b() * y(1) + line.c());
}

/// Visible part of the line inside [0,width] x [0,height]. Endpoints are
/// ordered lexicographically (u, then v). Absent if empty or shorter than 1 px.
template <typename Scalar>
std::optional<LineSegment<Scalar>> clip_line_to_image(const EpipolarLine<Scalar>& line, Scalar width,
                                                      Scalar height) {
  using std::abs;
  using std::max;
  using std::min;
  if (!(width > 0) || !(height > 0)) throw InputError("clip_line_to_image: empty image");
  using V2 = Eigen::Matrix<Scalar, 2, 1>;
  const V2 origin = -line.c() * line.normal();
  const V2 dir(-line.b(), line.a());
  const V2 upper(width, height);

  Scalar t_min = -std::numeric_limits<Scalar>::infinity();
  Scalar t_max = std::numeric_limits<Scalar>::infinity();
  for (int axis = 0; axis < 2; ++axis) {
    if (abs(dir(axis)) < Scalar(1e-15)) {
      if (origin(axis) < 0 || origin(axis) > upper(axis)) return std::nullopt;
      continue;
    }
    Scalar t0 = (0 - origin(axis)) / dir(axis);
    Scalar t1 = (upper(axis) - origin(axis)) / dir(axis);
    if (t0 > t1) std::swap(t0, t1);
    t_min = max(t_min, t0);
    t_max = min(t_max, t1);
  }
  if (!(t_max - t_min >= Scalar(1))) return std::nullopt;

  auto clamp_in = [&](V2 p) {
    p(0) = min(max(p(0), Scalar(0)), width);
    p(1) = min(max(p(1), Scalar(0)), height);
    return p;
  };
  V2 p0 = clamp_in(origin + t_min * dir);
  V2 p1 = clamp_in(origin + t_max * dir);
  if (p1(0) < p0(0) || (p1(0) == p0(0) && p1(1) < p0(1))) std::swap(p0, p1);
  return LineSegment<Scalar>{p0, p1};
}

/// lambda_p if distance <= epsilon, lambda_n otherwise.
double epipolar_reward(double distance, const TrainConfig& cfg);

/// Two-view supervision record: intrinsics of both cameras and the relative pose.
struct PoseSupervision {
  Intrinsics<double> k1, k2;
  RelativePose<double> pose;

  FundamentalMatrix<double> fundamental() const { return fundamental_from_pose(k1, k2, pose); }
};

/// JSON object with row-major "K1", "K2", "R" (3x3) and "t" (3).
PoseSupervision read_pose_json(const std::string& path);
void write_pose_json(const std::string& path, const PoseSupervision& sup);
std::string pose_to_json_string(const PoseSupervision& sup);
PoseSupervision pose_from_json_string(const std::string& text);

}  // namespace posfeat
