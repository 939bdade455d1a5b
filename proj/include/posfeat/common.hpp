#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace posfeat {

/// Malformed or out-of-contract input (bad sizes, non-finite values, ...).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Geometrically degenerate configuration (zero baseline, query at the epipole).
class DegenerateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File-format violation while reading one of the binary or text formats.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Single-precision, row-major dense storage used for images, feature data and
// network activations.
using MatrixXfR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Grayscale image, rows = height, cols = width, values nominally in [0,1].
using Image = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace posfeat
