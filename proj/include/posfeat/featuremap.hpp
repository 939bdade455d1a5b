#pragma once

#include "posfeat/common.hpp"

#include <array>
#include <string>
#include <utility>
#include <vector>

namespace posfeat {

/// Fraction of image width (u) and height (v).
struct NormalizedPoint {
  double u = 0;
  double v = 0;
};

NormalizedPoint to_normalized(const Vec2& x, double width, double height);
Vec2 from_normalized(const NormalizedPoint& p, double width, double height);

/// Dense descriptor grid. Texel (i, j) has its center at normalized
/// ((j + 0.5) / cols, (i + 0.5) / rows). Storage is (rows * cols) x channels,
/// texel-major.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(int rows, int cols, int channels, int stride);
  FeatureMap(MatrixXfR data, int rows, int cols, int stride);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int channels() const { return static_cast<int>(data_.cols()); }
  int stride() const { return stride_; }
  int image_width() const { return cols_ * stride_; }
  int image_height() const { return rows_ * stride_; }

  const MatrixXfR& data() const { return data_; }
  MatrixXfR& data() { return data_; }

  auto texel(int r, int c) const { return data_.row(static_cast<Eigen::Index>(r) * cols_ + c); }
  auto texel(int r, int c) { return data_.row(static_cast<Eigen::Index>(r) * cols_ + c); }

  bool all_finite() const { return data_.allFinite(); }

 private:
  int rows_ = 0;
  int cols_ = 0;
  int stride_ = 4;
  MatrixXfR data_;
};

/// Corner texels and weights of one bilinear lookup. Weights sum to 1.
struct BilinearTaps {
  std::array<int, 4> index{};  // flat texel index r * cols + c
  std::array<float, 4> weight{};
};

BilinearTaps bilinear_taps(int rows, int cols, const NormalizedPoint& p);

Eigen::VectorXf sample_bilinear(const FeatureMap& fmap, const NormalizedPoint& p);

/// Samples several points at once; row k of the result is the descriptor at points[k].
MatrixXfR sample_bilinear(const FeatureMap& fmap, const std::vector<NormalizedPoint>& points);

/// Sparse adjoint of sample_bilinear: (flat texel index, gradient) for every
/// corner with nonzero weight.
std::vector<std::pair<int, Eigen::VectorXf>> sample_bilinear_backward(const FeatureMap& fmap,
                                                                      const NormalizedPoint& p,
                                                                      const Eigen::VectorXf& upstream);

/// Dense accumulation form of the adjoint: grad.row(texel) += w * upstream.
void accumulate_bilinear_backward(const BilinearTaps& taps, const Eigen::Ref<const Eigen::RowVectorXf>& upstream,
                                  MatrixXfR& grad);

/// Per-texel L2 normalization and its backward pass.
FeatureMap l2_normalized(const FeatureMap& fmap);
MatrixXfR l2_normalized_backward(const FeatureMap& raw, const MatrixXfR& upstream);

/// "PFM1": magic, u32 rows, u32 cols, u32 channels, u32 stride, float32 data.
void write_pfm1(const std::string& path, const FeatureMap& fmap);
FeatureMap read_pfm1(const std::string& path);

}  // namespace posfeat
