#include "posfeat/featuremap.hpp"

#include "posfeat/binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace posfeat {

NormalizedPoint to_normalized(const Vec2& x, double width, double height) {
  if (!(width > 0) || !(height > 0)) throw InputError("to_normalized: image size must be positive");
  return {x(0) / width, x(1) / height};
}

Vec2 from_normalized(const NormalizedPoint& p, double width, double height) {
  if (!(width > 0) || !(height > 0)) throw InputError("from_normalized: image size must be positive");
  return {p.u * width, p.v * height};
}

FeatureMap::FeatureMap(int rows, int cols, int channels, int stride)
    : FeatureMap(MatrixXfR::Zero(static_cast<Eigen::Index>(rows) * cols, channels), rows, cols, stride) {}

FeatureMap::FeatureMap(MatrixXfR data, int rows, int cols, int stride)
    : rows_(rows), cols_(cols), stride_(stride), data_(std::move(data)) {
  if (rows < 2 || cols < 2) throw InputError("FeatureMap: need at least 2x2 texels");
  if (stride < 1) throw InputError("FeatureMap: stride must be >= 1");
  if (data_.rows() != static_cast<Eigen::Index>(rows) * cols || data_.cols() < 1)
    throw InputError("FeatureMap: data shape does not match grid");
}

BilinearTaps bilinear_taps(int rows, int cols, const NormalizedPoint& p) {
  if (!std::isfinite(p.u) || !std::isfinite(p.v)) throw InputError("sample_bilinear: non-finite point");
  const double x = std::clamp(p.u * cols - 0.5, 0.0, cols - 1.0);
  const double y = std::clamp(p.v * rows - 0.5, 0.0, rows - 1.0);
  const int x0 = std::min(static_cast<int>(x), cols - 2);
  const int y0 = std::min(static_cast<int>(y), rows - 2);
  const double fx = x - x0;
  const double fy = y - y0;
  BilinearTaps taps;
  taps.index = {y0 * cols + x0, y0 * cols + x0 + 1, (y0 + 1) * cols + x0, (y0 + 1) * cols + x0 + 1};
  taps.weight = {static_cast<float>((1 - fx) * (1 - fy)), static_cast<float>(fx * (1 - fy)),
                 static_cast<float>((1 - fx) * fy), static_cast<float>(fx * fy)};
  return taps;
}

Eigen::VectorXf sample_bilinear(const FeatureMap& fmap, const NormalizedPoint& p) {
  const BilinearTaps t = bilinear_taps(fmap.rows(), fmap.cols(), p);
  const auto& d = fmap.data();
  return (t.weight[0] * d.row(t.index[0]) + t.weight[1] * d.row(t.index[1]) + t.weight[2] * d.row(t.index[2]) +
          t.weight[3] * d.row(t.index[3]))
      .transpose();
}

MatrixXfR sample_bilinear(const FeatureMap& fmap, const std::vector<NormalizedPoint>& points) {
  MatrixXfR out(static_cast<Eigen::Index>(points.size()), fmap.channels());
  const auto& d = fmap.data();
  for (std::size_t k = 0; k < points.size(); ++k) {
    const BilinearTaps t = bilinear_taps(fmap.rows(), fmap.cols(), points[k]);
    out.row(static_cast<Eigen::Index>(k)) = t.weight[0] * d.row(t.index[0]) + t.weight[1] * d.row(t.index[1]) +
                                            t.weight[2] * d.row(t.index[2]) + t.weight[3] * d.row(t.index[3]);
  }
  return out;
}

std::vector<std::pair<int, Eigen::VectorXf>> sample_bilinear_backward(const FeatureMap& fmap,
                                                                      const NormalizedPoint& p,
                                                                      const Eigen::VectorXf& upstream) {
  if (upstream.size() != fmap.channels()) throw InputError("sample_bilinear_backward: channel mismatch");
  const BilinearTaps t = bilinear_taps(fmap.rows(), fmap.cols(), p);
  std::vector<std::pair<int, Eigen::VectorXf>> out;
  for (int k = 0; k < 4; ++k) {
    if (t.weight[k] == 0.0f) continue;
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& e) { return e.first == t.index[k]; });
    if (it == out.end())
      out.emplace_back(t.index[k], t.weight[k] * upstream);
    else
      it->second += t.weight[k] * upstream;
  }
  return out;
}

void accumulate_bilinear_backward(const BilinearTaps& taps, const Eigen::Ref<const Eigen::RowVectorXf>& upstream,
                                  MatrixXfR& grad) {
  for (int k = 0; k < 4; ++k) {
    if (taps.weight[k] != 0.0f) grad.row(taps.index[k]).noalias() += taps.weight[k] * upstream;
  }
}

namespace {
constexpr float kNormFloor = 1e-8f;
}

FeatureMap l2_normalized(const FeatureMap& fmap) {
  MatrixXfR d = fmap.data();
  for (Eigen::Index i = 0; i < d.rows(); ++i) d.row(i) /= std::max(d.row(i).norm(), kNormFloor);
  return FeatureMap(std::move(d), fmap.rows(), fmap.cols(), fmap.stride());
}

MatrixXfR l2_normalized_backward(const FeatureMap& raw, const MatrixXfR& upstream) {
  const auto& d = raw.data();
  MatrixXfR g(d.rows(), d.cols());
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    const float n = std::max(d.row(i).norm(), kNormFloor);
    const Eigen::RowVectorXf y = d.row(i) / n;
    g.row(i) = (upstream.row(i) - upstream.row(i).dot(y) * y) / n;
  }
  return g;
}

void write_pfm1(const std::string& path, const FeatureMap& fmap) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  binary::write_magic(out, "PFM1");
  binary::write_u32(out, static_cast<std::uint32_t>(fmap.rows()));
  binary::write_u32(out, static_cast<std::uint32_t>(fmap.cols()));
  binary::write_u32(out, static_cast<std::uint32_t>(fmap.channels()));
  binary::write_u32(out, static_cast<std::uint32_t>(fmap.stride()));
  binary::write_f32s(out, fmap.data().data(), static_cast<std::size_t>(fmap.data().size()));
  if (!out) throw FormatError("write failed: " + path);
}

FeatureMap read_pfm1(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  binary::expect_magic(in, "PFM1");
  const auto rows = binary::read_u32(in);
  const auto cols = binary::read_u32(in);
  const auto channels = binary::read_u32(in);
  const auto stride = binary::read_u32(in);
  if (rows < 2 || cols < 2 || channels < 1 || stride < 1 || rows > 1u << 16 || cols > 1u << 16 || channels > 1u << 16)
    throw FormatError("PFM1: implausible header in " + path);
  MatrixXfR data(static_cast<Eigen::Index>(rows) * cols, channels);
  binary::read_f32s(in, data.data(), static_cast<std::size_t>(data.size()));
  FeatureMap fmap(std::move(data), static_cast<int>(rows), static_cast<int>(cols), static_cast<int>(stride));
  if (!fmap.all_finite()) throw FormatError("PFM1: non-finite values in " + path);
  return fmap;
}

}  // namespace posfeat
