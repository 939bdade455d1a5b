#include "posfeat/inference.hpp"

#include "posfeat/binary_io.hpp"
#include "posfeat/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <fstream>
#include <numeric>
#include <sstream>

namespace posfeat {

InferenceConfig inference_profile(const std::string& name) {
  if (name == "hpatches") return {3, 0.0, 8192, std::nullopt};
  if (name == "aachen") return {7, 0.9, 16000, std::nullopt};
  if (name == "eth") return {7, 0.9, 20000, 0.8};
  throw InputError("unknown profile '" + name + "'");
}

namespace {

// Sliding maximum along one axis with a clipped window of radius r.
Image running_max(const Image& in, int r, bool along_rows) {
  const Eigen::Index rows = in.rows();
  const Eigen::Index cols = in.cols();
  Image out(rows, cols);
  const Eigen::Index lines = along_rows ? rows : cols;
  const Eigen::Index len = along_rows ? cols : rows;
  std::vector<Eigen::Index> dq(static_cast<std::size_t>(len));
  for (Eigen::Index l = 0; l < lines; ++l) {
    auto at = [&](Eigen::Index k) { return along_rows ? in(l, k) : in(k, l); };
    std::size_t head = 0, tail = 0;
    Eigen::Index next = 0;
    for (Eigen::Index k = 0; k < len; ++k) {
      const Eigen::Index hi = std::min(len - 1, k + r);
      for (; next <= hi; ++next) {
        while (tail > head && at(dq[tail - 1]) <= at(next)) --tail;
        dq[tail++] = next;
      }
      while (dq[head] < k - r) ++head;
      (along_rows ? out(l, k) : out(k, l)) = at(dq[head]);
    }
  }
  return out;
}

}  // namespace

Mask nms(const Image& heatmap, int window) {
  if (window < 1 || window % 2 == 0) throw InputError("nms: window must be odd and >= 1");
  const int r = window / 2;
  const Image local_max = running_max(running_max(heatmap, r, true), r, false);
  Mask keep = Mask::Constant(heatmap.rows(), heatmap.cols(), false);
  const int rows = static_cast<int>(heatmap.rows());
  const int cols = static_cast<int>(heatmap.cols());
  for (int y = 0; y < rows; ++y) {
    for (int x = 0; x < cols; ++x) {
      const float v = heatmap(y, x);
      if (v != local_max(y, x)) continue;
      // v is a window maximum; keep it only if no other pixel attains it.
      bool unique = true;
      for (int yy = std::max(0, y - r); unique && yy <= std::min(rows - 1, y + r); ++yy)
        for (int xx = std::max(0, x - r); xx <= std::min(cols - 1, x + r); ++xx)
          if ((yy != y || xx != x) && heatmap(yy, xx) == v) {
            unique = false;
            break;
          }
      keep(y, x) = unique;
    }
  }
  return keep;
}

Image sigmoid(const Image& scores) {
  return scores.unaryExpr([](float s) { return static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(s)))); });
}

KeypointSet select_keypoints(const Image& heatmap, const FeatureMap& features, const InferenceConfig& cfg) {
  if (cfg.max_keypoints < 0) throw InputError("select_keypoints: negative keypoint cap");
  const Image prob = sigmoid(heatmap);
  const Mask keep = nms(prob, cfg.nms_size);
  struct Cand {
    float score;
    int index;
  };
  std::vector<Cand> cands;
  for (Eigen::Index i = 0; i < prob.size(); ++i)
    if (keep(i) && prob(i) >= cfg.score_threshold) cands.push_back({prob(i), static_cast<int>(i)});
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.score > b.score; });
  if (static_cast<int>(cands.size()) > cfg.max_keypoints) cands.resize(static_cast<std::size_t>(cfg.max_keypoints));

  KeypointSet out;
  const auto w = static_cast<int>(heatmap.cols());
  std::vector<NormalizedPoint> norm;
  for (const Cand& c : cands) {
    const Vec2 p(c.index % w + 0.5, c.index / w + 0.5);
    out.points.push_back(p);
    out.scores.push_back(c.score);
    norm.push_back(to_normalized(p, static_cast<double>(heatmap.cols()), static_cast<double>(heatmap.rows())));
  }
  out.descriptors = sample_bilinear(features, norm);
  for (Eigen::Index r = 0; r < out.descriptors.rows(); ++r) {
    const float n = out.descriptors.row(r).norm();
    if (n > 0) out.descriptors.row(r) /= n;
  }
  return out;
}

KeypointSet extract(const Image& image, const nn::DescriptorNet& desc, const nn::DetectorNet& det,
                    const InferenceConfig& cfg) {
  const Image cropped = crop_to_multiple(image, 16);
  const auto d = desc.forward(cropped);
  const auto in = nn::DetectorNet::make_input(cropped, d.features, d.mid);
  const auto h = det.forward(in);
  return select_keypoints(h.heatmap, d.features, cfg);
}

KeypointSet grid_keypoints(const FeatureMap& features, int spacing) {
  if (spacing < 1) throw InputError("grid_keypoints: spacing must be positive");
  const int w = features.image_width();
  const int h = features.image_height();
  KeypointSet out;
  std::vector<NormalizedPoint> norm;
  for (int y = spacing / 2; y < h; y += spacing) {
    for (int x = spacing / 2; x < w; x += spacing) {
      const Vec2 p(x, y);
      out.points.push_back(p);
      out.scores.push_back(1.0f);
      norm.push_back(to_normalized(p, w, h));
    }
  }
  out.descriptors = sample_bilinear(features, norm);
  return out;
}

namespace {

bool passes_ratio(const Eigen::VectorXf& sq_dist, Eigen::Index best, double ratio) {
  float second = std::numeric_limits<float>::infinity();
  for (Eigen::Index k = 0; k < sq_dist.size(); ++k)
    if (k != best) second = std::min(second, sq_dist(k));
  if (!std::isfinite(second)) return true;
  const double d_best = std::sqrt(std::max(0.0f, sq_dist(best)));
  const double d_second = std::sqrt(std::max(0.0f, second));
  if (d_second == 0) return false;
  return d_best / d_second <= ratio;
}

}  // namespace

MatchSet mutual_nn_match(const MatrixXfR& d1, const MatrixXfR& d2, std::optional<double> ratio) {
  MatchSet out;
  if (d1.rows() == 0 || d2.rows() == 0) return out;
  if (d1.cols() != d2.cols()) throw InputError("mutual_nn_match: descriptor size mismatch");
  const Eigen::MatrixXf sim = d1 * d2.transpose();
  std::vector<Eigen::Index> best_j(static_cast<std::size_t>(sim.rows()));
  std::vector<Eigen::Index> best_i(static_cast<std::size_t>(sim.cols()));
  for (Eigen::Index i = 0; i < sim.rows(); ++i) sim.row(i).maxCoeff(&best_j[static_cast<std::size_t>(i)]);
  for (Eigen::Index j = 0; j < sim.cols(); ++j) sim.col(j).maxCoeff(&best_i[static_cast<std::size_t>(j)]);
  const Eigen::VectorXf n1 = d1.rowwise().squaredNorm();
  const Eigen::VectorXf n2 = d2.rowwise().squaredNorm();
  for (Eigen::Index i = 0; i < sim.rows(); ++i) {
    const Eigen::Index j = best_j[static_cast<std::size_t>(i)];
    if (best_i[static_cast<std::size_t>(j)] != i) continue;
    if (ratio) {
      const Eigen::VectorXf row_d = (n2.array() + n1(i) - 2 * sim.row(i).transpose().array()).matrix();
      const Eigen::VectorXf col_d = (n1.array() + n2(j) - 2 * sim.col(j).array()).matrix();
      if (!passes_ratio(row_d, j, *ratio) || !passes_ratio(col_d, i, *ratio)) continue;
    }
    out.matches.push_back({static_cast<int>(i), static_cast<int>(j), sim(i, j)});
  }
  return out;
}

MatchSet mutual_nn_match(const KeypointSet& set1, const KeypointSet& set2, std::optional<double> ratio) {
  return mutual_nn_match(set1.descriptors, set2.descriptors, ratio);
}

void write_pfk1(const std::string& path, const KeypointSet& k) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  const auto c = static_cast<std::uint32_t>(k.descriptors.cols());
  binary::write_magic(out, "PFK1");
  binary::write_u32(out, static_cast<std::uint32_t>(k.size()));
  binary::write_u32(out, c);
  for (std::size_t i = 0; i < k.size(); ++i) {
    binary::write_f32(out, static_cast<float>(k.points[i](0)));
    binary::write_f32(out, static_cast<float>(k.points[i](1)));
    binary::write_f32(out, k.scores[i]);
    binary::write_f32s(out, k.descriptors.row(static_cast<Eigen::Index>(i)).data(), c);
  }
  if (!out) throw FormatError("write failed: " + path);
}

KeypointSet read_pfk1(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  binary::expect_magic(in, "PFK1");
  const auto n = binary::read_u32(in);
  const auto c = binary::read_u32(in);
  if (n > (1u << 24) || c > (1u << 16)) throw FormatError("PFK1: implausible header in " + path);
  KeypointSet k;
  k.descriptors.resize(n, c);
  for (std::uint32_t i = 0; i < n; ++i) {
    const float x = binary::read_f32(in);
    const float y = binary::read_f32(in);
    k.points.emplace_back(x, y);
    k.scores.push_back(binary::read_f32(in));
    binary::read_f32s(in, k.descriptors.row(i).data(), c);
  }
  return k;
}

void write_matches_csv(const std::string& path, const MatchSet& m) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  out << "i,j,sim\n";
  char buf[64];
  for (const Match& x : m.matches) {
    std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(x.similarity));
    out << x.i << "," << x.j << "," << buf << "\n";
  }
}

MatchSet read_matches_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("i,j,sim", 0) != 0) throw FormatError("match csv: missing header");
  MatchSet m;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    Match x;
    char c1 = 0, c2 = 0;
    if (!(ss >> x.i >> c1 >> x.j >> c2 >> x.similarity) || c1 != ',' || c2 != ',')
      throw FormatError("match csv: bad line '" + line + "'");
    m.matches.push_back(x);
  }
  return m;
}

}  // namespace posfeat
