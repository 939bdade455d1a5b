#include "posfeat/search.hpp"

#include <cmath>

namespace posfeat {

LineCandidates build_line_candidates(const LineSegment<double>& segment, int n_line, const FeatureMap& fmap2) {
  if (n_line < 2) throw InputError("build_line_candidates: n_line must be >= 2");
  if (!(segment.length() >= 1.0)) throw InputError("build_line_candidates: segment shorter than 1 px");
  const double w = fmap2.image_width();
  const double h = fmap2.image_height();
  LineCandidates out;
  out.points.reserve(static_cast<std::size_t>(n_line));
  for (int k = 0; k < n_line; ++k) {
    const double t = static_cast<double>(k) / (n_line - 1);
    out.points.push_back(to_normalized(segment.p0 + t * (segment.p1 - segment.p0), w, h));
  }
  out.descriptors = sample_bilinear(fmap2, out.points);
  return out;
}

LineCandidates build_grid_candidates(int n, const FeatureMap& fmap2) {
  const int k = std::max(2, static_cast<int>(std::lround(std::sqrt(static_cast<double>(n)))));
  LineCandidates out;
  out.points.reserve(static_cast<std::size_t>(k) * k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) out.points.push_back({(j + 0.5) / k, (i + 0.5) / k});
  out.descriptors = sample_bilinear(fmap2, out.points);
  return out;
}

MatchDistribution match_distribution(const Eigen::VectorXf& query, const MatrixXfR& candidates,
                                     std::vector<NormalizedPoint> support) {
  if (candidates.rows() < 1) throw InputError("match_distribution: no candidates");
  if (candidates.cols() != query.size()) throw InputError("match_distribution: descriptor size mismatch");
  if (!query.allFinite() || !candidates.allFinite()) throw InputError("match_distribution: non-finite descriptors");
  const Eigen::VectorXd scores = (candidates * query).cast<double>();
  MatchDistribution d;
  d.probs = (scores.array() - scores.maxCoeff()).exp().matrix();
  d.probs /= d.probs.sum();
  d.support = std::move(support);
  return d;
}

Eigen::Index argmax_index(const MatchDistribution& dist) {
  if (dist.probs.size() == 0) throw InputError("line_argmax: empty distribution");
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < dist.probs.size(); ++k)
    if (dist.probs(k) > dist.probs(best)) best = k;
  return best;
}

NormalizedPoint line_argmax(const MatchDistribution& dist) {
  const Eigen::Index k = argmax_index(dist);
  if (static_cast<std::size_t>(dist.probs.size()) != dist.support.size())
    throw InputError("line_argmax: distribution has no support");
  return dist.support[static_cast<std::size_t>(k)];
}

NormalizedPoint window_center(const NormalizedPoint& coarse, double w_patch, const Vec2& noise) {
  if (!(w_patch > 0)) throw InputError("window_center: w_patch must be positive");
  if (!(noise.array() >= 0).all() || !(noise.array() <= 1).all())
    throw InputError("window_center: noise must lie in [0,1]^2");
  return {coarse.u + 0.5 * w_patch * noise(0), coarse.v + 0.5 * w_patch * noise(1)};
}

WindowPatch make_window_patch(const NormalizedPoint& center, double w_patch, int lattice_size,
                              const FeatureMap& fmap2) {
  if (lattice_size < 2) throw InputError("make_window_patch: lattice size must be >= 2");
  WindowPatch p;
  p.center = center;
  p.half_extent = 0.5 * w_patch;
  p.size = lattice_size;
  p.samples.reserve(static_cast<std::size_t>(lattice_size) * lattice_size);
  for (int i = 0; i < lattice_size; ++i) {
    const double v = center.v - p.half_extent + 2 * p.half_extent * i / (lattice_size - 1);
    for (int j = 0; j < lattice_size; ++j) {
      const double u = center.u - p.half_extent + 2 * p.half_extent * j / (lattice_size - 1);
      p.samples.push_back({u, v});
    }
  }
  p.descriptors = sample_bilinear(fmap2, p.samples);
  return p;
}

SoftMatch soft_match(const Eigen::VectorXf& query, const WindowPatch& patch) {
  SoftMatch m;
  m.distribution = match_distribution(query, patch.descriptors, patch.samples);
  const auto& p = m.distribution.probs;
  Vec2 mean = Vec2::Zero();
  Vec2 second = Vec2::Zero();
  for (std::size_t j = 0; j < patch.samples.size(); ++j) {
    const Vec2 y(patch.samples[j].u, patch.samples[j].v);
    mean += p(static_cast<Eigen::Index>(j)) * y;
    second += p(static_cast<Eigen::Index>(j)) * y.cwiseProduct(y);
  }
  m.point = {mean(0), mean(1)};
  const Vec2 var = (second - mean.cwiseProduct(mean)).cwiseMax(0.0);
  m.sigma = var.norm();
  return m;
}

SoftMatchGradients soft_match_backward(const Eigen::VectorXf& query, const WindowPatch& patch, const SoftMatch& match,
                                       const Vec2& upstream) {
  const auto& p = match.distribution.probs;
  const Vec2 mean(match.point.u, match.point.v);
  const auto n = static_cast<Eigen::Index>(patch.samples.size());
  // dLoss/dscore_j = upstream . p_j (y_j - mean)
  Eigen::VectorXf score_grad(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Vec2 y(patch.samples[static_cast<std::size_t>(j)].u, patch.samples[static_cast<std::size_t>(j)].v);
    score_grad(j) = static_cast<float>(p(j) * upstream.dot(y - mean));
  }
  SoftMatchGradients g;
  g.query = patch.descriptors.transpose() * score_grad;
  g.patch = score_grad * query.transpose();
  return g;
}

}  // namespace posfeat
