#pragma once

// Line-to-window correspondence search: a discrete argmax over candidates
// sampled along the epipolar line, followed by a differentiable soft-argmax
// inside a local window around the coarse hit.

#include "posfeat/featuremap.hpp"
#include "posfeat/geometry.hpp"

#include <vector>

namespace posfeat {

struct LineCandidates {
  std::vector<NormalizedPoint> points;
  MatrixXfR descriptors;  // one row per point
};

/// Softmax weights over a candidate support.
struct MatchDistribution {
  Eigen::VectorXd probs;
  std::vector<NormalizedPoint> support;
};

/// Regular s x s lattice spanning center +- half_extent on both axes.
struct WindowPatch {
  NormalizedPoint center;
  double half_extent = 0;
  int size = 0;
  std::vector<NormalizedPoint> samples;  // row-major, v outer
  MatrixXfR descriptors;
};

struct SoftMatch {
  NormalizedPoint point;  // expectation over the window
  double sigma = 0;       // Euclidean norm of the per-axis variances
  MatchDistribution distribution;
};

struct SoftMatchGradients {
  Eigen::VectorXf query;
  MatrixXfR patch;  // same layout as WindowPatch::descriptors
};

/// n_line points evenly spaced along a pixel-space segment of image 2, with
/// descriptors bilinearly sampled from fmap2.
LineCandidates build_line_candidates(const LineSegment<double>& segment, int n_line, const FeatureMap& fmap2);

/// Coarse baseline: a k x k grid of texel-aligned points over the whole image,
/// k = round(sqrt(n)).
LineCandidates build_grid_candidates(int n, const FeatureMap& fmap2);

/// Max-shifted softmax of query . candidate_k.
MatchDistribution match_distribution(const Eigen::VectorXf& query, const MatrixXfR& candidates,
                                     std::vector<NormalizedPoint> support = {});

/// Highest-probability support point; ties resolve to the lowest index.
NormalizedPoint line_argmax(const MatchDistribution& dist);
Eigen::Index argmax_index(const MatchDistribution& dist);

/// coarse + 0.5 * w_patch * noise, noise in [0,1]^2.
NormalizedPoint window_center(const NormalizedPoint& coarse, double w_patch, const Vec2& noise);

WindowPatch make_window_patch(const NormalizedPoint& center, double w_patch, int lattice_size, const FeatureMap& fmap2);

SoftMatch soft_match(const Eigen::VectorXf& query, const WindowPatch& patch);

/// Gradients of the soft point with respect to the query and the patch
/// descriptors, given upstream = dLoss/d(point) in normalized units.
SoftMatchGradients soft_match_backward(const Eigen::VectorXf& query, const WindowPatch& patch, const SoftMatch& match,
                                       const Vec2& upstream);

}  // namespace posfeat
