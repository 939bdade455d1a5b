#pragma once

#include "posfeat/common.hpp"
#include "posfeat/featuremap.hpp"
#include "posfeat/tinynet.hpp"

#include <optional>
#include <string>
#include <vector>

namespace posfeat {

/// Keypoints sorted by descending score, with one descriptor row each.
/// Positions are pixel centers (column + 0.5, row + 0.5).
struct KeypointSet {
  std::vector<Vec2> points;
  std::vector<float> scores;
  MatrixXfR descriptors;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

struct Match {
  int i = 0;
  int j = 0;
  float similarity = 0;
};

struct MatchSet {
  std::vector<Match> matches;

  std::size_t size() const { return matches.size(); }
};

struct InferenceConfig {
  int nms_size = 3;
  double score_threshold = 0.0;
  int max_keypoints = 8192;
  std::optional<double> ratio;
};

/// Named presets: "hpatches", "aachen", "eth".
InferenceConfig inference_profile(const std::string& name);

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Pixel kept iff strictly greater than every other pixel of its (clipped)
/// window x window neighborhood.
Mask nms(const Image& heatmap, int window);

/// Post-sigmoid keypoint scores.
Image sigmoid(const Image& scores);

/// heatmap -> sigmoid -> NMS -> threshold -> top-K, descriptors sampled from
/// the stride-4 map and L2-normalized, so that dot products are cosines.
KeypointSet select_keypoints(const Image& heatmap, const FeatureMap& features, const InferenceConfig& cfg);

/// Full extraction: top-left crop to multiples of 16, both networks, selection.
KeypointSet extract(const Image& image, const nn::DescriptorNet& desc, const nn::DetectorNet& det,
                    const InferenceConfig& cfg);

/// Regular grid keypoints (no detector), descriptors from the map.
KeypointSet grid_keypoints(const FeatureMap& features, int spacing);

/// Mutual nearest neighbours by descriptor dot product; optional Lowe ratio
/// test on Euclidean distance, applied in both directions.
MatchSet mutual_nn_match(const KeypointSet& set1, const KeypointSet& set2, std::optional<double> ratio = {});
MatchSet mutual_nn_match(const MatrixXfR& desc1, const MatrixXfR& desc2, std::optional<double> ratio = {});

/// "PFK1": magic, u32 K, u32 C, K x (f32 x, f32 y, f32 score, C x f32).
void write_pfk1(const std::string& path, const KeypointSet& kpts);
KeypointSet read_pfk1(const std::string& path);

/// "i,j,sim" lines with a header row.
void write_matches_csv(const std::string& path, const MatchSet& matches);
MatchSet read_matches_csv(const std::string& path);

}  // namespace posfeat
