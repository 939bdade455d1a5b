#pragma once

#include "posfeat/common.hpp"

#include <array>
#include <string>
#include <vector>

namespace posfeat {

struct MatchSet;
struct KeypointSet;

/// Image-1 to image-2 pixel mapping, normalized so that H(2,2) = 1.
class Homography {
 public:
  Homography() = default;
  explicit Homography(const Mat3& h);

  const Mat3& matrix() const { return h_; }
  Vec2 apply(const Vec2& x) const;

 private:
  Mat3 h_ = Mat3::Identity();
};

/// Plain text, 9 whitespace-separated decimals, row-major.
Homography read_homography(const std::string& path);
void write_homography(const std::string& path, const Mat3& h);

/// ||H(x1) - x2|| per match.
std::vector<double> match_errors(const MatchSet& matches, const KeypointSet& kpts1, const KeypointSet& kpts2,
                                 const Homography& h);

inline constexpr int kMmaThresholds = 10;

/// MMA at integer pixel thresholds 1..10.
struct MmaCurve {
  std::array<double, kMmaThresholds> values{};
  bool empty = false;  // set when there were no matches (all values 0)
};

MmaCurve mma(const std::vector<double>& errors);

/// Weights (2 - 0.1 t), t = 1..10, normalized by their sum 14.5.
std::array<double, kMmaThresholds> mmascore_weights();
double mmascore(const MmaCurve& curve);

struct PairEvaluation {
  std::string pair_id;
  int n_matches = 0;
  MmaCurve curve;
  double score = 0;
};

PairEvaluation evaluate_pair(const std::string& pair_id, const MatchSet& matches, const KeypointSet& kpts1,
                             const KeypointSet& kpts2, const Homography& h);

/// Unweighted mean of per-pair curves and scores.
PairEvaluation aggregate(const std::vector<PairEvaluation>& pairs);

/// CSV: pair_id,n_matches,mma_1..mma_10,mmascore; one row per pair plus an
/// "aggregate" row.
std::string eval_report_csv(const std::vector<PairEvaluation>& pairs);

/// Two-column "threshold mma" data for plotting, one block per pair.
std::string mma_curve_dat(const std::vector<PairEvaluation>& pairs);

}  // namespace posfeat
