#pragma once

// Policy-gradient detector training on frozen descriptors.

#include "posfeat/config.hpp"
#include "posfeat/desc_train.hpp"
#include "posfeat/featuremap.hpp"
#include "posfeat/geometry.hpp"
#include "posfeat/rng.hpp"
#include "posfeat/synth.hpp"
#include "posfeat/tinynet.hpp"

#include <functional>
#include <string>
#include <vector>

namespace posfeat {

/// P_kp = softmax over each g x g cell times a per-pixel sigmoid.
struct KeypointDistribution {
  Image scores;       // pre-activation heatmap
  int grid = 8;
  Eigen::ArrayXXd local;   // per-cell softmax factor (row-major layout like scores)
  Eigen::ArrayXXd global;  // sigmoid(scores)

  Eigen::ArrayXXd prob() const { return local * global; }
  /// log P_kp at a pixel, evaluated without forming the product.
  double log_prob(int row, int col) const;
  int cells_x() const { return static_cast<int>(scores.cols()) / grid; }
  int cells_y() const { return static_cast<int>(scores.rows()) / grid; }
};

KeypointDistribution keypoint_distribution(const Image& heatmap, int g_k);

/// At most one accepted pixel per cell.
struct CandidateSet {
  std::vector<int> rows, cols;
  std::vector<int> cells;
  std::vector<double> log_probs;

  std::size_t size() const { return rows.size(); }
  bool empty() const { return rows.empty(); }
  /// Pixel center of candidate k.
  Vec2 point(std::size_t k) const { return {cols[k] + 0.5, rows[k] + 0.5}; }
};

/// Per cell: a position drawn from the local softmax, accepted with
/// probability sigmoid(score) at that position.
CandidateSet sample_candidates(const KeypointDistribution& dist, CounterRng& rng);

/// Descriptors of candidates, bilinearly sampled from a map.
MatrixXfR candidate_descriptors(const FeatureMap& fmap, const CandidateSet& q);

/// S(i, j) = dot(F1(x_i), F2(y_j)).
Eigen::MatrixXd similarity_matrix(const FeatureMap& f1, const CandidateSet& q1, const FeatureMap& f2,
                                  const CandidateSet& q2);

/// Row softmax times column softmax.
Eigen::MatrixXd match_probability(const Eigen::MatrixXd& s);

/// lambda_p where y_j lies within epsilon of the epipolar line of x_i, else lambda_n.
Eigen::MatrixXd reward_matrix(const FundamentalMatrix<double>& f, const CandidateSet& q1, const CandidateSet& q2,
                              const TrainConfig& cfg);

/// Zero P_m where the reward is positive and P_m < threshold.
Eigen::MatrixXd truncate_pm(const Eigen::MatrixXd& pm, const Eigen::MatrixXd& r, double threshold, double lambda_p);

struct DetectionLoss {
  double loss = 0;
  bool empty = false;  // one of the candidate sets was empty
  Image grad1;         // d loss / d heatmap 1
  Image grad2;
};

/// REINFORCE surrogate with P_m R held constant; gradients flow through
/// log P_kp of the sampled candidates only.
DetectionLoss detection_loss(const Eigen::MatrixXd& pm_truncated, const Eigen::MatrixXd& r,
                             const KeypointDistribution& d1, const CandidateSet& q1, const KeypointDistribution& d2,
                             const CandidateSet& q2, double lambda_reg);

struct RewardRecord {
  int iteration = 0;
  double mean_reward = 0;  // sum of P_m R per image-1 candidate, batch mean
  double loss = 0;
  bool skipped = false;
};

/// Frozen descriptor outputs of one pair, reused across iterations.
struct FrozenPair {
  FeatureMap features1, features2;
  nn::DetectorNet::Input input1, input2;
  FundamentalMatrix<double> fundamental;
};

FrozenPair freeze_pair(const nn::DescriptorNet& desc, const SceneBundle& pair, bool normalize);

/// Everything one detector step computes for a pair.
struct DetectorPairStep {
  CandidateSet q1, q2;
  Eigen::MatrixXd pm, reward;
  DetectionLoss loss;
};

DetectorPairStep detector_pair_step(const nn::DetectorNet& det, const FrozenPair& pair,
                                    const nn::DetectorNet::Output& out1, const nn::DetectorNet::Output& out2,
                                    const TrainConfig& cfg, std::uint64_t sample_key);

class DetectorTrainer {
 public:
  DetectorTrainer(TrainConfig cfg, const nn::DescriptorNet& frozen, nn::DetectorNet det,
                  const std::vector<SceneBundle>& pairs);

  RewardRecord step();
  std::vector<RewardRecord> train(int iterations, const std::function<void(const RewardRecord&)>& on_step = {});

  const nn::DetectorNet& net() const { return det_; }
  nn::DetectorNet& net() { return det_; }
  const nn::NesterovSgd& optimizer() const { return opt_; }
  nn::NesterovSgd& optimizer() { return opt_; }

 private:
  TrainConfig cfg_;
  nn::DetectorNet det_;
  nn::NesterovSgd opt_;
  std::vector<FrozenPair> frozen_;
  int iteration_ = 0;
};

/// Both networks from scratch; the detector loss also reaches the descriptor
/// through the detector input. Ablation only.
class JointTrainer {
 public:
  JointTrainer(TrainConfig cfg, nn::DescriptorNet desc, nn::DetectorNet det);

  RewardRecord step(const std::vector<SceneBundle>& pairs);

  const nn::DescriptorNet& descriptor() const { return desc_; }
  const nn::DetectorNet& detector() const { return det_; }

 private:
  TrainConfig cfg_;
  nn::DescriptorNet desc_;
  nn::DetectorNet det_;
  nn::NesterovSgd desc_opt_, det_opt_;
  int iteration_ = 0;
};

/// Fraction of mutual-NN candidate matches whose epipolar distance is within
/// epsilon, averaged over `draws` candidate samplings per pair.
double candidate_inlier_fraction(const nn::DescriptorNet& desc, const nn::DetectorNet& det,
                                 const std::vector<SceneBundle>& pairs, const TrainConfig& cfg, int draws,
                                 std::uint64_t seed);

std::string reward_csv(const std::vector<RewardRecord>& records);

}  // namespace posfeat
