#pragma once

// Pose-supervised descriptor training: per-query epipolar distance of the
// soft correspondence, validity mask, and variance-weighted aggregation.

#include "posfeat/config.hpp"
#include "posfeat/featuremap.hpp"
#include "posfeat/geometry.hpp"
#include "posfeat/synth.hpp"
#include "posfeat/tinynet.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace posfeat {

struct QueryLossItem {
  double loss = 0;   // pixels
  double sigma = 0;  // spread of the window distribution
  int mask = 0;      // 1 when the query contributes
  Vec2 query = Vec2::Zero();
  Vec2 soft_point = Vec2::Zero();  // pixels, image 2
  Vec2 window = Vec2::Zero();      // window center, pixels, image 2
};

inline constexpr double kSigmaFloor = 1e-6;

/// Distance of the soft point to the line; optional gradient w.r.t. the point.
double epipolar_loss(const Vec2& soft_point, const EpipolarLine<double>& line, Vec2* grad = nullptr);

/// sum_i (M_i / sigma_i) loss_i / sum_i (M_i / sigma_i). Returns 0 and sets
/// *skipped when every mask is 0.
double aggregate_desc_loss(const std::vector<QueryLossItem>& items, bool* skipped = nullptr);

/// d(aggregate)/d(loss_i) with the weights held constant.
std::vector<double> aggregate_desc_loss_weights(const std::vector<QueryLossItem>& items);

struct PairLoss {
  double loss = 0;
  bool skipped = false;
  std::vector<QueryLossItem> items;
  MatrixXfR grad1;  // d loss / d texels of map 1 (empty unless requested)
  MatrixXfR grad2;
};

/// Line-to-window (or coarse-to-fine) search for every grid query of image 1,
/// the aggregated loss and, optionally, its gradient w.r.t. both maps.
/// `sample_key` keys the query positions and window noise.
PairLoss descriptor_pair_loss(const FeatureMap& f1, const FeatureMap& f2, const FundamentalMatrix<double>& f,
                              const TrainConfig& cfg, std::uint64_t sample_key, bool want_grad);

/// Same loss evaluated on explicit query points (no grid sampling).
PairLoss descriptor_pair_loss(const FeatureMap& f1, const FeatureMap& f2, const FundamentalMatrix<double>& f,
                              const TrainConfig& cfg, const std::vector<Vec2>& queries, std::uint64_t sample_key,
                              bool want_grad);

struct LossRecord {
  int iteration = 0;
  double loss = 0;
  bool skipped = false;
};

/// Descriptor gradients for one pair, accumulated into `grads`, scaled by `scale`.
/// Returns the pair loss (gradient-free when skipped).
PairLoss accumulate_descriptor_pair(const nn::DescriptorNet& net, const SceneBundle& pair, const TrainConfig& cfg,
                                    std::uint64_t sample_key, double scale, nn::Gradients& grads);

class DescriptorTrainer {
 public:
  DescriptorTrainer(TrainConfig cfg, nn::DescriptorNet net);

  /// One optimizer step over cfg.batch_size pairs chosen deterministically
  /// from `pairs` for this iteration.
  LossRecord step(const std::vector<SceneBundle>& pairs);

  std::vector<LossRecord> train(const std::vector<SceneBundle>& pairs, int iterations,
                                const std::function<void(const LossRecord&)>& on_step = {});

  const nn::DescriptorNet& net() const { return net_; }
  nn::DescriptorNet& net() { return net_; }
  const nn::NesterovSgd& optimizer() const { return opt_; }
  nn::NesterovSgd& optimizer() { return opt_; }
  int iteration() const { return iteration_; }

 private:
  TrainConfig cfg_;
  nn::DescriptorNet net_;
  nn::NesterovSgd opt_;
  int iteration_ = 0;
};

/// Index of the pair used at (iteration, slot); a seeded per-epoch shuffle.
std::size_t pair_schedule(std::uint64_t seed, std::size_t n_pairs, std::uint64_t iteration, int batch_size, int slot);

struct EpipolarMatchStats {
  double mean_distance = 0;  // pixels
  int matches = 0;
};

/// Grid queries (spacing px) in image 1 against every texel center of image 2,
/// mutual nearest neighbours by descriptor dot product, mean distance of the
/// matched image-2 points to the query's epipolar line. With a ground-truth
/// homography, queries that leave image 2 are dropped.
EpipolarMatchStats evaluate_epipolar_matching(const nn::DescriptorNet& net, const std::vector<SceneBundle>& pairs,
                                              int spacing = 8, bool normalize = false);

std::string loss_csv(const std::vector<LossRecord>& records);

}  // namespace posfeat
