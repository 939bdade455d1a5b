#include "posfeat/det_train.hpp"

#include "posfeat/inference.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace posfeat {

namespace {

double log_sigmoid(double s) { return s >= 0 ? -std::log1p(std::exp(-s)) : s - std::log1p(std::exp(s)); }
double sigmoid_d(double s) { return s >= 0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s)); }

}  // namespace

KeypointDistribution keypoint_distribution(const Image& heatmap, int g_k) {
  if (g_k < 1) throw InputError("keypoint distribution: grid must be positive");
  const int h = static_cast<int>(heatmap.rows());
  const int w = static_cast<int>(heatmap.cols());
  if (h == 0 || w == 0 || h % g_k != 0 || w % g_k != 0)
    throw InputError("keypoint distribution: heatmap size must be a multiple of the grid");
  if (!heatmap.allFinite()) throw InputError("keypoint distribution: non-finite scores");
  KeypointDistribution d;
  d.scores = heatmap;
  d.grid = g_k;
  d.local.resize(h, w);
  d.global.resize(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) d.global(r, c) = sigmoid_d(heatmap(r, c));
  for (int cy = 0; cy < h / g_k; ++cy)
    for (int cx = 0; cx < w / g_k; ++cx) {
      const auto cell = heatmap.block(cy * g_k, cx * g_k, g_k, g_k).cast<double>();
      const Eigen::ArrayXXd e = (cell - cell.maxCoeff()).exp();
      d.local.block(cy * g_k, cx * g_k, g_k, g_k) = e / e.sum();
    }
  return d;
}

double KeypointDistribution::log_prob(int row, int col) const {
  const int r0 = row / grid * grid, c0 = col / grid * grid;
  const auto cell = scores.block(r0, c0, grid, grid).cast<double>();
  const double m = cell.maxCoeff();
  const double lse = m + std::log((cell - m).exp().sum());
  const double s = scores(row, col);
  return (s - lse) + log_sigmoid(s);
}

CandidateSet sample_candidates(const KeypointDistribution& dist, CounterRng& rng) {
  CandidateSet q;
  const int g = dist.grid;
  for (int cy = 0; cy < dist.cells_y(); ++cy)
    for (int cx = 0; cx < dist.cells_x(); ++cx) {
      // inverse-CDF draw inside the cell, row-major
      const double u = rng.uniform();
      const double accept = rng.uniform();
      int pick = g * g - 1;
      double acc = 0;
      for (int k = 0; k < g * g; ++k) {
        acc += dist.local(cy * g + k / g, cx * g + k % g);
        if (u < acc) {
          pick = k;
          break;
        }
      }
      const int r = cy * g + pick / g, c = cx * g + pick % g;
      if (!(accept < dist.global(r, c))) continue;
      q.rows.push_back(r);
      q.cols.push_back(c);
      q.cells.push_back(cy * dist.cells_x() + cx);
      q.log_probs.push_back(dist.log_prob(r, c));
    }
  return q;
}

MatrixXfR candidate_descriptors(const FeatureMap& fmap, const CandidateSet& q) {
  std::vector<NormalizedPoint> pts;
  pts.reserve(q.size());
  for (std::size_t k = 0; k < q.size(); ++k)
    pts.push_back(to_normalized(q.point(k), fmap.image_width(), fmap.image_height()));
  return sample_bilinear(fmap, pts);
}

Eigen::MatrixXd similarity_matrix(const FeatureMap& f1, const CandidateSet& q1, const FeatureMap& f2,
                                  const CandidateSet& q2) {
  if (q1.empty() || q2.empty()) throw InputError("similarity matrix: empty candidate set");
  const MatrixXfR d1 = candidate_descriptors(f1, q1);
  const MatrixXfR d2 = candidate_descriptors(f2, q2);
  return (d1.cast<double>() * d2.cast<double>().transpose());
}

Eigen::MatrixXd match_probability(const Eigen::MatrixXd& s) {
  if (!s.allFinite()) throw InputError("match probability: non-finite similarities");
  Eigen::MatrixXd row(s.rows(), s.cols()), col(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const Eigen::RowVectorXd e = (s.row(i).array() - s.row(i).maxCoeff()).exp();
    row.row(i) = e / e.sum();
  }
  for (Eigen::Index j = 0; j < s.cols(); ++j) {
    const Eigen::VectorXd e = (s.col(j).array() - s.col(j).maxCoeff()).exp();
    col.col(j) = e / e.sum();
  }
  return row.cwiseProduct(col);
}

Eigen::MatrixXd reward_matrix(const FundamentalMatrix<double>& f, const CandidateSet& q1, const CandidateSet& q2,
                              const TrainConfig& cfg) {
  Eigen::MatrixXd r(static_cast<Eigen::Index>(q1.size()), static_cast<Eigen::Index>(q2.size()));
  for (std::size_t i = 0; i < q1.size(); ++i) {
    std::optional<EpipolarLine<double>> line;
    try {
      line = epipolar_line(f, q1.point(i));
    } catch (const DegenerateError&) {
    }
    for (std::size_t j = 0; j < q2.size(); ++j)
      r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          line ? epipolar_reward(point_line_distance(*line, q2.point(j)), cfg) : cfg.lambda_n;
  }
  return r;
}

Eigen::MatrixXd truncate_pm(const Eigen::MatrixXd& pm, const Eigen::MatrixXd& r, double threshold, double lambda_p) {
  if (pm.rows() != r.rows() || pm.cols() != r.cols()) throw InputError("truncate_pm: shape mismatch");
  return (r.array() == lambda_p && pm.array() < threshold).select(0.0, pm);
}

namespace {

// Adds w * d log P_kp(r, c) / d scores into grad.
void add_log_prob_grad(const KeypointDistribution& d, int r, int c, double w, Image& grad) {
  const int g = d.grid;
  const int r0 = r / g * g, c0 = c / g * g;
  grad.block(r0, c0, g, g) -= (w * d.local.block(r0, c0, g, g)).cast<float>();
  grad(r, c) += static_cast<float>(w * (1.0 + (1.0 - d.global(r, c))));
}

}  // namespace

DetectionLoss detection_loss(const Eigen::MatrixXd& pm, const Eigen::MatrixXd& r, const KeypointDistribution& d1,
                             const CandidateSet& q1, const KeypointDistribution& d2, const CandidateSet& q2,
                             double lambda_reg) {
  DetectionLoss out;
  out.grad1 = Image::Zero(d1.scores.rows(), d1.scores.cols());
  out.grad2 = Image::Zero(d2.scores.rows(), d2.scores.cols());
  if (q1.empty() || q2.empty()) {
    out.empty = true;
    return out;
  }
  const auto n1 = static_cast<Eigen::Index>(q1.size()), n2 = static_cast<Eigen::Index>(q2.size());
  if (pm.rows() != n1 || pm.cols() != n2 || r.rows() != n1 || r.cols() != n2)
    throw InputError("detection loss: shape mismatch");
  const Eigen::MatrixXd wr = pm.cwiseProduct(r);
  const double norm = 1.0 / static_cast<double>(n1 + n2);
  // Coefficient of log P_kp for each candidate.
  const Eigen::VectorXd c1 = (wr.rowwise().sum().array() + lambda_reg).matrix();
  const Eigen::VectorXd c2 = (wr.colwise().sum().transpose().array() + lambda_reg).matrix();
  double sum = 0;
  for (Eigen::Index i = 0; i < n1; ++i) sum += c1(i) * q1.log_probs[static_cast<std::size_t>(i)];
  for (Eigen::Index j = 0; j < n2; ++j) sum += c2(j) * q2.log_probs[static_cast<std::size_t>(j)];
  out.loss = -norm * sum;
  for (Eigen::Index i = 0; i < n1; ++i)
    add_log_prob_grad(d1, q1.rows[static_cast<std::size_t>(i)], q1.cols[static_cast<std::size_t>(i)], -norm * c1(i),
                      out.grad1);
  for (Eigen::Index j = 0; j < n2; ++j)
    add_log_prob_grad(d2, q2.rows[static_cast<std::size_t>(j)], q2.cols[static_cast<std::size_t>(j)], -norm * c2(j),
                      out.grad2);
  return out;
}

FrozenPair freeze_pair(const nn::DescriptorNet& desc, const SceneBundle& pair, bool normalize) {
  FrozenPair fp;
  const auto o1 = desc.forward(pair.image1);
  const auto o2 = desc.forward(pair.image2);
  fp.features1 = normalize ? l2_normalized(o1.features) : o1.features;
  fp.features2 = normalize ? l2_normalized(o2.features) : o2.features;
  fp.input1 = nn::DetectorNet::make_input(pair.image1, fp.features1, o1.mid);
  fp.input2 = nn::DetectorNet::make_input(pair.image2, fp.features2, o2.mid);
  fp.fundamental = pair.supervision.fundamental();
  return fp;
}

namespace {

DetectorPairStep pair_step(const FeatureMap& f1, const FeatureMap& f2, const FundamentalMatrix<double>& f,
                           const nn::DetectorNet::Output& out1, const nn::DetectorNet::Output& out2,
                           const TrainConfig& cfg, std::uint64_t sample_key) {
  DetectorPairStep st;
  const KeypointDistribution d1 = keypoint_distribution(out1.heatmap, cfg.g_k);
  const KeypointDistribution d2 = keypoint_distribution(out2.heatmap, cfg.g_k);
  CounterRng rng1(sample_key, 1), rng2(sample_key, 2);
  st.q1 = sample_candidates(d1, rng1);
  st.q2 = sample_candidates(d2, rng2);
  if (st.q1.empty() || st.q2.empty()) {
    st.loss = detection_loss({}, {}, d1, st.q1, d2, st.q2, cfg.lambda_reg);
    return st;
  }
  st.pm = match_probability(cfg.theta_m * similarity_matrix(f1, st.q1, f2, st.q2));
  st.reward = reward_matrix(f, st.q1, st.q2, cfg);
  const Eigen::MatrixXd pmt = truncate_pm(st.pm, st.reward, cfg.pm_truncation, cfg.lambda_p);
  st.loss = detection_loss(pmt, st.reward, d1, st.q1, d2, st.q2, cfg.lambda_reg);
  return st;
}

double mean_reward(const DetectorPairStep& st) {
  if (st.q1.empty() || st.q2.empty()) return 0.0;
  return st.pm.cwiseProduct(st.reward).sum() / static_cast<double>(st.q1.size());
}

std::uint64_t step_key(std::uint64_t seed, int iteration, int batch, int slot) {
  return hash_key(seed, static_cast<std::uint64_t>(iteration) * static_cast<std::uint64_t>(batch) +
                            static_cast<std::uint64_t>(slot),
                  0xde7);
}

}  // namespace

DetectorPairStep detector_pair_step(const nn::DetectorNet&, const FrozenPair& pair, const nn::DetectorNet::Output& out1,
                                    const nn::DetectorNet::Output& out2, const TrainConfig& cfg,
                                    std::uint64_t sample_key) {
  return pair_step(pair.features1, pair.features2, pair.fundamental, out1, out2, cfg, sample_key);
}

DetectorTrainer::DetectorTrainer(TrainConfig cfg, const nn::DescriptorNet& frozen, nn::DetectorNet det,
                                 const std::vector<SceneBundle>& pairs)
    : cfg_(std::move(cfg)), det_(std::move(det)), opt_(cfg_.lr, cfg_.momentum) {
  cfg_.validate();
  if (pairs.empty()) throw InputError("detector training: no pairs");
  frozen_.reserve(pairs.size());
  for (const auto& p : pairs) frozen_.push_back(freeze_pair(frozen, p, cfg_.normalize_descriptors));
}

RewardRecord DetectorTrainer::step() {
  RewardRecord rec;
  rec.iteration = iteration_;
  nn::Gradients grads = det_.stack().zero_gradients();
  int used = 0;
  for (int b = 0; b < cfg_.batch_size; ++b) {
    const std::size_t idx = pair_schedule(cfg_.seed, frozen_.size(), static_cast<std::uint64_t>(iteration_),
                                          cfg_.batch_size, b);
    const FrozenPair& fp = frozen_[idx];
    const auto out1 = det_.forward(fp.input1);
    const auto out2 = det_.forward(fp.input2);
    DetectorPairStep st = detector_pair_step(det_, fp, out1, out2, cfg_, step_key(cfg_.seed, iteration_, cfg_.batch_size, b));
    if (st.loss.empty) continue;
    ++used;
    rec.loss += st.loss.loss;
    rec.mean_reward += mean_reward(st);
    det_.backward(fp.input1, out1, st.loss.grad1, grads);
    det_.backward(fp.input2, out2, st.loss.grad2, grads);
  }
  ++iteration_;
  if (used == 0) {
    rec.skipped = true;
    return rec;
  }
  for (auto& g : grads) g /= static_cast<float>(used);
  opt_.step(det_.stack().parameters(), grads);
  rec.loss /= used;
  rec.mean_reward /= used;
  return rec;
}

std::vector<RewardRecord> DetectorTrainer::train(int iterations, const std::function<void(const RewardRecord&)>& on_step) {
  std::vector<RewardRecord> out;
  out.reserve(static_cast<std::size_t>(iterations));
  for (int i = 0; i < iterations; ++i) {
    out.push_back(step());
    if (on_step) on_step(out.back());
  }
  return out;
}

JointTrainer::JointTrainer(TrainConfig cfg, nn::DescriptorNet desc, nn::DetectorNet det)
    : cfg_(std::move(cfg)),
      desc_(std::move(desc)),
      det_(std::move(det)),
      desc_opt_(cfg_.lr, cfg_.momentum),
      det_opt_(cfg_.lr, cfg_.momentum) {
  cfg_.validate();
}

RewardRecord JointTrainer::step(const std::vector<SceneBundle>& pairs) {
  RewardRecord rec;
  rec.iteration = iteration_;
  nn::Gradients dg = desc_.stack().zero_gradients();
  nn::Gradients kg = det_.stack().zero_gradients();
  const float scale = 1.0f / static_cast<float>(cfg_.batch_size);
  int used = 0;
  for (int b = 0; b < cfg_.batch_size; ++b) {
    const std::size_t idx =
        pair_schedule(cfg_.seed, pairs.size(), static_cast<std::uint64_t>(iteration_), cfg_.batch_size, b);
    const SceneBundle& pair = pairs[idx];
    const auto o1 = desc_.forward(pair.image1);
    const auto o2 = desc_.forward(pair.image2);
    const FeatureMap f1 = cfg_.normalize_descriptors ? l2_normalized(o1.features) : o1.features;
    const FeatureMap f2 = cfg_.normalize_descriptors ? l2_normalized(o2.features) : o2.features;
    const FundamentalMatrix<double> f = pair.supervision.fundamental();
    const std::uint64_t key =
        static_cast<std::uint64_t>(iteration_) * static_cast<std::uint64_t>(cfg_.batch_size) + static_cast<std::uint64_t>(b);

    PairLoss pl = descriptor_pair_loss(f1, f2, f, cfg_, key, true);
    MatrixXfR g1 = pl.skipped ? MatrixXfR::Zero(f1.data().rows(), f1.data().cols()) : MatrixXfR(pl.grad1 * scale);
    MatrixXfR g2 = pl.skipped ? MatrixXfR::Zero(f2.data().rows(), f2.data().cols()) : MatrixXfR(pl.grad2 * scale);

    const auto in1 = nn::DetectorNet::make_input(pair.image1, f1, o1.mid);
    const auto in2 = nn::DetectorNet::make_input(pair.image2, f2, o2.mid);
    const auto h1 = det_.forward(in1);
    const auto h2 = det_.forward(in2);
    const DetectorPairStep st = pair_step(f1, f2, f, h1, h2, cfg_, step_key(cfg_.seed, iteration_, cfg_.batch_size, b));
    MatrixXfR m1 = MatrixXfR::Zero(o1.mid.data.rows(), o1.mid.data.cols());
    MatrixXfR m2 = MatrixXfR::Zero(o2.mid.data.rows(), o2.mid.data.cols());
    if (!st.loss.empty) {
      const auto ig1 = det_.backward(in1, h1, st.loss.grad1 * scale, kg, true);
      const auto ig2 = det_.backward(in2, h2, st.loss.grad2 * scale, kg, true);
      g1 += ig1.features;
      g2 += ig2.features;
      m1 = ig1.mid;
      m2 = ig2.mid;
      rec.loss += st.loss.loss;
      rec.mean_reward += mean_reward(st);
      ++used;
    }
    if (cfg_.normalize_descriptors) {
      g1 = l2_normalized_backward(o1.features, g1);
      g2 = l2_normalized_backward(o2.features, g2);
    }
    desc_.backward(o1, g1, &m1, dg);
    desc_.backward(o2, g2, &m2, dg);
  }
  ++iteration_;
  desc_opt_.step(desc_.stack().parameters(), dg);
  det_opt_.step(det_.stack().parameters(), kg);
  if (used == 0) {
    rec.skipped = true;
    return rec;
  }
  rec.loss /= used;
  rec.mean_reward /= used;
  return rec;
}

double candidate_inlier_fraction(const nn::DescriptorNet& desc, const nn::DetectorNet& det,
                                 const std::vector<SceneBundle>& pairs, const TrainConfig& cfg, int draws,
                                 std::uint64_t seed) {
  long good = 0, total = 0;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const FrozenPair fp = freeze_pair(desc, pairs[p], cfg.normalize_descriptors);
    const auto d1 = keypoint_distribution(det.forward(fp.input1).heatmap, cfg.g_k);
    const auto d2 = keypoint_distribution(det.forward(fp.input2).heatmap, cfg.g_k);
    for (int k = 0; k < draws; ++k) {
      const std::uint64_t key = hash_key(seed, p, static_cast<std::uint64_t>(k), 0x1f);
      CounterRng rng1(key, 1), rng2(key, 2);
      const CandidateSet q1 = sample_candidates(d1, rng1);
      const CandidateSet q2 = sample_candidates(d2, rng2);
      if (q1.empty() || q2.empty()) continue;
      const MatchSet m = mutual_nn_match(candidate_descriptors(fp.features1, q1), candidate_descriptors(fp.features2, q2));
      for (const Match& x : m.matches) {
        const auto i = static_cast<std::size_t>(x.i), j = static_cast<std::size_t>(x.j);
        ++total;
        try {
          if (point_line_distance(epipolar_line(fp.fundamental, q1.point(i)), q2.point(j)) <= cfg.epsilon) ++good;
        } catch (const DegenerateError&) {
        }
      }
    }
  }
  return total > 0 ? static_cast<double>(good) / static_cast<double>(total) : 0.0;
}

std::string reward_csv(const std::vector<RewardRecord>& records) {
  std::ostringstream out;
  out << "iteration,mean_reward,loss\n";
  char buf[96];
  for (const auto& r : records) {
    if (r.skipped) {
      out << r.iteration << ",skipped,skipped\n";
      continue;
    }
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g\n", r.iteration, r.mean_reward, r.loss);
    out << buf;
  }
  return out.str();
}

}  // namespace posfeat
