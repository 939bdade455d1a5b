#include "posfeat/desc_train.hpp"

#include "posfeat/inference.hpp"
#include "posfeat/rng.hpp"
#include "posfeat/sampling.hpp"
#include "posfeat/search.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace posfeat {

double epipolar_loss(const Vec2& y, const EpipolarLine<double>& line, Vec2* grad) {
  const double r = line.a() * y(0) + line.b() * y(1) + line.c();
  if (grad) *grad = (r > 0 ? 1.0 : (r < 0 ? -1.0 : 0.0)) * line.normal();
  return std::abs(r);
}

std::vector<double> aggregate_desc_loss_weights(const std::vector<QueryLossItem>& items) {
  if (items.empty()) throw InputError("aggregate_desc_loss: no items");
  std::vector<double> w(items.size(), 0.0);
  double total = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].mask == 0) continue;
    w[i] = 1.0 / std::max(items[i].sigma, kSigmaFloor);
    total += w[i];
  }
  if (total > 0)
    for (double& x : w) x /= total;
  return w;
}

double aggregate_desc_loss(const std::vector<QueryLossItem>& items, bool* skipped) {
  const auto w = aggregate_desc_loss_weights(items);
  double num = 0;
  bool any = false;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].mask == 0) continue;
    any = true;
    num += w[i] * items[i].loss;
  }
  if (skipped) *skipped = !any;
  return any ? num : 0.0;
}

namespace {

struct QueryWork {
  bool valid = false;
  EpipolarLine<double> line;
  BilinearTaps query_taps;
  Eigen::VectorXf query_desc;
  WindowPatch patch;
  SoftMatch soft;
};

}  // namespace

PairLoss descriptor_pair_loss(const FeatureMap& f1, const FeatureMap& f2, const FundamentalMatrix<double>& f,
                              const TrainConfig& cfg, const std::vector<Vec2>& queries, std::uint64_t sample_key,
                              bool want_grad) {
  const double w1 = f1.image_width(), h1 = f1.image_height();
  const double w2 = f2.image_width(), h2 = f2.image_height();
  PairLoss out;
  out.items.resize(queries.size());
  std::vector<QueryWork> work(queries.size());

  LineCandidates grid;
  if (cfg.search == SearchMode::CoarseToFine) grid = build_grid_candidates(cfg.n_line, f2);

  for (std::size_t q = 0; q < queries.size(); ++q) {
    QueryLossItem& item = out.items[q];
    QueryWork& wk = work[q];
    item.query = queries[q];
    try {
      wk.line = epipolar_line(f, queries[q]);
    } catch (const DegenerateError&) {
      continue;  // query at the epipole: masked
    }
    const auto segment = clip_line_to_image(wk.line, w2, h2);
    if (!segment) continue;

    const NormalizedPoint qn = to_normalized(queries[q], w1, h1);
    wk.query_taps = bilinear_taps(f1.rows(), f1.cols(), qn);
    wk.query_desc = sample_bilinear(f1, qn);

    const LineCandidates cands =
        cfg.search == SearchMode::LineToWindow ? build_line_candidates(*segment, cfg.n_line, f2) : grid;
    const MatchDistribution coarse = match_distribution(wk.query_desc, cands.descriptors, cands.points);
    const NormalizedPoint hit = line_argmax(coarse);

    CounterRng rng(sample_key, 0x1000 + q);
    const Vec2 noise(rng.uniform(), rng.uniform());
    const NormalizedPoint center = window_center(hit, cfg.w_patch, noise);
    wk.patch = make_window_patch(center, cfg.w_patch, cfg.patch_lattice_s, f2);
    wk.soft = soft_match(wk.query_desc, wk.patch);

    item.window = from_normalized(center, w2, h2);
    item.soft_point = from_normalized(wk.soft.point, w2, h2);
    item.sigma = wk.soft.sigma;
    item.loss = epipolar_loss(item.soft_point, wk.line);
    item.mask = 1;
    wk.valid = true;
  }

  const auto weights = aggregate_desc_loss_weights(out.items);
  out.loss = aggregate_desc_loss(out.items, &out.skipped);
  if (!want_grad || out.skipped) return out;

  out.grad1 = MatrixXfR::Zero(f1.data().rows(), f1.data().cols());
  out.grad2 = MatrixXfR::Zero(f2.data().rows(), f2.data().cols());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const QueryWork& wk = work[q];
    if (!wk.valid || weights[q] == 0) continue;
    Vec2 dpoint;
    epipolar_loss(out.items[q].soft_point, wk.line, &dpoint);
    // pixels -> normalized coordinates of image 2
    const Vec2 upstream(weights[q] * dpoint(0) * w2, weights[q] * dpoint(1) * h2);
    const SoftMatchGradients g = soft_match_backward(wk.query_desc, wk.patch, wk.soft, upstream);
    accumulate_bilinear_backward(wk.query_taps, g.query.transpose(), out.grad1);
    for (std::size_t s = 0; s < wk.patch.samples.size(); ++s) {
      const BilinearTaps taps = bilinear_taps(f2.rows(), f2.cols(), wk.patch.samples[s]);
      accumulate_bilinear_backward(taps, g.patch.row(static_cast<Eigen::Index>(s)), out.grad2);
    }
  }
  return out;
}

PairLoss descriptor_pair_loss(const FeatureMap& f1, const FeatureMap& f2, const FundamentalMatrix<double>& f,
                              const TrainConfig& cfg, std::uint64_t sample_key, bool want_grad) {
  const QuerySet qs = grid_random_queries(f1.image_width(), f1.image_height(), cfg.g_d, cfg.seed, sample_key);
  return descriptor_pair_loss(f1, f2, f, cfg, qs.points, hash_key(cfg.seed, sample_key, 0x5eed), want_grad);
}

PairLoss accumulate_descriptor_pair(const nn::DescriptorNet& net, const SceneBundle& pair, const TrainConfig& cfg,
                                    std::uint64_t sample_key, double scale, nn::Gradients& grads) {
  const auto out1 = net.forward(pair.image1);
  const auto out2 = net.forward(pair.image2);
  const FundamentalMatrix<double> f = pair.supervision.fundamental();
  if (!cfg.normalize_descriptors) {
    PairLoss pl = descriptor_pair_loss(out1.features, out2.features, f, cfg, sample_key, true);
    if (pl.skipped) return pl;
    pl.grad1 *= static_cast<float>(scale);
    pl.grad2 *= static_cast<float>(scale);
    net.backward(out1, pl.grad1, nullptr, grads);
    net.backward(out2, pl.grad2, nullptr, grads);
    return pl;
  }
  const FeatureMap n1 = l2_normalized(out1.features);
  const FeatureMap n2 = l2_normalized(out2.features);
  PairLoss pl = descriptor_pair_loss(n1, n2, f, cfg, sample_key, true);
  if (pl.skipped) return pl;
  const MatrixXfR g1 = l2_normalized_backward(out1.features, pl.grad1) * static_cast<float>(scale);
  const MatrixXfR g2 = l2_normalized_backward(out2.features, pl.grad2) * static_cast<float>(scale);
  net.backward(out1, g1, nullptr, grads);
  net.backward(out2, g2, nullptr, grads);
  return pl;
}

std::size_t pair_schedule(std::uint64_t seed, std::size_t n_pairs, std::uint64_t iteration, int batch_size, int slot) {
  if (n_pairs == 0) throw InputError("training: no pairs");
  const std::uint64_t draw = iteration * static_cast<std::uint64_t>(batch_size) + static_cast<std::uint64_t>(slot);
  const std::uint64_t epoch = draw / n_pairs;
  // Fisher-Yates shuffle of the epoch, keyed by (seed, epoch).
  std::vector<std::size_t> order(n_pairs);
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng rng(seed, 0xe90c + epoch);
  for (std::size_t i = n_pairs - 1; i > 0; --i) std::swap(order[i], order[static_cast<std::size_t>(rng.below(static_cast<int>(i + 1)))]);
  return order[draw % n_pairs];
}

DescriptorTrainer::DescriptorTrainer(TrainConfig cfg, nn::DescriptorNet net)
    : cfg_(std::move(cfg)), net_(std::move(net)), opt_(cfg_.lr, cfg_.momentum) {
  cfg_.validate();
}

LossRecord DescriptorTrainer::step(const std::vector<SceneBundle>& pairs) {
  LossRecord rec;
  rec.iteration = iteration_;
  nn::Gradients grads = net_.stack().zero_gradients();
  double total = 0;
  int used = 0;
  for (int b = 0; b < cfg_.batch_size; ++b) {
    const std::size_t idx = pair_schedule(cfg_.seed, pairs.size(), static_cast<std::uint64_t>(iteration_), cfg_.batch_size, b);
    const std::uint64_t key = static_cast<std::uint64_t>(iteration_) * static_cast<std::uint64_t>(cfg_.batch_size) +
                              static_cast<std::uint64_t>(b);
    const PairLoss pl = accumulate_descriptor_pair(net_, pairs[idx], cfg_, key, 1.0 / cfg_.batch_size, grads);
    if (pl.skipped) continue;
    total += pl.loss;
    ++used;
  }
  ++iteration_;
  if (used == 0) {
    rec.skipped = true;
    return rec;
  }
  // Pairs that were skipped contributed no gradient; rescale to a mean over used pairs.
  if (used != cfg_.batch_size)
    for (auto& g : grads) g *= static_cast<float>(cfg_.batch_size) / static_cast<float>(used);
  opt_.step(net_.stack().parameters(), grads);
  rec.loss = total / used;
  return rec;
}

std::vector<LossRecord> DescriptorTrainer::train(const std::vector<SceneBundle>& pairs, int iterations,
                                                 const std::function<void(const LossRecord&)>& on_step) {
  std::vector<LossRecord> records;
  records.reserve(static_cast<std::size_t>(iterations));
  for (int i = 0; i < iterations; ++i) {
    records.push_back(step(pairs));
    if (on_step) on_step(records.back());
  }
  return records;
}

namespace {

// Queries whose true correspondence falls inside image 2. Outside points have
// no right answer, so they only measure the border.
KeypointSet covisible_subset(const KeypointSet& k, const Mat3& h, const Image& image2) {
  KeypointSet out;
  std::vector<Eigen::Index> keep;
  for (std::size_t i = 0; i < k.points.size(); ++i) {
    const Vec2 x = (h * k.points[i].homogeneous()).hnormalized();
    if (x(0) > 0 && x(0) < image2.cols() && x(1) > 0 && x(1) < image2.rows()) keep.push_back(static_cast<Eigen::Index>(i));
  }
  out.descriptors.resize(static_cast<Eigen::Index>(keep.size()), k.descriptors.cols());
  for (std::size_t r = 0; r < keep.size(); ++r) {
    out.points.push_back(k.points[static_cast<std::size_t>(keep[r])]);
    out.descriptors.row(static_cast<Eigen::Index>(r)) = k.descriptors.row(keep[r]);
    out.scores.push_back(k.scores[static_cast<std::size_t>(keep[r])]);
  }
  return out;
}

}  // namespace

EpipolarMatchStats evaluate_epipolar_matching(const nn::DescriptorNet& net, const std::vector<SceneBundle>& pairs,
                                              int spacing, bool normalize) {
  EpipolarMatchStats stats;
  double sum = 0;
  for (const SceneBundle& pair : pairs) {
    FeatureMap f1 = net.forward(pair.image1).features;
    FeatureMap f2 = net.forward(pair.image2).features;
    if (normalize) {
      f1 = l2_normalized(f1);
      f2 = l2_normalized(f2);
    }
    KeypointSet k1 = grid_keypoints(f1, spacing);
    if (pair.homography) k1 = covisible_subset(k1, *pair.homography, pair.image2);
    const KeypointSet k2 = grid_keypoints(f2, f2.stride());
    const MatchSet m = mutual_nn_match(k1, k2);
    const FundamentalMatrix<double> f = pair.supervision.fundamental();
    for (const Match& x : m.matches) {
      const Vec2& p1 = k1.points[static_cast<std::size_t>(x.i)];
      const Vec2& p2 = k2.points[static_cast<std::size_t>(x.j)];
      try {
        sum += point_line_distance(epipolar_line(f, p1), p2);
        ++stats.matches;
      } catch (const DegenerateError&) {
      }
    }
  }
  stats.mean_distance = stats.matches > 0 ? sum / stats.matches : 0.0;
  return stats;
}

std::string loss_csv(const std::vector<LossRecord>& records) {
  std::ostringstream out;
  out << "iteration,loss\n";
  char buf[48];
  for (const auto& r : records) {
    if (r.skipped) {
      out << r.iteration << ",skipped\n";
      continue;
    }
    std::snprintf(buf, sizeof buf, "%.9g", r.loss);
    out << r.iteration << "," << buf << "\n";
  }
  return out.str();
}

}  // namespace posfeat
