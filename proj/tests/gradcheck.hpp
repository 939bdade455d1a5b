#pragma once

// Finite-difference harnesses shared by the unit and acceptance binaries.
// Each returns the relative error between an analytic directional derivative
// and a central difference for one seeded random configuration.

#include "posfeat/desc_train.hpp"
#include "posfeat/det_train.hpp"
#include "posfeat/rng.hpp"
#include "posfeat/search.hpp"
#include "posfeat/synth.hpp"
#include "posfeat/tinynet.hpp"

#include "oracles.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace gradcheck {

using namespace posfeat;

inline Eigen::VectorXf random_vec(CounterRng& rng, int n, double scale = 1) {
  Eigen::VectorXf v(n);
  for (int k = 0; k < n; ++k) v(k) = static_cast<float>(scale * rng.normal());
  return v;
}

inline MatrixXfR random_matrix(Eigen::Index r, Eigen::Index c, CounterRng& rng, double scale = 1) {
  MatrixXfR m(r, c);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = static_cast<float>(scale * rng.normal());
  return m;
}

inline WindowPatch random_patch(CounterRng& rng, int s, int channels, double scale) {
  WindowPatch p;
  p.center = {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)};
  p.half_extent = 0.05;
  p.size = s;
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j)
      p.samples.push_back({p.center.u - 0.05 + 0.1 * j / (s - 1), p.center.v - 0.05 + 0.1 * i / (s - 1)});
  p.descriptors = random_matrix(s * s, channels, rng, scale);
  return p;
}

// <upstream, y_hat> for an 8x8 window, perturbing query and patch together.
inline double soft_match_error(std::uint64_t seed) {
  CounterRng rng(seed, 0x51);
  const WindowPatch p = random_patch(rng, 8, 16, 0.5);
  const Eigen::VectorXf q = random_vec(rng, 16, 0.5);
  const Vec2 up(rng.normal(), rng.normal());
  const auto g = soft_match_backward(q, p, soft_match(q, p), up);
  const Eigen::VectorXf dq = random_vec(rng, 16);
  const MatrixXfR dp = random_matrix(p.descriptors.rows(), p.descriptors.cols(), rng);
  auto objective = [&](double h) {
    WindowPatch pp = p;
    pp.descriptors += static_cast<float>(h) * dp;
    const SoftMatch m = soft_match(q + static_cast<float>(h) * dq, pp);
    return up(0) * m.point.u + up(1) * m.point.v;
  };
  const double fd = oracle::central_difference(objective, 1e-3);
  const double analytic = g.query.cast<double>().dot(dq.cast<double>()) +
                          g.patch.cast<double>().cwiseProduct(dp.cast<double>()).sum();
  return oracle::relative_error(fd, analytic, 1e-6);
}

// Two stride-2 conv layers mapping an image to a stride-4 descriptor map.
struct ToyNet {
  nn::ConvStack stack;

  explicit ToyNet(std::uint64_t seed)
      : stack("toy", {{3, 1, 8, 2, nn::Act::Relu, nn::Norm::None}, {3, 8, 8, 2, nn::Act::None, nn::Norm::None}}, seed) {}

  FeatureMap features(const nn::StackTrace& tr) const {
    const nn::Activation& last = tr.layers.back().output;
    return FeatureMap(last.data.transpose(), last.height, last.width, 4);
  }
};

// Weighted loss over four explicit queries on a 32x32 planar scene, through
// the toy net. Returns NaN when the configuration sits on a kink. The weights M/sigma are frozen at the base point, matching the
// detached-sigma gradient.
inline double eq7_end_to_end_error(std::uint64_t seed, double h = 1e-2) {
  TrainConfig cfg;
  cfg.seed = seed;
  const SynthScene scene = make_planar_pair(seed, 32, 32);
  const FundamentalMatrix<double> f = scene.supervision.fundamental();
  ToyNet net(seed);
  CounterRng rng(seed, 0xe7);
  std::vector<Vec2> queries;
  for (int k = 0; k < 4; ++k) queries.emplace_back(rng.uniform(3, 29), rng.uniform(3, 29));

  const nn::StackTrace t1 = net.stack.forward(nn::from_image(scene.image1));
  const nn::StackTrace t2 = net.stack.forward(nn::from_image(scene.image2));
  const PairLoss base = descriptor_pair_loss(net.features(t1), net.features(t2), f, cfg, queries, seed, true);
  if (base.skipped) return 0;
  std::vector<double> w;
  for (const auto& it : base.items) w.push_back(it.mask / std::max(it.sigma, kSigmaFloor));

  nn::Gradients grads = net.stack.zero_gradients();
  const MatrixXfR up1 = base.grad1.transpose(), up2 = base.grad2.transpose();
  std::vector<const MatrixXfR*> slots(2, nullptr);
  slots[1] = &up1;
  net.stack.backward(t1, slots, grads);
  slots[1] = &up2;
  net.stack.backward(t2, slots, grads);

  auto& params = net.stack.parameters();
  const std::vector<nn::Parameter> saved = params;
  double gnorm2 = 0, nnorm2 = 0;
  std::vector<Eigen::VectorXf> noise;
  for (const auto& g : grads) {
    gnorm2 += g.cast<double>().squaredNorm();
    noise.push_back(random_vec(rng, static_cast<int>(g.size())));
    nnorm2 += noise.back().cast<double>().squaredNorm();
  }
  std::vector<Eigen::VectorXf> dir;
  double analytic = 0;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    dir.push_back((grads[i].cast<double>() / std::sqrt(gnorm2) + noise[i].cast<double>() / std::sqrt(nnorm2))
                      .cast<float>());
    analytic += grads[i].cast<double>().dot(dir[i].cast<double>());
  }
  auto signed_distance = [&](const QueryLossItem& it) {
    return epipolar_line(f, it.query).coeffs.dot(it.soft_point.homogeneous());
  };
  auto relu_pattern = [](const nn::StackTrace& tr) {
    return (tr.layers.front().output.data.array() > 0).eval();
  };
  const auto a1 = relu_pattern(t1), a2 = relu_pattern(t2);
  // The loss is piecewise smooth: the line argmax picks the window, ReLUs
  // switch, and the distance has a kink on the line. A difference is only
  // meaningful when both probes stay on the base branch, so h shrinks until
  // they do.
  bool same_branch = true;
  auto objective = [&](double t) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i].value = saved[i].value + static_cast<float>(t) * dir[i];
    const nn::StackTrace p1 = net.stack.forward(nn::from_image(scene.image1));
    const nn::StackTrace p2 = net.stack.forward(nn::from_image(scene.image2));
    if ((relu_pattern(p1) != a1).any() || (relu_pattern(p2) != a2).any()) same_branch = false;
    const PairLoss pl = descriptor_pair_loss(net.features(p1), net.features(p2), f, cfg, queries, seed, false);
    double num = 0, den = 0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      num += w[k] * pl.items[k].loss;
      den += w[k];
      if (w[k] == 0) continue;
      if (pl.items[k].window != base.items[k].window ||
          (signed_distance(pl.items[k]) > 0) != (signed_distance(base.items[k]) > 0))
        same_branch = false;
    }
    return num / den;
  };
  double fd = std::numeric_limits<double>::quiet_NaN();
  for (int attempt = 0; attempt < 8; ++attempt, h *= 0.5) {
    same_branch = true;
    const double d = oracle::five_point_difference(objective, h);
    if (same_branch) {
      fd = d;
      break;
    }
  }
  params = saved;
  // NaN: the base point sits on a kink, where no derivative exists.
  return std::isnan(fd) ? fd : oracle::relative_error(fd, analytic, 1e-6);
}

// log P_kp from scratch: log-softmax over the cell plus log-sigmoid, in double.
inline double naive_log_pkp(const Eigen::MatrixXd& s, int g, int r, int c) {
  const int r0 = (r / g) * g, c0 = (c / g) * g;
  double mx = -INFINITY;
  for (int i = r0; i < r0 + g; ++i)
    for (int j = c0; j < c0 + g; ++j) mx = std::max(mx, s(i, j));
  double z = 0;
  for (int i = r0; i < r0 + g; ++i)
    for (int j = c0; j < c0 + g; ++j) z += std::exp(s(i, j) - mx);
  const double x = s(r, c);
  const double log_sig = x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
  return (x - mx - std::log(z)) + log_sig;
}

// Detection surrogate with candidates, P_m and R frozen; the heatmaps move.
inline double detection_loss_error(std::uint64_t seed) {
  CounterRng rng(seed, 0xd7);
  const int g = 4, hgt = 16, wid = 16;
  const MatrixXfR h1 = random_matrix(hgt, wid, rng, 2.0);
  const MatrixXfR h2 = random_matrix(hgt, wid, rng, 2.0);
  const Image img1 = Eigen::Map<const Image>(h1.data(), hgt, wid);
  const Image img2 = Eigen::Map<const Image>(h2.data(), hgt, wid);
  const KeypointDistribution d1 = keypoint_distribution(img1, g);
  const KeypointDistribution d2 = keypoint_distribution(img2, g);
  CounterRng s1(seed, 1), s2(seed, 2);
  const CandidateSet q1 = sample_candidates(d1, s1);
  const CandidateSet q2 = sample_candidates(d2, s2);
  if (q1.empty() || q2.empty()) return 0;
  Eigen::MatrixXd pm(q1.size(), q2.size()), r(q1.size(), q2.size());
  for (Eigen::Index k = 0; k < pm.size(); ++k) {
    pm.data()[k] = rng.uniform();
    r.data()[k] = rng.uniform() < 0.3 ? 1.0 : -0.25;
  }
  const double lambda_reg = -0.001;
  const DetectionLoss dl = detection_loss(pm, r, d1, q1, d2, q2, lambda_reg);

  const MatrixXfR dir1 = random_matrix(hgt, wid, rng), dir2 = random_matrix(hgt, wid, rng);
  const Eigen::MatrixXd s1d = img1.cast<double>().matrix(), s2d = img2.cast<double>().matrix();
  auto surrogate = [&](double t) {
    const Eigen::MatrixXd a = s1d + t * dir1.cast<double>();
    const Eigen::MatrixXd b = s2d + t * dir2.cast<double>();
    double sum = 0;
    for (std::size_t i = 0; i < q1.size(); ++i)
      for (std::size_t j = 0; j < q2.size(); ++j) {
        const double wr = pm(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) *
                          r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        sum += wr * (naive_log_pkp(a, g, q1.rows[i], q1.cols[i]) + naive_log_pkp(b, g, q2.rows[j], q2.cols[j]));
      }
    for (std::size_t i = 0; i < q1.size(); ++i) sum += lambda_reg * naive_log_pkp(a, g, q1.rows[i], q1.cols[i]);
    for (std::size_t j = 0; j < q2.size(); ++j) sum += lambda_reg * naive_log_pkp(b, g, q2.rows[j], q2.cols[j]);
    return -sum / static_cast<double>(q1.size() + q2.size());
  };
  const double fd = oracle::central_difference(surrogate, 1e-4);
  const double analytic = (dl.grad1.cast<double>() * Eigen::Map<const Image>(dir1.data(), hgt, wid).cast<double>()).sum() +
                          (dl.grad2.cast<double>() * Eigen::Map<const Image>(dir2.data(), hgt, wid).cast<double>()).sum();
  return oracle::relative_error(fd, analytic, 1e-6);
}

}  // namespace gradcheck
