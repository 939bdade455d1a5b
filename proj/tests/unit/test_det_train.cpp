#include <doctest.h>

#include "posfeat/det_train.hpp"

#include "../gradcheck.hpp"

#include <cmath>

using namespace posfeat;

namespace {

Image constant(int h, int w, float v) { return Image::Constant(h, w, v); }

double sigmoid(double x) { return 1 / (1 + std::exp(-x)); }

CandidateSet single(int r, int c, const KeypointDistribution& d) {
  CandidateSet q;
  q.rows = {r};
  q.cols = {c};
  q.cells = {0};
  q.log_probs = {d.log_prob(r, c)};
  return q;
}

}  // namespace

TEST_CASE("keypoint distribution") {
  SUBCASE("identical scores in a cell") {
    const auto d = keypoint_distribution(constant(8, 8, 0.7f), 4);
    const auto p = d.prob();
    for (Eigen::Index k = 0; k < p.size(); ++k) CHECK(std::abs(p.data()[k] - sigmoid(0.7f) / 16) < 1e-12);
  }
  SUBCASE("g_k = 1 reduces to the sigmoid") {
    CounterRng rng(1, 0);
    Image s(4, 6);
    for (Eigen::Index k = 0; k < s.size(); ++k) s.data()[k] = static_cast<float>(rng.normal() * 3);
    const auto d = keypoint_distribution(s, 1);
    const auto p = d.prob();
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 6; ++c) {
        CHECK(d.local(r, c) == doctest::Approx(1.0));
        CHECK(p(r, c) == doctest::Approx(sigmoid(s(r, c))).epsilon(1e-12));
      }
  }
  SUBCASE("hand softmax of (ln 2, 0, 0, 0)") {
    Image s = constant(2, 2, 0);
    s(0, 0) = static_cast<float>(std::log(2.0));
    const auto d = keypoint_distribution(s, 2);
    CHECK(std::abs(d.local(0, 0) - 0.4) < 1e-7);
    CHECK(std::abs(d.local(0, 1) - 0.2) < 1e-7);
    CHECK(std::abs(d.local(1, 0) - 0.2) < 1e-7);
    CHECK(std::abs(d.local(1, 1) - 0.2) < 1e-7);
  }
  SUBCASE("cells sum to one and log_prob is stable") {
    CounterRng rng(2, 0);
    Image s(16, 24);
    for (Eigen::Index k = 0; k < s.size(); ++k) s.data()[k] = static_cast<float>(rng.normal() * 20);
    const auto d = keypoint_distribution(s, 8);
    for (int cy = 0; cy < d.cells_y(); ++cy)
      for (int cx = 0; cx < d.cells_x(); ++cx)
        CHECK(std::abs(d.local.block(cy * 8, cx * 8, 8, 8).sum() - 1) < 1e-6);
    const auto p = d.prob();
    CHECK((p > 0).all());
    CHECK((p < 1).all());
    Image big = constant(2, 2, -200);
    CHECK(std::isfinite(keypoint_distribution(big, 2).log_prob(0, 0)));
    CHECK(keypoint_distribution(big, 2).log_prob(0, 0) == doctest::Approx(std::log(0.25) - 200));
  }
  SUBCASE("invalid input") {
    CHECK_THROWS_AS(keypoint_distribution(constant(10, 8, 0), 4), InputError);
    CHECK_THROWS_AS(keypoint_distribution(constant(8, 8, 0), 0), InputError);
    Image s = constant(8, 8, 0);
    s(3, 3) = std::nanf("");
    CHECK_THROWS_AS(keypoint_distribution(s, 4), InputError);
  }
}

TEST_CASE("candidate sampling") {
  SUBCASE("saturated acceptance gives one point per cell") {
    const auto d = keypoint_distribution(constant(32, 24, 40), 8);
    CounterRng rng(3, 0);
    const auto q = sample_candidates(d, rng);
    CHECK(q.size() == 12);
    for (std::size_t k = 0; k < q.size(); ++k) {
      CHECK(q.cells[k] == static_cast<int>(k));
      CHECK(std::isfinite(q.log_probs[k]));
      CHECK(q.log_probs[k] == doctest::Approx(d.log_prob(q.rows[k], q.cols[k])));
    }
  }
  SUBCASE("vanishing acceptance gives an empty set") {
    const auto d = keypoint_distribution(constant(16, 16, -1e4f), 8);
    CounterRng rng(4, 0);
    CHECK(sample_candidates(d, rng).empty());
  }
  SUBCASE("acceptance frequency matches the sigmoid") {
    const double s = 0.3;
    const auto d = keypoint_distribution(constant(1, 1, static_cast<float>(s)), 1);
    const int trials = 10000;
    int accepted = 0;
    for (int t = 0; t < trials; ++t) {
      CounterRng rng(5, t);
      accepted += static_cast<int>(sample_candidates(d, rng).size());
    }
    const double p = sigmoid(s), se = std::sqrt(p * (1 - p) / trials);
    CHECK(std::abs(static_cast<double>(accepted) / trials - p) < 3 * se);
  }
  SUBCASE("positions follow the local softmax") {
    Image sc = constant(2, 2, 30);
    sc(1, 0) = 30 + static_cast<float>(std::log(3.0));
    const auto d = keypoint_distribution(sc, 2);
    int hits = 0;
    const int trials = 6000;
    for (int t = 0; t < trials; ++t) {
      CounterRng rng(6, t);
      const auto q = sample_candidates(d, rng);
      hits += q.rows[0] == 1 && q.cols[0] == 0;
    }
    // local factor 3/6 at (1, 0)
    CHECK(std::abs(hits / static_cast<double>(trials) - 0.5) < 3 * std::sqrt(0.25 / trials));
  }
  SUBCASE("deterministic per stream") {
    CounterRng r(9, 2);
    Image s(16, 16);
    for (Eigen::Index k = 0; k < s.size(); ++k) s.data()[k] = static_cast<float>(r.normal());
    const auto d = keypoint_distribution(s, 4);
    CounterRng a(7, 1), b(7, 1), c(7, 2);
    const auto qa = sample_candidates(d, a), qb = sample_candidates(d, b), qc = sample_candidates(d, c);
    CHECK(qa.rows == qb.rows);
    CHECK(qa.cols == qb.cols);
    CHECK((qa.rows != qc.rows || qa.cols != qc.cols));
  }
}

TEST_CASE("similarity and matching probability") {
  FeatureMap f(2, 2, 3, 1);
  f.data() << 1, 0, 0,  //
      0, 2, 0,          //
      0, 0, 3,          //
      1, 1, 1;
  CandidateSet q;
  q.rows = {0, 1};  // texels (0,0) and (1,0)
  q.cols = {0, 0};
  q.cells = {0, 1};
  q.log_probs = {0, 0};
  const auto s = similarity_matrix(f, q, f, q);
  CHECK(s(0, 0) == doctest::Approx(1));
  CHECK(s(1, 1) == doctest::Approx(9));
  CHECK(s(0, 1) == doctest::Approx(0));
  CHECK_THROWS_AS(similarity_matrix(f, CandidateSet{}, f, q), InputError);

  CHECK(match_probability(Eigen::MatrixXd::Constant(1, 1, 3.0))(0, 0) == doctest::Approx(1));
  const auto flat = match_probability(Eigen::MatrixXd::Constant(2, 2, 0.5));
  CHECK((flat.array() - 0.25).abs().maxCoeff() < 1e-15);
  Eigen::MatrixXd sd(2, 2);
  sd << 10, 0, 0, 10;
  const auto pm = match_probability(sd);
  const double diag = std::pow(std::exp(10.0) / (std::exp(10.0) + 1), 2);
  CHECK(std::abs(pm(0, 0) - diag) < 1e-12);
  CHECK(pm(0, 0) == doctest::Approx(0.99991).epsilon(1e-5));
  CHECK(pm(0, 1) == doctest::Approx(2.06e-9).epsilon(1e-2));
  CHECK_THROWS_AS(match_probability(Eigen::MatrixXd::Constant(2, 2, NAN)), InputError);

  CounterRng rng(8, 0);
  for (int t = 0; t < 50; ++t) {
    Eigen::MatrixXd r(3 + t % 4, 2 + t % 5);
    for (Eigen::Index k = 0; k < r.size(); ++k) r.data()[k] = rng.normal() * 5;
    const auto p = match_probability(r);
    CHECK((p.array() >= 0).all());
    CHECK((p.array() <= 1).all());
    for (Eigen::Index i = 0; i < r.rows(); ++i)
      for (Eigen::Index j = 0; j < r.cols(); ++j) {
        const double row = std::exp(r(i, j)) / r.row(i).array().exp().sum();
        const double col = std::exp(r(i, j)) / r.col(j).array().exp().sum();
        CHECK(std::abs(p(i, j) - row * col) < 1e-12);
        CHECK(p(i, j) <= std::min(row, col) + 1e-15);
      }
  }
}

TEST_CASE("reward and truncation") {
  TrainConfig cfg;
  // Horizontal epipolar lines: F maps (x, y) to the line v = y.
  FundamentalMatrix<double> f;
  f << 0, 0, 0, 0, 0, -1, 0, 1, 0;
  CandidateSet a, b;
  a.rows = {10};
  a.cols = {4};
  b.rows = {10, 12, 13, 40};
  b.cols = {30, 30, 30, 30};
  const auto r = reward_matrix(f, a, b, cfg);
  CHECK(r(0, 0) == 1.0);
  CHECK(r(0, 1) == 1.0);  // exactly 2 px
  CHECK(r(0, 2) == -0.25);
  CHECK(r(0, 3) == -0.25);

  Eigen::MatrixXd pm(1, 4), rr(1, 4);
  pm << 0.5, 0.95, 0.5, 0.9;
  rr << 1, 1, -0.25, 1;
  const auto t = truncate_pm(pm, rr, 0.9, 1.0);
  CHECK(t(0, 0) == 0.0);
  CHECK(t(0, 1) == 0.95);
  CHECK(t(0, 2) == 0.5);
  CHECK(t(0, 3) == 0.9);
  CHECK(truncate_pm(t, rr, 0.9, 1.0) == t);
  CHECK_THROWS_AS(truncate_pm(pm, Eigen::MatrixXd::Ones(2, 2), 0.9, 1.0), InputError);
}

TEST_CASE("detection loss") {
  CounterRng rng(12, 0);
  Image s1(8, 8), s2(8, 8);
  for (Eigen::Index k = 0; k < s1.size(); ++k) s1.data()[k] = static_cast<float>(rng.normal());
  for (Eigen::Index k = 0; k < s2.size(); ++k) s2.data()[k] = static_cast<float>(rng.normal());
  const auto d1 = keypoint_distribution(s1, 4), d2 = keypoint_distribution(s2, 4);
  const auto q1 = single(1, 2, d1), q2 = single(5, 6, d2);
  const Eigen::MatrixXd one = Eigen::MatrixXd::Ones(1, 1);

  SUBCASE("zero weights and no regularizer") {
    const auto l = detection_loss(Eigen::MatrixXd::Zero(1, 1), one, d1, q1, d2, q2, 0);
    CHECK(l.loss == 0);
    CHECK(l.grad1.isZero(0));
    CHECK(l.grad2.isZero(0));
  }
  SUBCASE("single positive pair") {
    const auto l = detection_loss(one, one, d1, q1, d2, q2, 0);
    CHECK(l.loss == doctest::Approx(-(d1.log_prob(1, 2) + d2.log_prob(5, 6)) / 2).epsilon(1e-12));
  }
  SUBCASE("empty candidates") {
    const auto l = detection_loss(Eigen::MatrixXd(0, 1), Eigen::MatrixXd(0, 1), d1, CandidateSet{}, d2, q2, -0.001);
    CHECK(l.empty);
    CHECK(l.loss == 0);
  }
  SUBCASE("a small step raises P_kp at both sampled pixels") {
    const auto l = detection_loss(one, one, d1, q1, d2, q2, -0.001);
    const Image n1 = s1 - 0.01f * l.grad1, n2 = s2 - 0.01f * l.grad2;
    CHECK(keypoint_distribution(n1, 4).log_prob(1, 2) > d1.log_prob(1, 2));
    CHECK(keypoint_distribution(n2, 4).log_prob(5, 6) > d2.log_prob(5, 6));
  }
  SUBCASE("gradient matches the frozen-candidate surrogate") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) CHECK(gradcheck::detection_loss_error(seed) < 1e-3);
  }
}

TEST_CASE("detector training leaves the descriptor untouched") {
  std::vector<SceneBundle> pairs;
  for (int i = 0; i < 2; ++i) pairs.push_back(to_bundle(make_planar_pair(400 + i, 32, 32)));
  TrainConfig cfg;
  cfg.g_k = 4;
  const nn::DescriptorNet desc(16, 3);
  const auto before = desc.stack().parameters();
  DetectorTrainer a(cfg, desc, nn::DetectorNet(16, 32, 4), pairs);
  DetectorTrainer b(cfg, desc, nn::DetectorNet(16, 32, 4), pairs);
  const auto ra = a.train(3), rb = b.train(3);
  CHECK(reward_csv(ra) == reward_csv(rb));
  CHECK(reward_csv(ra).rfind("iteration,mean_reward,loss\n", 0) == 0);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i].value == desc.stack().parameters()[i].value);
  CHECK(a.net().stack().parameters()[0].value == b.net().stack().parameters()[0].value);
}
