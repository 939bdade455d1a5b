#include <doctest.h>

#include "posfeat/eval.hpp"
#include "posfeat/inference.hpp"
#include "posfeat/rng.hpp"

#include <cmath>
#include <filesystem>
#include <functional>

using namespace posfeat;

namespace {

KeypointSet points(std::vector<Vec2> p) {
  KeypointSet k;
  k.points = std::move(p);
  k.scores.assign(k.points.size(), 1.0f);
  k.descriptors = MatrixXfR::Zero(static_cast<Eigen::Index>(k.points.size()), 1);
  return k;
}

MmaCurve curve(std::function<double(int)> f) {
  MmaCurve c;
  for (int t = 1; t <= kMmaThresholds; ++t) c.values[t - 1] = f(t);
  return c;
}

}  // namespace

TEST_CASE("match errors under a homography") {
  MatchSet m;
  m.matches = {{0, 0, 1.0f}};
  const auto k = points({Vec2(10, 20)});
  CHECK(match_errors(m, k, k, Homography(Mat3::Identity()))[0] == 0);
  Mat3 t = Mat3::Identity();
  t(0, 2) = 3;
  t(1, 2) = 4;
  CHECK(match_errors(m, k, k, Homography(t))[0] == doctest::Approx(5));
  Mat3 p;
  p << 2, 0, 1, 0, 1, 0, 0.01, 0, 1;
  // (10,20) -> (21, 20, 1.1) -> (19.0909.., 18.1818..)
  const Homography hp(p);
  CHECK(hp.apply(Vec2(10, 20))(0) == doctest::Approx(21 / 1.1));
  CHECK(hp.apply(Vec2(10, 20))(1) == doctest::Approx(20 / 1.1));
  Mat3 scaled = 2 * p;
  CHECK(Homography(scaled).matrix()(2, 2) == 1);
  CHECK_THROWS(Homography(Mat3::Zero()));
}

TEST_CASE("mma counts errors at integer thresholds") {
  const MmaCurve c = mma({0.5, 1.5, 20});
  CHECK(c.values[0] == doctest::Approx(1.0 / 3));
  for (int t = 2; t <= 10; ++t) CHECK(c.values[t - 1] == doctest::Approx(2.0 / 3));
  CHECK(mma({0, 0}).values[9] == 1);
  CHECK(mma({1.0}).values[0] == 1);  // inclusive
  const MmaCurve e = mma({});
  CHECK(e.empty);
  CHECK(mmascore(e) == 0);
  CounterRng rng(1, 0);
  std::vector<double> errs;
  for (int k = 0; k < 200; ++k) errs.push_back(rng.uniform(0, 12));
  const MmaCurve r = mma(errs);
  for (int t = 1; t < 10; ++t) CHECK(r.values[t] >= r.values[t - 1]);
}

TEST_CASE("mmascore weights") {
  const auto w = mmascore_weights();
  double sum = 0;
  for (int t = 1; t <= 10; ++t) {
    CHECK(w[t - 1] == doctest::Approx((2 - 0.1 * t) / 14.5).epsilon(1e-15));
    sum += w[t - 1];
  }
  CHECK(sum == doctest::Approx(1.0));
  CHECK(mmascore(curve([](int) { return 1.0; })) == doctest::Approx(1.0));
  CHECK(mmascore(curve([](int) { return 0.0; })) == 0);
  CHECK(std::abs(mmascore(curve([](int t) { return t / 10.0; })) - 0.493103) < 1e-6);
  CHECK(mmascore(curve([](int) { return 0.37; })) == doctest::Approx(0.37));
  CounterRng rng(2, 0);
  for (int k = 0; k < 50; ++k) {
    MmaCurve c = curve([&](int) { return rng.uniform(); });
    const double before = mmascore(c);
    c.values[rng.below(10)] += 0.1;
    CHECK(mmascore(c) >= before);
  }
}

TEST_CASE("report formats") {
  MatchSet m;
  m.matches = {{0, 0, 1.0f}, {1, 1, 1.0f}};
  const auto k1 = points({Vec2(1, 1), Vec2(5, 5)});
  const auto k2 = points({Vec2(1, 1), Vec2(5, 9)});
  const auto a = evaluate_pair("a", m, k1, k2, Homography(Mat3::Identity()));
  CHECK(a.n_matches == 2);
  CHECK(a.curve.values[0] == 0.5);
  CHECK(a.curve.values[3] == 1.0);
  const auto b = evaluate_pair("b", MatchSet{}, k1, k2, Homography(Mat3::Identity()));
  CHECK(b.curve.empty);
  const auto agg = aggregate({a, b});
  CHECK(agg.score == doctest::Approx((a.score + b.score) / 2));
  const std::string csv = eval_report_csv({a, b});
  CHECK(csv.rfind("pair_id,n_matches,mma_1,", 0) == 0);
  CHECK(csv.find("\naggregate,") != std::string::npos);
  CHECK(mma_curve_dat({a}).find("1 0.5") != std::string::npos);

  const std::string path = (std::filesystem::temp_directory_path() / "posfeat_h.txt").string();
  Mat3 h;
  h << 1.5, 0.1, 3, -0.2, 0.9, 4, 1e-3, 2e-4, 1;
  write_homography(path, h);
  CHECK(read_homography(path).matrix().isApprox(h, 1e-12));
  std::filesystem::remove(path);
}
