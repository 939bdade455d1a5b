#include "posfeat/eval.hpp"

#include "posfeat/inference.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace posfeat {

Homography::Homography(const Mat3& h) {
  if (!h.allFinite() || h(2, 2) == 0) throw InputError("homography: H(2,2) must be nonzero and finite");
  h_ = h / h(2, 2);
  const Eigen::JacobiSVD<Mat3> svd(h_);
  const auto& s = svd.singularValues();
  if (!(s(2) > 1e-12 * s(0))) throw InputError("homography: matrix is singular");
}

Vec2 Homography::apply(const Vec2& x) const {
  const Vec3 y = h_ * x.homogeneous();
  return y.hnormalized();
}

Homography read_homography(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  Mat3 h;
  for (int i = 0; i < 9; ++i)
    if (!(in >> h(i / 3, i % 3))) throw FormatError("homography file: expected 9 numbers in " + path);
  double extra;
  if (in >> extra) throw FormatError("homography file: more than 9 numbers in " + path);
  return Homography(h);
}

void write_homography(const std::string& path, const Mat3& h) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  char buf[40];
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", h(r, c));
      out << buf << (c < 2 ? " " : "\n");
    }
  }
}

std::vector<double> match_errors(const MatchSet& matches, const KeypointSet& k1, const KeypointSet& k2,
                                 const Homography& h) {
  std::vector<double> errs;
  errs.reserve(matches.size());
  for (const Match& m : matches.matches) {
    if (m.i < 0 || m.j < 0 || static_cast<std::size_t>(m.i) >= k1.size() || static_cast<std::size_t>(m.j) >= k2.size())
      throw InputError("match_errors: match index out of range");
    errs.push_back((h.apply(k1.points[static_cast<std::size_t>(m.i)]) - k2.points[static_cast<std::size_t>(m.j)]).norm());
  }
  return errs;
}

MmaCurve mma(const std::vector<double>& errors) {
  MmaCurve c;
  if (errors.empty()) {
    c.empty = true;
    return c;
  }
  for (int t = 1; t <= kMmaThresholds; ++t) {
    std::size_t hit = 0;
    for (double e : errors) hit += e <= t ? 1 : 0;
    c.values[static_cast<std::size_t>(t - 1)] = static_cast<double>(hit) / static_cast<double>(errors.size());
  }
  return c;
}

std::array<double, kMmaThresholds> mmascore_weights() {
  std::array<double, kMmaThresholds> w{};
  double sum = 0;
  for (int t = 1; t <= kMmaThresholds; ++t) sum += 2 - 0.1 * t;
  for (int t = 1; t <= kMmaThresholds; ++t) w[static_cast<std::size_t>(t - 1)] = (2 - 0.1 * t) / sum;
  return w;
}

double mmascore(const MmaCurve& curve) {
  const auto w = mmascore_weights();
  double s = 0;
  for (std::size_t k = 0; k < w.size(); ++k) s += w[k] * curve.values[k];
  return s;
}

PairEvaluation evaluate_pair(const std::string& pair_id, const MatchSet& matches, const KeypointSet& k1,
                             const KeypointSet& k2, const Homography& h) {
  PairEvaluation e;
  e.pair_id = pair_id;
  e.n_matches = static_cast<int>(matches.size());
  e.curve = mma(match_errors(matches, k1, k2, h));
  e.score = mmascore(e.curve);
  return e;
}

PairEvaluation aggregate(const std::vector<PairEvaluation>& pairs) {
  PairEvaluation a;
  a.pair_id = "aggregate";
  if (pairs.empty()) {
    a.curve.empty = true;
    return a;
  }
  for (const auto& p : pairs) {
    a.n_matches += p.n_matches;
    for (int t = 0; t < kMmaThresholds; ++t) a.curve.values[static_cast<std::size_t>(t)] += p.curve.values[static_cast<std::size_t>(t)];
    a.score += p.score;
  }
  const auto n = static_cast<double>(pairs.size());
  for (double& v : a.curve.values) v /= n;
  a.score /= n;
  return a;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void csv_row(std::ostringstream& out, const PairEvaluation& e) {
  out << e.pair_id << "," << e.n_matches;
  for (double v : e.curve.values) out << "," << fmt(v);
  out << "," << fmt(e.score) << "\n";
}

}  // namespace

std::string eval_report_csv(const std::vector<PairEvaluation>& pairs) {
  std::ostringstream out;
  out << "pair_id,n_matches";
  for (int t = 1; t <= kMmaThresholds; ++t) out << ",mma_" << t;
  out << ",mmascore\n";
  for (const auto& p : pairs) csv_row(out, p);
  csv_row(out, aggregate(pairs));
  return out.str();
}

std::string mma_curve_dat(const std::vector<PairEvaluation>& pairs) {
  std::ostringstream out;
  for (const auto& p : pairs) {
    out << "# " << p.pair_id << (p.curve.empty ? " (no matches)" : "") << "\n";
    for (int t = 1; t <= kMmaThresholds; ++t) out << t << " " << fmt(p.curve.values[static_cast<std::size_t>(t - 1)]) << "\n";
    out << "\n\n";
  }
  return out.str();
}

}  // namespace posfeat
