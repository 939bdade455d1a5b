#include "posfeat/geometry.hpp"

#include "posfeat/config.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace posfeat {

double epipolar_reward(double distance, const TrainConfig& cfg) {
  if (!(distance >= 0)) throw InputError("epipolar_reward: distance must be >= 0");
  return distance <= cfg.epsilon ? cfg.lambda_p : cfg.lambda_n;
}

namespace {

Mat3 read_mat3(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_array() || j[key].size() != 9)
    throw FormatError(std::string("pose json: '") + key + "' must be a 9-element array");
  Mat3 m;
  for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = j[key][i].get<double>();
  return m;
}

Intrinsics<double> intrinsics_from(const Mat3& k) {
  if (k(1, 0) != 0 || k(2, 0) != 0 || k(2, 1) != 0 || k(0, 1) != 0 || k(2, 2) != 1)
    throw FormatError("pose json: K must be [[fx,0,cx],[0,fy,cy],[0,0,1]]");
  Intrinsics<double> in{k(0, 0), k(1, 1), k(0, 2), k(1, 2)};
  in.validate();
  return in;
}

nlohmann::json mat_json(const Mat3& m) {
  auto a = nlohmann::json::array();
  for (int i = 0; i < 9; ++i) a.push_back(m(i / 3, i % 3));
  return a;
}

}  // namespace

PoseSupervision pose_from_json_string(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    PoseSupervision sup;
    sup.k1 = intrinsics_from(read_mat3(j, "K1"));
    sup.k2 = intrinsics_from(read_mat3(j, "K2"));
    sup.pose.R = read_mat3(j, "R");
    if (!j.contains("t") || !j["t"].is_array() || j["t"].size() != 3)
      throw FormatError("pose json: 't' must be a 3-element array");
    for (int i = 0; i < 3; ++i) sup.pose.t(i) = j["t"][i].get<double>();
    sup.pose.validate();
    return sup;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("pose json: ") + e.what());
  }
}

std::string pose_to_json_string(const PoseSupervision& sup) {
  nlohmann::ordered_json j;
  j["K1"] = mat_json(sup.k1.matrix());
  j["K2"] = mat_json(sup.k2.matrix());
  j["R"] = mat_json(sup.pose.R);
  j["t"] = {sup.pose.t(0), sup.pose.t(1), sup.pose.t(2)};
  return j.dump(2);
}

PoseSupervision read_pose_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open pose file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return pose_from_json_string(ss.str());
}

void write_pose_json(const std::string& path, const PoseSupervision& sup) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write pose file " + path);
  out << pose_to_json_string(sup) << "\n";
}

}  // namespace posfeat
