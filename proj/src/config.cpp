#include "posfeat/config.hpp"

#include "posfeat/common.hpp"

#include <json.hpp>

#include <cmath>

namespace posfeat {

void TrainConfig::validate() const {
  if (n_line < 2) throw InputError("config: n_line must be >= 2");
  if (!(w_patch > 0 && w_patch < 1)) throw InputError("config: w_patch must be in (0,1)");
  if (g_d < 1 || g_k < 1) throw InputError("config: grid sizes must be >= 1");
  if (!(theta_m > 0) || !std::isfinite(theta_m)) throw InputError("config: theta_m must be positive");
  if (!(pm_truncation > 0 && pm_truncation <= 1)) throw InputError("config: pm_truncation must be in (0,1]");
  if (!(epsilon >= 0)) throw InputError("config: epsilon must be >= 0");
  if (!(lr >= 0) || !(momentum >= 0 && momentum < 1)) throw InputError("config: bad optimizer settings");
  if (batch_size < 1) throw InputError("config: batch_size must be >= 1");
  if (desc_iterations < 0 || det_iterations < 0) throw InputError("config: iterations must be >= 0");
  if (patch_lattice_s < 2) throw InputError("config: patch_lattice_s must be >= 2");
  if (descriptor_channels < 1 || stride < 1) throw InputError("config: bad feature map shape");
}

namespace {

const char* search_name(SearchMode m) {
  return m == SearchMode::LineToWindow ? "line_to_window" : "coarse_to_fine";
}

}  // namespace

std::string to_json_string(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["n_line"] = c.n_line;
  j["w_patch"] = c.w_patch;
  j["g_d"] = c.g_d;
  j["g_k"] = c.g_k;
  j["epsilon"] = c.epsilon;
  j["lambda_p"] = c.lambda_p;
  j["lambda_n"] = c.lambda_n;
  j["lambda_reg"] = c.lambda_reg;
  j["lr"] = c.lr;
  j["momentum"] = c.momentum;
  j["batch_size"] = c.batch_size;
  j["desc_iterations"] = c.desc_iterations;
  j["det_iterations"] = c.det_iterations;
  j["pm_truncation"] = c.pm_truncation;
  j["theta_m"] = c.theta_m;
  j["descriptor_channels"] = c.descriptor_channels;
  j["stride"] = c.stride;
  j["patch_lattice_s"] = c.patch_lattice_s;
  j["seed"] = c.seed;
  j["normalize_descriptors"] = c.normalize_descriptors;
  j["search"] = search_name(c.search);
  j["joint"] = c.joint;
  return j.dump(2);
}

TrainConfig apply_json(const TrainConfig& base, const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("config: top level must be an object");
  TrainConfig c = base;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      const auto& v = it.value();
      if (k == "n_line") c.n_line = v.get<int>();
      else if (k == "w_patch") c.w_patch = v.get<double>();
      else if (k == "g_d") c.g_d = v.get<int>();
      else if (k == "g_k") c.g_k = v.get<int>();
      else if (k == "epsilon") c.epsilon = v.get<double>();
      else if (k == "lambda_p") c.lambda_p = v.get<double>();
      else if (k == "lambda_n") c.lambda_n = v.get<double>();
      else if (k == "lambda_reg") c.lambda_reg = v.get<double>();
      else if (k == "lr") c.lr = v.get<double>();
      else if (k == "momentum") c.momentum = v.get<double>();
      else if (k == "batch_size") c.batch_size = v.get<int>();
      else if (k == "desc_iterations") c.desc_iterations = v.get<int>();
      else if (k == "det_iterations") c.det_iterations = v.get<int>();
      else if (k == "pm_truncation") c.pm_truncation = v.get<double>();
      else if (k == "theta_m") c.theta_m = v.get<double>();
      else if (k == "descriptor_channels") c.descriptor_channels = v.get<int>();
      else if (k == "stride") c.stride = v.get<int>();
      else if (k == "patch_lattice_s") c.patch_lattice_s = v.get<int>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "normalize_descriptors") c.normalize_descriptors = v.get<bool>();
      else if (k == "joint") c.joint = v.get<bool>();
      else if (k == "search") {
        const auto s = v.get<std::string>();
        if (s == "line_to_window") c.search = SearchMode::LineToWindow;
        else if (s == "coarse_to_fine") c.search = SearchMode::CoarseToFine;
        else throw FormatError("config: unknown search mode '" + s + "'");
      } else {
        throw FormatError("config: unknown key '" + k + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace posfeat
