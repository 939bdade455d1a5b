#pragma once

#include <cstdint>
#include <string>

namespace posfeat {

enum class SearchMode { LineToWindow, CoarseToFine };

/// Every training hyperparameter. Defaults are the published settings where
/// one exists; the rest are desk-scale choices.
struct TrainConfig {
  int n_line = 100;
  double w_patch = 0.1;  // normalized width/height units
  int g_d = 16;
  int g_k = 8;
  double epsilon = 2.0;  // pixels
  double lambda_p = 1.0;
  double lambda_n = -0.25;
  double lambda_reg = -0.001;
  double lr = 1e-3;
  double momentum = 0.9;
  int batch_size = 2;
  int desc_iterations = 2000;
  int det_iterations = 1000;
  double pm_truncation = 0.9;
  // Inverse temperature on S before the dual softmax. At 1 a desk-scale
  // descriptor rarely reaches the truncation threshold.
  double theta_m = 3.0;
  int descriptor_channels = 128;
  int stride = 4;
  int patch_lattice_s = 8;
  std::uint64_t seed = 0;
  bool normalize_descriptors = false;
  SearchMode search = SearchMode::LineToWindow;
  // Train detector and descriptor together from scratch (ablation only).
  bool joint = false;

  void validate() const;
};

std::string to_json_string(const TrainConfig& cfg);
/// Applies the keys present in `json_text` on top of `base`; unknown keys are errors.
TrainConfig apply_json(const TrainConfig& base, const std::string& json_text);

}  // namespace posfeat
