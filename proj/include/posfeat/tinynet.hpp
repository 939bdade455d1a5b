#pragma once

// Small convolutional networks with hand-written backward passes.
//
// Activations are stored channel-major: a (channels x height*width) row-major
// matrix, so a convolution is one GEMM against an im2col buffer.

#include "posfeat/common.hpp"
#include "posfeat/config.hpp"
#include "posfeat/featuremap.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace posfeat::nn {

struct Activation {
  MatrixXfR data;  // channels x (height * width)
  int height = 0;
  int width = 0;

  int channels() const { return static_cast<int>(data.rows()); }
};

Activation from_image(const Image& image);

struct Parameter {
  std::string name;
  std::vector<int> shape;
  Eigen::VectorXf value;
};

using Gradients = std::vector<Eigen::VectorXf>;

enum class Norm { None, Instance };
enum class Act { None, Relu };

struct ConvSpec {
  int kernel = 3;
  int in_channels = 1;
  int out_channels = 1;
  int stride = 1;
  Act activation = Act::Relu;
  Norm norm = Norm::None;
};

constexpr float kInstanceNormEps = 1e-5f;

/// Per-layer forward record needed by the backward pass.
struct LayerTrace {
  MatrixXfR cols;         // im2col buffer (empty for 1x1 stride-1 layers)
  MatrixXfR normalized;   // instance-norm xhat
  Eigen::VectorXf inv_std;
  Activation output;      // after activation
};

struct StackTrace {
  Activation input;
  std::vector<LayerTrace> layers;
};

/// conv -> [instance norm] -> [relu], repeated. Same padding (kernel / 2).
class ConvStack {
 public:
  ConvStack() = default;
  ConvStack(std::string prefix, std::vector<ConvSpec> specs, std::uint64_t seed);

  const std::vector<ConvSpec>& specs() const { return specs_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }

  Gradients zero_gradients() const;

  StackTrace forward(Activation input) const;

  /// Accumulates parameter gradients into `grads`. `output_grads[k]`, when
  /// non-null, is dLoss/d(output of layer k); the last layer's entry is the
  /// usual upstream gradient. Returns dLoss/d(input) if requested.
  Activation backward(const StackTrace& trace, const std::vector<const MatrixXfR*>& output_grads, Gradients& grads,
                      bool want_input_grad = false) const;

  /// Sets the last layer's weights and bias to zero.
  void zero_final_layer();

 private:
  std::vector<ConvSpec> specs_;
  std::vector<Parameter> params_;
  // For layer k: weight, bias, and, with instance norm, gamma and beta.
  std::vector<int> first_param_;
};

Activation conv2d(const Activation& x, const ConvSpec& spec, const Eigen::VectorXf& weight,
                  const Eigen::VectorXf& bias, MatrixXfR* cols_out);

/// Descriptor net: six conv layers, two stride-2 stages (stride 4 output),
/// final 1x1 projection to `channels` without activation.
class DescriptorNet {
 public:
  static constexpr int kMidLayer = 2;

  DescriptorNet() = default;
  DescriptorNet(int channels, std::uint64_t seed);

  struct Output {
    FeatureMap features;  // stride-4 descriptor map
    Activation mid;       // stride-2 intermediate map
    StackTrace trace;
  };

  Output forward(const Image& image) const;

  /// feature_grad: (texels x channels) gradient of the output map;
  /// mid_grad: optional gradient of the intermediate map (channels x pixels).
  void backward(const Output& out, const MatrixXfR& feature_grad, const MatrixXfR* mid_grad, Gradients& grads) const;

  ConvStack& stack() { return stack_; }
  const ConvStack& stack() const { return stack_; }
  int channels() const { return channels_; }

 private:
  int channels_ = 128;
  ConvStack stack_;
};

/// Bilinear upsampling of a coarse map to full image resolution with
/// half-texel-center alignment. Input and output are channel-major.
Activation upsample_bilinear(const MatrixXfR& coarse, int rows, int cols, int out_height, int out_width);
MatrixXfR upsample_bilinear_backward(const MatrixXfR& grad_fine, int rows, int cols, int out_height, int out_width);

/// Detector net: image + upsampled descriptor map + upsampled intermediate map
/// -> 1x1 conv + IN + ReLU -> 3x3 conv + IN + ReLU -> 3x3 conv -> heatmap.
class DetectorNet {
 public:
  DetectorNet() = default;
  DetectorNet(int descriptor_channels, int mid_channels, std::uint64_t seed);

  struct Input {
    Activation stacked;  // (1 + C + C_mid) x (H * W)
    int feature_rows = 0, feature_cols = 0;
    int mid_rows = 0, mid_cols = 0;
  };

  static Input make_input(const Image& image, const FeatureMap& features, const Activation& mid);

  struct Output {
    Image heatmap;  // pre-sigmoid scores
    StackTrace trace;
  };

  Output forward(const Input& input) const;

  /// Returns gradients of the descriptor map (texels x channels) and of the
  /// intermediate map when `to_descriptor` is requested.
  struct InputGradients {
    MatrixXfR features;
    MatrixXfR mid;
  };
  InputGradients backward(const Input& input, const Output& out, const Image& heatmap_grad, Gradients& grads,
                          bool to_descriptor = false) const;

  ConvStack& stack() { return stack_; }
  const ConvStack& stack() const { return stack_; }

 private:
  int descriptor_channels_ = 128;
  int mid_channels_ = 32;
  ConvStack stack_;
};

/// Nesterov momentum SGD: v <- mu v + g; p <- p - lr (g + mu v).
class NesterovSgd {
 public:
  NesterovSgd(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

  void step(std::vector<Parameter>& params, const Gradients& grads);

  std::vector<Eigen::VectorXf>& velocity() { return velocity_; }
  const std::vector<Eigen::VectorXf>& velocity() const { return velocity_; }

 private:
  double lr_;
  double momentum_;
  std::vector<Eigen::VectorXf> velocity_;
};

constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind;  // "descriptor" or "detector"
  TrainConfig config;
  std::vector<Parameter> params;
  std::vector<Eigen::VectorXf> velocity;  // empty or one per parameter
};

/// "PFW1": magic, u32 version, u32 length + JSON header, u32 tensor count,
/// then per tensor: u32 name length, name, u32 rank, u32 dims, float32 data.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Copies checkpoint tensors into a parameter list, checking names and shapes.
void assign_parameters(std::vector<Parameter>& dst, const std::vector<Parameter>& src);

/// FNV-1a over the raw bytes of a file.
std::uint64_t file_hash(const std::string& path);

}  // namespace posfeat::nn
