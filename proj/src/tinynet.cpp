#include "posfeat/tinynet.hpp"

#include "posfeat/binary_io.hpp"
#include "posfeat/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <iterator>

namespace posfeat::nn {

namespace {

int out_size(int in, const ConvSpec& s) { return (in + 2 * (s.kernel / 2) - s.kernel) / s.stride + 1; }

bool is_pointwise(const ConvSpec& s) { return s.kernel == 1 && s.stride == 1; }

// Replicate padding: taps outside the map read the nearest edge pixel. Zero
// padding made border texels match each other across images.
int clamp_index(int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

void im2col(const Activation& x, const ConvSpec& s, int ho, int wo, MatrixXfR& cols) {
  const int k = s.kernel;
  const int pad = k / 2;
  cols.resize(static_cast<Eigen::Index>(s.in_channels) * k * k, static_cast<Eigen::Index>(ho) * wo);
  for (int ci = 0; ci < s.in_channels; ++ci) {
    const float* src = x.data.row(ci).data();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* dst = cols.row((static_cast<Eigen::Index>(ci) * k + ky) * k + kx).data();
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = clamp_index(oy * s.stride - pad + ky, x.height);
          float* row = dst + static_cast<std::ptrdiff_t>(oy) * wo;
          const float* srow = src + static_cast<std::ptrdiff_t>(iy) * x.width;
          for (int ox = 0; ox < wo; ++ox) row[ox] = srow[clamp_index(ox * s.stride - pad + kx, x.width)];
        }
      }
    }
  }
}

void col2im(const MatrixXfR& cols, const ConvSpec& s, int ho, int wo, Activation& dx) {
  const int k = s.kernel;
  const int pad = k / 2;
  dx.data.setZero();
  for (int ci = 0; ci < s.in_channels; ++ci) {
    float* dst = dx.data.row(ci).data();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* src = cols.row((static_cast<Eigen::Index>(ci) * k + ky) * k + kx).data();
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = clamp_index(oy * s.stride - pad + ky, dx.height);
          const float* row = src + static_cast<std::ptrdiff_t>(oy) * wo;
          float* drow = dst + static_cast<std::ptrdiff_t>(iy) * dx.width;
          for (int ox = 0; ox < wo; ++ox) drow[clamp_index(ox * s.stride - pad + kx, dx.width)] += row[ox];
        }
      }
    }
  }
}

using WeightMap = Eigen::Map<const MatrixXfR>;

WeightMap weight_matrix(const Eigen::VectorXf& w, const ConvSpec& s) {
  return WeightMap(w.data(), s.out_channels, static_cast<Eigen::Index>(s.in_channels) * s.kernel * s.kernel);
}

}  // namespace

Activation from_image(const Image& image) {
  Activation a;
  a.height = static_cast<int>(image.rows());
  a.width = static_cast<int>(image.cols());
  a.data = (2.0f * image - 1.0f).matrix().reshaped<Eigen::RowMajor>().transpose();
  return a;
}

Activation conv2d(const Activation& x, const ConvSpec& s, const Eigen::VectorXf& weight, const Eigen::VectorXf& bias,
                  MatrixXfR* cols_out) {
  if (x.channels() != s.in_channels) throw InputError("conv2d: channel mismatch");
  Activation y;
  y.height = out_size(x.height, s);
  y.width = out_size(x.width, s);
  const auto w = weight_matrix(weight, s);
  if (is_pointwise(s)) {
    y.data.noalias() = w * x.data;
  } else {
    MatrixXfR local;
    MatrixXfR& cols = cols_out ? *cols_out : local;
    im2col(x, s, y.height, y.width, cols);
    y.data.noalias() = w * cols;
  }
  y.data.colwise() += bias;
  return y;
}

ConvStack::ConvStack(std::string prefix, std::vector<ConvSpec> specs, std::uint64_t seed) : specs_(std::move(specs)) {
  for (std::size_t k = 0; k < specs_.size(); ++k) {
    const ConvSpec& s = specs_[k];
    const std::string base = prefix + "." + std::to_string(k);
    first_param_.push_back(static_cast<int>(params_.size()));
    const int fan_in = s.in_channels * s.kernel * s.kernel;
    const double bound = std::sqrt((s.activation == Act::Relu ? 6.0 : 3.0) / fan_in);
    CounterRng rng(seed, k);
    Parameter w{base + ".weight", {s.out_channels, s.in_channels, s.kernel, s.kernel}, {}};
    w.value.resize(static_cast<Eigen::Index>(s.out_channels) * fan_in);
    for (Eigen::Index i = 0; i < w.value.size(); ++i) w.value(i) = static_cast<float>(rng.uniform(-bound, bound));
    params_.push_back(std::move(w));
    params_.push_back({base + ".bias", {s.out_channels}, Eigen::VectorXf::Zero(s.out_channels)});
    if (s.norm == Norm::Instance) {
      params_.push_back({base + ".gamma", {s.out_channels}, Eigen::VectorXf::Ones(s.out_channels)});
      params_.push_back({base + ".beta", {s.out_channels}, Eigen::VectorXf::Zero(s.out_channels)});
    }
  }
}

Gradients ConvStack::zero_gradients() const {
  Gradients g;
  g.reserve(params_.size());
  for (const auto& p : params_) g.push_back(Eigen::VectorXf::Zero(p.value.size()));
  return g;
}

void ConvStack::zero_final_layer() {
  if (specs_.empty()) return;
  const int base = first_param_.back();
  params_[static_cast<std::size_t>(base)].value.setZero();
  params_[static_cast<std::size_t>(base) + 1].value.setZero();
}

StackTrace ConvStack::forward(Activation input) const {
  StackTrace trace;
  trace.input = std::move(input);
  trace.layers.resize(specs_.size());
  const Activation* x = &trace.input;
  for (std::size_t k = 0; k < specs_.size(); ++k) {
    const ConvSpec& s = specs_[k];
    const auto base = static_cast<std::size_t>(first_param_[k]);
    LayerTrace& lt = trace.layers[k];
    Activation y = conv2d(*x, s, params_[base].value, params_[base + 1].value, &lt.cols);
    if (s.norm == Norm::Instance) {
      const auto n = static_cast<float>(y.data.cols());
      lt.inv_std.resize(s.out_channels);
      lt.normalized.resize(y.data.rows(), y.data.cols());
      const auto& gamma = params_[base + 2].value;
      const auto& beta = params_[base + 3].value;
      for (int c = 0; c < s.out_channels; ++c) {
        const double mean = y.data.row(c).cast<double>().mean();
        const double var = (y.data.row(c).cast<double>().array() - mean).square().sum() / n;
        const auto inv = static_cast<float>(1.0 / std::sqrt(var + kInstanceNormEps));
        lt.inv_std(c) = inv;
        lt.normalized.row(c) = (y.data.row(c).array() - static_cast<float>(mean)) * inv;
        y.data.row(c) = gamma(c) * lt.normalized.row(c).array() + beta(c);
      }
    }
    if (s.activation == Act::Relu) y.data = y.data.cwiseMax(0.0f);
    lt.output = std::move(y);
    x = &lt.output;
  }
  return trace;
}

Activation ConvStack::backward(const StackTrace& trace, const std::vector<const MatrixXfR*>& output_grads,
                               Gradients& grads, bool want_input_grad) const {
  if (output_grads.size() != specs_.size()) throw InputError("ConvStack::backward: one gradient slot per layer");
  if (grads.size() != params_.size()) throw InputError("ConvStack::backward: gradient buffer mismatch");
  MatrixXfR g;
  Activation input_grad;
  for (int k = static_cast<int>(specs_.size()) - 1; k >= 0; --k) {
    const ConvSpec& s = specs_[static_cast<std::size_t>(k)];
    const LayerTrace& lt = trace.layers[static_cast<std::size_t>(k)];
    const auto base = static_cast<std::size_t>(first_param_[static_cast<std::size_t>(k)]);
    if (const MatrixXfR* extra = output_grads[static_cast<std::size_t>(k)]) {
      if (g.size() == 0)
        g = *extra;
      else
        g += *extra;
    }
    if (g.size() == 0) g = MatrixXfR::Zero(lt.output.data.rows(), lt.output.data.cols());

    if (s.activation == Act::Relu) g = (lt.output.data.array() > 0.0f).select(g, 0.0f);

    if (s.norm == Norm::Instance) {
      const auto& gamma = params_[base + 2].value;
      const auto n = static_cast<float>(g.cols());
      for (int c = 0; c < s.out_channels; ++c) {
        const auto xhat = lt.normalized.row(c).array();
        grads[base + 2](c) += static_cast<float>((g.row(c).array() * xhat).cast<double>().sum());
        grads[base + 3](c) += static_cast<float>(g.row(c).cast<double>().sum());
        const Eigen::ArrayXf dxhat = (g.row(c).array() * gamma(c)).transpose();
        const auto sum_d = static_cast<float>(dxhat.cast<double>().sum());
        const auto sum_dx = static_cast<float>((dxhat * xhat.transpose()).cast<double>().sum());
        g.row(c) = (lt.inv_std(c) / n) * (n * dxhat.transpose() - sum_d - xhat * sum_dx);
      }
    }

    const Activation& x = k == 0 ? trace.input : trace.layers[static_cast<std::size_t>(k) - 1].output;
    Eigen::Map<MatrixXfR> gw(grads[base].data(), s.out_channels,
                             static_cast<Eigen::Index>(s.in_channels) * s.kernel * s.kernel);
    grads[base + 1] += g.rowwise().sum();
    if (is_pointwise(s))
      gw.noalias() += g * x.data.transpose();
    else
      gw.noalias() += g * lt.cols.transpose();

    if (k == 0 && !want_input_grad) break;
    const auto w = weight_matrix(params_[base].value, s);
    Activation dx;
    dx.height = x.height;
    dx.width = x.width;
    if (is_pointwise(s)) {
      dx.data.noalias() = w.transpose() * g;
    } else {
      const MatrixXfR gcols = w.transpose() * g;
      dx.data.resize(s.in_channels, static_cast<Eigen::Index>(x.height) * x.width);
      col2im(gcols, s, lt.output.height, lt.output.width, dx);
    }
    if (k == 0) {
      input_grad = std::move(dx);
    } else {
      g = std::move(dx.data);
    }
  }
  return input_grad;
}

// --- descriptor net ---------------------------------------------------------

DescriptorNet::DescriptorNet(int channels, std::uint64_t seed)
    : channels_(channels),
      stack_("desc",
             {
                 {3, 1, 16, 1, Act::Relu, Norm::None},
                 {3, 16, 32, 2, Act::Relu, Norm::None},
                 {3, 32, 32, 1, Act::Relu, Norm::None},
                 {3, 32, 64, 2, Act::Relu, Norm::None},
                 {3, 64, 64, 1, Act::Relu, Norm::None},
                 {3, 64, 64, 1, Act::Relu, Norm::None},
                 {1, 64, channels, 1, Act::None, Norm::None},
             },
             seed) {}

DescriptorNet::Output DescriptorNet::forward(const Image& image) const {
  if (image.rows() % 16 != 0 || image.cols() % 16 != 0 || image.rows() < 16 || image.cols() < 16)
    throw InputError("descriptor net: image dimensions must be positive multiples of 16");
  Output out;
  out.trace = stack_.forward(from_image(image));
  const Activation& last = out.trace.layers.back().output;
  out.features = FeatureMap(last.data.transpose(), last.height, last.width, 4);
  out.mid = out.trace.layers[kMidLayer].output;
  return out;
}

void DescriptorNet::backward(const Output& out, const MatrixXfR& feature_grad, const MatrixXfR* mid_grad,
                             Gradients& grads) const {
  const MatrixXfR top = feature_grad.transpose();
  std::vector<const MatrixXfR*> slots(stack_.specs().size(), nullptr);
  slots.back() = &top;
  slots[kMidLayer] = mid_grad;
  stack_.backward(out.trace, slots, grads);
}

// --- upsampling -------------------------------------------------------------

namespace {

template <typename Fn>
void for_each_fine_pixel(int rows, int cols, int out_height, int out_width, Fn&& fn) {
  for (int y = 0; y < out_height; ++y) {
    for (int x = 0; x < out_width; ++x) {
      const NormalizedPoint p{(x + 0.5) / out_width, (y + 0.5) / out_height};
      fn(static_cast<Eigen::Index>(y) * out_width + x, bilinear_taps(rows, cols, p));
    }
  }
}

}  // namespace

Activation upsample_bilinear(const MatrixXfR& coarse, int rows, int cols, int out_height, int out_width) {
  const MatrixXfR src = coarse.transpose();  // texels x channels
  MatrixXfR dst(static_cast<Eigen::Index>(out_height) * out_width, coarse.rows());
  for_each_fine_pixel(rows, cols, out_height, out_width, [&](Eigen::Index i, const BilinearTaps& t) {
    dst.row(i) = t.weight[0] * src.row(t.index[0]) + t.weight[1] * src.row(t.index[1]) +
                 t.weight[2] * src.row(t.index[2]) + t.weight[3] * src.row(t.index[3]);
  });
  Activation a;
  a.height = out_height;
  a.width = out_width;
  a.data = dst.transpose();
  return a;
}

MatrixXfR upsample_bilinear_backward(const MatrixXfR& grad_fine, int rows, int cols, int out_height, int out_width) {
  const MatrixXfR g = grad_fine.transpose();
  MatrixXfR acc = MatrixXfR::Zero(static_cast<Eigen::Index>(rows) * cols, grad_fine.rows());
  for_each_fine_pixel(rows, cols, out_height, out_width,
                      [&](Eigen::Index i, const BilinearTaps& t) { accumulate_bilinear_backward(t, g.row(i), acc); });
  return acc.transpose();
}

// --- detector net -----------------------------------------------------------

DetectorNet::DetectorNet(int descriptor_channels, int mid_channels, std::uint64_t seed)
    : descriptor_channels_(descriptor_channels),
      mid_channels_(mid_channels),
      stack_("det",
             {
                 {1, 1 + descriptor_channels + mid_channels, 16, 1, Act::Relu, Norm::Instance},
                 {3, 16, 16, 1, Act::Relu, Norm::Instance},
                 {3, 16, 1, 1, Act::None, Norm::None},
             },
             seed) {}

DetectorNet::Input DetectorNet::make_input(const Image& image, const FeatureMap& features, const Activation& mid) {
  const int h = static_cast<int>(image.rows());
  const int w = static_cast<int>(image.cols());
  Input in;
  in.feature_rows = features.rows();
  in.feature_cols = features.cols();
  in.mid_rows = mid.height;
  in.mid_cols = mid.width;
  const Activation up_f =
      upsample_bilinear(features.data().transpose(), features.rows(), features.cols(), h, w);
  const Activation up_m = upsample_bilinear(mid.data, mid.height, mid.width, h, w);
  in.stacked.height = h;
  in.stacked.width = w;
  in.stacked.data.resize(1 + up_f.channels() + up_m.channels(), static_cast<Eigen::Index>(h) * w);
  in.stacked.data.row(0) = from_image(image).data;
  in.stacked.data.middleRows(1, up_f.channels()) = up_f.data;
  in.stacked.data.bottomRows(up_m.channels()) = up_m.data;
  return in;
}

DetectorNet::Output DetectorNet::forward(const Input& input) const {
  if (input.stacked.channels() != 1 + descriptor_channels_ + mid_channels_)
    throw InputError("detector net: unexpected input channel count");
  Output out;
  out.trace = stack_.forward(input.stacked);
  const Activation& last = out.trace.layers.back().output;
  out.heatmap = Eigen::Map<const Image>(last.data.data(), last.height, last.width);
  return out;
}

DetectorNet::InputGradients DetectorNet::backward(const Input& input, const Output& out, const Image& heatmap_grad,
                                                  Gradients& grads, bool to_descriptor) const {
  const MatrixXfR top = Eigen::Map<const MatrixXfR>(heatmap_grad.data(), 1, heatmap_grad.size());
  std::vector<const MatrixXfR*> slots(stack_.specs().size(), nullptr);
  slots.back() = &top;
  Activation dx = stack_.backward(out.trace, slots, grads, to_descriptor);
  InputGradients ig;
  if (!to_descriptor) return ig;
  const int h = input.stacked.height;
  const int w = input.stacked.width;
  ig.features = upsample_bilinear_backward(dx.data.middleRows(1, descriptor_channels_), input.feature_rows,
                                           input.feature_cols, h, w)
                    .transpose();
  ig.mid = upsample_bilinear_backward(dx.data.bottomRows(mid_channels_), input.mid_rows, input.mid_cols, h, w);
  return ig;
}

// --- optimizer --------------------------------------------------------------

void NesterovSgd::step(std::vector<Parameter>& params, const Gradients& grads) {
  if (grads.size() != params.size()) throw InputError("sgd: gradient count mismatch");
  if (velocity_.empty())
    for (const auto& p : params) velocity_.push_back(Eigen::VectorXf::Zero(p.value.size()));
  const auto lr = static_cast<float>(lr_);
  const auto mu = static_cast<float>(momentum_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].value.size()) throw InputError("sgd: gradient shape mismatch");
    velocity_[i] = mu * velocity_[i] + grads[i];
    params[i].value -= lr * (grads[i] + mu * velocity_[i]);
  }
}

// --- checkpoints ------------------------------------------------------------

namespace {

void write_tensor(std::ostream& out, const std::string& name, const std::vector<int>& shape,
                  const Eigen::VectorXf& value) {
  binary::write_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  binary::write_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (int d : shape) binary::write_u32(out, static_cast<std::uint32_t>(d));
  binary::write_f32s(out, value.data(), static_cast<std::size_t>(value.size()));
}

Parameter read_tensor(std::istream& in) {
  Parameter p;
  const auto len = binary::read_u32(in);
  if (len > 4096) throw FormatError("PFW1: tensor name too long");
  p.name.resize(len);
  if (!in.read(p.name.data(), len)) throw FormatError("unexpected end of file");
  const auto rank = binary::read_u32(in);
  if (rank > 8) throw FormatError("PFW1: tensor rank too large");
  std::size_t count = 1;
  for (std::uint32_t r = 0; r < rank; ++r) {
    const auto d = binary::read_u32(in);
    if (d > (1u << 24)) throw FormatError("PFW1: tensor dimension too large");
    p.shape.push_back(static_cast<int>(d));
    count *= d;
  }
  if (count > (1u << 28)) throw FormatError("PFW1: tensor too large");
  p.value.resize(static_cast<Eigen::Index>(count));
  binary::read_f32s(in, p.value.data(), count);
  return p;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  if (!ckpt.velocity.empty() && ckpt.velocity.size() != ckpt.params.size())
    throw InputError("checkpoint: velocity count mismatch");
  nlohmann::ordered_json header;
  header["kind"] = ckpt.kind;
  header["config"] = nlohmann::ordered_json::parse(to_json_string(ckpt.config));
  header["has_velocity"] = !ckpt.velocity.empty();
  const std::string blob = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  binary::write_magic(out, "PFW1");
  binary::write_u32(out, kCheckpointVersion);
  binary::write_u32(out, static_cast<std::uint32_t>(blob.size()));
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  const std::size_t n = ckpt.params.size() + ckpt.velocity.size();
  binary::write_u32(out, static_cast<std::uint32_t>(n));
  for (const auto& p : ckpt.params) write_tensor(out, p.name, p.shape, p.value);
  for (std::size_t i = 0; i < ckpt.velocity.size(); ++i)
    write_tensor(out, ckpt.params[i].name + ".velocity", ckpt.params[i].shape, ckpt.velocity[i]);
  if (!out) throw FormatError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  binary::expect_magic(in, "PFW1");
  const auto version = binary::read_u32(in);
  if (version != kCheckpointVersion)
    throw FormatError("PFW1: unsupported version " + std::to_string(version));
  const auto len = binary::read_u32(in);
  if (len > (1u << 20)) throw FormatError("PFW1: header too large");
  std::string blob(len, '\0');
  if (!in.read(blob.data(), len)) throw FormatError("unexpected end of file");
  Checkpoint ckpt;
  bool has_velocity = false;
  try {
    const auto header = nlohmann::json::parse(blob);
    ckpt.kind = header.at("kind").get<std::string>();
    ckpt.config = apply_json(TrainConfig{}, header.at("config").dump());
    has_velocity = header.at("has_velocity").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("PFW1 header: ") + e.what());
  }
  const auto n = binary::read_u32(in);
  if (has_velocity && n % 2 != 0) throw FormatError("PFW1: odd tensor count with velocity");
  const std::uint32_t n_params = has_velocity ? n / 2 : n;
  for (std::uint32_t i = 0; i < n_params; ++i) ckpt.params.push_back(read_tensor(in));
  for (std::uint32_t i = n_params; i < n; ++i) {
    Parameter v = read_tensor(in);
    const auto& p = ckpt.params[i - n_params];
    if (v.name != p.name + ".velocity" || v.value.size() != p.value.size())
      throw FormatError("PFW1: velocity tensor does not match " + p.name);
    ckpt.velocity.push_back(std::move(v.value));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("PFW1: trailing bytes");
  return ckpt;
}

void assign_parameters(std::vector<Parameter>& dst, const std::vector<Parameter>& src) {
  if (dst.size() != src.size()) throw FormatError("checkpoint: parameter count does not match the network");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].name != src[i].name || dst[i].shape != src[i].shape)
      throw FormatError("checkpoint: parameter '" + src[i].name + "' does not match the network");
    dst[i].value = src[i].value;
  }
}

std::uint64_t file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 14];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace posfeat::nn
