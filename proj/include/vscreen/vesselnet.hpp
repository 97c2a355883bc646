#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vscreen/adam.hpp"
#include "vscreen/errors.hpp"
#include "vscreen/io_util.hpp"
#include "vscreen/ops.hpp"
#include "vscreen/rng.hpp"
#include "vscreen/tape.hpp"
#include "vscreen/tensor.hpp"

namespace vscreen {

// Four conv blocks (3x3x3 kernels, 32/64/128/256 filters), each
// conv -> ReLU -> batchnorm -> 2x2x2 maxpool, then flatten -> FC(fc_hidden)
// -> ReLU -> dropout -> FC(2). Input is a single-channel [W,H,L] volume.
struct VesselNetConfig {
  std::array<std::uint32_t, 3> input_dims{21, 21, 350};
  std::array<std::uint32_t, 4> conv_filters{32, 64, 128, 256};
  std::uint32_t fc_hidden = 256;
  double keep_rate = 0.5;
  double lambda_l2 = 1e-3;
  std::uint32_t num_classes = 2;

  std::array<std::uint32_t, 3> pooled_dims() const {
    auto d = input_dims;
    for (int i = 0; i < 4; ++i)
      for (auto& e : d) e /= 2;
    return d;
  }

  std::size_t flatten_width() const {
    const auto p = pooled_dims();
    return static_cast<std::size_t>(conv_filters[3]) * p[0] * p[1] * p[2];
  }

  void validate() const {
    const auto p = pooled_dims();
    if (p[0] == 0 || p[1] == 0 || p[2] == 0)
      throw ConfigError("VesselNetConfig: input " + std::to_string(input_dims[0]) + "x" +
                        std::to_string(input_dims[1]) + "x" + std::to_string(input_dims[2]) +
                        " collapses to zero after four 2x pools");
    for (auto f : conv_filters)
      if (f == 0) throw ConfigError("VesselNetConfig: zero conv filters");
    if (fc_hidden == 0 || num_classes < 2)
      throw ConfigError("VesselNetConfig: bad head configuration");
    if (!(keep_rate > 0.0) || keep_rate > 1.0)
      throw ConfigError("VesselNetConfig: keep_rate outside (0,1]");
    if (lambda_l2 < 0.0) throw ConfigError("VesselNetConfig: negative lambda_l2");
  }
};

template <typename T>
struct ConvBlockParams {
  Tensor<T> kernel;  // [Co,Ci,3,3,3]
  Tensor<T> bias;    // [Co]
  BatchNormState<T> bn;
};

template <typename T>
struct VesselNetParams {
  VesselNetConfig config;
  std::array<ConvBlockParams<T>, 4> blocks;
  Tensor<T> fc1_weight, fc1_bias;
  Tensor<T> fc2_weight, fc2_bias;

  // Learnable tensors in checkpoint declaration order; the trainer pairs
  // this with gradients for the optimizer.
  std::vector<Tensor<T>*> param_tensors() {
    std::vector<Tensor<T>*> v;
    for (auto& b : blocks) {
      v.push_back(&b.kernel);
      v.push_back(&b.bias);
      v.push_back(&b.bn.gamma);
      v.push_back(&b.bn.beta);
    }
    v.push_back(&fc1_weight);
    v.push_back(&fc1_bias);
    v.push_back(&fc2_weight);
    v.push_back(&fc2_bias);
    return v;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& b : blocks)
      n += b.kernel.numel() + b.bias.numel() + b.bn.gamma.numel() + b.bn.beta.numel();
    return n + fc1_weight.numel() + fc1_bias.numel() + fc2_weight.numel() + fc2_bias.numel();
  }
};

// He fan-in initialization for the conv/FC weights, zero biases, identity
// batch norm, from the portable generator.
template <typename T = float>
VesselNetParams<T> build(const VesselNetConfig& config, std::uint64_t init_seed) {
  config.validate();
  VesselNetParams<T> p;
  p.config = config;
  Rng root(init_seed);
  std::uint32_t ci = 1;
  for (int i = 0; i < 4; ++i) {
    const std::uint32_t co = config.conv_filters[static_cast<std::size_t>(i)];
    Rng ws = root.stream("conv", i);
    p.blocks[static_cast<std::size_t>(i)].kernel =
        Tensor<T>({co, ci, 3, 3, 3});
    const double sd = std::sqrt(2.0 / (27.0 * static_cast<double>(ci)));
    for (auto& v : p.blocks[static_cast<std::size_t>(i)].kernel.values)
      v = static_cast<T>(sd * ws.gauss());
    p.blocks[static_cast<std::size_t>(i)].bias = Tensor<T>({co});
    p.blocks[static_cast<std::size_t>(i)].bn = BatchNormState<T>::identity(co);
    ci = co;
  }
  const std::size_t flat = config.flatten_width();
  Rng f1 = root.stream("fc", 0);
  p.fc1_weight = Tensor<T>({flat, config.fc_hidden});
  const double sd1 = std::sqrt(2.0 / static_cast<double>(flat));
  for (auto& v : p.fc1_weight.values) v = static_cast<T>(sd1 * f1.gauss());
  p.fc1_bias = Tensor<T>({config.fc_hidden});
  Rng f2 = root.stream("fc", 1);
  p.fc2_weight = Tensor<T>({config.fc_hidden, config.num_classes});
  const double sd2 = std::sqrt(2.0 / static_cast<double>(config.fc_hidden));
  for (auto& v : p.fc2_weight.values) v = static_cast<T>(sd2 * f2.gauss());
  p.fc2_bias = Tensor<T>({config.num_classes});
  return p;
}

// Tape leaves for every learnable tensor of one forward pass.
template <typename T>
struct VesselNetLeaves {
  std::array<Var<T>, 4> kernel, bias, gamma, beta;
  Var<T> fc1_w, fc1_b, fc2_w, fc2_b;

  std::vector<Var<T>> in_param_order() const {
    std::vector<Var<T>> v;
    for (int i = 0; i < 4; ++i) {
      v.push_back(kernel[static_cast<std::size_t>(i)]);
      v.push_back(bias[static_cast<std::size_t>(i)]);
      v.push_back(gamma[static_cast<std::size_t>(i)]);
      v.push_back(beta[static_cast<std::size_t>(i)]);
    }
    v.insert(v.end(), {fc1_w, fc1_b, fc2_w, fc2_b});
    return v;
  }

  // Tensors subject to L2 weight decay: conv kernels and FC weights only.
  std::vector<Var<T>> decayed_weights() const {
    std::vector<Var<T>> v(kernel.begin(), kernel.end());
    v.insert(v.end(), {fc1_w, fc2_w});
    return v;
  }
};

template <typename T>
struct ForwardResult {
  Var<T> logits;
  Var<T> conv4_relu;  // saliency target: last conv block, post-ReLU, pre-pool
  VesselNetLeaves<T> leaves;
};

// Runs the block sequence on a [N,1,W,H,L] batch and returns logits plus the
// handles needed for gradients and Grad-CAM. Training mode draws the dropout
// mask from dropout_rng and updates batch-norm running statistics in place.
template <typename T>
ForwardResult<T> forward(Tape<T>& tape, VesselNetParams<T>& params, Tensor<T> batch,
                         bool training, Rng& dropout_rng, bool with_grads = true) {
  const auto& cfg = params.config;
  if (batch.rank() != 5 || batch.dim(1) != 1 || batch.dim(2) != cfg.input_dims[0] ||
      batch.dim(3) != cfg.input_dims[1] || batch.dim(4) != cfg.input_dims[2])
    throw ShapeError("forward: batch must be [N,1," + std::to_string(cfg.input_dims[0]) + "," +
                     std::to_string(cfg.input_dims[1]) + "," +
                     std::to_string(cfg.input_dims[2]) + "], got " +
                     Tensor<T>::shape_str(batch.shape));
  const std::size_t n = batch.dim(0);

  ForwardResult<T> r;
  Var<T> x = tape.leaf(std::move(batch), false);
  for (int i = 0; i < 4; ++i) {
    auto& blk = params.blocks[static_cast<std::size_t>(i)];
    r.leaves.kernel[static_cast<std::size_t>(i)] = tape.leaf(blk.kernel, with_grads);
    r.leaves.bias[static_cast<std::size_t>(i)] = tape.leaf(blk.bias, with_grads);
    r.leaves.gamma[static_cast<std::size_t>(i)] = tape.leaf(blk.bn.gamma, with_grads);
    r.leaves.beta[static_cast<std::size_t>(i)] = tape.leaf(blk.bn.beta, with_grads);
    x = conv3d(tape, x, r.leaves.kernel[static_cast<std::size_t>(i)],
               r.leaves.bias[static_cast<std::size_t>(i)]);
    x = relu(tape, x);
    if (i == 3) r.conv4_relu = x;
    x = batchnorm(tape, x, r.leaves.gamma[static_cast<std::size_t>(i)],
                  r.leaves.beta[static_cast<std::size_t>(i)], blk.bn, training);
    x = maxpool3d(tape, x);
  }
  x = reshape(tape, x, {n, cfg.flatten_width()});
  r.leaves.fc1_w = tape.leaf(params.fc1_weight, with_grads);
  r.leaves.fc1_b = tape.leaf(params.fc1_bias, with_grads);
  r.leaves.fc2_w = tape.leaf(params.fc2_weight, with_grads);
  r.leaves.fc2_b = tape.leaf(params.fc2_bias, with_grads);
  x = linear(tape, x, r.leaves.fc1_w, r.leaves.fc1_b);
  x = relu(tape, x);
  x = dropout(tape, x, cfg.keep_rate, training, dropout_rng);
  r.logits = linear(tape, x, r.leaves.fc2_w, r.leaves.fc2_b);
  return r;
}

// Inference-mode P(abnormal) for each sample of the batch.
template <typename T>
std::vector<double> predict_proba(VesselNetParams<T>& params, Tensor<T> batch) {
  Tape<T> tape;
  Rng dummy(0);
  auto r = forward(tape, params, std::move(batch), false, dummy, false);
  const auto probs = softmax_rows(tape.value(r.logits));
  const std::size_t n = tape.value(r.logits).dim(0);
  const std::size_t k = tape.value(r.logits).dim(1);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = probs[i * k + 1];
  return out;
}

// ---------------------------------------------------------------------------
// VNCK checkpoint: magic "VNCK", version byte, config echo (dims, filters,
// fc_hidden), per-layer little-endian f32 arrays in declaration order
// (kernel, bias, gamma, beta, running mean, running var per block, then FC
// weights/biases), trailing u64 payload byte count.

inline constexpr std::uint8_t kCheckpointVersion = 1;

namespace detail {

inline void put_array_f32(std::vector<std::uint8_t>& b, const std::vector<float>& v,
                          std::uint64_t& payload) {
  for (float x : v) put_f32(b, x);
  payload += v.size() * 4;
}

inline std::vector<float> take_array_f32(ByteReader& r, std::size_t n) {
  std::vector<float> v(n);
  for (auto& x : v) x = r.f32();
  return v;
}

}  // namespace detail

inline void save_checkpoint(const VesselNetParams<float>& params,
                            const std::filesystem::path& path) {
  std::vector<std::uint8_t> b;
  b.insert(b.end(), {'V', 'N', 'C', 'K'});
  b.push_back(kCheckpointVersion);
  for (auto d : params.config.input_dims) put_u32(b, d);
  for (auto f : params.config.conv_filters) put_u32(b, f);
  put_u32(b, params.config.fc_hidden);
  std::uint64_t payload = 0;
  for (const auto& blk : params.blocks) {
    detail::put_array_f32(b, blk.kernel.values, payload);
    detail::put_array_f32(b, blk.bias.values, payload);
    detail::put_array_f32(b, blk.bn.gamma.values, payload);
    detail::put_array_f32(b, blk.bn.beta.values, payload);
    detail::put_array_f32(b, blk.bn.running_mean, payload);
    detail::put_array_f32(b, blk.bn.running_var, payload);
  }
  detail::put_array_f32(b, params.fc1_weight.values, payload);
  detail::put_array_f32(b, params.fc1_bias.values, payload);
  detail::put_array_f32(b, params.fc2_weight.values, payload);
  detail::put_array_f32(b, params.fc2_bias.values, payload);
  put_u64(b, payload);
  atomic_write_bytes(path, b);
}

inline VesselNetParams<float> load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  ByteReader r(bytes.data(), bytes.size());
  const std::uint8_t* magic = r.take(4);
  if (!(magic[0] == 'V' && magic[1] == 'N' && magic[2] == 'C' && magic[3] == 'K'))
    throw FormatError(path.string() + ": bad VNCK magic");
  if (r.u8() != kCheckpointVersion)
    throw FormatError(path.string() + ": unsupported checkpoint version");
  VesselNetConfig cfg;
  for (auto& d : cfg.input_dims) d = r.u32();
  for (auto& f : cfg.conv_filters) f = r.u32();
  cfg.fc_hidden = r.u32();
  cfg.validate();

  VesselNetParams<float> p = build<float>(cfg, 0);
  std::uint64_t payload = 0;
  auto read_into = [&](std::vector<float>& dst) {
    dst = detail::take_array_f32(r, dst.size());
    payload += dst.size() * 4;
  };
  for (auto& blk : p.blocks) {
    read_into(blk.kernel.values);
    read_into(blk.bias.values);
    read_into(blk.bn.gamma.values);
    read_into(blk.bn.beta.values);
    read_into(blk.bn.running_mean);
    read_into(blk.bn.running_var);
    blk.bn.stats_seeded = true;
  }
  read_into(p.fc1_weight.values);
  read_into(p.fc1_bias.values);
  read_into(p.fc2_weight.values);
  read_into(p.fc2_bias.values);
  if (r.u64() != payload)
    throw FormatError(path.string() + ": trailing byte-count check failed");
  if (r.remaining() != 0) throw FormatError(path.string() + ": trailing garbage");
  return p;
}

}  // namespace vscreen
