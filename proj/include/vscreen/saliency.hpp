#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vscreen/errors.hpp"
#include "vscreen/io_util.hpp"
#include "vscreen/tensor.hpp"
#include "vscreen/vesselnet.hpp"
#include "vscreen/volume.hpp"

namespace vscreen {

// Per-voxel discriminative-importance field in [0,1] on the input grid.
struct SaliencyMap {
  std::uint32_t width = 0, height = 0, length = 0;
  std::vector<float> values;  // W-fastest, like the volumes
  std::string vessel_id;
  int class_index = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(width) * height * length;
  }
};

namespace detail {

// [W,H,L] volume voxels (W-fastest) -> [1,1,W,H,L] network tensor (L-fastest).
inline Tensor<float> volume_to_batch(const PreprocessedVolume& v) {
  Tensor<float> t({1, 1, v.width, v.height, v.length});
  for (std::uint32_t f = 0; f < v.length; ++f)
    for (std::uint32_t y = 0; y < v.height; ++y)
      for (std::uint32_t x = 0; x < v.width; ++x)
        t.values[(static_cast<std::size_t>(x) * v.height + y) * v.length + f] =
            v.values[(static_cast<std::size_t>(f) * v.height + y) * v.width + x];
  return t;
}

// Trilinear upsample from the coarse (pooled) grid to volume resolution,
// align-corners=false convention with edge clamping. Output is W-fastest.
inline std::vector<float> upsample_trilinear(const std::vector<float>& coarse,
                                             std::array<std::size_t, 3> cdims,
                                             std::array<std::uint32_t, 3> vdims) {
  const auto [cw, ch, cl] = cdims;
  const auto [w, h, l] = vdims;
  std::vector<float> out(static_cast<std::size_t>(w) * h * l);
  auto src = [&](long x, long y, long t) {
    x = std::clamp<long>(x, 0, static_cast<long>(cw) - 1);
    y = std::clamp<long>(y, 0, static_cast<long>(ch) - 1);
    t = std::clamp<long>(t, 0, static_cast<long>(cl) - 1);
    return static_cast<double>(
        coarse[(static_cast<std::size_t>(x) * ch + static_cast<std::size_t>(y)) * cl +
               static_cast<std::size_t>(t)]);
  };
  auto coord = [](std::uint32_t i, std::uint32_t fine, std::size_t dim_c) {
    const double c =
        (static_cast<double>(i) + 0.5) * static_cast<double>(dim_c) / static_cast<double>(fine) -
        0.5;
    return std::clamp(c, 0.0, static_cast<double>(dim_c) - 1.0);
  };
  for (std::uint32_t t = 0; t < l; ++t) {
    const double ct = coord(t, l, cl);
    const long t0 = static_cast<long>(std::floor(ct));
    const double at = ct - static_cast<double>(t0);
    for (std::uint32_t y = 0; y < h; ++y) {
      const double cy = coord(y, h, ch);
      const long y0 = static_cast<long>(std::floor(cy));
      const double ay = cy - static_cast<double>(y0);
      for (std::uint32_t x = 0; x < w; ++x) {
        const double cx = coord(x, w, cw);
        const long x0 = static_cast<long>(std::floor(cx));
        const double ax = cx - static_cast<double>(x0);
        double v = 0.0;
        for (int dx = 0; dx < 2; ++dx)
          for (int dy = 0; dy < 2; ++dy)
            for (int dt = 0; dt < 2; ++dt)
              v += (dx ? ax : 1.0 - ax) * (dy ? ay : 1.0 - ay) * (dt ? at : 1.0 - at) *
                   src(x0 + dx, y0 + dy, t0 + dt);
        out[(static_cast<std::size_t>(t) * h + y) * w + x] = static_cast<float>(v);
      }
    }
  }
  return out;
}

}  // namespace detail

// Grad-CAM over the fourth conv block's post-ReLU activation (pre-pool): the
// class logit's gradient is spatially averaged per channel, channels are
// combined with those weights, rectified, trilinearly upsampled to volume
// resolution, and max-normalized (a zero map stays zero).
inline SaliencyMap grad_cam(VesselNetParams<float>& params, const PreprocessedVolume& volume,
                            int class_index = 1) {
  if (class_index < 0 || static_cast<std::uint32_t>(class_index) >= params.config.num_classes)
    throw ValueError("grad_cam: class index out of range");

  Tape<float> tape;
  Rng dummy(0);
  auto fwd = forward(tape, params, detail::volume_to_batch(volume), false, dummy, true);
  const Tensor<float>& logits = tape.value(fwd.logits);
  if (!logits.all_finite())
    throw ValueError("grad_cam: non-finite logits; model parameters look untrained or invalid");

  std::vector<float> seed(logits.numel(), 0.0f);
  seed[static_cast<std::size_t>(class_index)] = 1.0f;
  tape.backward(fwd.logits, seed);

  const Tensor<float>& act = tape.value(fwd.conv4_relu);  // [1,C,w4,h4,l4]
  const std::vector<float>& grad = tape.grad(fwd.conv4_relu);
  const std::size_t channels = act.dim(1);
  const std::size_t sp = act.dim(2) * act.dim(3) * act.dim(4);

  std::vector<double> alpha(channels, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < sp; ++i) s += static_cast<double>(grad[c * sp + i]);
    alpha[c] = s / static_cast<double>(sp);
  }

  std::vector<float> coarse(sp, 0.0f);
  for (std::size_t i = 0; i < sp; ++i) {
    double v = 0.0;
    for (std::size_t c = 0; c < channels; ++c)
      v += alpha[c] * static_cast<double>(act.values[c * sp + i]);
    coarse[i] = v > 0.0 ? static_cast<float>(v) : 0.0f;
  }

  SaliencyMap map;
  map.width = volume.width;
  map.height = volume.height;
  map.length = volume.length;
  map.vessel_id = volume.vessel_id;
  map.class_index = class_index;
  map.values = detail::upsample_trilinear(
      coarse, {act.dim(2), act.dim(3), act.dim(4)},
      {volume.width, volume.height, volume.length});

  const float mx = *std::max_element(map.values.begin(), map.values.end());
  if (mx > 0.0f)
    for (float& v : map.values) v /= mx;
  return map;
}

// Voxel on iff value >= tau * max(map); an identically zero map gives an
// empty mask.
inline std::vector<std::uint8_t> binarize(const SaliencyMap& map, double tau) {
  if (!(tau > 0.0) || !(tau < 1.0))
    throw ValueError("binarize: tau must be in (0,1), got " + std::to_string(tau));
  std::vector<std::uint8_t> mask(map.values.size(), 0);
  const float mx = *std::max_element(map.values.begin(), map.values.end());
  if (mx <= 0.0f) return mask;
  const float cut = static_cast<float>(tau) * mx;
  for (std::size_t i = 0; i < map.values.size(); ++i)
    if (map.values[i] >= cut) mask[i] = 1;
  return mask;
}

// Central longitudinal slice (the middle cross-section row) as an 8-bit PGM:
// image rows run across the vessel (W), columns along it (L).
inline void write_central_slice_pgm(const std::filesystem::path& path,
                                    const std::vector<float>& values, std::uint32_t w,
                                    std::uint32_t h, std::uint32_t l) {
  if (values.size() != static_cast<std::size_t>(w) * h * l)
    throw ShapeError("write_central_slice_pgm: size does not match dims");
  const std::uint32_t yc = (h - 1) / 2;
  std::string out = "P5\n" + std::to_string(l) + " " + std::to_string(w) + "\n255\n";
  for (std::uint32_t x = 0; x < w; ++x)
    for (std::uint32_t t = 0; t < l; ++t) {
      const float v = values[(static_cast<std::size_t>(t) * h + yc) * w + x];
      const double clamped = std::clamp(static_cast<double>(v), 0.0, 1.0);
      out += static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * clamped)));
    }
  atomic_write_text(path, out);
}

}  // namespace vscreen
