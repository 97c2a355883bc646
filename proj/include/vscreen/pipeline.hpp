#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "vscreen/errors.hpp"
#include "vscreen/rng.hpp"
#include "vscreen/volume.hpp"

namespace vscreen {

// Intensity window applied before normalization. Values below the floor read
// as no-contrast tissue, values above the ceiling as dense calcification;
// both are clipped so the network sees a fixed dynamic range.
inline constexpr std::uint16_t kClampLo = 800;
inline constexpr std::uint16_t kClampHi = 2200;

inline RawVesselVolume clamp(RawVesselVolume v) {
  for (std::uint16_t x : v.intensities)
    if (x > 4095)
      throw FormatError("clamp: intensity " + std::to_string(x) + " outside [0,4095]");
  for (std::uint16_t& x : v.intensities) x = std::clamp(x, kClampLo, kClampHi);
  return v;
}

// Fixed linear map [800,2200] -> [0,1]. The window bounds are global
// constants, so this is dataset-independent (and leakage-free across folds).
inline PreprocessedVolume normalize(const RawVesselVolume& v) {
  PreprocessedVolume p;
  p.width = v.width;
  p.height = v.height;
  p.length = v.length;
  p.values.resize(v.numel());
  for (std::size_t i = 0; i < v.intensities.size(); ++i) {
    const std::uint16_t x = v.intensities[i];
    if (x < kClampLo || x > kClampHi)
      throw ValueError("normalize: intensity " + std::to_string(x) +
                       " outside the clamped range; run clamp first");
    p.values[i] = static_cast<float>(x - kClampLo) / static_cast<float>(kClampHi - kClampLo);
  }
  p.mask = v.mask;
  p.subject_id = v.subject_id;
  p.vessel_id = v.vessel_id;
  p.label = v.label;
  return p;
}

// Appends empty frames (normalized clamp floor, background mask) at the
// distal end until the volume is target_length frames long.
inline PreprocessedVolume pad_to_length(PreprocessedVolume v, std::uint32_t target_length) {
  if (v.length > target_length)
    throw ValueError("pad_to_length: volume " + v.vessel_id + " has " +
                     std::to_string(v.length) + " frames, target is " +
                     std::to_string(target_length));
  const std::size_t frame = static_cast<std::size_t>(v.width) * v.height;
  v.values.resize(frame * target_length, 0.0f);
  if (v.has_mask()) v.mask.resize(frame * target_length, kMaskBackground);
  v.length = target_length;
  return v;
}

namespace detail {

// Quarter-turn index permutation on an odd square grid: one +90 degree turn
// maps (row, col) -> (col, W-1-row).
template <typename T>
void quarter_turn(std::vector<T>& frame, std::vector<T>& scratch, std::uint32_t w) {
  scratch.resize(frame.size());
  for (std::uint32_t r = 0; r < w; ++r)
    for (std::uint32_t c = 0; c < w; ++c)
      scratch[static_cast<std::size_t>(c) * w + (w - 1 - r)] =
          frame[static_cast<std::size_t>(r) * w + c];
  frame.swap(scratch);
}

}  // namespace detail

// Rotates every cross-sectional slice about the grid center. Intensities are
// sampled bilinearly (outside the grid reads 0); masks use nearest neighbor.
// Exact multiples of 90 degrees run as lossless index permutations.
inline PreprocessedVolume rotate_about_centerline(const PreprocessedVolume& v, double theta_deg) {
  if (v.width != v.height || v.width % 2 == 0)
    throw ShapeError("rotate_about_centerline: cross-section must be odd and square, got " +
                     std::to_string(v.width) + "x" + std::to_string(v.height));
  const std::uint32_t w = v.width;
  const std::size_t frame = static_cast<std::size_t>(w) * w;

  PreprocessedVolume out = v;

  double turns = theta_deg / 90.0;
  if (turns == std::floor(turns)) {
    int q = static_cast<int>(std::fmod(turns, 4.0));
    if (q < 0) q += 4;
    std::vector<float> fvals(frame);
    std::vector<std::uint8_t> fmask(frame);
    std::vector<float> scratch_f;
    std::vector<std::uint8_t> scratch_m;
    for (std::uint32_t t = 0; t < v.length; ++t) {
      std::copy_n(v.values.begin() + t * frame, frame, fvals.begin());
      for (int i = 0; i < q; ++i) detail::quarter_turn(fvals, scratch_f, w);
      std::copy_n(fvals.begin(), frame, out.values.begin() + t * frame);
      if (v.has_mask()) {
        std::copy_n(v.mask.begin() + t * frame, frame, fmask.begin());
        for (int i = 0; i < q; ++i) detail::quarter_turn(fmask, scratch_m, w);
        std::copy_n(fmask.begin(), frame, out.mask.begin() + t * frame);
      }
    }
    return out;
  }

  const double rad = theta_deg * std::numbers::pi / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const double ctr = (static_cast<double>(w) - 1.0) / 2.0;
  for (std::uint32_t t = 0; t < v.length; ++t) {
    const float* src = v.values.data() + t * frame;
    float* dst = out.values.data() + t * frame;
    const std::uint8_t* msrc = v.has_mask() ? v.mask.data() + t * frame : nullptr;
    std::uint8_t* mdst = v.has_mask() ? out.mask.data() + t * frame : nullptr;
    for (std::uint32_t r = 0; r < w; ++r) {
      for (std::uint32_t col = 0; col < w; ++col) {
        // inverse map: rotate the output coordinate back by theta
        const double dx = static_cast<double>(col) - ctr;
        const double dy = static_cast<double>(r) - ctr;
        const double sx = ctr + (c * dx + s * dy);
        const double sy = ctr + (c * dy - s * dx);
        const double fx = std::floor(sx), fy = std::floor(sy);
        const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
        const double ax = sx - fx, ay = sy - fy;
        auto at = [&](long yy, long xx) -> double {
          if (xx < 0 || yy < 0 || xx >= static_cast<long>(w) || yy >= static_cast<long>(w))
            return 0.0;
          return static_cast<double>(src[static_cast<std::size_t>(yy) * w +
                                         static_cast<std::size_t>(xx)]);
        };
        const double val = (1.0 - ay) * ((1.0 - ax) * at(y0, x0) + ax * at(y0, x0 + 1)) +
                           ay * ((1.0 - ax) * at(y0 + 1, x0) + ax * at(y0 + 1, x0 + 1));
        dst[static_cast<std::size_t>(r) * w + col] = static_cast<float>(val);
        if (mdst) {
          const long xn = static_cast<long>(std::lround(sx));
          const long yn = static_cast<long>(std::lround(sy));
          std::uint8_t mv = kMaskBackground;
          if (xn >= 0 && yn >= 0 && xn < static_cast<long>(w) && yn < static_cast<long>(w))
            mv = msrc[static_cast<std::size_t>(yn) * w + static_cast<std::size_t>(xn)];
          mdst[static_cast<std::size_t>(r) * w + col] = mv;
        }
      }
    }
  }
  return out;
}

// Equalizes class counts in a training list by appending rotated copies of
// existing samples (round-robin over each class, one fresh random angle per
// copy). Originals are always retained. target_per_class defaults to the
// larger class count.
inline std::vector<PreprocessedVolume> augment_balance(
    const std::vector<PreprocessedVolume>& training, Rng rng_base,
    std::size_t target_per_class = 0) {
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < training.size(); ++i)
    by_class[training[i].label == VesselLabel::abnormal ? 1 : 0].push_back(i);
  if (by_class[0].empty() || by_class[1].empty())
    throw DataError("augment_balance: both classes must be present in the training set");

  // Deterministic orderings regardless of input order.
  for (auto& idxs : by_class)
    std::sort(idxs.begin(), idxs.end(), [&](std::size_t a, std::size_t b) {
      return training[a].vessel_id < training[b].vessel_id;
    });

  if (target_per_class == 0)
    target_per_class = std::max(by_class[0].size(), by_class[1].size());

  std::vector<PreprocessedVolume> out = training;
  for (int cls = 0; cls < 2; ++cls) {
    const auto& idxs = by_class[cls];
    if (idxs.size() > target_per_class)
      throw DataError("augment_balance: class already exceeds target count");
    const std::size_t copies = target_per_class - idxs.size();
    for (std::size_t c = 0; c < copies; ++c) {
      const PreprocessedVolume& src = training[idxs[c % idxs.size()]];
      const std::uint64_t copy_index = c / idxs.size();
      Rng stream = rng_base.stream("augment", src.vessel_id, copy_index);
      const double angle = stream.uniform(0.0, 360.0);
      PreprocessedVolume rot = rotate_about_centerline(src, angle);
      rot.augmented = true;
      rot.augment_angle = angle;
      rot.source_vessel_id = src.vessel_id;
      rot.vessel_id = src.vessel_id + "#aug" + std::to_string(copy_index);
      out.push_back(std::move(rot));
    }
  }
  return out;
}

// clamp -> normalize -> pad, the standard preparation for one volume.
inline PreprocessedVolume preprocess(const RawVesselVolume& raw, std::uint32_t target_length) {
  return pad_to_length(normalize(clamp(raw)), target_length);
}

}  // namespace vscreen
