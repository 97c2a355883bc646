#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vscreen/errors.hpp"

namespace vscreen {

enum class VesselLabel : std::uint8_t { normal = 0, abnormal = 1 };

inline const char* to_string(VesselLabel l) {
  return l == VesselLabel::abnormal ? "abnormal" : "normal";
}

inline VesselLabel label_from_string(const std::string& s) {
  if (s == "normal") return VesselLabel::normal;
  if (s == "abnormal") return VesselLabel::abnormal;
  throw FormatError("unknown label '" + s + "'");
}

// Mask voxel codes.
inline constexpr std::uint8_t kMaskBackground = 0;
inline constexpr std::uint8_t kMaskMild = 1;
inline constexpr std::uint8_t kMaskSevere = 2;

// Straightened-MPR vessel volume as it comes off the scanner-side pipeline:
// 12-bit intensities on a W x H cross-section swept along L centerline
// frames. Voxels are stored W-fastest: index = (t*H + y)*W + x.
struct RawVesselVolume {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t length = 0;
  std::vector<std::uint16_t> intensities;
  std::vector<std::uint8_t> mask;  // empty, or one severity code per voxel
  std::string subject_id;
  std::string vessel_id;
  VesselLabel label = VesselLabel::normal;

  std::size_t numel() const {
    return static_cast<std::size_t>(width) * height * length;
  }

  bool has_mask() const { return !mask.empty(); }

  void validate() const {
    if (intensities.size() != numel())
      throw FormatError("volume " + vessel_id + ": voxel count does not match dims");
    if (has_mask() && mask.size() != numel())
      throw FormatError("volume " + vessel_id + ": mask dims differ from intensity dims");
    for (std::uint16_t v : intensities)
      if (v > 4095)
        throw FormatError("volume " + vessel_id + ": intensity " + std::to_string(v) +
                          " outside the 12-bit range [0,4095]");
  }
};

// Clamped, normalized, length-padded volume ready for the network. Values
// live in [0,1]; the mask (when present) tracks every geometric transform so
// localization can be scored at volume resolution. augment_angle records the
// rotation provenance; originals carry no angle.
struct PreprocessedVolume {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t length = 0;
  std::vector<float> values;
  std::vector<std::uint8_t> mask;
  std::string subject_id;
  std::string vessel_id;
  VesselLabel label = VesselLabel::normal;
  bool augmented = false;
  double augment_angle = 0.0;
  std::string source_vessel_id;  // for augmented copies

  std::size_t numel() const {
    return static_cast<std::size_t>(width) * height * length;
  }

  bool has_mask() const { return !mask.empty(); }
};

}  // namespace vscreen
