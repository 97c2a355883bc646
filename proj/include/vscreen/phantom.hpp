#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "vscreen/errors.hpp"
#include "vscreen/manifest.hpp"
#include "vscreen/rng.hpp"
#include "vscreen/v3d.hpp"
#include "vscreen/volume.hpp"

namespace vscreen {

// One focal plaque: reduces the lumen radius by narrowing_fraction across
// `extent` frames centered on center_frame; calcified lesions additionally
// get a bright wall blob. Severity follows the narrowing: > 0.5 is severe.
struct LesionSpec {
  std::uint32_t center_frame = 0;
  std::uint32_t extent = 0;
  double narrowing_fraction = 0.0;
  bool calcified = false;

  std::uint8_t severity_code() const {
    return narrowing_fraction > 0.5 ? kMaskSevere : kMaskMild;
  }
  std::uint32_t first_frame() const { return center_frame - std::min(center_frame, extent / 2); }
  std::uint32_t end_frame() const { return first_frame() + extent; }
};

struct PhantomSpec {
  std::uint32_t width = 21, height = 21, length = 96;
  std::vector<double> lumen_radius_profile;  // one radius per frame, in voxels
  double lumen_intensity = 1400.0;
  double wall_intensity = 1050.0;
  double background_intensity = 900.0;
  double calcification_intensity = 2600.0;
  double noise_sigma = 40.0;
  double wall_thickness = 2.0;
  std::vector<LesionSpec> lesions;
  std::uint64_t seed = 0;
  std::string subject_id = "s0000";
  std::string vessel_id = "s0000_LAD";

  void validate() const {
    if (lumen_radius_profile.size() != length)
      throw ValueError("PhantomSpec: radius profile must have one entry per frame");
    const double rmax = (static_cast<double>(std::min(width, height)) - 1.0) / 2.0;
    for (double r : lumen_radius_profile)
      if (!(r > 0.0) || r > rmax)
        throw ValueError("PhantomSpec: lumen radius " + std::to_string(r) +
                         " outside (0, " + std::to_string(rmax) + "]");
    for (double m : {lumen_intensity, wall_intensity, background_intensity,
                     calcification_intensity})
      if (m < 0.0 || m > 4095.0)
        throw ValueError("PhantomSpec: intensity mean outside [0,4095]");
    std::vector<double> narrow(length, 0.0);
    for (const auto& les : lesions) {
      if (les.extent == 0 || les.end_frame() > length || les.center_frame >= length)
        throw ValueError("PhantomSpec: lesion frames outside [0,length)");
      if (!(les.narrowing_fraction > 0.0) || les.narrowing_fraction >= 1.0)
        throw ValueError("PhantomSpec: narrowing_fraction must be in (0,1)");
      for (std::uint32_t t = les.first_frame(); t < les.end_frame(); ++t)
        narrow[t] += les.narrowing_fraction;
    }
    for (double nv : narrow)
      if (nv >= 1.0)
        throw ValueError("PhantomSpec: overlapping lesions narrow the lumen completely");
  }
};

namespace detail {

// Eight calcification placement directions (unit vectors; diagonals use
// sqrt(0.5), which IEEE rounds identically everywhere).
inline std::array<double, 2> calc_direction(std::uint64_t i) {
  const double d = std::sqrt(0.5);
  const std::array<std::array<double, 2>, 8> dirs{{{1.0, 0.0},
                                                   {d, d},
                                                   {0.0, 1.0},
                                                   {-d, d},
                                                   {-1.0, 0.0},
                                                   {-d, -d},
                                                   {0.0, -1.0},
                                                   {d, -d}}};
  return dirs[i % 8];
}

}  // namespace detail

// Renders one straightened vessel: bright tubular lumen inside a darker
// wall on background tissue, with per-lesion narrowing, optional bright
// calcifications, additive noise, and the ground-truth severity mask.
inline RawVesselVolume generate_vessel(const PhantomSpec& spec) {
  spec.validate();
  const std::uint32_t w = spec.width, h = spec.height, l = spec.length;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const std::size_t frame = static_cast<std::size_t>(w) * h;

  RawVesselVolume out;
  out.width = w;
  out.height = h;
  out.length = l;
  out.subject_id = spec.subject_id;
  out.vessel_id = spec.vessel_id;
  out.label = spec.lesions.empty() ? VesselLabel::normal : VesselLabel::abnormal;
  out.intensities.resize(frame * l);
  out.mask.assign(frame * l, kMaskBackground);

  std::vector<double> narrow(l, 0.0);
  std::vector<std::uint8_t> severity(l, 0);
  for (const auto& les : spec.lesions)
    for (std::uint32_t t = les.first_frame(); t < les.end_frame(); ++t) {
      narrow[t] += les.narrowing_fraction;
      severity[t] = std::max(severity[t], les.severity_code());
    }

  std::vector<double> values(frame * l);
  for (std::uint32_t t = 0; t < l; ++t) {
    const double rt = spec.lumen_radius_profile[t];
    const double r_eff = rt * (1.0 - narrow[t]);
    const double r_wall = rt + spec.wall_thickness;
    for (std::uint32_t y = 0; y < h; ++y)
      for (std::uint32_t x = 0; x < w; ++x) {
        const double dx = static_cast<double>(x) - cx;
        const double dy = static_cast<double>(y) - cy;
        const double d2 = dx * dx + dy * dy;
        double v = spec.background_intensity;
        if (d2 <= r_wall * r_wall) {
          v = spec.wall_intensity;
          if (d2 <= r_eff * r_eff) v = spec.lumen_intensity;
          if (severity[t] != 0)
            out.mask[t * frame + y * static_cast<std::size_t>(w) + x] = severity[t];
        }
        values[t * frame + y * static_cast<std::size_t>(w) + x] = v;
      }
  }

  // Calcifications: one bright spherical blob per calcified lesion, seated
  // in the wall, clipped to the lesion's frame range so the mask covers it.
  Rng base(spec.seed);
  for (std::size_t li = 0; li < spec.lesions.size(); ++li) {
    const auto& les = spec.lesions[li];
    if (!les.calcified) continue;
    Rng cs = base.stream("calc", static_cast<std::uint64_t>(li));
    const auto dir = detail::calc_direction(cs.index(8));
    const std::uint32_t tc = std::min<std::uint32_t>(les.center_frame, l - 1);
    const double rt = spec.lumen_radius_profile[tc];
    const double rad_pos = rt * (1.0 - narrow[tc]) + spec.wall_thickness * 0.5 + 0.5;
    const double bx = cx + dir[0] * rad_pos;
    const double by = cy + dir[1] * rad_pos;
    const double br = 1.6 + 0.9 * cs.real64();
    const std::uint32_t t0 = std::max<std::uint32_t>(
        les.first_frame(), tc >= static_cast<std::uint32_t>(br) ? tc - static_cast<std::uint32_t>(br) : 0);
    const std::uint32_t t1 =
        std::min<std::uint32_t>(les.end_frame(), tc + static_cast<std::uint32_t>(br) + 1);
    for (std::uint32_t t = t0; t < t1; ++t)
      for (std::uint32_t y = 0; y < h; ++y)
        for (std::uint32_t x = 0; x < w; ++x) {
          const double ddx = static_cast<double>(x) - bx;
          const double ddy = static_cast<double>(y) - by;
          const double ddt = static_cast<double>(t) - static_cast<double>(tc);
          if (ddx * ddx + ddy * ddy + ddt * ddt <= br * br) {
            values[t * frame + y * static_cast<std::size_t>(w) + x] =
                spec.calcification_intensity;
            out.mask[t * frame + y * static_cast<std::size_t>(w) + x] =
                std::max(out.mask[t * frame + y * static_cast<std::size_t>(w) + x],
                         les.severity_code());
          }
        }
  }

  Rng noise = base.stream("noise");
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = values[i] + spec.noise_sigma * noise.gauss();
    const double clipped = std::clamp(v, 0.0, 4095.0);
    out.intensities[i] = static_cast<std::uint16_t>(std::lround(clipped));
  }
  return out;
}

// Cohort-level generation: n subjects, each with 1-3 vessels; abnormal
// subjects carry 1-3 lesions spread over their vessels. Volumes and masks go
// to out_dir/volumes and out_dir/masks, with a JSON manifest alongside.
inline Manifest generate_dataset(std::size_t n_subjects, double abnormal_fraction,
                                 std::array<std::uint32_t, 3> dims, std::uint64_t seed,
                                 const std::filesystem::path& out_dir) {
  if (!(abnormal_fraction > 0.0) || !(abnormal_fraction < 1.0))
    throw ValueError("generate_dataset: abnormal_fraction must be in (0,1)");
  if (n_subjects < 10) throw DataError("generate_dataset: need at least 10 subjects");
  const auto [w, h, l] = dims;
  if (w < 3 || h < 3 || l < 8)
    throw ValueError("generate_dataset: dims too small for a vessel phantom");

  std::filesystem::create_directories(out_dir / "volumes");
  std::filesystem::create_directories(out_dir / "masks");

  const std::size_t n_abnormal =
      static_cast<std::size_t>(std::llround(static_cast<double>(n_subjects) * abnormal_fraction));
  Rng root(seed);
  std::vector<std::size_t> order(n_subjects);
  for (std::size_t i = 0; i < n_subjects; ++i) order[i] = i;
  Rng shuffler = root.stream("subjects");
  shuffler.shuffle(order);
  std::vector<bool> abnormal(n_subjects, false);
  for (std::size_t i = 0; i < n_abnormal; ++i) abnormal[order[i]] = true;

  const char* vessel_names[3] = {"LAD", "LCX", "RCA"};
  const double rmax = (static_cast<double>(std::min(w, h)) - 1.0) / 2.0;

  Manifest m;
  m.dims = dims;
  m.seed = seed;
  m.generator_version = 1;
  m.base_dir = out_dir;

  for (std::size_t i = 0; i < n_subjects; ++i) {
    char sid[32];
    std::snprintf(sid, sizeof(sid), "s%04zu", i);
    Rng subj = root.stream("subject", static_cast<std::uint64_t>(i));
    const std::size_t n_vessels = 1 + subj.index(3);

    std::vector<PhantomSpec> specs(n_vessels);
    for (std::size_t v = 0; v < n_vessels; ++v) {
      PhantomSpec& sp = specs[v];
      sp.width = w;
      sp.height = h;
      sp.length = l;
      sp.subject_id = sid;
      sp.vessel_id = std::string(sid) + "_" + vessel_names[v];
      sp.seed = mix64(seed ^ mix64(i * 3 + v + 1));
      Rng vs = root.stream("vessel", static_cast<std::uint64_t>(i),
                           static_cast<std::uint64_t>(v));
      const double r0 = rmax * vs.uniform(0.45, 0.62);
      const double taper = vs.uniform(0.05, 0.25);
      sp.lumen_radius_profile.resize(l);
      for (std::uint32_t t = 0; t < l; ++t)
        sp.lumen_radius_profile[t] =
            r0 * (1.0 - taper * (static_cast<double>(t) / static_cast<double>(l - 1)));
    }

    if (abnormal[i]) {
      const std::size_t n_lesions = 1 + subj.index(3);
      for (std::size_t j = 0; j < n_lesions; ++j) {
        Rng ls = root.stream("lesion", static_cast<std::uint64_t>(i),
                             static_cast<std::uint64_t>(j));
        PhantomSpec& sp = specs[ls.index(n_vessels)];
        const std::uint32_t ext =
            std::max<std::uint32_t>(4, l / 12) +
            static_cast<std::uint32_t>(ls.index(std::max<std::uint32_t>(2, l / 8)));
        if (ext + 2 >= l) continue;
        bool placed = false;
        for (int attempt = 0; attempt < 20 && !placed; ++attempt) {
          const std::uint32_t start = 1 + static_cast<std::uint32_t>(ls.index(l - ext - 1));
          bool clash = false;
          for (const auto& other : sp.lesions) {
            const std::uint32_t gap = 2;
            if (start < other.end_frame() + gap && other.first_frame() < start + ext + gap)
              clash = true;
          }
          if (clash) continue;
          LesionSpec les;
          les.extent = ext;
          les.center_frame = start + ext / 2;
          les.narrowing_fraction = ls.uniform(0.35, 0.8);
          les.calcified = ls.real64() < 0.6;
          sp.lesions.push_back(les);
          placed = true;
        }
      }
      // The draw above always lands the subject's first lesion (an empty
      // vessel can't clash), so every abnormal subject has a nonzero mask.
    }

    for (std::size_t v = 0; v < n_vessels; ++v) {
      const RawVesselVolume vol = generate_vessel(specs[v]);
      ManifestEntry e;
      e.vessel_id = vol.vessel_id;
      e.subject_id = vol.subject_id;
      e.volume_path = "volumes/" + vol.vessel_id + ".v3d";
      e.mask_path = "masks/" + vol.vessel_id + ".v3d";
      e.label = vol.label;
      write_v3d_u16(out_dir / e.volume_path, w, h, l, vol.intensities);
      write_v3d_u8(out_dir / e.mask_path, w, h, l, vol.mask);
      m.entries.push_back(std::move(e));
    }
  }

  save_manifest(m, out_dir / "manifest.json");
  return m;
}

}  // namespace vscreen
