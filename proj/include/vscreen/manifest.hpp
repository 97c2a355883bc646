#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "vscreen/errors.hpp"
#include "vscreen/io_util.hpp"
#include "vscreen/v3d.hpp"
#include "vscreen/volume.hpp"

namespace vscreen {

struct ManifestEntry {
  std::string vessel_id;
  std::string subject_id;
  std::string volume_path;  // relative to the manifest's directory
  std::string mask_path;    // empty when absent
  VesselLabel label = VesselLabel::normal;
};

struct Manifest {
  std::array<std::uint32_t, 3> dims{0, 0, 0};
  std::uint64_t seed = 0;
  std::uint32_t generator_version = 1;
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;  // set on load; not serialized

  std::filesystem::path resolve(const std::string& rel) const { return base_dir / rel; }

  std::vector<std::string> subject_ids() const {
    std::set<std::string> s;
    for (const auto& e : entries) s.insert(e.subject_id);
    return {s.begin(), s.end()};
  }

  std::size_t count_label(VesselLabel l) const {
    return static_cast<std::size_t>(
        std::count_if(entries.begin(), entries.end(),
                      [&](const ManifestEntry& e) { return e.label == l; }));
  }
};

inline void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  nlohmann::json j;
  j["dims"] = m.dims;
  j["seed"] = m.seed;
  j["generator_version"] = m.generator_version;
  j["entries"] = nlohmann::json::array();
  for (const auto& e : m.entries) {
    nlohmann::json je;
    je["vessel_id"] = e.vessel_id;
    je["subject_id"] = e.subject_id;
    je["volume_path"] = e.volume_path;
    if (!e.mask_path.empty()) je["mask_path"] = e.mask_path;
    je["label"] = to_string(e.label);
    j["entries"].push_back(je);
  }
  atomic_write_text(path, j.dump(2) + "\n");
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  Manifest m;
  m.base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  try {
    m.dims = j.at("dims").get<std::array<std::uint32_t, 3>>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.generator_version = j.at("generator_version").get<std::uint32_t>();
    std::set<std::string> seen;
    for (const auto& je : j.at("entries")) {
      ManifestEntry e;
      e.vessel_id = je.at("vessel_id").get<std::string>();
      e.subject_id = je.at("subject_id").get<std::string>();
      e.volume_path = je.at("volume_path").get<std::string>();
      if (je.contains("mask_path")) e.mask_path = je.at("mask_path").get<std::string>();
      e.label = label_from_string(je.at("label").get<std::string>());
      if (!seen.insert(e.vessel_id).second)
        throw FormatError(path.string() + ": duplicate vessel_id '" + e.vessel_id + "'");
      m.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  for (const auto& e : m.entries) {
    if (!std::filesystem::exists(m.resolve(e.volume_path)))
      throw FormatError(path.string() + ": missing volume file " + e.volume_path);
    if (!e.mask_path.empty() && !std::filesystem::exists(m.resolve(e.mask_path)))
      throw FormatError(path.string() + ": missing mask file " + e.mask_path);
  }
  return m;
}

// Loads a manifest entry's voxel data into a RawVesselVolume.
inline RawVesselVolume load_raw_volume(const Manifest& m, const ManifestEntry& e) {
  const V3dData v = read_v3d(m.resolve(e.volume_path));
  if (v.dtype != V3dType::raw_u16)
    throw FormatError(e.volume_path + ": expected raw u16 volume");
  RawVesselVolume r;
  r.width = v.width;
  r.height = v.height;
  r.length = v.length;
  r.intensities = v.raw;
  r.subject_id = e.subject_id;
  r.vessel_id = e.vessel_id;
  r.label = e.label;
  if (!e.mask_path.empty()) {
    const V3dData mk = read_v3d(m.resolve(e.mask_path));
    if (mk.dtype != V3dType::mask_u8)
      throw FormatError(e.mask_path + ": expected u8 mask volume");
    if (mk.width != v.width || mk.height != v.height || mk.length != v.length)
      throw FormatError(e.mask_path + ": mask dims differ from volume dims");
    r.mask = mk.mask;
  }
  r.validate();
  return r;
}

}  // namespace vscreen
