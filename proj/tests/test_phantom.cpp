#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <map>
#include <set>

#include "vscreen/io_util.hpp"
#include "vscreen/phantom.hpp"

using namespace vscreen;

namespace {

PhantomSpec base_spec(std::uint64_t seed) {
  PhantomSpec s;
  s.width = 21;
  s.height = 21;
  s.length = 48;
  s.seed = seed;
  s.lumen_radius_profile.assign(48, 5.5);
  return s;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("vscreen_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("lesion-free phantom is labeled normal with an empty mask", "[phantom]") {
  const auto v = generate_vessel(base_spec(1));
  CHECK(v.label == VesselLabel::normal);
  for (auto m : v.mask) CHECK(m == kMaskBackground);
}

TEST_CASE("severe lesion marks mask voxels exactly within its frames", "[phantom]") {
  auto spec = base_spec(2);
  LesionSpec les;
  les.center_frame = 24;
  les.extent = 10;
  les.narrowing_fraction = 0.7;
  spec.lesions.push_back(les);
  const auto v = generate_vessel(spec);
  CHECK(v.label == VesselLabel::abnormal);
  const std::size_t frame = 21 * 21;
  std::set<std::uint32_t> frames_with_mask;
  for (std::uint32_t t = 0; t < v.length; ++t)
    for (std::size_t i = 0; i < frame; ++i) {
      const auto m = v.mask[t * frame + i];
      if (m != kMaskBackground) {
        CHECK(m == kMaskSevere);
        frames_with_mask.insert(t);
      }
    }
  CHECK(*frames_with_mask.begin() == les.first_frame());
  CHECK(*frames_with_mask.rbegin() == les.end_frame() - 1);
  CHECK(frames_with_mask.size() == les.extent);
}

TEST_CASE("same spec and seed render bitwise identical volumes", "[phantom]") {
  auto spec = base_spec(3);
  LesionSpec les;
  les.center_frame = 12;
  les.extent = 8;
  les.narrowing_fraction = 0.4;
  les.calcified = true;
  spec.lesions.push_back(les);
  const auto a = generate_vessel(spec);
  const auto b = generate_vessel(spec);
  CHECK(a.intensities == b.intensities);
  CHECK(a.mask == b.mask);
}

TEST_CASE("generated intensities stay within the 12-bit range", "[phantom]") {
  auto spec = base_spec(4);
  spec.calcification_intensity = 4000.0;
  spec.noise_sigma = 200.0;
  LesionSpec les;
  les.center_frame = 20;
  les.extent = 12;
  les.narrowing_fraction = 0.6;
  les.calcified = true;
  spec.lesions.push_back(les);
  const auto v = generate_vessel(spec);
  for (auto x : v.intensities) CHECK(x <= 4095);
}

TEST_CASE("lumen mean exceeds background mean by at least 300", "[phantom]") {
  auto spec = base_spec(5);
  const auto v = generate_vessel(spec);
  const double cx = 10.0, cy = 10.0;
  double lum = 0.0, bg = 0.0;
  std::size_t nl = 0, nb = 0;
  for (std::uint32_t t = 0; t < v.length; ++t) {
    const double r = spec.lumen_radius_profile[t];
    for (std::uint32_t y = 0; y < 21; ++y)
      for (std::uint32_t x = 0; x < 21; ++x) {
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        const double val = v.intensities[(static_cast<std::size_t>(t) * 21 + y) * 21 + x];
        if (d2 <= r * r) {
          lum += val;
          ++nl;
        } else if (d2 > (r + spec.wall_thickness) * (r + spec.wall_thickness)) {
          bg += val;
          ++nb;
        }
      }
  }
  CHECK(lum / static_cast<double>(nl) - bg / static_cast<double>(nb) >= 300.0);
}

TEST_CASE("overlapping lesions that close the lumen are rejected", "[phantom]") {
  auto spec = base_spec(6);
  for (int i = 0; i < 2; ++i) {
    LesionSpec les;
    les.center_frame = 20;
    les.extent = 10;
    les.narrowing_fraction = 0.6;
    spec.lesions.push_back(les);
  }
  CHECK_THROWS_AS(generate_vessel(spec), ValueError);
}

TEST_CASE("dataset honours the abnormal fraction exactly on round cases", "[phantom]") {
  const auto dir = temp_dir("ds10");
  const Manifest m = generate_dataset(10, 0.5, {9, 9, 16}, 7, dir);
  std::map<std::string, bool> abnormal;
  for (const auto& e : m.entries) abnormal[e.subject_id] |= e.label == VesselLabel::abnormal;
  std::size_t n_abn = 0;
  for (const auto& [sid, ab] : abnormal) n_abn += ab ? 1 : 0;
  CHECK(abnormal.size() == 10);
  CHECK(n_abn == 5);
}

TEST_CASE("cohort-sized dataset reproduces the 247/246 split", "[phantom]") {
  const auto dir = temp_dir("ds493");
  const Manifest m = generate_dataset(493, 0.501, {9, 9, 16}, 11, dir);
  std::map<std::string, bool> abnormal;
  for (const auto& e : m.entries) abnormal[e.subject_id] |= e.label == VesselLabel::abnormal;
  std::size_t n_abn = 0;
  for (const auto& [sid, ab] : abnormal) n_abn += ab ? 1 : 0;
  CHECK(abnormal.size() == 493);
  CHECK(n_abn == 247);
}

TEST_CASE("labels match mask emptiness across the dataset", "[phantom]") {
  const auto dir = temp_dir("dslabels");
  const Manifest m = generate_dataset(12, 0.5, {9, 9, 16}, 13, dir);
  std::map<std::string, bool> has_abnormal_vessel;
  for (const auto& e : m.entries) {
    const auto mask = read_v3d(m.resolve(e.mask_path));
    bool nonzero = false;
    for (auto v : mask.mask) nonzero = nonzero || v != 0;
    CHECK((e.label == VesselLabel::abnormal) == nonzero);
    has_abnormal_vessel[e.subject_id] =
        has_abnormal_vessel[e.subject_id] || e.label == VesselLabel::abnormal;
  }
  // abnormal fraction of 0.5 on 12 subjects -> 6 subjects with >= 1 lesion
  std::size_t n = 0;
  for (const auto& [sid, ab] : has_abnormal_vessel) n += ab ? 1 : 0;
  CHECK(n == 6);
}

TEST_CASE("vessels partition into subjects with unique ids", "[phantom]") {
  const auto dir = temp_dir("dspart");
  const Manifest m = generate_dataset(11, 0.4, {9, 9, 16}, 17, dir);
  std::set<std::string> vessel_ids;
  for (const auto& e : m.entries) {
    CHECK(vessel_ids.insert(e.vessel_id).second);
    CHECK(e.vessel_id.rfind(e.subject_id + "_", 0) == 0);
  }
}

TEST_CASE("dataset generation is byte-identical across runs", "[phantom]") {
  const auto dir_a = temp_dir("dsdet_a");
  const auto dir_b = temp_dir("dsdet_b");
  const Manifest ma = generate_dataset(10, 0.5, {9, 9, 16}, 23, dir_a);
  const Manifest mb = generate_dataset(10, 0.5, {9, 9, 16}, 23, dir_b);
  REQUIRE(ma.entries.size() == mb.entries.size());
  CHECK(read_file_bytes(dir_a / "manifest.json") == read_file_bytes(dir_b / "manifest.json"));
  for (std::size_t i = 0; i < ma.entries.size(); ++i) {
    CHECK(read_file_bytes(ma.resolve(ma.entries[i].volume_path)) ==
          read_file_bytes(mb.resolve(mb.entries[i].volume_path)));
    CHECK(read_file_bytes(ma.resolve(ma.entries[i].mask_path)) ==
          read_file_bytes(mb.resolve(mb.entries[i].mask_path)));
  }
}

TEST_CASE("dataset preconditions", "[phantom]") {
  const auto dir = temp_dir("dspre");
  CHECK_THROWS_AS(generate_dataset(9, 0.5, {9, 9, 16}, 1, dir), DataError);
  CHECK_THROWS_AS(generate_dataset(10, 0.0, {9, 9, 16}, 1, dir), ValueError);
  CHECK_THROWS_AS(generate_dataset(10, 1.0, {9, 9, 16}, 1, dir), ValueError);
}
