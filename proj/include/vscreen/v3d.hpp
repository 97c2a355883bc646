#pragma once

// V3D volume container.
//
//   magic   "V3D1" (4 bytes)
//   dtype   u8: 0 = unsigned 16-bit raw intensities, 1 = 32-bit float,
//               2 = unsigned 8-bit mask labels
//   dims    W, H, L as u32 little-endian
//   payload W*H*L voxels, W-fastest order, little-endian
//   check   u64 little-endian payload byte count

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vscreen/errors.hpp"
#include "vscreen/io_util.hpp"

namespace vscreen {

enum class V3dType : std::uint8_t { raw_u16 = 0, real_f32 = 1, mask_u8 = 2 };

struct V3dData {
  V3dType dtype = V3dType::raw_u16;
  std::uint32_t width = 0, height = 0, length = 0;
  std::vector<std::uint16_t> raw;
  std::vector<float> real;
  std::vector<std::uint8_t> mask;

  std::size_t numel() const {
    return static_cast<std::size_t>(width) * height * length;
  }
};

namespace detail {

inline std::vector<std::uint8_t> v3d_header(V3dType dtype, std::uint32_t w, std::uint32_t h,
                                            std::uint32_t l) {
  std::vector<std::uint8_t> b;
  b.insert(b.end(), {'V', '3', 'D', '1'});
  b.push_back(static_cast<std::uint8_t>(dtype));
  put_u32(b, w);
  put_u32(b, h);
  put_u32(b, l);
  return b;
}

}  // namespace detail

inline void write_v3d_u16(const std::filesystem::path& path, std::uint32_t w, std::uint32_t h,
                          std::uint32_t l, const std::vector<std::uint16_t>& voxels) {
  if (voxels.size() != static_cast<std::size_t>(w) * h * l)
    throw ShapeError("write_v3d_u16: payload does not match dims");
  auto b = detail::v3d_header(V3dType::raw_u16, w, h, l);
  for (std::uint16_t v : voxels) put_u16(b, v);
  put_u64(b, static_cast<std::uint64_t>(voxels.size()) * 2);
  atomic_write_bytes(path, b);
}

inline void write_v3d_f32(const std::filesystem::path& path, std::uint32_t w, std::uint32_t h,
                          std::uint32_t l, const std::vector<float>& voxels) {
  if (voxels.size() != static_cast<std::size_t>(w) * h * l)
    throw ShapeError("write_v3d_f32: payload does not match dims");
  auto b = detail::v3d_header(V3dType::real_f32, w, h, l);
  for (float v : voxels) put_f32(b, v);
  put_u64(b, static_cast<std::uint64_t>(voxels.size()) * 4);
  atomic_write_bytes(path, b);
}

inline void write_v3d_u8(const std::filesystem::path& path, std::uint32_t w, std::uint32_t h,
                         std::uint32_t l, const std::vector<std::uint8_t>& voxels) {
  if (voxels.size() != static_cast<std::size_t>(w) * h * l)
    throw ShapeError("write_v3d_u8: payload does not match dims");
  auto b = detail::v3d_header(V3dType::mask_u8, w, h, l);
  b.insert(b.end(), voxels.begin(), voxels.end());
  put_u64(b, static_cast<std::uint64_t>(voxels.size()));
  atomic_write_bytes(path, b);
}

inline V3dData read_v3d(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  ByteReader r(bytes.data(), bytes.size());
  const std::uint8_t* magic = r.take(4);
  if (!(magic[0] == 'V' && magic[1] == '3' && magic[2] == 'D' && magic[3] == '1'))
    throw FormatError(path.string() + ": bad V3D magic");
  V3dData v;
  const std::uint8_t dt = r.u8();
  if (dt > 2) throw FormatError(path.string() + ": unknown V3D dtype " + std::to_string(dt));
  v.dtype = static_cast<V3dType>(dt);
  v.width = r.u32();
  v.height = r.u32();
  v.length = r.u32();
  const std::size_t n = v.numel();
  const std::size_t elem = v.dtype == V3dType::raw_u16 ? 2 : v.dtype == V3dType::real_f32 ? 4 : 1;
  const std::uint64_t expect = static_cast<std::uint64_t>(n) * elem;
  if (r.remaining() != expect + 8)
    throw FormatError(path.string() + ": payload length mismatch");
  switch (v.dtype) {
    case V3dType::raw_u16:
      v.raw.resize(n);
      for (std::size_t i = 0; i < n; ++i) v.raw[i] = r.u16();
      break;
    case V3dType::real_f32:
      v.real.resize(n);
      for (std::size_t i = 0; i < n; ++i) v.real[i] = r.f32();
      break;
    case V3dType::mask_u8: {
      const std::uint8_t* p = r.take(n);
      v.mask.assign(p, p + n);
      break;
    }
  }
  if (r.u64() != expect)
    throw FormatError(path.string() + ": trailing byte-count check failed");
  return v;
}

}  // namespace vscreen
