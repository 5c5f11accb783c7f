#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace advlab {

/// Decoded NPY v1/v2 array. Exactly one payload vector is populated,
/// according to descr.
struct NpyArray {
  std::string descr;  // "|u1", "<f4", "<i4" or "<i8"
  std::vector<int> shape;
  std::vector<std::uint8_t> u8;
  std::vector<float> f32;
  std::vector<std::int64_t> i64;

  std::int64_t numel() const;
};

/// Parses a .npy file. Little-endian (or byte-size-1) dtypes only,
/// C-contiguous only; anything else is rejected with the header echoed.
NpyArray load_npy(const std::string& path);

}  // namespace advlab
