#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "phaseforge/tensor.hpp"

namespace phaseforge::io {

namespace fs = std::filesystem;

/// Whole-file read; IoError naming the path on failure.
std::string read_file(const fs::path& path);
/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const fs::path& path, const std::string& bytes);

/// FNV-1a 64 digest as 16 lowercase hex digits (provenance tags, not security).
std::string fnv1a_hex(std::string_view bytes);

/// A decoded NPY v1.0 array. Supported dtypes: <f8, <f4, <u2.
struct NpyArray {
  std::string descr;
  Shape shape;
  std::vector<double> values;  // every dtype widened to double

  Tensor to_tensor() const;
  std::vector<std::uint16_t> to_u16() const;
};

std::string encode_npy(const Tensor& t);  // always <f8
std::string encode_npy_u16(const Shape& shape, const std::vector<std::uint16_t>& data);
NpyArray decode_npy(const std::string& bytes);

void save_npy(const fs::path& path, const Tensor& t);
void save_npy_u16(const fs::path& path, const Shape& shape, const std::vector<std::uint16_t>& data);
NpyArray load_npy(const fs::path& path);

/// Netpbm P2/P3/P5/P6 reader. Colour images are reduced with luminance weights
/// 0.299/0.587/0.114. Values are returned in [0, maxval] as an (H, W) tensor.
Tensor load_netpbm(const fs::path& path);
/// 8-bit binary PGM (P5) of an (H, W) tensor already in [0, 255].
std::string encode_pgm(const Tensor& image);

}  // namespace phaseforge::io
