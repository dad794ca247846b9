#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rit/numerics/layers.hpp"
#include "rit/numerics/tensor.hpp"

// Weight container layout, all integers little-endian:
//
//   "RITW"                      4 bytes magic
//   version                     u32 (currently 1)
//   entry count                 u32
//   per entry:
//     name length               u16
//     name                      UTF-8 bytes, no terminator
//     dtype                     u8 (0 = f32, 1 = f64)
//     rank                      u8
//     extents                   u64[rank]
//     data                      product(extents) little-endian values

namespace rit::nn {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

inline constexpr std::uint32_t kWeightFormatVersion = 1;

struct WeightEntry {
  std::string name;
  DType dtype = DType::f64;
  Tensor tensor;
};

std::vector<std::uint8_t> encode_weights(std::span<const WeightEntry> entries);
/// Throws ParseError on bad magic, unknown version or dtype, or truncation.
std::vector<WeightEntry> decode_weights(std::span<const std::uint8_t> bytes);

void write_weights(const std::filesystem::path& path, std::span<const WeightEntry> entries);
std::vector<WeightEntry> read_weights(const std::filesystem::path& path);

/// Parameters followed by buffers, under their canonical names.
std::vector<WeightEntry> snapshot(const ParameterSet& set, DType dtype = DType::f64);
/// Copies matching entries into the set. Every parameter and buffer in the
/// set must be present with the same shape; extra entries are ignored.
void restore(const ParameterSet& set, std::span<const WeightEntry> entries);

}  // namespace rit::nn
