#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "impnet/tensor.hpp"

// Flat binary tensor format:
//   "IMPT" | u32 version | u32 dtype tag | u32 channels | u32 height | u32 width | values
// All integers and values are little-endian.
namespace impnet {

inline constexpr std::uint32_t kTensorFormatVersion = 1;

enum class DType : std::uint32_t { f64 = 1, f32 = 2 };

void write_tensor(std::ostream& os, const Tensor& t);
void write_tensor(std::ostream& os, const TensorF& t);

// Reads either dtype; 32-bit payloads are widened.
Tensor read_tensor(std::istream& is);
TensorF read_tensor_f32(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace impnet
