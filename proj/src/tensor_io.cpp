#include "impnet/tensor_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace impnet {
namespace {

constexpr std::array<char, 4> kMagic{'I', 'M', 'P', 'T'};

template <typename U>
U byteswap_if_needed(U v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::array<unsigned char, sizeof(U)> bytes;
    std::memcpy(bytes.data(), &v, sizeof(U));
    std::reverse(bytes.begin(), bytes.end());
    std::memcpy(&v, bytes.data(), sizeof(U));
    return v;
  }
}

void put_u32(std::ostream& os, std::uint32_t v) {
  v = byteswap_if_needed(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw ValidationError("tensor stream truncated");
  return byteswap_if_needed(v);
}

template <typename T>
void write_impl(std::ostream& os, const BasicTensor<T>& t, DType tag) {
  os.write(kMagic.data(), kMagic.size());
  put_u32(os, kTensorFormatVersion);
  put_u32(os, static_cast<std::uint32_t>(tag));
  put_u32(os, static_cast<std::uint32_t>(t.channels()));
  put_u32(os, static_cast<std::uint32_t>(t.height()));
  put_u32(os, static_cast<std::uint32_t>(t.width()));
  for (T v : t.data()) {
    v = byteswap_if_needed(v);
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  if (!os) throw std::runtime_error("failed to write tensor");
}

struct Header {
  DType dtype;
  Shape shape;
};

Header read_header(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
    throw ValidationError("not an IMPT tensor stream");
  }
  const std::uint32_t version = get_u32(is);
  if (version != kTensorFormatVersion) {
    throw ValidationError("unsupported tensor format version " + std::to_string(version));
  }
  const std::uint32_t tag = get_u32(is);
  if (tag != static_cast<std::uint32_t>(DType::f64) && tag != static_cast<std::uint32_t>(DType::f32)) {
    throw ValidationError("unknown dtype tag " + std::to_string(tag));
  }
  Shape s;
  s.channels = get_u32(is);
  s.height = get_u32(is);
  s.width = get_u32(is);
  return {static_cast<DType>(tag), s};
}

template <typename Stored, typename Out>
BasicTensor<Out> read_values(std::istream& is, const Shape& shape) {
  std::vector<Out> data(shape.size());
  for (auto& v : data) {
    Stored raw{};
    if (!is.read(reinterpret_cast<char*>(&raw), sizeof raw)) throw ValidationError("tensor payload truncated");
    v = static_cast<Out>(byteswap_if_needed(raw));
  }
  return BasicTensor<Out>(shape, std::move(data));
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) { write_impl(os, t, DType::f64); }
void write_tensor(std::ostream& os, const TensorF& t) { write_impl(os, t, DType::f32); }

Tensor read_tensor(std::istream& is) {
  const Header h = read_header(is);
  if (h.dtype == DType::f64) return read_values<double, double>(is, h.shape);
  return read_values<float, double>(is, h.shape);
}

TensorF read_tensor_f32(std::istream& is) {
  const Header h = read_header(is);
  if (h.dtype == DType::f32) return read_values<float, float>(is, h.shape);
  return read_values<double, float>(is, h.shape);
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open " + path.string());
  return read_tensor(is);
}

}  // namespace impnet
