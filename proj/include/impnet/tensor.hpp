#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace impnet {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// (channels, height, width); data is channel-major, row-major within a channel.
struct Shape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t plane() const { return height * width; }
  std::size_t size() const { return channels * height * width; }
  bool spatially_matches(const Shape& other) const {
    return height == other.height && width == other.width;
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{0})
      : shape_(shape), data_(shape.size(), fill) {}
  BasicTensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape_));
    }
  }
  BasicTensor(std::size_t c, std::size_t h, std::size_t w, T fill = T{0})
      : BasicTensor(Shape{c, h, w}, fill) {}

  const Shape& shape() const { return shape_; }
  std::size_t channels() const { return shape_.channels; }
  std::size_t height() const { return shape_.height; }
  std::size_t width() const { return shape_.width; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_.height + y) * shape_.width + x];
  }
  const T& operator()(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_.height + y) * shape_.width + x];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& values() const { return data_; }

  std::span<T> channel(std::size_t c) {
    return std::span<T>(data_).subspan(c * shape_.plane(), shape_.plane());
  }
  std::span<const T> channel(std::size_t c) const {
    return std::span<const T>(data_).subspan(c * shape_.plane(), shape_.plane());
  }

  bool all_finite() const {
    for (const T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  Shape shape_{};
  std::vector<T> data_;
};

using Tensor = BasicTensor<double>;
using TensorF = BasicTensor<float>;

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t padding = 0;
};

// Convolution weights laid out as (out_channels, in_channels, kh, kw).
template <typename T>
struct BasicKernelBank {
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  std::size_t kh = 1;
  std::size_t kw = 1;
  ConvGeometry geometry{};
  std::vector<T> weights;

  BasicKernelBank() = default;
  BasicKernelBank(std::size_t out, std::size_t in, std::size_t kh_, std::size_t kw_,
                  ConvGeometry geom = {})
      : out_channels(out), in_channels(in), kh(kh_), kw(kw_), geometry(geom),
        weights(out * in * kh_ * kw_, T{0}) {}

  std::size_t size() const { return out_channels * in_channels * kh * kw; }
  T& at(std::size_t o, std::size_t i, std::size_t y, std::size_t x) {
    return weights[((o * in_channels + i) * kh + y) * kw + x];
  }
  const T& at(std::size_t o, std::size_t i, std::size_t y, std::size_t x) const {
    return weights[((o * in_channels + i) * kh + y) * kw + x];
  }

  void validate() const {
    if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("kernel extents must be odd");
    if (geometry.stride < 1 || geometry.dilation < 1) {
      throw ShapeError("stride and dilation must be at least 1");
    }
    if (weights.size() != size()) throw ShapeError("kernel bank weight count mismatch");
  }

  template <typename U>
  BasicKernelBank<U> cast() const {
    BasicKernelBank<U> out(out_channels, in_channels, kh, kw, geometry);
    for (std::size_t i = 0; i < weights.size(); ++i) out.weights[i] = static_cast<U>(weights[i]);
    return out;
  }
};

using KernelBank = BasicKernelBank<double>;
using KernelBankF = BasicKernelBank<float>;

}  // namespace impnet
