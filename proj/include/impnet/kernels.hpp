#pragma once

#include <span>

#include "impnet/tensor.hpp"

// Data-parallel numerical kernels. The default entry points are OpenMP-parallel
// over output channels or positions; every output element is produced by a single
// thread with a fixed accumulation order, so results are identical for any thread
// count. Serial, loop-for-loop reference versions live in impnet::reference and are
// kept for tests and benchmarks.
namespace impnet {

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, const ConvGeometry& g);

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicKernelBank<T>& kernels,
                      std::span<const T> bias);

template <typename T>
struct ConvGradients {
  BasicTensor<T> input;
  std::vector<T> weights;
  std::vector<T> bias;
};

// Parts that are not requested are left zero.
template <typename T>
ConvGradients<T> conv2d_backward(const BasicTensor<T>& input, const BasicKernelBank<T>& kernels,
                                 const BasicTensor<T>& upstream, bool need_input = true,
                                 bool need_params = true);

// a * x + y
template <typename T>
BasicTensor<T> axpy(T a, const BasicTensor<T>& x, const BasicTensor<T>& y);

// Elementwise product; `y` may also be a single-channel map broadcast over x's channels.
template <typename T>
BasicTensor<T> hadamard(const BasicTensor<T>& x, const BasicTensor<T>& y);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);

// Gradient of relu given its *output* (zero where the output is zero).
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& output, const BasicTensor<T>& upstream);

// Stacks channels of a on top of channels of b.
template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, std::size_t first, std::size_t count);

double mean(const Tensor& x);

namespace reference {

// Direct O(C_out * C_in * H * W * kh * kw) summation, one output at a time.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicKernelBank<T>& kernels,
                      std::span<const T> bias);

}  // namespace reference

}  // namespace impnet
