#pragma once

#include "impnet/tensor.hpp"

namespace impnet {

// Two channels (dx, dy) in feature-grid pixels. Backward semantics: the value at
// target position p is read from reference position p + flow(p).
using FlowField = Tensor;
// One channel of position-wise multipliers broadcast over feature channels.
using ScaleMap = Tensor;

template <typename T>
BasicTensor<T> bilinear_warp(const BasicTensor<T>& feature, const BasicTensor<T>& flow,
                             const BasicTensor<T>& scale);

struct WarpGradients {
  Tensor feature;
  FlowField flow;
  ScaleMap scale;
};

WarpGradients bilinear_warp_backward(const Tensor& feature, const FlowField& flow,
                                     const ScaleMap& scale, const Tensor& upstream);

FlowField translation_flow(double dx, double dy, std::size_t height, std::size_t width);

ScaleMap unit_scale(std::size_t height, std::size_t width);

namespace reference {

template <typename T>
BasicTensor<T> bilinear_warp(const BasicTensor<T>& feature, const BasicTensor<T>& flow,
                             const BasicTensor<T>& scale);

}  // namespace reference

}  // namespace impnet
