#include "impnet/kernels.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>

namespace impnet {

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.channels) + ", " + std::to_string(s.height) + ", " +
         std::to_string(s.width) + ")";
}

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, const ConvGeometry& g) {
  const std::size_t span = g.dilation * (kernel - 1) + 1;
  const std::size_t padded = in + 2 * g.padding;
  if (padded < span) return 0;
  return (padded - span) / g.stride + 1;
}

namespace {

template <typename T>
Shape checked_conv_shape(const BasicTensor<T>& input, const BasicKernelBank<T>& kernels,
                         std::size_t bias_size) {
  kernels.validate();
  if (input.channels() != kernels.in_channels) {
    throw ShapeError("conv2d: input has " + std::to_string(input.channels()) +
                     " channels, kernels expect " + std::to_string(kernels.in_channels));
  }
  if (bias_size != kernels.out_channels) throw ShapeError("conv2d: bias length mismatch");
  const std::size_t oh = conv_output_extent(input.height(), kernels.kh, kernels.geometry);
  const std::size_t ow = conv_output_extent(input.width(), kernels.kw, kernels.geometry);
  if (oh == 0 || ow == 0) throw ShapeError("conv2d: zero-size output for input " + to_string(input.shape()));
  return {kernels.out_channels, oh, ow};
}

// Output positions are processed in tiles of this many columns so that the patch rows of
// one tile stay cache resident.
constexpr std::ptrdiff_t kTile = 256;

template <typename T>
inline void row_axpy(T* __restrict out, const T* __restrict in, T w, std::ptrdiff_t n) {
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] += w * in[i];
}

// Eight interleaved partial sums combined in a fixed order: vectorizable and still
// independent of the thread count.
template <typename T>
inline T row_dot(const T* __restrict a, const T* __restrict b, std::ptrdiff_t n) {
  constexpr std::ptrdiff_t lanes = 8;
  T acc[lanes] = {};
  std::ptrdiff_t i = 0;
  for (; i + lanes <= n; i += lanes) {
    for (std::ptrdiff_t j = 0; j < lanes; ++j) acc[j] += a[i + j] * b[i + j];
  }
  for (; i < n; ++i) acc[0] += a[i] * b[i];
  T total = T{0};
  for (std::ptrdiff_t j = 0; j < lanes; ++j) total += acc[j];
  return total;
}

// Patch matrix: row (ic, ky, kx) holds the input value seen by that tap at every output
// position, zero where the tap falls into padding.
struct ConvDims {
  std::ptrdiff_t H, W, OH, OW, s, d, p, KH, KW, OC, IC;
  std::ptrdiff_t taps() const { return IC * KH * KW; }
  std::ptrdiff_t positions() const { return OH * OW; }
};

template <typename T>
ConvDims dims_of(const BasicTensor<T>& input, const BasicKernelBank<T>& kernels, const Shape& out) {
  return {static_cast<std::ptrdiff_t>(input.height()),      static_cast<std::ptrdiff_t>(input.width()),
          static_cast<std::ptrdiff_t>(out.height),          static_cast<std::ptrdiff_t>(out.width),
          static_cast<std::ptrdiff_t>(kernels.geometry.stride),
          static_cast<std::ptrdiff_t>(kernels.geometry.dilation),
          static_cast<std::ptrdiff_t>(kernels.geometry.padding),
          static_cast<std::ptrdiff_t>(kernels.kh),          static_cast<std::ptrdiff_t>(kernels.kw),
          static_cast<std::ptrdiff_t>(kernels.out_channels), static_cast<std::ptrdiff_t>(kernels.in_channels)};
}

template <typename T>
std::vector<T> im2col(const T* in, const ConvDims& c) {
  const std::ptrdiff_t N = c.positions();
  std::vector<T> cols(static_cast<std::size_t>(c.taps() * N), T{0});
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t k = 0; k < c.taps(); ++k) {
    const std::ptrdiff_t ic = k / (c.KH * c.KW);
    const std::ptrdiff_t ky = (k / c.KW) % c.KH;
    const std::ptrdiff_t kx = k % c.KW;
    T* row = cols.data() + k * N;
    const T* src = in + ic * c.H * c.W;
    for (std::ptrdiff_t oy = 0; oy < c.OH; ++oy) {
      const std::ptrdiff_t iy = oy * c.s - c.p + ky * c.d;
      if (iy < 0 || iy >= c.H) continue;
      for (std::ptrdiff_t ox = 0; ox < c.OW; ++ox) {
        const std::ptrdiff_t ix = ox * c.s - c.p + kx * c.d;
        if (ix >= 0 && ix < c.W) row[oy * c.OW + ox] = src[iy * c.W + ix];
      }
    }
  }
  return cols;
}

constexpr std::ptrdiff_t kBlockC = 4;
constexpr std::ptrdiff_t kBlockN = 8;

// out[oc .. oc+BC)[n .. n+BN) = bias + sum_k w[oc][k] * cols[k][n], accumulated in registers.
template <typename T, std::ptrdiff_t BC, std::ptrdiff_t BN>
inline void micro_kernel(T* __restrict out, const T* __restrict cols, const T* __restrict w,
                         const T* __restrict bias, std::ptrdiff_t oc, std::ptrdiff_t n, std::ptrdiff_t N,
                         std::ptrdiff_t K) {
  T acc[BC][BN];
  for (std::ptrdiff_t j = 0; j < BC; ++j) {
    for (std::ptrdiff_t i = 0; i < BN; ++i) acc[j][i] = bias[oc + j];
  }
  for (std::ptrdiff_t k = 0; k < K; ++k) {
    const T* col = cols + k * N + n;
    for (std::ptrdiff_t j = 0; j < BC; ++j) {
      const T wk = w[(oc + j) * K + k];
      for (std::ptrdiff_t i = 0; i < BN; ++i) acc[j][i] += wk * col[i];
    }
  }
  for (std::ptrdiff_t j = 0; j < BC; ++j) {
    for (std::ptrdiff_t i = 0; i < BN; ++i) out[(oc + j) * N + n + i] = acc[j][i];
  }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicKernelBank<T>& kernels,
                      std::span<const T> bias) {
  const Shape out_shape = checked_conv_shape(input, kernels, bias.size());
  const ConvDims c = dims_of(input, kernels, out_shape);
  BasicTensor<T> out(out_shape);
  const std::vector<T> cols = im2col(input.data().data(), c);
  const std::ptrdiff_t N = c.positions();
  const std::ptrdiff_t K = c.taps();
  const std::ptrdiff_t tiles = (N + kTile - 1) / kTile;
  T* dst = out.data().data();

  // Each thread owns a range of output positions across all output channels; every
  // output starts from its bias and adds taps in ascending order regardless of blocking
  // or thread count.
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t t = 0; t < tiles; ++t) {
    const std::ptrdiff_t n0 = t * kTile;
    const std::ptrdiff_t n1 = std::min(n0 + kTile, N);
    std::ptrdiff_t oc = 0;
    for (; oc + kBlockC <= c.OC; oc += kBlockC) {
      std::ptrdiff_t n = n0;
      for (; n + kBlockN <= n1; n += kBlockN) {
        micro_kernel<T, kBlockC, kBlockN>(dst, cols.data(), kernels.weights.data(), bias.data(), oc, n, N, K);
      }
      for (; n < n1; ++n) micro_kernel<T, kBlockC, 1>(dst, cols.data(), kernels.weights.data(), bias.data(), oc, n, N, K);
    }
    for (; oc < c.OC; ++oc) {
      std::ptrdiff_t n = n0;
      for (; n + kBlockN <= n1; n += kBlockN) {
        micro_kernel<T, 1, kBlockN>(dst, cols.data(), kernels.weights.data(), bias.data(), oc, n, N, K);
      }
      for (; n < n1; ++n) micro_kernel<T, 1, 1>(dst, cols.data(), kernels.weights.data(), bias.data(), oc, n, N, K);
    }
  }
  return out;
}

template <typename T>
ConvGradients<T> conv2d_backward(const BasicTensor<T>& input, const BasicKernelBank<T>& kernels,
                                 const BasicTensor<T>& upstream, bool need_input, bool need_params) {
  const Shape out_shape = checked_conv_shape(input, kernels, kernels.out_channels);
  if (upstream.shape() != out_shape) throw ShapeError("conv2d_backward: upstream shape mismatch");
  const ConvDims c = dims_of(input, kernels, out_shape);
  const std::ptrdiff_t N = c.positions();
  const std::ptrdiff_t K = c.taps();
  ConvGradients<T> g{BasicTensor<T>(input.shape()), std::vector<T>(kernels.size(), T{0}),
                     std::vector<T>(kernels.out_channels, T{0})};
  const T* up = upstream.data().data();

  if (need_params) {
    const std::vector<T> cols = im2col(input.data().data(), c);
    // Each thread owns whole output channels.
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t oc = 0; oc < c.OC; ++oc) {
      const T* urow = up + oc * N;
      T bias_sum = T{0};
      for (std::ptrdiff_t n = 0; n < N; ++n) bias_sum += urow[n];
      g.bias[static_cast<std::size_t>(oc)] = bias_sum;
      T* gw = g.weights.data() + oc * K;
      for (std::ptrdiff_t k = 0; k < K; ++k) gw[k] = row_dot(urow, cols.data() + k * N, N);
    }
  }

  if (need_input) {
    // Patch-matrix gradient, one tap row per thread, then scattered back per input channel.
    std::vector<T> gcols(static_cast<std::size_t>(K * N), T{0});
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t k = 0; k < K; ++k) {
      T* row = gcols.data() + k * N;
      for (std::ptrdiff_t oc = 0; oc < c.OC; ++oc) {
        row_axpy(row, up + oc * N, kernels.weights[static_cast<std::size_t>(oc * K + k)], N);
      }
    }
    T* gin = g.input.data().data();
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ic = 0; ic < c.IC; ++ic) {
      T* plane = gin + ic * c.H * c.W;
      for (std::ptrdiff_t ky = 0; ky < c.KH; ++ky) {
        for (std::ptrdiff_t kx = 0; kx < c.KW; ++kx) {
          const T* row = gcols.data() + ((ic * c.KH + ky) * c.KW + kx) * N;
          for (std::ptrdiff_t oy = 0; oy < c.OH; ++oy) {
            const std::ptrdiff_t iy = oy * c.s - c.p + ky * c.d;
            if (iy < 0 || iy >= c.H) continue;
            for (std::ptrdiff_t ox = 0; ox < c.OW; ++ox) {
              const std::ptrdiff_t ix = ox * c.s - c.p + kx * c.d;
              if (ix >= 0 && ix < c.W) plane[iy * c.W + ix] += row[oy * c.OW + ox];
            }
          }
        }
      }
    }
  }
  return g;
}

template <typename T>
BasicTensor<T> axpy(T a, const BasicTensor<T>& x, const BasicTensor<T>& y) {
  if (x.shape() != y.shape()) {
    throw ShapeError("axpy: shape mismatch " + to_string(x.shape()) + " vs " + to_string(y.shape()));
  }
  BasicTensor<T> out(x.shape());
  const auto n = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = a * x[i] + y[i];
  return out;
}

template <typename T>
BasicTensor<T> hadamard(const BasicTensor<T>& x, const BasicTensor<T>& y) {
  BasicTensor<T> out(x.shape());
  if (y.shape() == x.shape()) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
    return out;
  }
  if (y.channels() != 1 || !y.shape().spatially_matches(x.shape())) {
    throw ShapeError("hadamard: cannot broadcast " + to_string(y.shape()) + " over " +
                     to_string(x.shape()));
  }
  const std::size_t plane = x.shape().plane();
  const auto C = static_cast<std::ptrdiff_t>(x.channels());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < C; ++c) {
    const std::size_t base = static_cast<std::size_t>(c) * plane;
    for (std::size_t i = 0; i < plane; ++i) out[base + i] = x[base + i] * y[i];
  }
  return out;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
  return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& output, const BasicTensor<T>& upstream) {
  if (output.shape() != upstream.shape()) throw ShapeError("relu_backward: shape mismatch");
  BasicTensor<T> out(output.shape());
  for (std::size_t i = 0; i < output.size(); ++i) out[i] = output[i] > T{0} ? upstream[i] : T{0};
  return out;
}

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (!a.shape().spatially_matches(b.shape())) throw ShapeError("concat_channels: spatial mismatch");
  std::vector<T> data;
  data.reserve(a.size() + b.size());
  data.insert(data.end(), a.data().begin(), a.data().end());
  data.insert(data.end(), b.data().begin(), b.data().end());
  return BasicTensor<T>(Shape{a.channels() + b.channels(), a.height(), a.width()}, std::move(data));
}

template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, std::size_t first, std::size_t count) {
  if (first + count > x.channels()) throw ShapeError("slice_channels: out of range");
  const std::size_t plane = x.shape().plane();
  std::vector<T> data(x.data().begin() + static_cast<std::ptrdiff_t>(first * plane),
                      x.data().begin() + static_cast<std::ptrdiff_t>((first + count) * plane));
  return BasicTensor<T>(Shape{count, x.height(), x.width()}, std::move(data));
}

double mean(const Tensor& x) {
  if (x.empty()) return 0.0;
  return std::accumulate(x.data().begin(), x.data().end(), 0.0) / static_cast<double>(x.size());
}

namespace reference {

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicKernelBank<T>& kernels,
                      std::span<const T> bias) {
  const Shape out_shape = checked_conv_shape(input, kernels, bias.size());
  BasicTensor<T> out(out_shape);
  const auto& g = kernels.geometry;
  for (std::size_t oc = 0; oc < out_shape.channels; ++oc) {
    for (std::size_t oy = 0; oy < out_shape.height; ++oy) {
      for (std::size_t ox = 0; ox < out_shape.width; ++ox) {
        T acc = bias[oc];
        for (std::size_t ic = 0; ic < kernels.in_channels; ++ic) {
          for (std::size_t ky = 0; ky < kernels.kh; ++ky) {
            for (std::size_t kx = 0; kx < kernels.kw; ++kx) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky * g.dilation) -
                              static_cast<std::ptrdiff_t>(g.padding);
              const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx * g.dilation) -
                              static_cast<std::ptrdiff_t>(g.padding);
              if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(input.height()) ||
                  ix >= static_cast<std::ptrdiff_t>(input.width())) {
                continue;
              }
              acc += kernels.at(oc, ic, ky, kx) *
                     input(ic, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
            }
          }
        }
        out(oc, oy, ox) = acc;
      }
    }
  }
  return out;
}

template BasicTensor<double> conv2d(const BasicTensor<double>&, const BasicKernelBank<double>&,
                                    std::span<const double>);
template BasicTensor<float> conv2d(const BasicTensor<float>&, const BasicKernelBank<float>&,
                                   std::span<const float>);

}  // namespace reference

#define IMPNET_INSTANTIATE(T)                                                                  \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicKernelBank<T>&,            \
                                 std::span<const T>);                                         \
  template ConvGradients<T> conv2d_backward(const BasicTensor<T>&, const BasicKernelBank<T>&, \
                                            const BasicTensor<T>&, bool, bool);              \
  template BasicTensor<T> axpy(T, const BasicTensor<T>&, const BasicTensor<T>&);              \
  template BasicTensor<T> hadamard(const BasicTensor<T>&, const BasicTensor<T>&);             \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                        \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);        \
  template BasicTensor<T> concat_channels(const BasicTensor<T>&, const BasicTensor<T>&);      \
  template BasicTensor<T> slice_channels(const BasicTensor<T>&, std::size_t, std::size_t);

IMPNET_INSTANTIATE(double)
IMPNET_INSTANTIATE(float)

#undef IMPNET_INSTANTIATE

}  // namespace impnet
