#include "impnet/warp.hpp"

#include <algorithm>
#include <cmath>

namespace impnet {
namespace {

template <typename T>
void check_warp_shapes(const BasicTensor<T>& feature, const BasicTensor<T>& flow,
                       const BasicTensor<T>& scale) {
  if (flow.channels() != 2) throw ShapeError("flow field must have 2 channels, got " + to_string(flow.shape()));
  if (scale.channels() != 1) throw ShapeError("scale map must have 1 channel, got " + to_string(scale.shape()));
  if (!flow.shape().spatially_matches(feature.shape()) || !scale.shape().spatially_matches(feature.shape())) {
    throw ShapeError("warp: spatial mismatch between feature " + to_string(feature.shape()) + ", flow " +
                     to_string(flow.shape()) + " and scale " + to_string(scale.shape()));
  }
}

// Sampling stencil for one target position.
template <typename T>
struct Stencil {
  std::ptrdiff_t x0, y0;
  T fx, fy;
  bool in_x0, in_x1, in_y0, in_y1;
};

template <typename T>
Stencil<T> make_stencil(std::ptrdiff_t x, std::ptrdiff_t y, T dx, T dy, std::ptrdiff_t W, std::ptrdiff_t H) {
  const T sx = static_cast<T>(x) + dx;
  const T sy = static_cast<T>(y) + dy;
  const T fx0 = std::floor(sx);
  const T fy0 = std::floor(sy);
  Stencil<T> s;
  s.x0 = static_cast<std::ptrdiff_t>(fx0);
  s.y0 = static_cast<std::ptrdiff_t>(fy0);
  s.fx = sx - fx0;
  s.fy = sy - fy0;
  s.in_x0 = s.x0 >= 0 && s.x0 < W;
  s.in_x1 = s.x0 + 1 >= 0 && s.x0 + 1 < W;
  s.in_y0 = s.y0 >= 0 && s.y0 < H;
  s.in_y1 = s.y0 + 1 >= 0 && s.y0 + 1 < H;
  return s;
}

// Corner values (zero outside the grid).
template <typename T>
struct Corners {
  T v00, v10, v01, v11;
};

template <typename T>
Corners<T> corners(const T* plane, const Stencil<T>& s, std::ptrdiff_t W) {
  Corners<T> c{T{0}, T{0}, T{0}, T{0}};
  if (s.in_y0) {
    if (s.in_x0) c.v00 = plane[s.y0 * W + s.x0];
    if (s.in_x1) c.v10 = plane[s.y0 * W + s.x0 + 1];
  }
  if (s.in_y1) {
    if (s.in_x0) c.v01 = plane[(s.y0 + 1) * W + s.x0];
    if (s.in_x1) c.v11 = plane[(s.y0 + 1) * W + s.x0 + 1];
  }
  return c;
}

template <typename T>
T interpolate(const Corners<T>& c, T fx, T fy) {
  return (T{1} - fx) * (T{1} - fy) * c.v00 + fx * (T{1} - fy) * c.v10 + (T{1} - fx) * fy * c.v01 +
         fx * fy * c.v11;
}

}  // namespace

template <typename T>
BasicTensor<T> bilinear_warp(const BasicTensor<T>& feature, const BasicTensor<T>& flow,
                             const BasicTensor<T>& scale) {
  check_warp_shapes(feature, flow, scale);
  const auto H = static_cast<std::ptrdiff_t>(feature.height());
  const auto W = static_cast<std::ptrdiff_t>(feature.width());
  const auto C = static_cast<std::ptrdiff_t>(feature.channels());
  BasicTensor<T> out(feature.shape());
  const T* f = feature.data().data();
  const T* fl = flow.data().data();
  const T* sc = scale.data().data();
  T* o = out.data().data();

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t y = 0; y < H; ++y) {
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      const std::ptrdiff_t p = y * W + x;
      const Stencil<T> s = make_stencil<T>(x, y, fl[p], fl[H * W + p], W, H);
      for (std::ptrdiff_t c = 0; c < C; ++c) {
        o[c * H * W + p] = sc[p] * interpolate(corners(f + c * H * W, s, W), s.fx, s.fy);
      }
    }
  }
  return out;
}

WarpGradients bilinear_warp_backward(const Tensor& feature, const FlowField& flow, const ScaleMap& scale,
                                     const Tensor& upstream) {
  check_warp_shapes(feature, flow, scale);
  if (upstream.shape() != feature.shape()) throw ShapeError("warp backward: upstream shape mismatch");
  const auto H = static_cast<std::ptrdiff_t>(feature.height());
  const auto W = static_cast<std::ptrdiff_t>(feature.width());
  const auto C = static_cast<std::ptrdiff_t>(feature.channels());
  WarpGradients g{Tensor(feature.shape()), Tensor(flow.shape()), Tensor(scale.shape())};
  const double* f = feature.data().data();
  const double* fl = flow.data().data();
  const double* sc = scale.data().data();
  const double* up = upstream.data().data();

  // Feature gradient scatters into the reference grid; each thread owns whole channels.
  double* gf = g.feature.data().data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < C; ++c) {
    double* plane = gf + c * H * W;
    for (std::ptrdiff_t y = 0; y < H; ++y) {
      for (std::ptrdiff_t x = 0; x < W; ++x) {
        const std::ptrdiff_t p = y * W + x;
        const double u = up[c * H * W + p] * sc[p];
        if (u == 0.0) continue;
        const Stencil<double> s = make_stencil<double>(x, y, fl[p], fl[H * W + p], W, H);
        if (s.in_y0) {
          if (s.in_x0) plane[s.y0 * W + s.x0] += u * (1.0 - s.fx) * (1.0 - s.fy);
          if (s.in_x1) plane[s.y0 * W + s.x0 + 1] += u * s.fx * (1.0 - s.fy);
        }
        if (s.in_y1) {
          if (s.in_x0) plane[(s.y0 + 1) * W + s.x0] += u * (1.0 - s.fx) * s.fy;
          if (s.in_x1) plane[(s.y0 + 1) * W + s.x0 + 1] += u * s.fx * s.fy;
        }
      }
    }
  }

  // Flow and scale gradients are per target position.
  double* gdx = g.flow.data().data();
  double* gdy = gdx + H * W;
  double* gs = g.scale.data().data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t y = 0; y < H; ++y) {
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      const std::ptrdiff_t p = y * W + x;
      const Stencil<double> s = make_stencil<double>(x, y, fl[p], fl[H * W + p], W, H);
      double acc_s = 0.0, acc_x = 0.0, acc_y = 0.0;
      for (std::ptrdiff_t c = 0; c < C; ++c) {
        const double u = up[c * H * W + p];
        const Corners<double> v = corners(f + c * H * W, s, W);
        acc_s += u * interpolate(v, s.fx, s.fy);
        acc_x += u * ((1.0 - s.fy) * (v.v10 - v.v00) + s.fy * (v.v11 - v.v01));
        acc_y += u * ((1.0 - s.fx) * (v.v01 - v.v00) + s.fx * (v.v11 - v.v10));
      }
      gs[p] = acc_s;
      gdx[p] = sc[p] * acc_x;
      gdy[p] = sc[p] * acc_y;
    }
  }
  return g;
}

FlowField translation_flow(double dx, double dy, std::size_t height, std::size_t width) {
  FlowField flow(2, height, width);
  auto cx = flow.channel(0);
  auto cy = flow.channel(1);
  std::fill(cx.begin(), cx.end(), dx);
  std::fill(cy.begin(), cy.end(), dy);
  return flow;
}

ScaleMap unit_scale(std::size_t height, std::size_t width) { return ScaleMap(1, height, width, 1.0); }

namespace reference {

template <typename T>
BasicTensor<T> bilinear_warp(const BasicTensor<T>& feature, const BasicTensor<T>& flow,
                             const BasicTensor<T>& scale) {
  check_warp_shapes(feature, flow, scale);
  BasicTensor<T> out(feature.shape());
  const auto H = static_cast<std::ptrdiff_t>(feature.height());
  const auto W = static_cast<std::ptrdiff_t>(feature.width());
  auto sample = [&](std::size_t c, std::ptrdiff_t yy, std::ptrdiff_t xx) -> T {
    if (yy < 0 || xx < 0 || yy >= H || xx >= W) return T{0};
    return feature(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
  };
  for (std::size_t c = 0; c < feature.channels(); ++c) {
    for (std::size_t y = 0; y < feature.height(); ++y) {
      for (std::size_t x = 0; x < feature.width(); ++x) {
        const T sx = static_cast<T>(x) + flow(0, y, x);
        const T sy = static_cast<T>(y) + flow(1, y, x);
        const auto x0 = static_cast<std::ptrdiff_t>(std::floor(sx));
        const auto y0 = static_cast<std::ptrdiff_t>(std::floor(sy));
        const T ax = sx - static_cast<T>(x0);
        const T ay = sy - static_cast<T>(y0);
        T acc = T{0};
        acc += (T{1} - ax) * (T{1} - ay) * sample(c, y0, x0);
        acc += ax * (T{1} - ay) * sample(c, y0, x0 + 1);
        acc += (T{1} - ax) * ay * sample(c, y0 + 1, x0);
        acc += ax * ay * sample(c, y0 + 1, x0 + 1);
        out(c, y, x) = scale(0, y, x) * acc;
      }
    }
  }
  return out;
}

template BasicTensor<double> bilinear_warp(const BasicTensor<double>&, const BasicTensor<double>&,
                                           const BasicTensor<double>&);
template BasicTensor<float> bilinear_warp(const BasicTensor<float>&, const BasicTensor<float>&,
                                          const BasicTensor<float>&);

}  // namespace reference

template BasicTensor<double> bilinear_warp(const BasicTensor<double>&, const BasicTensor<double>&,
                                           const BasicTensor<double>&);
template BasicTensor<float> bilinear_warp(const BasicTensor<float>&, const BasicTensor<float>&,
                                          const BasicTensor<float>&);

}  // namespace impnet
