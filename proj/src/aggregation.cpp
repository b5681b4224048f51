#include "impnet/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "impnet/kernels.hpp"

namespace impnet {
namespace {

// (1 - t) * a + t * b, exact at t in {0, 1} and when a == b, and never outside [min(a,b), max(a,b)].
inline double convex_mix(double a, double b, double t) {
  if (a == b) return a;
  const double v = (1.0 - t) * a + t * b;
  return std::clamp(v, std::min(a, b), std::max(a, b));
}

}  // namespace

double WeightPair::mean() const { return impnet::mean(w); }

Tensor WeightPair::complement() const {
  Tensor c(w.shape());
  for (std::size_t i = 0; i < w.size(); ++i) c[i] = 1.0 - w[i];
  return c;
}

MemoryGate::MemoryGate(double g) : g_(g) {
  if (!(g >= 0.0 && g <= 1.0)) throw ValidationError("memory gate must lie in [0, 1]");
}

WeightPair softmax_weights(const Tensor& impression_score, const Tensor& key_score) {
  if (impression_score.shape() != key_score.shape() || key_score.channels() != 1) {
    throw ShapeError("softmax_weights: score maps must be matching single-channel maps");
  }
  WeightPair out{Tensor(key_score.shape())};
  for (std::size_t i = 0; i < key_score.size(); ++i) {
    out.w[i] = 1.0 / (1.0 + std::exp(impression_score[i] - key_score[i]));
  }
  return out;
}

WeightPair adaptive_weights(const Tensor& impression_aligned, const Tensor& keyfeat, const Params& params) {
  if (impression_aligned.shape() != keyfeat.shape()) throw ShapeError("adaptive_weights: shape mismatch");
  return softmax_weights(quality_forward(impression_aligned, params), quality_forward(keyfeat, params));
}

WeightPair constant_weights(std::size_t height, std::size_t width, double w) {
  if (!(w >= 0.0 && w <= 1.0)) throw ValidationError("weight must lie in [0, 1]");
  return {Tensor(1, height, width, w)};
}

Tensor fuse(const Tensor& impression_aligned, const Tensor& keyfeat, const WeightPair& w) {
  if (impression_aligned.shape() != keyfeat.shape()) throw ShapeError("fuse: feature shape mismatch");
  if (w.w.channels() != 1 || !w.w.shape().spatially_matches(keyfeat.shape())) {
    throw ShapeError("fuse: weight map " + to_string(w.w.shape()) + " does not broadcast over " +
                     to_string(keyfeat.shape()));
  }
  Tensor out(keyfeat.shape());
  const std::size_t plane = keyfeat.shape().plane();
  for (std::size_t c = 0; c < keyfeat.channels(); ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t k = c * plane + i;
      out[k] = convex_mix(impression_aligned[k], keyfeat[k], w.w[i]);
    }
  }
  return out;
}

Tensor impression_update(const Tensor& keyfeat, const Tensor& task_feat, MemoryGate g) {
  if (keyfeat.shape() != task_feat.shape()) throw ShapeError("impression_update: shape mismatch");
  Tensor out(keyfeat.shape());
  for (std::size_t i = 0; i < keyfeat.size(); ++i) out[i] = convex_mix(keyfeat[i], task_feat[i], g.value());
  return out;
}

std::vector<double> contribution_profile(MemoryGate g, double fixed_w, std::size_t n_segments) {
  if (n_segments < 1) throw ValidationError("contribution_profile needs at least one segment");
  if (!(fixed_w >= 0.0 && fixed_w <= 1.0)) throw ValidationError("weight must lie in [0, 1]");
  // Coefficients over keyframe features f_0 .. f_k.
  std::vector<double> impression{1.0};
  std::vector<double> task{1.0};
  for (std::size_t k = 1; k < n_segments; ++k) {
    task.assign(k + 1, 0.0);
    for (std::size_t j = 0; j < k; ++j) task[j] = (1.0 - fixed_w) * impression[j];
    task[k] = fixed_w;
    impression.assign(k + 1, 0.0);
    for (std::size_t j = 0; j <= k; ++j) impression[j] = g.value() * task[j];
    impression[k] += 1.0 - g.value();
  }
  std::vector<double> by_offset(n_segments);
  for (std::size_t m = 0; m < n_segments; ++m) by_offset[m] = task[n_segments - 1 - m];
  return by_offset;
}

std::vector<double> cumulative_contribution(const std::vector<double>& profile) {
  std::vector<double> tail(profile.size());
  double sum = 0.0;
  for (std::size_t m = profile.size(); m-- > 0;) tail[m] = sum += profile[m];
  return tail;
}

void write_contribution_csv(std::ostream& os, const std::vector<double>& profile) {
  os << "offset,coefficient\n";
  os.precision(17);
  for (std::size_t m = 0; m < profile.size(); ++m) os << m << ',' << profile[m] << '\n';
}

}  // namespace impnet
