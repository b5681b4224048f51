#pragma once

#include <iosfwd>
#include <vector>

#include "impnet/nets.hpp"
#include "impnet/tensor.hpp"

namespace impnet {

// Position-wise weight of the new keyframe feature; the impression owns 1 - w.
struct WeightPair {
  Tensor w;  // (1, h, w), entries in [0, 1]

  double mean() const;
  Tensor complement() const;
};

class MemoryGate {
 public:
  explicit MemoryGate(double g);
  double value() const { return g_; }

 private:
  double g_;
};

// Two-way softmax of raw score maps, independently at each position.
WeightPair softmax_weights(const Tensor& impression_score, const Tensor& key_score);

WeightPair adaptive_weights(const Tensor& impression_aligned, const Tensor& keyfeat, const Params& params);

WeightPair constant_weights(std::size_t height, std::size_t width, double w);

// (1 - w) * impression_aligned + w * keyfeat, with w broadcast over channels.
Tensor fuse(const Tensor& impression_aligned, const Tensor& keyfeat, const WeightPair& w);

// (1 - g) * keyfeat + g * task_feat
Tensor impression_update(const Tensor& keyfeat, const Tensor& task_feat, MemoryGate g);

// Linear coefficient of keyframe feature f_{n-1-m} (m = 0 .. n-1) inside the task
// feature of segment n-1, for spatially uniform weight `fixed_w` and identity warps.
std::vector<double> contribution_profile(MemoryGate g, double fixed_w, std::size_t n_segments);

// Entry m: total coefficient of keyframes at offset m or older. Unlike the single-offset
// coefficients (offset 1 carries (1 - w)(1 - g(1 - w)), which shrinks as g grows), every
// entry is non-decreasing in g.
std::vector<double> cumulative_contribution(const std::vector<double>& profile);

// Columns: offset, coefficient
void write_contribution_csv(std::ostream& os, const std::vector<double>& profile);

}  // namespace impnet
