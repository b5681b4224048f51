#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "impnet/nets.hpp"
#include "impnet/synth.hpp"

namespace impnet {

// Which networks receive parameter gradients.
struct Trainable {
  std::array<bool, kNetCount> nets{true, true, true, true};

  bool contains(NetId id) const { return nets[static_cast<std::size_t>(id)]; }
  static Trainable all() { return {}; }
  static Trainable only(std::initializer_list<NetId> ids);
  // Comma-separated network names, e.g. "quality,task".
  static Trainable parse(const std::string& list);
  std::string to_string() const;
};

// Per-cell training targets. A cell is positive when its center lies inside a ground
// truth box; with overlaps the last listed box wins.
struct DetectionTargets {
  Tensor objectness;         // (1, h, w) in {0, 1}
  std::vector<int> classes;  // h * w entries, -1 on negative cells
  Tensor box;                // (4, h, w): tx, ty, tw, th; zero on negative cells
  std::size_t positives = 0;
  std::size_t stride = 1;
};

DetectionTargets build_targets(const std::vector<LabeledBox>& boxes, std::size_t height, std::size_t width,
                               std::size_t stride);

struct LossWeights {
  double objectness = 1.0;
  double classification = 1.0;
  double box = 1.0;
};

struct LossTerms {
  double objectness = 0;      // binary cross-entropy, mean over cells
  double classification = 0;  // cross-entropy, mean over positive cells
  double box = 0;             // L1 over the four box parameters, mean over positive cells
  double total = 0;           // weighted sum
};

LossTerms detection_loss(const DetectionGrid& grid, const DetectionTargets& targets, const LossWeights& weights);
// Gradient of LossTerms::total with respect to grid.raw.
Tensor detection_loss_gradient(const DetectionGrid& grid, const DetectionTargets& targets,
                               const LossWeights& weights);

// Records differentiable operations in execution order and replays them backwards once.
// Parameters are read from the Params given at construction, which must outlive the tape.
class Tape {
 public:
  using Var = std::size_t;

  explicit Tape(const Params& params, Trainable trainable = Trainable::all());
  // Recorded backward closures refer to the tape itself.
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Leaf whose gradient is kept and readable through gradient() after backward.
  Var variable(Tensor value);
  // Convolution plus activation of params.layers[index].
  Var layer(Var x, std::size_t index);
  // Every layer of a network in order (flow: the encoder only).
  Var chain(Var x, NetId net);
  Var concat(Var a, Var b);
  Var warp(Var feature, Var flow, Var scale);
  // (1 - w) * impression + w * key with w = 1 / (1 + exp(impression_score - key_score)).
  Var softmax_fuse(Var impression, Var key, Var impression_score, Var key_score);
  Var constant_fuse(Var impression, Var key, double w);
  // Scalar (1, 1, 1) node: sum of x * weights.
  Var weighted_sum(Var x, Tensor weights);
  // Scalar (1, 1, 1) node holding LossTerms::total.
  Var loss(Var grid, DetectionTargets targets, LossWeights weights);

  const Tensor& value(Var v) const { return nodes_.at(v).value; }
  bool requires_grad(Var v) const { return nodes_.at(v).requires_grad; }
  const LossTerms& last_loss_terms() const { return terms_; }
  // Mean fusion weight of the most recent fusion node.
  double last_fusion_weight() const { return last_w_; }

  std::size_t warp_count() const { return warps_; }
  std::size_t fusion_count() const { return fusions_; }
  std::size_t size() const { return nodes_.size(); }

  // Gradients of the scalar node `output` for every parameter; entries of frozen
  // networks stay zero. A tape can only be differentiated once.
  ParamGradients backward(Var output);

  // Gradient with respect to a node, available after backward (empty when none reached it).
  const Tensor& gradient(Var v) const { return grads_.at(v); }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    std::function<void(const Tensor& upstream)> backward;
  };

  Var push(Tensor value, bool requires_grad, std::function<void(const Tensor&)> backward);
  void accumulate(Var v, const Tensor& g);

  const Params* params_;
  Trainable trainable_;
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  ParamGradients param_grads_;
  LossTerms terms_;
  double last_w_ = 0;
  std::size_t warps_ = 0;
  std::size_t fusions_ = 0;
  bool consumed_ = false;
};

}  // namespace impnet
