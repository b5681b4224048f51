#include "impnet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "impnet/aggregation.hpp"
#include "impnet/kernels.hpp"
#include "impnet/warp.hpp"

namespace impnet {

Trainable Trainable::only(std::initializer_list<NetId> ids) {
  Trainable t;
  t.nets.fill(false);
  for (NetId id : ids) t.nets[static_cast<std::size_t>(id)] = true;
  return t;
}

Trainable Trainable::parse(const std::string& list) {
  Trainable t;
  t.nets.fill(false);
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) continue;
    if (item == "all") return all();
    t.nets[static_cast<std::size_t>(net_from_string(item))] = true;
  }
  return t;
}

std::string Trainable::to_string() const {
  std::string out;
  for (std::size_t i = 0; i < kNetCount; ++i) {
    if (!nets[i]) continue;
    if (!out.empty()) out += ',';
    out += impnet::to_string(static_cast<NetId>(i));
  }
  return out;
}

DetectionTargets build_targets(const std::vector<LabeledBox>& boxes, std::size_t height, std::size_t width,
                               std::size_t stride) {
  if (stride == 0) throw ValidationError("build_targets: zero stride");
  DetectionTargets t{Tensor(1, height, width), std::vector<int>(height * width, -1), Tensor(4, height, width), 0,
                     stride};
  const double s = static_cast<double>(stride);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double px = (static_cast<double>(x) + 0.5) * s;
      const double py = (static_cast<double>(y) + 0.5) * s;
      const LabeledBox* owner = nullptr;
      for (const auto& b : boxes) {
        if (px >= b.box.x1 && px < b.box.x2 && py >= b.box.y1 && py < b.box.y2) owner = &b;
      }
      if (!owner) continue;
      ++t.positives;
      t.objectness(0, y, x) = 1.0;
      t.classes[y * width + x] = owner->class_id;
      const Box& b = owner->box;
      t.box(0, y, x) = 0.5 * (b.x1 + b.x2) / s - static_cast<double>(x);
      t.box(1, y, x) = 0.5 * (b.y1 + b.y2) / s - static_cast<double>(y);
      t.box(2, y, x) = std::log(b.width() / s);
      t.box(3, y, x) = std::log(b.height() / s);
    }
  }
  return t;
}

namespace {

void check_targets(const DetectionGrid& grid, const DetectionTargets& targets) {
  if (!grid.raw.shape().spatially_matches(targets.objectness.shape()) ||
      targets.classes.size() != grid.height() * grid.width()) {
    throw ShapeError("detection loss: targets do not match the grid");
  }
  for (int c : targets.classes) {
    if (c >= static_cast<int>(grid.num_classes)) throw ValidationError("detection loss: class id out of range");
  }
}

// log(1 + exp(z)) without overflow.
inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Softmax over class logits at one cell; returns log-sum-exp.
double class_softmax(const DetectionGrid& grid, std::size_t y, std::size_t x, std::vector<double>& probs) {
  const std::size_t K = grid.num_classes;
  probs.resize(K);
  double m = grid.class_logit(0, y, x);
  for (std::size_t k = 1; k < K; ++k) m = std::max(m, grid.class_logit(k, y, x));
  double sum = 0;
  for (std::size_t k = 0; k < K; ++k) sum += (probs[k] = std::exp(grid.class_logit(k, y, x) - m));
  for (auto& p : probs) p /= sum;
  return m + std::log(sum);
}

}  // namespace

LossTerms detection_loss(const DetectionGrid& grid, const DetectionTargets& targets, const LossWeights& weights) {
  check_targets(grid, targets);
  LossTerms terms;
  const std::size_t H = grid.height(), W = grid.width();
  std::vector<double> probs;
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const double z = grid.objectness(y, x);
      terms.objectness += softplus(z) - targets.objectness(0, y, x) * z;
      const int cls = targets.classes[y * W + x];
      if (cls < 0) continue;
      terms.classification += class_softmax(grid, y, x, probs) - grid.class_logit(static_cast<std::size_t>(cls), y, x);
      for (std::size_t i = 0; i < 4; ++i) terms.box += std::abs(grid.box_param(i, y, x) - targets.box(i, y, x));
    }
  }
  terms.objectness /= static_cast<double>(H * W);
  if (targets.positives > 0) {
    terms.classification /= static_cast<double>(targets.positives);
    terms.box /= static_cast<double>(targets.positives);
  }
  terms.total = weights.objectness * terms.objectness + weights.classification * terms.classification +
                weights.box * terms.box;
  return terms;
}

Tensor detection_loss_gradient(const DetectionGrid& grid, const DetectionTargets& targets,
                               const LossWeights& weights) {
  check_targets(grid, targets);
  const std::size_t H = grid.height(), W = grid.width(), K = grid.num_classes;
  Tensor g(grid.raw.shape());
  const double cells = static_cast<double>(H * W);
  const double pos = targets.positives > 0 ? static_cast<double>(targets.positives) : 1.0;
  std::vector<double> probs;
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      g(0, y, x) = weights.objectness * (sigmoid(grid.objectness(y, x)) - targets.objectness(0, y, x)) / cells;
      const int cls = targets.classes[y * W + x];
      if (cls < 0) continue;
      class_softmax(grid, y, x, probs);
      for (std::size_t k = 0; k < K; ++k) {
        const double onehot = static_cast<int>(k) == cls ? 1.0 : 0.0;
        g(1 + k, y, x) = weights.classification * (probs[k] - onehot) / pos;
      }
      for (std::size_t i = 0; i < 4; ++i) {
        const double d = grid.box_param(i, y, x) - targets.box(i, y, x);
        const double sign = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
        g(1 + K + i, y, x) = weights.box * sign / pos;
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

Tape::Tape(const Params& params, Trainable trainable)
    : params_(&params), trainable_(trainable), param_grads_(ParamGradients::zeros_like(params)) {}

Tape::Var Tape::push(Tensor value, bool requires_grad, std::function<void(const Tensor&)> backward) {
  if (consumed_) throw std::logic_error("tape: cannot record after backward");
  nodes_.push_back({std::move(value), requires_grad, std::move(backward)});
  return nodes_.size() - 1;
}

void Tape::accumulate(Var v, const Tensor& g) {
  if (!nodes_[v].requires_grad) return;
  Tensor& slot = grads_[v];
  if (slot.empty()) {
    slot = g;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) slot[i] += g[i];
}

Tape::Var Tape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Tape::Var Tape::variable(Tensor value) { return push(std::move(value), true, nullptr); }

Tape::Var Tape::layer(Var x, std::size_t index) {
  const ConvLayer& L = params_->layers.at(index);
  const bool train_params = trainable_.contains(L.owner);
  const bool needs = train_params || nodes_.at(x).requires_grad;
  Tensor pre = conv2d(value(x), L.kernels, std::span<const double>(L.bias));
  Tensor out = L.activation == Activation::relu ? relu(pre) : std::move(pre);
  const Var self = nodes_.size();
  return push(std::move(out), needs, [this, x, index, self, train_params](const Tensor& upstream) {
    const ConvLayer& layer = params_->layers[index];
    const Tensor g_pre =
        layer.activation == Activation::relu ? relu_backward(nodes_[self].value, upstream) : upstream;
    const bool need_input = nodes_[x].requires_grad;
    auto g = conv2d_backward(value(x), layer.kernels, g_pre, need_input, train_params);
    if (train_params) {
      auto& gw = param_grads_.weights[index];
      for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += g.weights[i];
      if (!layer.bias_frozen) {
        auto& gb = param_grads_.bias[index];
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g.bias[i];
      }
    }
    if (need_input) accumulate(x, g.input);
  });
}

Tape::Var Tape::chain(Var x, NetId net) {
  const std::size_t first = params_->first_layer(net);
  const std::size_t count = params_->net(net).size();
  for (std::size_t i = first; i < first + count; ++i) x = layer(x, i);
  return x;
}

Tape::Var Tape::concat(Var a, Var b) {
  const std::size_t ca = value(a).channels();
  const bool needs = nodes_.at(a).requires_grad || nodes_.at(b).requires_grad;
  return push(concat_channels(value(a), value(b)), needs, [this, a, b, ca](const Tensor& upstream) {
    if (nodes_[a].requires_grad) accumulate(a, slice_channels(upstream, 0, ca));
    if (nodes_[b].requires_grad) accumulate(b, slice_channels(upstream, ca, upstream.channels() - ca));
  });
}

Tape::Var Tape::warp(Var feature, Var flow, Var scale) {
  ++warps_;
  const bool needs = nodes_.at(feature).requires_grad || nodes_.at(flow).requires_grad ||
                     nodes_.at(scale).requires_grad;
  return push(bilinear_warp(value(feature), value(flow), value(scale)), needs,
              [this, feature, flow, scale](const Tensor& upstream) {
                auto g = bilinear_warp_backward(value(feature), value(flow), value(scale), upstream);
                accumulate(feature, g.feature);
                accumulate(flow, g.flow);
                accumulate(scale, g.scale);
              });
}

Tape::Var Tape::softmax_fuse(Var impression, Var key, Var impression_score, Var key_score) {
  ++fusions_;
  WeightPair w = softmax_weights(value(impression_score), value(key_score));
  last_w_ = w.mean();
  Tensor out = fuse(value(impression), value(key), w);
  const bool needs = nodes_.at(impression).requires_grad || nodes_.at(key).requires_grad ||
                     nodes_.at(impression_score).requires_grad || nodes_.at(key_score).requires_grad;
  return push(std::move(out), needs,
              [this, impression, key, impression_score, key_score, w = std::move(w.w)](const Tensor& upstream) {
                const Tensor& imp = value(impression);
                const Tensor& k = value(key);
                const std::size_t plane = w.size();
                Tensor g_imp(imp.shape()), g_key(k.shape()), g_w(w.shape());
                for (std::size_t c = 0; c < imp.channels(); ++c) {
                  for (std::size_t i = 0; i < plane; ++i) {
                    const std::size_t j = c * plane + i;
                    g_imp[j] = (1.0 - w[i]) * upstream[j];
                    g_key[j] = w[i] * upstream[j];
                    g_w[i] += upstream[j] * (k[j] - imp[j]);
                  }
                }
                // dw/d key_score = w (1 - w) = -dw/d impression_score
                Tensor g_ks(w.shape()), g_is(w.shape());
                for (std::size_t i = 0; i < plane; ++i) {
                  g_ks[i] = g_w[i] * w[i] * (1.0 - w[i]);
                  g_is[i] = -g_ks[i];
                }
                accumulate(impression, g_imp);
                accumulate(key, g_key);
                accumulate(impression_score, g_is);
                accumulate(key_score, g_ks);
              });
}

Tape::Var Tape::constant_fuse(Var impression, Var key, double w) {
  ++fusions_;
  last_w_ = w;
  const Tensor& k = value(key);
  Tensor out = fuse(value(impression), k, constant_weights(k.height(), k.width(), w));
  const bool needs = nodes_.at(impression).requires_grad || nodes_.at(key).requires_grad;
  return push(std::move(out), needs, [this, impression, key, w](const Tensor& upstream) {
    Tensor g_imp(upstream.shape()), g_key(upstream.shape());
    for (std::size_t i = 0; i < upstream.size(); ++i) {
      g_imp[i] = (1.0 - w) * upstream[i];
      g_key[i] = w * upstream[i];
    }
    accumulate(impression, g_imp);
    accumulate(key, g_key);
  });
}

Tape::Var Tape::weighted_sum(Var x, Tensor weights) {
  if (weights.shape() != value(x).shape()) throw ShapeError("weighted_sum: shape mismatch");
  double total = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) total += value(x)[i] * weights[i];
  return push(Tensor(1, 1, 1, total), nodes_.at(x).requires_grad,
              [this, x, weights = std::move(weights)](const Tensor& upstream) {
                Tensor g = weights;
                for (auto& v : g.data()) v *= upstream[0];
                accumulate(x, g);
              });
}

Tape::Var Tape::loss(Var grid, DetectionTargets targets, LossWeights weights) {
  const DetectionGrid dg{value(grid), params_->spec.num_classes, params_->spec.feature_stride()};
  terms_ = detection_loss(dg, targets, weights);
  if (!std::isfinite(terms_.total)) throw NumericalError("detection loss is not finite");
  return push(Tensor(1, 1, 1, terms_.total), nodes_.at(grid).requires_grad,
              [this, grid, targets = std::move(targets), weights](const Tensor& upstream) {
                const DetectionGrid g{value(grid), params_->spec.num_classes, params_->spec.feature_stride()};
                Tensor d = detection_loss_gradient(g, targets, weights);
                for (auto& v : d.data()) v *= upstream[0];
                accumulate(grid, d);
              });
}

ParamGradients Tape::backward(Var output) {
  if (consumed_) throw std::logic_error("tape: backward already ran");
  if (value(output).size() != 1) throw ShapeError("tape: backward needs a scalar output");
  consumed_ = true;
  grads_.assign(nodes_.size(), Tensor());
  if (nodes_[output].requires_grad) grads_[output] = Tensor(1, 1, 1, 1.0);
  for (std::size_t v = output + 1; v-- > 0;) {
    if (!nodes_[v].requires_grad || grads_[v].empty() || !nodes_[v].backward) continue;
    nodes_[v].backward(grads_[v]);
  }
  return std::move(param_grads_);
}

}  // namespace impnet
