#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "impnet/tensor.hpp"
#include "impnet/warp.hpp"

namespace impnet {

enum class Activation { none, relu };

// Owner of a parameter tensor. The flow network also carries the flow and scale heads.
enum class NetId : std::uint8_t { feature = 0, flow = 1, quality = 2, task = 3 };
inline constexpr std::size_t kNetCount = 4;

std::string_view to_string(NetId id);
NetId net_from_string(std::string_view name);

struct LayerSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t dilation = 1;
  Activation activation = Activation::relu;

  // "Same" padding for odd kernels.
  ConvGeometry geometry() const { return {stride, dilation, dilation * (kernel - 1) / 2}; }
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct NetSpec {
  std::vector<LayerSpec> layers;
  std::size_t feature_stride = 1;

  std::size_t output_channels() const { return layers.empty() ? 0 : layers.back().out_channels; }
  std::size_t stride_product() const;
  friend bool operator==(const NetSpec&, const NetSpec&) = default;
};

struct ModelSpec {
  std::size_t image_channels = 3;
  std::size_t num_classes = 4;
  NetSpec feature;
  NetSpec flow;  // encoder over the concatenated (target, reference) pair
  LayerSpec flow_head;
  LayerSpec scale_head;
  NetSpec quality;
  NetSpec task;

  std::size_t feature_stride() const { return feature.feature_stride; }
  std::size_t feature_channels() const { return feature.output_channels(); }
  // objectness + class logits + (tx, ty, tw, th)
  std::size_t task_channels() const { return 1 + num_classes + 4; }

  void validate() const;

  // Laptop-scale defaults: stride-4 feature network with 16 output channels,
  // quality network 3x3x16 -> 1x1x8 -> 1x1x1.
  static ModelSpec desk();
  // A model with a few hundred parameters for exhaustive gradient checks.
  static ModelSpec tiny();

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct ConvLayer {
  NetId owner = NetId::feature;
  std::size_t index = 0;
  Activation activation = Activation::relu;
  KernelBank kernels;
  std::vector<double> bias;
  bool bias_frozen = false;

  std::size_t size() const { return kernels.size() + bias.size(); }
};

struct InitOptions {
  // Output heads (flow head, last quality layer, last task layer) start at zero.
  bool zero_heads = true;
};

// All trainable tensors of the four networks in a fixed order:
// feature layers, flow encoder, flow head, scale head, quality layers, task layers.
struct Params {
  ModelSpec spec;
  std::vector<ConvLayer> layers;
  std::uint64_t trained_iterations = 0;

  static Params initialize(const ModelSpec& spec, std::uint64_t seed, InitOptions options = {});

  std::span<const ConvLayer> net(NetId id) const;  // flow: encoder only
  std::size_t first_layer(NetId id) const;
  std::size_t layer_count(NetId id) const;
  std::size_t flow_head_index() const;
  std::size_t scale_head_index() const;
  const ConvLayer& flow_head() const { return layers[flow_head_index()]; }
  const ConvLayer& scale_head() const { return layers[scale_head_index()]; }

  std::size_t parameter_count() const;
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> values);
};

struct ParamGradients {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> bias;

  static ParamGradients zeros_like(const Params& p);
  std::vector<double> flatten() const;
  double squared_norm() const;
};

struct DetectionGrid {
  Tensor raw;  // (1 + K + 4, h, w)
  std::size_t num_classes = 0;
  std::size_t stride = 1;

  std::size_t height() const { return raw.height(); }
  std::size_t width() const { return raw.width(); }
  double objectness(std::size_t y, std::size_t x) const { return raw(0, y, x); }
  double class_logit(std::size_t k, std::size_t y, std::size_t x) const { return raw(1 + k, y, x); }
  // 0: tx, 1: ty, 2: tw, 3: th
  double box_param(std::size_t i, std::size_t y, std::size_t x) const {
    return raw(1 + num_classes + i, y, x);
  }
  friend bool operator==(const DetectionGrid&, const DetectionGrid&) = default;
};

struct FlowOutput {
  FlowField flow;
  ScaleMap scale;
};

Tensor apply_layer(const Tensor& x, const ConvLayer& layer);

Tensor feature_forward(const Tensor& image, const Params& params);
FlowOutput flow_forward(const Tensor& target_image, const Tensor& reference_image, const Params& params);
Tensor quality_forward(const Tensor& feature, const Params& params);
DetectionGrid task_forward(const Tensor& feature, const Params& params);

// Checkpoint: a text manifest (one line per layer with owner/index/role and geometry)
// terminated by "end", followed by weight and bias tensors in the IMPT format.
void write_params(std::ostream& os, const Params& params);
Params read_params(std::istream& is);
void save_params(const std::filesystem::path& path, const Params& params);
Params load_params(const std::filesystem::path& path);

}  // namespace impnet
