#include "impnet/nets.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "impnet/kernels.hpp"
#include "impnet/tensor_io.hpp"

namespace impnet {

std::string_view to_string(NetId id) {
  switch (id) {
    case NetId::feature: return "feature";
    case NetId::flow: return "flow";
    case NetId::quality: return "quality";
    case NetId::task: return "task";
  }
  return "unknown";
}

NetId net_from_string(std::string_view name) {
  if (name == "feature") return NetId::feature;
  if (name == "flow") return NetId::flow;
  if (name == "quality") return NetId::quality;
  if (name == "task") return NetId::task;
  throw ValidationError("unknown network name '" + std::string(name) + "'");
}

std::size_t NetSpec::stride_product() const {
  std::size_t s = 1;
  for (const auto& l : layers) s *= l.stride;
  return s;
}

namespace {

void validate_chain(const NetSpec& net, std::size_t in_channels, std::string_view name) {
  if (net.layers.empty()) throw ValidationError(std::string(name) + " network has no layers");
  std::size_t c = in_channels;
  for (const auto& l : net.layers) {
    if (l.in_channels != c) {
      throw ValidationError(std::string(name) + " network: layer expects " + std::to_string(l.in_channels) +
                            " channels, previous produces " + std::to_string(c));
    }
    if (l.kernel % 2 == 0 || l.stride < 1 || l.dilation < 1 || l.out_channels == 0) {
      throw ValidationError(std::string(name) + " network: invalid layer geometry");
    }
    c = l.out_channels;
  }
  if (net.stride_product() != net.feature_stride) {
    throw ValidationError(std::string(name) + " network: stride product " + std::to_string(net.stride_product()) +
                          " differs from declared stride " + std::to_string(net.feature_stride));
  }
}

LayerSpec conv(std::size_t in, std::size_t out, std::size_t k, std::size_t stride = 1, std::size_t dilation = 1,
               Activation act = Activation::relu) {
  return LayerSpec{in, out, k, stride, dilation, act};
}

}  // namespace

void ModelSpec::validate() const {
  validate_chain(feature, image_channels, "feature");
  validate_chain(flow, 2 * image_channels, "flow");
  if (flow.feature_stride != feature.feature_stride) {
    throw ValidationError("flow network must predict at feature resolution");
  }
  if (flow_head.in_channels != flow.output_channels() || flow_head.out_channels != 2 || flow_head.stride != 1) {
    throw ValidationError("flow head must map the flow encoder output to 2 channels");
  }
  if (scale_head.in_channels != flow.output_channels() || scale_head.out_channels != 1 ||
      scale_head.kernel != 1 || scale_head.stride != 1) {
    throw ValidationError("scale head must be a 1x1 convolution to 1 channel");
  }
  validate_chain(quality, feature_channels(), "quality");
  if (quality.output_channels() != 1 || quality.feature_stride != 1) {
    throw ValidationError("quality network must produce a single-channel map at feature resolution");
  }
  validate_chain(task, feature_channels(), "task");
  if (task.output_channels() != task_channels() || task.feature_stride != 1) {
    throw ValidationError("task network must produce " + std::to_string(task_channels()) + " channels");
  }
}

ModelSpec ModelSpec::desk() {
  ModelSpec m;
  m.image_channels = 3;
  m.num_classes = 4;
  m.feature.feature_stride = 4;
  m.feature.layers = {conv(3, 16, 3), conv(16, 16, 3, 2), conv(16, 32, 3), conv(32, 32, 3, 2),
                      conv(32, 16, 3, 1, 2)};
  m.flow.feature_stride = 4;
  m.flow.layers = {conv(6, 4, 3, 2), conv(4, 8, 3, 2), conv(8, 8, 3), conv(8, 8, 3)};
  m.flow_head = conv(8, 2, 3, 1, 1, Activation::none);
  m.scale_head = conv(8, 1, 1, 1, 1, Activation::none);
  m.quality.layers = {conv(16, 16, 3), conv(16, 8, 1), conv(8, 1, 1, 1, 1, Activation::none)};
  m.task.layers = {conv(16, 16, 1), conv(16, m.task_channels(), 1, 1, 1, Activation::none)};
  m.validate();
  return m;
}

ModelSpec ModelSpec::tiny() {
  ModelSpec m;
  m.image_channels = 3;
  m.num_classes = 2;
  m.feature.feature_stride = 2;
  m.feature.layers = {conv(3, 2, 3, 2), conv(2, 3, 3)};
  m.flow.feature_stride = 2;
  m.flow.layers = {conv(6, 2, 3, 2)};
  m.flow_head = conv(2, 2, 3, 1, 1, Activation::none);
  m.scale_head = conv(2, 1, 1, 1, 1, Activation::none);
  m.quality.layers = {conv(3, 2, 3), conv(2, 2, 1), conv(2, 1, 1, 1, 1, Activation::none)};
  m.task.layers = {conv(3, m.task_channels(), 1, 1, 1, Activation::none)};
  m.validate();
  return m;
}

Params Params::initialize(const ModelSpec& spec, std::uint64_t seed, InitOptions options) {
  spec.validate();
  Params p;
  p.spec = spec;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  auto add = [&](NetId owner, std::size_t index, const LayerSpec& ls, bool head) {
    ConvLayer layer;
    layer.owner = owner;
    layer.index = index;
    layer.activation = ls.activation;
    layer.kernels = KernelBank(ls.out_channels, ls.in_channels, ls.kernel, ls.kernel, ls.geometry());
    layer.bias.assign(ls.out_channels, 0.0);
    const double fan_in = static_cast<double>(ls.in_channels * ls.kernel * ls.kernel);
    const double std_dev = std::sqrt(2.0 / fan_in) * (head ? 0.1 : 1.0);
    for (auto& w : layer.kernels.weights) w = normal(rng) * std_dev;
    if (head && options.zero_heads) std::fill(layer.kernels.weights.begin(), layer.kernels.weights.end(), 0.0);
    p.layers.push_back(std::move(layer));
  };

  for (std::size_t i = 0; i < spec.feature.layers.size(); ++i) add(NetId::feature, i, spec.feature.layers[i], false);
  for (std::size_t i = 0; i < spec.flow.layers.size(); ++i) add(NetId::flow, i, spec.flow.layers[i], false);
  add(NetId::flow, spec.flow.layers.size(), spec.flow_head, true);
  add(NetId::flow, spec.flow.layers.size() + 1, spec.scale_head, true);
  {
    // Scale head: zero weights, fixed unit bias, so the untrained scale map is all ones.
    auto& scale = p.layers.back();
    std::fill(scale.kernels.weights.begin(), scale.kernels.weights.end(), 0.0);
    std::fill(scale.bias.begin(), scale.bias.end(), 1.0);
    scale.bias_frozen = true;
  }
  for (std::size_t i = 0; i < spec.quality.layers.size(); ++i) {
    add(NetId::quality, i, spec.quality.layers[i], i + 1 == spec.quality.layers.size());
  }
  for (std::size_t i = 0; i < spec.task.layers.size(); ++i) {
    add(NetId::task, i, spec.task.layers[i], i + 1 == spec.task.layers.size());
  }
  return p;
}

std::size_t Params::first_layer(NetId id) const {
  switch (id) {
    case NetId::feature: return 0;
    case NetId::flow: return spec.feature.layers.size();
    case NetId::quality: return spec.feature.layers.size() + spec.flow.layers.size() + 2;
    case NetId::task: return spec.feature.layers.size() + spec.flow.layers.size() + 2 + spec.quality.layers.size();
  }
  return 0;
}

std::size_t Params::layer_count(NetId id) const {
  switch (id) {
    case NetId::feature: return spec.feature.layers.size();
    case NetId::flow: return spec.flow.layers.size() + 2;
    case NetId::quality: return spec.quality.layers.size();
    case NetId::task: return spec.task.layers.size();
  }
  return 0;
}

std::span<const ConvLayer> Params::net(NetId id) const {
  const std::size_t n = id == NetId::flow ? spec.flow.layers.size() : layer_count(id);
  return std::span<const ConvLayer>(layers).subspan(first_layer(id), n);
}

std::size_t Params::flow_head_index() const { return first_layer(NetId::flow) + spec.flow.layers.size(); }
std::size_t Params::scale_head_index() const { return flow_head_index() + 1; }

std::size_t Params::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.size();
  return n;
}

std::vector<double> Params::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& l : layers) {
    out.insert(out.end(), l.kernels.weights.begin(), l.kernels.weights.end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
  return out;
}

void Params::unflatten(std::span<const double> values) {
  if (values.size() != parameter_count()) throw ShapeError("unflatten: parameter count mismatch");
  std::size_t i = 0;
  for (auto& l : layers) {
    for (auto& w : l.kernels.weights) w = values[i++];
    for (auto& b : l.bias) b = values[i++];
  }
}

ParamGradients ParamGradients::zeros_like(const Params& p) {
  ParamGradients g;
  for (const auto& l : p.layers) {
    g.weights.emplace_back(l.kernels.size(), 0.0);
    g.bias.emplace_back(l.bias.size(), 0.0);
  }
  return g;
}

std::vector<double> ParamGradients::flatten() const {
  std::vector<double> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.insert(out.end(), weights[i].begin(), weights[i].end());
    out.insert(out.end(), bias[i].begin(), bias[i].end());
  }
  return out;
}

double ParamGradients::squared_norm() const {
  double s = 0.0;
  for (const auto& w : weights) s = std::inner_product(w.begin(), w.end(), w.begin(), s);
  for (const auto& b : bias) s = std::inner_product(b.begin(), b.end(), b.begin(), s);
  return s;
}

Tensor apply_layer(const Tensor& x, const ConvLayer& layer) {
  Tensor y = conv2d(x, layer.kernels, std::span<const double>(layer.bias));
  if (layer.activation == Activation::relu) return relu(y);
  return y;
}

namespace {

Tensor run_chain(Tensor x, std::span<const ConvLayer> layers) {
  for (const auto& l : layers) x = apply_layer(x, l);
  return x;
}

void check_image(const Tensor& image, const ModelSpec& spec) {
  if (image.channels() != spec.image_channels) {
    throw ShapeError("image must have " + std::to_string(spec.image_channels) + " channels, got " +
                     to_string(image.shape()));
  }
  const std::size_t s = spec.feature_stride();
  if (image.height() == 0 || image.width() == 0 || image.height() % s != 0 || image.width() % s != 0) {
    throw ShapeError("image extent " + to_string(image.shape()) + " not divisible by feature stride " +
                     std::to_string(s));
  }
}

void check_feature(const Tensor& feature, const ModelSpec& spec) {
  if (feature.channels() != spec.feature_channels()) {
    throw ShapeError("feature must have " + std::to_string(spec.feature_channels()) + " channels, got " +
                     to_string(feature.shape()));
  }
}

}  // namespace

Tensor feature_forward(const Tensor& image, const Params& params) {
  check_image(image, params.spec);
  return run_chain(image, params.net(NetId::feature));
}

FlowOutput flow_forward(const Tensor& target_image, const Tensor& reference_image, const Params& params) {
  if (target_image.shape() != reference_image.shape()) throw ShapeError("flow_forward: image shape mismatch");
  check_image(target_image, params.spec);
  const Tensor top = run_chain(concat_channels(target_image, reference_image), params.net(NetId::flow));
  return {apply_layer(top, params.flow_head()), apply_layer(top, params.scale_head())};
}

Tensor quality_forward(const Tensor& feature, const Params& params) {
  check_feature(feature, params.spec);
  return run_chain(feature, params.net(NetId::quality));
}

DetectionGrid task_forward(const Tensor& feature, const Params& params) {
  check_feature(feature, params.spec);
  return {run_chain(feature, params.net(NetId::task)), params.spec.num_classes, params.spec.feature_stride()};
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

std::string_view activation_name(Activation a) { return a == Activation::relu ? "relu" : "none"; }

Activation activation_from(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "none") return Activation::none;
  throw ValidationError("unknown activation '" + std::string(s) + "'");
}

std::string_view role_of(const Params& p, std::size_t i) {
  if (i == p.flow_head_index()) return "flow_head";
  if (i == p.scale_head_index()) return "scale_head";
  return "body";
}

}  // namespace

void write_params(std::ostream& os, const Params& params) {
  const auto& spec = params.spec;
  os << "IMPNET-PARAMS 1\n";
  os << "image_channels " << spec.image_channels << "\n";
  os << "classes " << spec.num_classes << "\n";
  os << "feature_stride " << spec.feature_stride() << "\n";
  os << "trained_iterations " << params.trained_iterations << "\n";
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& l = params.layers[i];
    const auto& g = l.kernels.geometry;
    os << "layer " << to_string(l.owner) << ' ' << l.index << ' ' << role_of(params, i) << ' '
       << l.kernels.in_channels << ' ' << l.kernels.out_channels << ' ' << l.kernels.kh << ' ' << g.stride << ' '
       << g.dilation << ' ' << activation_name(l.activation) << ' ' << (l.bias_frozen ? "frozen_bias" : "bias")
       << "\n";
  }
  os << "end\n";
  for (const auto& l : params.layers) {
    write_tensor(os, Tensor(Shape{l.kernels.out_channels, l.kernels.in_channels, l.kernels.kh * l.kernels.kw},
                            l.kernels.weights));
    write_tensor(os, Tensor(Shape{l.bias.size(), 1, 1}, l.bias));
  }
}

Params read_params(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "IMPNET-PARAMS 1") throw ValidationError("not an impnet checkpoint");
  ModelSpec spec;
  std::uint64_t trained = 0;
  struct Entry {
    NetId owner;
    std::string role;
    LayerSpec layer;
    bool frozen;
  };
  std::vector<Entry> entries;
  std::size_t feature_stride = 0;
  while (std::getline(is, line) && line != "end") {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "image_channels") {
      ls >> spec.image_channels;
    } else if (key == "classes") {
      ls >> spec.num_classes;
    } else if (key == "feature_stride") {
      ls >> feature_stride;
    } else if (key == "trained_iterations") {
      ls >> trained;
    } else if (key == "layer") {
      std::string owner, role, act, bias;
      std::size_t index = 0;
      LayerSpec l;
      ls >> owner >> index >> role >> l.in_channels >> l.out_channels >> l.kernel >> l.stride >> l.dilation >> act >>
          bias;
      if (!ls) throw ValidationError("malformed checkpoint layer line: " + line);
      l.activation = activation_from(act);
      entries.push_back({net_from_string(owner), role, l, bias == "frozen_bias"});
    } else if (!key.empty()) {
      throw ValidationError("unknown checkpoint manifest key '" + key + "'");
    }
  }
  if (line != "end") throw ValidationError("checkpoint manifest not terminated");
  for (const auto& e : entries) {
    NetSpec* net = nullptr;
    switch (e.owner) {
      case NetId::feature: net = &spec.feature; break;
      case NetId::flow: net = &spec.flow; break;
      case NetId::quality: net = &spec.quality; break;
      case NetId::task: net = &spec.task; break;
    }
    if (e.role == "flow_head") {
      spec.flow_head = e.layer;
    } else if (e.role == "scale_head") {
      spec.scale_head = e.layer;
    } else {
      net->layers.push_back(e.layer);
    }
  }
  spec.feature.feature_stride = feature_stride;
  spec.flow.feature_stride = feature_stride;
  spec.validate();

  Params p = Params::initialize(spec, 0);
  p.trained_iterations = trained;
  if (p.layers.size() != entries.size()) throw ValidationError("checkpoint layer count mismatch");
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    auto& l = p.layers[i];
    const Tensor w = read_tensor(is);
    const Tensor b = read_tensor(is);
    if (w.size() != l.kernels.size() || b.size() != l.bias.size()) {
      throw ValidationError("checkpoint tensor size mismatch at layer " + std::to_string(i));
    }
    l.kernels.weights = w.values();
    l.bias = b.values();
    l.bias_frozen = entries[i].frozen;
  }
  return p;
}

void save_params(const std::filesystem::path& path, const Params& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_params(os, params);
}

Params load_params(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open checkpoint " + path.string());
  return read_params(is);
}

}  // namespace impnet
