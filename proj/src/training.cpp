#include "impnet/training.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include "impnet/warp.hpp"

namespace impnet {

Triplet sample_triplet(const VideoClip& clip, std::size_t l, std::mt19937_64& rng, std::size_t stride) {
  if (l < 1) throw ValidationError("sample_triplet: l must be at least 1");
  if (clip.size() < l + 1) {
    throw ValidationError("sample_triplet: clip of " + std::to_string(clip.size()) + " frames is shorter than l + 1");
  }
  const auto L = static_cast<long>(l);
  const long last = static_cast<long>(clip.size()) - 1;
  const long anchor = std::uniform_int_distribution<long>(0, last)(rng);
  const long d0 = std::uniform_int_distribution<long>(-L, -(L + 1) / 2)(rng);
  const long d1 = std::uniform_int_distribution<long>(-(L / 2), L / 2)(rng);
  auto clamp = [&](long i) { return static_cast<std::size_t>(std::clamp(i, 0L, last)); };

  Triplet t;
  t.cur_index = static_cast<std::size_t>(anchor);
  t.old_index = clamp(anchor + d0);
  t.new_index = clamp(anchor + d1);
  t.key_old = clip.frames[t.old_index];
  t.cur = clip.frames[t.cur_index];
  t.key_new = clip.frames[t.new_index];
  t.labels = clip.boxes[t.cur_index];
  t.flow_new_old = clip.flow(t.new_index, t.old_index, stride);
  t.flow_cur_new = clip.flow(t.cur_index, t.new_index, stride);
  return t;
}

std::string_view to_string(Fusion f) {
  switch (f) {
    case Fusion::adaptive: return "adaptive";
    case Fusion::fixed: return "fixed";
    case Fusion::none: return "none";
  }
  return "unknown";
}

Fusion fusion_from_string(std::string_view name) {
  for (Fusion f : {Fusion::adaptive, Fusion::fixed, Fusion::none}) {
    if (name == to_string(f)) return f;
  }
  throw ValidationError("unknown fusion '" + std::string(name) + "'");
}

namespace {

struct TapeFlow {
  Tape::Var flow, scale;
};

TapeFlow tape_flow(Tape& tape, const Params& params, FlowSource source, Tape::Var target, Tape::Var reference,
                   const FlowField& oracle) {
  if (source == FlowSource::oracle) {
    return {tape.constant(oracle), tape.constant(unit_scale(oracle.height(), oracle.width()))};
  }
  const Tape::Var top = tape.chain(tape.concat(target, reference), NetId::flow);
  return {tape.layer(top, params.flow_head_index()), tape.layer(top, params.scale_head_index())};
}

}  // namespace

TrainStep forward_train(const Triplet& t, const Params& params, const GraphOptions& options) {
  if (t.key_old.shape() != t.cur.shape() || t.key_new.shape() != t.cur.shape()) {
    throw ShapeError("forward_train: triplet frames differ in shape");
  }
  TrainStep step;
  step.tape = std::make_unique<Tape>(params, options.trainable);
  Tape& tape = *step.tape;
  const Tape::Var cur = tape.constant(t.cur);
  const Tape::Var key_new = tape.constant(t.key_new);
  const Tape::Var f_new = tape.chain(key_new, NetId::feature);

  Tape::Var fused = f_new;
  step.mean_w = 1.0;
  if (options.fusion != Fusion::none) {
    const Tape::Var key_old = tape.constant(t.key_old);
    const Tape::Var f_old = tape.chain(key_old, NetId::feature);
    const TapeFlow fl = tape_flow(tape, params, options.flow_source, key_new, key_old, t.flow_new_old);
    const Tape::Var aligned = tape.warp(f_old, fl.flow, fl.scale);
    if (options.fusion == Fusion::adaptive) {
      fused = tape.softmax_fuse(aligned, f_new, tape.chain(aligned, NetId::quality), tape.chain(f_new, NetId::quality));
    } else {
      fused = tape.constant_fuse(aligned, f_new, options.fixed_weight);
    }
    step.mean_w = tape.last_fusion_weight();
  }
  const TapeFlow fl = tape_flow(tape, params, options.flow_source, cur, key_new, t.flow_cur_new);
  const Tape::Var at_cur = tape.warp(fused, fl.flow, fl.scale);
  const Tape::Var grid = tape.chain(at_cur, NetId::task);
  const Tensor& g = tape.value(grid);
  step.loss = tape.loss(grid, build_targets(t.labels, g.height(), g.width(), params.spec.feature_stride()),
                        options.loss);
  step.terms = tape.last_loss_terms();
  return step;
}

ParamGradients backward(TrainStep& step) {
  if (!step.tape) throw std::logic_error("backward: step has no tape");
  return step.tape->backward(step.loss);
}

// ---------------------------------------------------------------------------
// Configuration

double TrainConfig::learning_rate(std::size_t iteration) const {
  for (const auto& [until, lr] : lr_schedule) {
    if (iteration < until) return lr;
  }
  throw ValidationError("learning_rate: iteration beyond the schedule");
}

GraphOptions TrainConfig::graph() const {
  GraphOptions g;
  g.fusion = fusion;
  g.fixed_weight = fixed_weight;
  g.flow_source = flow_source;
  g.trainable = trainable;
  g.loss = loss;
  return g;
}

ModelSpec TrainConfig::model_spec() const {
  if (model == "desk") return ModelSpec::desk();
  if (model == "tiny") return ModelSpec::tiny();
  throw ValidationError("unknown model '" + model + "'");
}

SuiteOptions TrainConfig::data_options() const {
  SuiteOptions o;
  o.seed = data_seed;
  o.clips = data_clips;
  o.frames = data_frames;
  o.segment_length = l;
  o.num_classes = model_spec().num_classes;
  return o;
}

void TrainConfig::validate() const {
  if (lr_schedule.empty()) throw ValidationError("train config: empty learning-rate schedule");
  std::size_t prev = 0;
  for (const auto& [until, lr] : lr_schedule) {
    if (until <= prev) throw ValidationError("train config: schedule thresholds must be strictly increasing");
    if (!(lr > 0) || !std::isfinite(lr)) throw ValidationError("train config: learning rates must be positive");
    prev = until;
  }
  if (l < 1) throw ValidationError("train config: l must be at least 1");
  for (double w : {loss.objectness, loss.classification, loss.box}) {
    if (!(w >= 0) || !std::isfinite(w)) throw ValidationError("train config: loss weights must be nonnegative");
  }
  if (!(fixed_weight >= 0 && fixed_weight <= 1)) throw ValidationError("train config: fixed_weight outside [0, 1]");
  if (!(clip_norm >= 0)) throw ValidationError("train config: clip_norm must be nonnegative");
  if (!(quality_lr_scale > 0) || !std::isfinite(quality_lr_scale)) {
    throw ValidationError("train config: quality_lr_scale must be positive");
  }
  if (data_clips == 0 || data_frames < l + 1) throw ValidationError("train config: training data too small");
  model_spec();
}

TrainConfig parse_train_config(std::istream& is) {
  TrainConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t\r"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
      return s;
    };
    if (trim(line).empty()) continue;
    if (eq == std::string::npos) throw ValidationError("train config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto number = [&](auto& out) {
      std::istringstream vs(value);
      vs >> out;
      if (!vs || !vs.eof()) throw ValidationError("train config line " + std::to_string(line_no) + ": bad value for " + key);
    };
    if (key == "lr_schedule") {
      cfg.lr_schedule.clear();
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw ValidationError("train config: lr_schedule entries are iteration:rate");
        cfg.lr_schedule.emplace_back(std::stoull(trim(item.substr(0, colon))), std::stod(trim(item.substr(colon + 1))));
      }
    } else if (key == "seed") {
      number(cfg.seed);
    } else if (key == "l") {
      number(cfg.l);
    } else if (key == "w_objectness") {
      number(cfg.loss.objectness);
    } else if (key == "w_class") {
      number(cfg.loss.classification);
    } else if (key == "w_box") {
      number(cfg.loss.box);
    } else if (key == "flow_source") {
      cfg.flow_source = flow_source_from_string(value);
    } else if (key == "fusion") {
      cfg.fusion = fusion_from_string(value);
    } else if (key == "fixed_weight") {
      number(cfg.fixed_weight);
    } else if (key == "trainable") {
      cfg.trainable = Trainable::parse(value);
    } else if (key == "model") {
      cfg.model = value;
    } else if (key == "clip_norm") {
      number(cfg.clip_norm);
    } else if (key == "quality_lr_scale") {
      number(cfg.quality_lr_scale);
    } else if (key == "data_seed") {
      number(cfg.data_seed);
    } else if (key == "data_clips") {
      number(cfg.data_clips);
    } else if (key == "data_frames") {
      number(cfg.data_frames);
    } else {
      throw ValidationError("train config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open train config " + path.string());
  return parse_train_config(is);
}

void write_train_config(std::ostream& os, const TrainConfig& cfg) {
  const auto old = os.precision(17);
  os << "lr_schedule = ";
  for (std::size_t i = 0; i < cfg.lr_schedule.size(); ++i) {
    os << (i ? "," : "") << cfg.lr_schedule[i].first << ':' << cfg.lr_schedule[i].second;
  }
  os << "\nseed = " << cfg.seed << "\nl = " << cfg.l << "\nw_objectness = " << cfg.loss.objectness
     << "\nw_class = " << cfg.loss.classification << "\nw_box = " << cfg.loss.box
     << "\nflow_source = " << to_string(cfg.flow_source) << "\nfusion = " << to_string(cfg.fusion)
     << "\nfixed_weight = " << cfg.fixed_weight << "\ntrainable = " << cfg.trainable.to_string()
     << "\nmodel = " << cfg.model << "\nclip_norm = " << cfg.clip_norm
     << "\nquality_lr_scale = " << cfg.quality_lr_scale << "\ndata_seed = " << cfg.data_seed
     << "\ndata_clips = " << cfg.data_clips << "\ndata_frames = " << cfg.data_frames << '\n';
  os.precision(old);
}

// ---------------------------------------------------------------------------
// Optimization

namespace {

bool finite(const ParamGradients& g) {
  for (const auto& v : g.weights) {
    for (double x : v) {
      if (!std::isfinite(x)) return false;
    }
  }
  for (const auto& v : g.bias) {
    for (double x : v) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

void sgd_step(Params& p, const ParamGradients& g, double base_lr, double quality_scale) {
  const std::size_t q0 = p.first_layer(NetId::quality), q1 = q0 + p.layer_count(NetId::quality);
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const double lr = i >= q0 && i < q1 ? base_lr * quality_scale : base_lr;
    auto& w = p.layers[i].kernels.weights;
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * g.weights[i][j];
    if (p.layers[i].bias_frozen) continue;
    auto& b = p.layers[i].bias;
    for (std::size_t j = 0; j < b.size(); ++j) b[j] -= lr * g.bias[i][j];
  }
}

}  // namespace

TrainResult train(const std::vector<VideoClip>& clips, const TrainConfig& cfg, const std::filesystem::path& out_dir,
                  const Params* init) {
  cfg.validate();
  if (clips.empty()) throw ValidationError("train: empty dataset");
  const ModelSpec spec = cfg.model_spec();
  TrainResult result{init ? *init : Params::initialize(spec, cfg.seed), {}};
  Params& params = result.params;
  const GraphOptions graph = cfg.graph();
  const std::size_t stride = params.spec.feature_stride();
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  std::mt19937_64 rng(cfg.seed ^ 0x5851f42d4c957f2dULL);
  const std::uint64_t start = params.trained_iterations;
  std::size_t boundary = 0;
  for (std::size_t it = 0; it < cfg.total_iterations(); ++it) {
    const std::size_t c = std::uniform_int_distribution<std::size_t>(0, clips.size() - 1)(rng);
    const Triplet t = sample_triplet(clips[c], cfg.l, rng, stride);
    const double lr = cfg.learning_rate(it);
    ParamGradients g;
    double loss = 0;
    try {
      TrainStep step = forward_train(t, params, graph);
      loss = step.terms.total;
      g = backward(step);
    } catch (const NumericalError&) {
      loss = std::numeric_limits<double>::quiet_NaN();
    }
    if (!std::isfinite(loss) || !finite(g)) {
      if (!out_dir.empty()) save_params(out_dir / "diverged.impp", params);
      throw NumericalError("training diverged at iteration " + std::to_string(it) +
                           (std::isfinite(loss) ? " (non-finite gradient)" : " (non-finite loss)"));
    }
    double scale = 1.0;
    if (cfg.clip_norm > 0) {
      const double norm = std::sqrt(g.squared_norm());
      if (norm > cfg.clip_norm) scale = cfg.clip_norm / norm;
    }
    sgd_step(params, g, lr * scale, cfg.quality_lr_scale);
    params.trained_iterations = start + it + 1;
    result.curve.push_back({it, loss, lr});
    if (boundary < cfg.lr_schedule.size() && it + 1 == cfg.lr_schedule[boundary].first) {
      if (!out_dir.empty()) {
        save_params(out_dir / ("checkpoint_" + std::to_string(it + 1) + ".impp"), params);
      }
      ++boundary;
    }
  }
  if (!out_dir.empty()) {
    std::ofstream os(out_dir / "loss.csv");
    write_loss_csv(os, result.curve);
  }
  return result;
}

void write_loss_csv(std::ostream& os, const std::vector<LossRecord>& curve) {
  os << "iteration,loss,lr\n";
  const auto old = os.precision(17);
  for (const auto& r : curve) os << r.iteration << ',' << r.loss << ',' << r.lr << '\n';
  os.precision(old);
}

}  // namespace impnet
