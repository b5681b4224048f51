#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "impnet/autodiff.hpp"
#include "impnet/pipeline.hpp"
#include "impnet/synth.hpp"

namespace impnet {

struct Triplet {
  Tensor key_old, cur, key_new;
  std::vector<LabeledBox> labels;  // ground truth of `cur`
  std::size_t old_index = 0, cur_index = 0, new_index = 0;
  // Ground-truth flows at feature resolution: key_new -> key_old and cur -> key_new.
  FlowField flow_new_old, flow_cur_new;
};

// Offsets d0 in [-l, -ceil(l/2)] and d1 in [-floor(l/2), floor(l/2)] around a uniform anchor,
// clamped to the clip. Refuses clips with fewer than l + 1 frames.
Triplet sample_triplet(const VideoClip& clip, std::size_t l, std::mt19937_64& rng, std::size_t stride);

// How the two keyframe features are combined before propagation to `cur`.
// none: key_new only (sparse propagation without impression).
enum class Fusion { adaptive, fixed, none };

std::string_view to_string(Fusion f);
Fusion fusion_from_string(std::string_view name);

struct GraphOptions {
  Fusion fusion = Fusion::adaptive;
  double fixed_weight = 0.5;
  FlowSource flow_source = FlowSource::learned;
  Trainable trainable = Trainable::all();
  LossWeights loss;
};

struct TrainStep {
  std::unique_ptr<Tape> tape;
  Tape::Var loss = 0;
  LossTerms terms;
  double mean_w = 0;  // mean fusion weight of key_new (1 when fusion is none)
};

// Features of both keyframes, flow key_new -> key_old, warp and fuse at key_new, flow
// cur -> key_new, warp to cur, task head, detection loss.
TrainStep forward_train(const Triplet& t, const Params& params, const GraphOptions& options = {});
// Consumes the step's tape.
ParamGradients backward(TrainStep& step);

// Flat key=value configuration; unknown keys are rejected.
//   lr_schedule = 2000:0.01,3000:0.001   (learning rate until the given iteration)
//   seed, l, w_objectness, w_class, w_box, flow_source, fusion, fixed_weight,
//   trainable, model (desk|tiny), clip_norm, quality_lr_scale, data_seed, data_clips,
//   data_frames
struct TrainConfig {
  std::vector<std::pair<std::size_t, double>> lr_schedule{{2000, 1e-2}, {3000, 1e-3}};
  std::uint64_t seed = 1;
  std::size_t l = 10;
  LossWeights loss;
  FlowSource flow_source = FlowSource::learned;
  Fusion fusion = Fusion::adaptive;
  double fixed_weight = 0.5;
  Trainable trainable = Trainable::all();
  std::string model = "desk";
  double clip_norm = 0;  // 0 disables gradient-norm clipping
  // The quality scores only see gradient through the softmax of a score difference, which is
  // far weaker than the backbone's; its layers step at lr * this. Much above 30 the hidden
  // ReLUs of the quality net die and w collapses to 0.5.
  double quality_lr_scale = 30;
  // Training data: a blur-heavy suite.
  std::uint64_t data_seed = 1000;
  std::size_t data_clips = 20;
  std::size_t data_frames = 40;

  std::size_t total_iterations() const { return lr_schedule.empty() ? 0 : lr_schedule.back().first; }
  double learning_rate(std::size_t iteration) const;
  GraphOptions graph() const;
  ModelSpec model_spec() const;
  SuiteOptions data_options() const;
  void validate() const;
};

TrainConfig parse_train_config(std::istream& is);
TrainConfig load_train_config(const std::filesystem::path& path);
void write_train_config(std::ostream& os, const TrainConfig& cfg);

struct LossRecord {
  std::size_t iteration = 0;
  double loss = 0;
  double lr = 0;
};

struct TrainResult {
  Params params;
  std::vector<LossRecord> curve;
};

// Plain SGD on one triplet per iteration. With a non-empty out_dir, writes loss.csv and a
// checkpoint at every schedule boundary (checkpoint_<iteration>.impp). A non-finite loss or
// gradient saves the last finite state as diverged.impp (when out_dir is set) and throws
// NumericalError. `init` replaces the seeded initialization when given.
TrainResult train(const std::vector<VideoClip>& clips, const TrainConfig& cfg,
                  const std::filesystem::path& out_dir = {}, const Params* init = nullptr);

// Columns: iteration, loss, lr
void write_loss_csv(std::ostream& os, const std::vector<LossRecord>& curve);

}  // namespace impnet
