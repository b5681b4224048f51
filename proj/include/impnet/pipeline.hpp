#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "impnet/aggregation.hpp"
#include "impnet/metrics.hpp"
#include "impnet/nets.hpp"

namespace impnet {

enum class FlowSource { learned, oracle };

// perframe: full feature network on every frame.
// dff: sparse keyframes propagated by flow, no impression.
// fixed: impression with w = SegmentConfig::fixed_weight everywhere.
// impression: impression with quality-aware weights.
enum class Mode { perframe, dff, fixed, impression };

std::string_view to_string(FlowSource s);
FlowSource flow_source_from_string(std::string_view name);
std::string_view to_string(Mode m);
Mode mode_from_string(std::string_view name);

struct SegmentConfig {
  std::size_t segment_length = 10;
  std::size_t keyframe_offset = 4;
  double memory_gate = 1.0;
  FlowSource flow_source = FlowSource::learned;
  double fixed_weight = 0.5;  // only used by Mode::fixed

  void validate() const;
};

// Ground-truth flow provider: grid displacement from `target` into `reference`.
using OracleFlow = std::function<FlowField(std::size_t target, std::size_t reference)>;

struct ComponentCounts {
  std::size_t feature = 0;
  std::size_t flow = 0;
  std::size_t warp = 0;
  std::size_t aggregation = 0;
  std::size_t task = 0;

  friend bool operator==(const ComponentCounts&, const ComponentCounts&) = default;
};

// Milliseconds spent per component; all zero unless timing was requested.
struct ComponentTiming {
  double feature = 0, flow = 0, warp = 0, aggregation = 0, task = 0;

  double total() const { return feature + flow + warp + aggregation + task; }
};

struct FrameResult {
  std::size_t frame_index = 0;
  std::size_t segment = 0;
  bool is_key = false;
  std::optional<double> mean_w;  // weight of the new keyframe in this segment's fusion
  Tensor task_feature;
  DetectionGrid detections;
  ComponentCounts counts;
  ComponentTiming timing;
};

struct ImpressionState {
  Tensor f_imp;
  std::size_t key_index = 0;  // frame index of the keyframe f_imp is aligned to
  std::size_t segment_index = 0;
};

struct PipelineOptions {
  bool measure_time = false;
};

struct PipelineRun {
  std::vector<FrameResult> frames;
  ComponentCounts counts;
  ComponentTiming timing;
  // Frames a causal system would have to wait before the first keyframe is available.
  std::size_t keyframe_latency = 0;
  bool timed = false;
};

// Keyframe of the segment starting at `start` with `length` frames.
std::size_t keyframe_index(std::size_t start, std::size_t length, std::size_t offset);

// All four modes share this code path; `oracle` is required when cfg.flow_source is oracle.
PipelineRun run_pipeline(const std::vector<Tensor>& frames, Mode mode, const SegmentConfig& cfg,
                         const Params& params, const OracleFlow& oracle = {}, PipelineOptions options = {});

PipelineRun run_impression(const std::vector<Tensor>& frames, const SegmentConfig& cfg, const Params& params,
                           const OracleFlow& oracle = {});
PipelineRun per_frame_baseline(const std::vector<Tensor>& frames, const Params& params);
PipelineRun dff_baseline(const std::vector<Tensor>& frames, const SegmentConfig& cfg, const Params& params,
                         const OracleFlow& oracle = {});
PipelineRun fixed_weight_variant(const std::vector<Tensor>& frames, const SegmentConfig& cfg, const Params& params,
                                 const OracleFlow& oracle = {});

struct DecodeOptions {
  double confidence_floor = 0.05;
  double nms_iou = 0.3;
};

// Detections of every frame, with `image_offset` added to frame indices.
std::vector<Detection> collect_detections(const PipelineRun& run, std::size_t image_offset,
                                          const DecodeOptions& options = {});

// Columns: frame_index, segment, is_key, mean_w, <component>_ms, <component>_calls for the components
// feature, flow, warp, aggregation, task. The _ms cells are empty when the run was not timed.
// frame_offset is added to frame indices so runs over several clips can share one file.
void write_frames_csv(std::ostream& os, const PipelineRun& run, std::size_t frame_offset = 0, bool header = true);
// Columns: frame_index, class, score, x1, y1, x2, y2
void write_detections_csv(std::ostream& os, const std::vector<Detection>& detections);

}  // namespace impnet
