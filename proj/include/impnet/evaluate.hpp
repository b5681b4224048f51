#pragma once

#include <vector>

#include "impnet/metrics.hpp"
#include "impnet/pipeline.hpp"
#include "impnet/synth.hpp"

namespace impnet {

// Ground-truth flows of a clip at the given feature stride.
OracleFlow oracle_flow(const VideoClip& clip, std::size_t stride);

// Boxes of every frame with `image_offset` added to frame indices.
std::vector<GroundTruth> ground_truth(const VideoClip& clip, std::size_t image_offset);

struct EvalResult {
  MapResult map;
  std::size_t frames = 0;
  double ms = 0;  // summed component time, 0 unless timed
  // Mean fusion weight at keyframes of segments >= 1, split by keyframe degradation
  // (gaussian blur with sigma >= 2 counts as degraded).
  std::vector<double> key_w_clean;
  std::vector<double> key_w_degraded;
};

EvalResult evaluate(const std::vector<VideoClip>& clips, Mode mode, const SegmentConfig& cfg, const Params& params,
                    PipelineOptions options = {}, const DecodeOptions& decode = {});

}  // namespace impnet
