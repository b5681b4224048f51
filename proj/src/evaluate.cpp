#include "impnet/evaluate.hpp"

namespace impnet {

OracleFlow oracle_flow(const VideoClip& clip, std::size_t stride) {
  return [&clip, stride](std::size_t target, std::size_t reference) { return clip.flow(target, reference, stride); };
}

std::vector<GroundTruth> ground_truth(const VideoClip& clip, std::size_t image_offset) {
  std::vector<GroundTruth> out;
  for (std::size_t t = 0; t < clip.boxes.size(); ++t) {
    for (const auto& b : clip.boxes[t]) out.push_back({image_offset + t, b.class_id, b.box});
  }
  return out;
}

EvalResult evaluate(const std::vector<VideoClip>& clips, Mode mode, const SegmentConfig& cfg, const Params& params,
                    PipelineOptions options, const DecodeOptions& decode) {
  if (clips.empty()) throw ValidationError("evaluate: no clips");
  EvalResult result;
  std::vector<Detection> detections;
  std::vector<GroundTruth> truth;
  for (const auto& clip : clips) {
    const PipelineRun run =
        run_pipeline(clip.frames, mode, cfg, params, oracle_flow(clip, params.spec.feature_stride()), options);
    auto d = collect_detections(run, result.frames, decode);
    detections.insert(detections.end(), d.begin(), d.end());
    auto g = ground_truth(clip, result.frames);
    truth.insert(truth.end(), g.begin(), g.end());
    for (const auto& r : run.frames) {
      if (!r.is_key || !r.mean_w) continue;
      const bool degraded = clip.severity(r.frame_index, DegradationKind::gaussian_blur) >= 2.0;
      (degraded ? result.key_w_degraded : result.key_w_clean).push_back(*r.mean_w);
    }
    result.frames += clip.size();
    result.ms += run.timing.total();
  }
  result.map = compute_map(detections, truth, params.spec.num_classes);
  return result;
}

}  // namespace impnet
