#include "impnet/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <ostream>

#include "impnet/warp.hpp"

namespace impnet {

std::string_view to_string(FlowSource s) { return s == FlowSource::learned ? "learned" : "oracle"; }

FlowSource flow_source_from_string(std::string_view name) {
  if (name == "learned") return FlowSource::learned;
  if (name == "oracle") return FlowSource::oracle;
  throw ValidationError("unknown flow source '" + std::string(name) + "'");
}

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::perframe: return "perframe";
    case Mode::dff: return "dff";
    case Mode::fixed: return "fixed";
    case Mode::impression: return "impression";
  }
  return "unknown";
}

Mode mode_from_string(std::string_view name) {
  for (Mode m : {Mode::perframe, Mode::dff, Mode::fixed, Mode::impression}) {
    if (name == to_string(m)) return m;
  }
  throw ValidationError("unknown mode '" + std::string(name) + "'");
}

void SegmentConfig::validate() const {
  if (segment_length < 1) throw ValidationError("segment length must be at least 1");
  if (keyframe_offset >= segment_length) {
    throw ValidationError("keyframe offset " + std::to_string(keyframe_offset) + " outside segment of length " +
                          std::to_string(segment_length));
  }
  MemoryGate{memory_gate};
  if (!(fixed_weight >= 0.0 && fixed_weight <= 1.0)) throw ValidationError("fixed weight must lie in [0, 1]");
}

std::size_t keyframe_index(std::size_t start, std::size_t length, std::size_t offset) {
  if (length == 0) throw ValidationError("empty segment");
  return start + std::min(offset, length - 1);
}

namespace {

class Stopwatch {
 public:
  explicit Stopwatch(bool enabled) : enabled_(enabled) {}

  template <typename F>
  auto time(double& acc, F&& f) {
    if (!enabled_) return f();
    const auto t0 = std::chrono::steady_clock::now();
    auto result = f();
    acc += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return result;
  }

 private:
  bool enabled_;
};

void accumulate(ComponentCounts& into, const ComponentCounts& c) {
  into.feature += c.feature;
  into.flow += c.flow;
  into.warp += c.warp;
  into.aggregation += c.aggregation;
  into.task += c.task;
}

void accumulate(ComponentTiming& into, const ComponentTiming& t) {
  into.feature += t.feature;
  into.flow += t.flow;
  into.warp += t.warp;
  into.aggregation += t.aggregation;
  into.task += t.task;
}

}  // namespace

PipelineRun run_pipeline(const std::vector<Tensor>& frames, Mode mode, const SegmentConfig& cfg,
                         const Params& params, const OracleFlow& oracle, PipelineOptions options) {
  if (frames.empty()) throw ValidationError("pipeline: no frames");
  for (const auto& f : frames) {
    if (f.shape() != frames.front().shape()) throw ShapeError("pipeline: frames differ in shape");
  }
  cfg.validate();
  const bool sparse = mode != Mode::perframe;
  if (sparse && cfg.flow_source == FlowSource::oracle && !oracle) {
    throw ValidationError("pipeline: oracle flow source selected but no oracle supplied");
  }
  const bool uses_impression = mode == Mode::fixed || mode == Mode::impression;
  const MemoryGate gate(cfg.memory_gate);
  const std::size_t n = frames.size();
  const std::size_t l = sparse ? cfg.segment_length : 1;
  const std::size_t k = sparse ? cfg.keyframe_offset : 0;
  Stopwatch watch(options.measure_time);

  PipelineRun run;
  run.frames.resize(n);
  run.keyframe_latency = sparse ? std::min(k, n - 1) : 0;
  run.timed = options.measure_time;

  auto flow_between = [&](std::size_t target, std::size_t reference, ComponentTiming& t) -> FlowOutput {
    if (cfg.flow_source == FlowSource::oracle) {
      FlowField f = oracle(target, reference);
      if (f.channels() != 2) throw ShapeError("pipeline: oracle flow must have two channels");
      return {std::move(f), unit_scale(f.height(), f.width())};
    }
    return watch.time(t.flow, [&] { return flow_forward(frames[target], frames[reference], params); });
  };

  ImpressionState state;
  for (std::size_t start = 0, segment = 0; start < n; start += l, ++segment) {
    const std::size_t len = std::min(l, n - start);
    const std::size_t key = keyframe_index(start, len, k);
    FrameResult& key_result = run.frames[key];

    const Tensor f_key = watch.time(key_result.timing.feature, [&] { return feature_forward(frames[key], params); });
    ++key_result.counts.feature;

    Tensor f_task;
    std::optional<double> mean_w;
    if (!uses_impression || segment == 0) {
      f_task = f_key;
      if (uses_impression) state.f_imp = f_key;
    } else {
      const FlowOutput fl = flow_between(key, state.key_index, key_result.timing);
      ++key_result.counts.flow;
      const Tensor aligned =
          watch.time(key_result.timing.warp, [&] { return bilinear_warp(state.f_imp, fl.flow, fl.scale); });
      ++key_result.counts.warp;
      f_task = watch.time(key_result.timing.aggregation, [&] {
        const WeightPair w = mode == Mode::impression
                                 ? adaptive_weights(aligned, f_key, params)
                                 : constant_weights(f_key.height(), f_key.width(), cfg.fixed_weight);
        mean_w = w.mean();
        Tensor fused = fuse(aligned, f_key, w);
        state.f_imp = impression_update(f_key, fused, gate);
        return fused;
      });
      ++key_result.counts.aggregation;
    }
    state.key_index = key;
    state.segment_index = segment;

    // Non-key frames of a segment are independent; they run in frame order here and the
    // kernels parallelize internally.
    for (std::size_t i = start; i < start + len; ++i) {
      FrameResult& r = run.frames[i];
      r.frame_index = i;
      r.segment = segment;
      r.is_key = i == key;
      r.mean_w = mean_w;
      if (i == key) {
        r.task_feature = f_task;
      } else {
        const FlowOutput fl = flow_between(i, key, r.timing);
        ++r.counts.flow;
        r.task_feature = watch.time(r.timing.warp, [&] { return bilinear_warp(f_task, fl.flow, fl.scale); });
        ++r.counts.warp;
      }
      r.detections = watch.time(r.timing.task, [&] { return task_forward(r.task_feature, params); });
      ++r.counts.task;
    }
  }
  for (const auto& r : run.frames) {
    accumulate(run.counts, r.counts);
    accumulate(run.timing, r.timing);
  }
  return run;
}

PipelineRun run_impression(const std::vector<Tensor>& frames, const SegmentConfig& cfg, const Params& params,
                           const OracleFlow& oracle) {
  return run_pipeline(frames, Mode::impression, cfg, params, oracle);
}

PipelineRun per_frame_baseline(const std::vector<Tensor>& frames, const Params& params) {
  return run_pipeline(frames, Mode::perframe, SegmentConfig{}, params);
}

PipelineRun dff_baseline(const std::vector<Tensor>& frames, const SegmentConfig& cfg, const Params& params,
                         const OracleFlow& oracle) {
  return run_pipeline(frames, Mode::dff, cfg, params, oracle);
}

PipelineRun fixed_weight_variant(const std::vector<Tensor>& frames, const SegmentConfig& cfg, const Params& params,
                                 const OracleFlow& oracle) {
  SegmentConfig c = cfg;
  c.fixed_weight = 0.5;
  return run_pipeline(frames, Mode::fixed, c, params, oracle);
}

std::vector<Detection> collect_detections(const PipelineRun& run, std::size_t image_offset,
                                          const DecodeOptions& options) {
  std::vector<Detection> out;
  for (const auto& r : run.frames) {
    auto d = decode_detections(r.detections, image_offset + r.frame_index, options.confidence_floor, options.nms_iou);
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

void write_frames_csv(std::ostream& os, const PipelineRun& run, std::size_t frame_offset, bool header) {
  if (header) {
    os << "frame_index,segment,is_key,mean_w,feature_ms,flow_ms,warp_ms,aggregation_ms,task_ms,"
        "feature_calls,flow_calls,warp_calls,aggregation_calls,task_calls\n";
  }
  const auto old = os.precision(12);
  for (const auto& r : run.frames) {
    os << frame_offset + r.frame_index << ',' << r.segment << ',' << (r.is_key ? 1 : 0) << ',';
    if (r.mean_w) os << *r.mean_w;
    for (double ms : {r.timing.feature, r.timing.flow, r.timing.warp, r.timing.aggregation, r.timing.task}) {
      os << ',';
      if (run.timed) os << ms;
    }
    os << ',' << r.counts.feature << ',' << r.counts.flow << ',' << r.counts.warp << ',' << r.counts.aggregation
       << ',' << r.counts.task << '\n';
  }
  os.precision(old);
}

void write_detections_csv(std::ostream& os, const std::vector<Detection>& detections) {
  os << "frame_index,class,score,x1,y1,x2,y2\n";
  const auto old = os.precision(12);
  for (const auto& d : detections) {
    os << d.image << ',' << d.class_id << ',' << d.confidence << ',' << d.box.x1 << ',' << d.box.y1 << ','
       << d.box.x2 << ',' << d.box.y2 << '\n';
  }
  os.precision(old);
}

}  // namespace impnet
