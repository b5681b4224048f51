#include <gtest/gtest.h>

#include <sstream>

#include "impnet/evaluate.hpp"
#include "impnet/pipeline.hpp"
#include "test_util.hpp"

using namespace impnet;
using impnet::testing::linear_identity_params;
using impnet::testing::random_tensor;

namespace {

std::vector<Tensor> random_frames(std::size_t n, std::mt19937_64& rng, std::size_t h = 16, std::size_t w = 16) {
  std::vector<Tensor> frames;
  for (std::size_t i = 0; i < n; ++i) frames.push_back(random_tensor({3, h, w}, rng, 0, 1));
  return frames;
}

OracleFlow zero_flow(std::size_t h, std::size_t w) {
  return [h, w](std::size_t, std::size_t) { return FlowField(2, h, w); };
}

SegmentConfig oracle_cfg(std::size_t l, std::size_t k, double g = 1.0) {
  SegmentConfig c;
  c.segment_length = l;
  c.keyframe_offset = k;
  c.memory_gate = g;
  c.flow_source = FlowSource::oracle;
  return c;
}

// Keyframe s of a linear identity model carries the constant one-hot image e_s.
std::vector<Tensor> one_hot_keyframes(std::size_t segments, std::size_t l, std::size_t k, std::mt19937_64& rng) {
  std::vector<Tensor> frames;
  for (std::size_t s = 0; s < segments; ++s) {
    for (std::size_t i = 0; i < l; ++i) {
      if (i == k) {
        Tensor e(segments, 2, 2);
        for (double& v : e.channel(s)) v = 1.0;
        frames.push_back(e);
      } else {
        frames.push_back(random_tensor({segments, 2, 2}, rng, 0, 1));
      }
    }
  }
  return frames;
}

}  // namespace

TEST(KeyframeIndex, ClampsIntoShortSegments) {
  EXPECT_EQ(keyframe_index(0, 10, 4), 4u);
  EXPECT_EQ(keyframe_index(20, 3, 4), 22u);
  EXPECT_EQ(keyframe_index(5, 1, 0), 5u);
  EXPECT_THROW(keyframe_index(0, 0, 0), ValidationError);
}

TEST(SegmentConfig, Validation) {
  EXPECT_NO_THROW(oracle_cfg(10, 9).validate());
  EXPECT_THROW(oracle_cfg(10, 10).validate(), ValidationError);
  EXPECT_THROW(oracle_cfg(0, 0).validate(), ValidationError);
  EXPECT_THROW(oracle_cfg(5, 2, 1.5).validate(), ValidationError);
  EXPECT_THROW(mode_from_string("turbo"), ValidationError);
  EXPECT_EQ(mode_from_string("dff"), Mode::dff);
  EXPECT_EQ(flow_source_from_string("oracle"), FlowSource::oracle);
}

TEST(Pipeline, SingleFrameEqualsPerFrame) {
  const Params p = Params::initialize(ModelSpec::desk(), 1);
  std::mt19937_64 rng(1);
  const auto frames = random_frames(1, rng);
  SegmentConfig cfg;
  const PipelineRun a = run_impression(frames, cfg, p), b = per_frame_baseline(frames, p);
  EXPECT_EQ(a.frames[0].task_feature, b.frames[0].task_feature);
  EXPECT_EQ(a.frames[0].detections, b.frames[0].detections);
}

TEST(Pipeline, IdenticalFramesAreAFixedPoint) {
  const Params p = Params::initialize(ModelSpec::desk(), 2);
  std::mt19937_64 rng(2);
  const std::vector<Tensor> frames(23, random_frames(1, rng)[0]);
  const Tensor f0 = feature_forward(frames[0], p);
  for (double g : {0.0, 0.5, 1.0}) {
    for (Mode m : {Mode::dff, Mode::fixed, Mode::impression}) {
      const PipelineRun run = run_pipeline(frames, m, oracle_cfg(5, 2, g), p, zero_flow(4, 4));
      for (const auto& r : run.frames) EXPECT_EQ(r.task_feature, f0) << to_string(m) << " g=" << g;
    }
  }
  const PipelineRun run = run_pipeline(frames, Mode::impression, oracle_cfg(5, 2, 0.3), p, zero_flow(4, 4));
  for (const auto& r : run.frames) EXPECT_LT(impnet::testing::max_abs_diff(r.task_feature, f0), 1e-14);
}

TEST(Pipeline, CoefficientsFollowContributionProfile) {
  const Params p = linear_identity_params(3);
  std::mt19937_64 rng(3);
  const auto frames = one_hot_keyframes(3, 4, 1, rng);
  const PipelineRun run = run_pipeline(frames, Mode::impression, oracle_cfg(4, 1, 1.0), p, zero_flow(2, 2));
  const Tensor& last = run.frames[2 * 4 + 1].task_feature;
  const auto profile = contribution_profile(MemoryGate(1.0), 0.5, 3);
  for (std::size_t m = 0; m < 3; ++m) {
    for (double v : last.channel(2 - m)) EXPECT_NEAR(v, profile[m], 1e-10);
  }
}

TEST(Pipeline, ZeroGateDropsOlderKeyframes) {
  const Params p = linear_identity_params(4);
  std::mt19937_64 rng(4);
  const auto frames = one_hot_keyframes(4, 3, 2, rng);
  const PipelineRun run = run_pipeline(frames, Mode::impression, oracle_cfg(3, 2, 0.0), p, zero_flow(2, 2));
  const Tensor& last = run.frames[3 * 3 + 2].task_feature;
  for (double v : last.channel(0)) EXPECT_EQ(v, 0.0);
  for (double v : last.channel(1)) EXPECT_EQ(v, 0.0);
  for (double v : last.channel(2)) EXPECT_EQ(v, 0.5);
  for (double v : last.channel(3)) EXPECT_EQ(v, 0.5);
}

TEST(Pipeline, ComponentCounts) {
  const Params p = Params::initialize(ModelSpec::desk(), 3);
  std::mt19937_64 rng(5);
  const auto frames = random_frames(23, rng);
  const std::size_t l = 5, segments = 5;
  SegmentConfig cfg;
  cfg.segment_length = l;
  cfg.keyframe_offset = 2;
  const PipelineRun imp = run_impression(frames, cfg, p);
  EXPECT_EQ(imp.counts.feature, segments);
  EXPECT_EQ(imp.counts.flow, 23 - segments + (segments - 1));
  EXPECT_EQ(imp.counts.warp, 23 - segments + (segments - 1));
  EXPECT_EQ(imp.counts.aggregation, segments - 1);
  EXPECT_EQ(imp.counts.task, 23u);
  const PipelineRun dff = dff_baseline(frames, cfg, p);
  EXPECT_EQ(dff.counts.feature, segments);
  EXPECT_EQ(dff.counts.flow, 23 - segments);
  EXPECT_EQ(dff.counts.aggregation, 0u);
  const PipelineRun per = per_frame_baseline(frames, p);
  EXPECT_EQ(per.counts, (ComponentCounts{23, 0, 0, 0, 23}));
  EXPECT_EQ(imp.keyframe_latency, 2u);
}

TEST(Pipeline, KeyframeResultsCarryFusionWeight) {
  const Params p = Params::initialize(ModelSpec::desk(), 3);
  std::mt19937_64 rng(6);
  const auto frames = random_frames(12, rng);
  SegmentConfig cfg;
  cfg.segment_length = 5;
  cfg.keyframe_offset = 2;
  const PipelineRun run = run_impression(frames, cfg, p);
  for (const auto& r : run.frames) {
    EXPECT_EQ(r.is_key, r.frame_index == 2 || r.frame_index == 7 || r.frame_index == 11);
    EXPECT_EQ(r.segment, r.frame_index / 5);
    EXPECT_EQ(r.mean_w.has_value(), r.segment >= 1);
    if (r.mean_w) EXPECT_EQ(*r.mean_w, 0.5);
  }
}

TEST(Pipeline, PerFrameIsStateless) {
  const Params p = Params::initialize(ModelSpec::desk(), 4, InitOptions{false});
  std::mt19937_64 rng(7);
  const auto frames = random_frames(6, rng);
  std::vector<Tensor> reversed(frames.rbegin(), frames.rend());
  const PipelineRun a = per_frame_baseline(frames, p), b = per_frame_baseline(reversed, p);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(a.frames[i].detections, b.frames[5 - i].detections);
}

TEST(Pipeline, FixedWeightOneEqualsDff) {
  const Params p = Params::initialize(ModelSpec::desk(), 5, InitOptions{false});
  std::mt19937_64 rng(8);
  const auto frames = random_frames(17, rng);
  SegmentConfig cfg;
  cfg.segment_length = 4;
  cfg.keyframe_offset = 1;
  cfg.fixed_weight = 1.0;
  const PipelineRun fixed = run_pipeline(frames, Mode::fixed, cfg, p);
  const PipelineRun dff = dff_baseline(frames, cfg, p);
  for (std::size_t i = 0; i < frames.size(); ++i) EXPECT_EQ(fixed.frames[i].task_feature, dff.frames[i].task_feature);
}

TEST(Pipeline, DffMatchesPerFrameAtKeyframes) {
  const Params p = Params::initialize(ModelSpec::desk(), 6, InitOptions{false});
  std::mt19937_64 rng(9);
  const auto frames = random_frames(13, rng);
  SegmentConfig cfg;
  cfg.segment_length = 4;
  cfg.keyframe_offset = 3;
  const PipelineRun dff = dff_baseline(frames, cfg, p), per = per_frame_baseline(frames, p);
  for (const auto& r : dff.frames) {
    if (r.is_key) EXPECT_EQ(r.task_feature, per.frames[r.frame_index].task_feature);
  }
}

TEST(Pipeline, ZeroInitQualityNetMakesImpressionEqualFixed) {
  const Params p = Params::initialize(ModelSpec::desk(), 7);
  std::mt19937_64 rng(10);
  const auto frames = random_frames(21, rng);
  SegmentConfig cfg;
  cfg.segment_length = 6;
  cfg.keyframe_offset = 2;
  const PipelineRun a = run_impression(frames, cfg, p), b = fixed_weight_variant(frames, cfg, p);
  for (std::size_t i = 0; i < frames.size(); ++i) EXPECT_EQ(a.frames[i].task_feature, b.frames[i].task_feature);
}

TEST(Pipeline, OracleRequiredWhenSelected) {
  const Params p = Params::initialize(ModelSpec::desk(), 1);
  std::mt19937_64 rng(11);
  const auto frames = random_frames(4, rng);
  EXPECT_THROW(run_pipeline(frames, Mode::dff, oracle_cfg(2, 0), p), ValidationError);
  EXPECT_NO_THROW(run_pipeline(frames, Mode::perframe, oracle_cfg(2, 0), p));
  EXPECT_THROW(run_pipeline({}, Mode::dff, SegmentConfig{}, p), ValidationError);
  std::vector<Tensor> mixed = frames;
  mixed.push_back(Tensor(3, 8, 8));
  EXPECT_THROW(run_pipeline(mixed, Mode::dff, SegmentConfig{}, p), ShapeError);
}

TEST(Pipeline, OracleFlowTracksMovingObject) {
  SceneSpec s;
  s.width = s.height = 32;
  s.frame_count = 8;
  s.num_classes = 4;
  s.objects.push_back({0, ShapeKind::rect, {0.9, 0.9, 0.1}, 12, 12, 4, 8, 2, 0});
  const VideoClip clip = render(s);
  const Params p = Params::initialize(ModelSpec::desk(), 2);
  const PipelineRun run = run_pipeline(clip.frames, Mode::dff, oracle_cfg(8, 0), p, oracle_flow(clip, 4));
  // A 2 px/frame object moves two feature cells in four frames; the warped feature at the
  // object's new cells equals the keyframe feature at its old cells.
  const Tensor key = feature_forward(clip.frames[0], p);
  const Tensor& warped = run.frames[4].task_feature;
  for (std::size_t c = 0; c < key.channels(); ++c) EXPECT_EQ(warped(c, 3, 4), key(c, 3, 2));
}

TEST(Pipeline, TimingIsOptIn) {
  const Params p = Params::initialize(ModelSpec::desk(), 1);
  std::mt19937_64 rng(12);
  const auto frames = random_frames(6, rng);
  const PipelineRun quiet = run_impression(frames, SegmentConfig{}, p);
  EXPECT_FALSE(quiet.timed);
  EXPECT_EQ(quiet.timing.total(), 0.0);
  const PipelineRun timed = run_pipeline(frames, Mode::impression, SegmentConfig{}, p, {}, PipelineOptions{true});
  EXPECT_TRUE(timed.timed);
  EXPECT_GT(timed.timing.feature, 0.0);
}

TEST(Pipeline, FramesCsvIsDeterministic) {
  const Params p = Params::initialize(ModelSpec::desk(), 1);
  std::mt19937_64 rng(13);
  const auto frames = random_frames(12, rng);
  SegmentConfig cfg;
  cfg.segment_length = 5;
  cfg.keyframe_offset = 2;
  std::ostringstream a, b;
  write_frames_csv(a, run_impression(frames, cfg, p));
  write_frames_csv(b, run_impression(frames, cfg, p));
  EXPECT_EQ(a.str(), b.str());
  std::istringstream lines(a.str());
  std::string header, row;
  std::getline(lines, header);
  EXPECT_EQ(header,
            "frame_index,segment,is_key,mean_w,feature_ms,flow_ms,warp_ms,aggregation_ms,task_ms,"
            "feature_calls,flow_calls,warp_calls,aggregation_calls,task_calls");
  std::size_t rows = 0;
  while (std::getline(lines, row)) ++rows;
  EXPECT_EQ(rows, 12u);
}

TEST(Pipeline, CollectDetectionsOffsetsImages) {
  Params p = Params::initialize(ModelSpec::desk(), 1);
  auto& head = p.layers[p.first_layer(NetId::task) + 1];
  head.bias[0] = 5;  // every cell confident
  std::mt19937_64 rng(14);
  const auto frames = random_frames(3, rng);
  const auto dets = collect_detections(per_frame_baseline(frames, p), 100);
  ASSERT_FALSE(dets.empty());
  for (const auto& d : dets) {
    EXPECT_GE(d.image, 100u);
    EXPECT_LT(d.image, 103u);
  }
  std::ostringstream os;
  write_detections_csv(os, dets);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "frame_index,class,score,x1,y1,x2,y2");
}
