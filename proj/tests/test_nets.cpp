#include <gtest/gtest.h>

#include <sstream>

#include "impnet/aggregation.hpp"
#include "impnet/nets.hpp"
#include "impnet/tensor_io.hpp"
#include "test_util.hpp"

using namespace impnet;
using impnet::testing::max_abs_diff;
using impnet::testing::random_tensor;

namespace {

const std::filesystem::path kFixtures = IMPNET_FIXTURE_DIR;

std::size_t layer_params(const LayerSpec& l) { return l.out_channels * l.in_channels * l.kernel * l.kernel + l.out_channels; }

}  // namespace

TEST(ModelSpec, DeskShapes) {
  const ModelSpec m = ModelSpec::desk();
  EXPECT_EQ(m.feature_stride(), 4u);
  EXPECT_EQ(m.feature_channels(), 16u);
  EXPECT_EQ(m.task_channels(), 1 + 4 + 4u);
  ASSERT_EQ(m.quality.layers.size(), 3u);
  EXPECT_EQ(m.quality.layers[0].kernel, 3u);
  EXPECT_EQ(m.quality.layers[0].out_channels, 16u);
  EXPECT_EQ(m.quality.layers[1].out_channels, 8u);
  EXPECT_EQ(m.quality.layers[2].out_channels, 1u);
  EXPECT_EQ(m.feature.stride_product(), 4u);
}

TEST(ModelSpec, ValidationCatchesBrokenChains) {
  ModelSpec m = ModelSpec::desk();
  m.quality.layers.back().out_channels = 2;
  EXPECT_THROW(m.validate(), ValidationError);
  m = ModelSpec::desk();
  m.feature.layers[2].in_channels = 7;
  EXPECT_THROW(m.validate(), ValidationError);
  m = ModelSpec::desk();
  m.feature.feature_stride = 8;
  EXPECT_THROW(m.validate(), ValidationError);
}

TEST(Params, CountMatchesSpec) {
  for (const ModelSpec& m : {ModelSpec::desk(), ModelSpec::tiny()}) {
    std::size_t expect = layer_params(m.flow_head) + layer_params(m.scale_head);
    for (const auto* net : {&m.feature, &m.flow, &m.quality, &m.task}) {
      for (const auto& l : net->layers) expect += layer_params(l);
    }
    EXPECT_EQ(Params::initialize(m, 1).parameter_count(), expect);
  }
  EXPECT_LE(Params::initialize(ModelSpec::tiny(), 1).parameter_count(), 500u);
}

TEST(Params, FlattenRoundTrip) {
  Params p = Params::initialize(ModelSpec::tiny(), 3, InitOptions{false});
  std::vector<double> v = p.flatten();
  for (auto& x : v) x *= 2;
  p.unflatten(v);
  EXPECT_EQ(p.flatten(), v);
  v.pop_back();
  EXPECT_THROW(p.unflatten(v), ShapeError);
}

TEST(Params, LayerOrderAndOwners) {
  const Params p = Params::initialize(ModelSpec::desk(), 1);
  EXPECT_EQ(p.first_layer(NetId::feature), 0u);
  EXPECT_EQ(p.layer_count(NetId::feature), 5u);
  EXPECT_EQ(p.flow_head().owner, NetId::flow);
  EXPECT_EQ(p.scale_head().owner, NetId::flow);
  for (std::size_t i = 0; i < p.layer_count(NetId::quality); ++i) {
    EXPECT_EQ(p.layers[p.first_layer(NetId::quality) + i].owner, NetId::quality);
  }
  EXPECT_EQ(p.first_layer(NetId::task) + p.layer_count(NetId::task), p.layers.size());
}

TEST(Params, SeededInitIsDeterministic) {
  EXPECT_EQ(Params::initialize(ModelSpec::desk(), 9).flatten(), Params::initialize(ModelSpec::desk(), 9).flatten());
  EXPECT_NE(Params::initialize(ModelSpec::desk(), 9).flatten(), Params::initialize(ModelSpec::desk(), 10).flatten());
}

TEST(Params, CheckpointRoundTrip) {
  Params p = Params::initialize(ModelSpec::desk(), 4, InitOptions{false});
  p.trained_iterations = 1234;
  std::stringstream ss;
  write_params(ss, p);
  const Params q = read_params(ss);
  EXPECT_EQ(q.spec, p.spec);
  EXPECT_EQ(q.flatten(), p.flatten());
  EXPECT_EQ(q.trained_iterations, 1234u);
  EXPECT_TRUE(q.scale_head().bias_frozen);
}

TEST(Params, CheckpointRejectsGarbage) {
  std::stringstream bad("not a checkpoint\n");
  EXPECT_THROW(read_params(bad), ValidationError);
  std::stringstream full;
  write_params(full, Params::initialize(ModelSpec::tiny(), 1));
  const std::string s = full.str();
  std::stringstream truncated(s.substr(0, s.size() - 16));
  EXPECT_THROW(read_params(truncated), std::invalid_argument);
  EXPECT_THROW(load_params("/nonexistent/ckpt.impp"), ValidationError);
}

TEST(FeatureNet, ZeroImageZeroBiasGivesZero) {
  const Params p = Params::initialize(ModelSpec::desk(), 2);
  const Tensor f = feature_forward(Tensor(3, 16, 16), p);
  EXPECT_EQ(f.shape(), (Shape{16, 4, 4}));
  for (double v : f.data()) EXPECT_EQ(v, 0.0);
}

TEST(FeatureNet, DeterministicAndShapeChecked) {
  const Params p = Params::initialize(ModelSpec::desk(), 2);
  std::mt19937_64 rng(1);
  const Tensor img = random_tensor({3, 16, 24}, rng, 0, 1);
  EXPECT_EQ(feature_forward(img, p), feature_forward(img, p));
  EXPECT_THROW(feature_forward(Tensor(2, 16, 16), p), ShapeError);
  EXPECT_THROW(feature_forward(Tensor(3, 18, 16), p), ShapeError);
}

TEST(FlowNet, FreshInitGivesUnitScaleAndZeroFlow) {
  const Params p = Params::initialize(ModelSpec::desk(), 3);
  std::mt19937_64 rng(2);
  const Tensor a = random_tensor({3, 16, 16}, rng, 0, 1), b = random_tensor({3, 16, 16}, rng, 0, 1);
  const FlowOutput fo = flow_forward(a, b, p);
  EXPECT_EQ(fo.flow.shape(), (Shape{2, 4, 4}));
  for (double v : fo.scale.data()) EXPECT_EQ(v, 1.0);
  const FlowOutput same = flow_forward(a, a, p);
  for (double v : same.flow.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(flow_forward(a, Tensor(3, 16, 20), p), ShapeError);
}

TEST(QualityNet, ZeroInitGivesUniformWeights) {
  const Params p = Params::initialize(ModelSpec::desk(), 4);
  std::mt19937_64 rng(3);
  const Tensor a = random_tensor({16, 5, 6}, rng), b = random_tensor({16, 5, 6}, rng, 0, 3);
  const Tensor q = quality_forward(a, p);
  for (double v : q.data()) EXPECT_EQ(v, 0.0);
  const WeightPair w = adaptive_weights(a, b, p);
  for (double v : w.w.data()) EXPECT_EQ(v, 0.5);
}

TEST(TaskNet, ZeroHeadGivesHalfObjectness) {
  const Params p = Params::initialize(ModelSpec::desk(), 5);
  const DetectionGrid g = task_forward(Tensor(16, 4, 4), p);
  EXPECT_EQ(g.num_classes, 4u);
  EXPECT_EQ(g.stride, 4u);
  for (double v : g.raw.data()) EXPECT_EQ(v, 0.0);
  std::mt19937_64 rng(4);
  const Tensor f = random_tensor({16, 4, 4}, rng);
  EXPECT_EQ(task_forward(f, p), task_forward(f, p));
}

TEST(GoldenFixtures, NetworksReproduceFrozenOutputs) {
  const Params p = load_params(kFixtures / "desk_seed7.impp");
  const Tensor a = load_tensor(kFixtures / "image_a.impt"), b = load_tensor(kFixtures / "image_b.impt");
  const Tensor feat = feature_forward(a, p);
  EXPECT_LT(max_abs_diff(feat, load_tensor(kFixtures / "feature_a.impt")), 1e-12);
  const FlowOutput fo = flow_forward(a, b, p);
  EXPECT_LT(max_abs_diff(fo.flow, load_tensor(kFixtures / "flow_ab.impt")), 1e-12);
  EXPECT_LT(max_abs_diff(fo.scale, load_tensor(kFixtures / "scale_ab.impt")), 1e-12);
  EXPECT_LT(max_abs_diff(quality_forward(feat, p), load_tensor(kFixtures / "quality_a.impt")), 1e-12);
}
