#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "impnet/aggregation.hpp"
#include "test_util.hpp"

using namespace impnet;
using impnet::testing::random_tensor;

namespace {

// Symbolic expansion of the recursion f_task_n = (1 - w) f_imp_{n-1} + w f_n,
// f_imp_n = (1 - g) f_n + g f_task_n, f_task_0 = f_0, tracked as coefficient vectors
// over the keyframe features f_0 .. f_{n-1}.
std::vector<double> expand(double g, double w, std::size_t n) {
  std::vector<double> task(n, 0.0), imp(n, 0.0);
  task[0] = 1.0;
  imp = task;  // (1 - g) f_0 + g f_0
  for (std::size_t s = 1; s < n; ++s) {
    std::vector<double> t(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) t[j] = (1 - w) * imp[j];
    t[s] += w;
    std::vector<double> next(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) next[j] = g * t[j];
    next[s] += 1 - g;
    task = t;
    imp = next;
  }
  std::vector<double> by_offset(n);
  for (std::size_t m = 0; m < n; ++m) by_offset[m] = task[n - 1 - m];
  return by_offset;
}

}  // namespace

TEST(SoftmaxWeights, PointwiseAndNormalized) {
  std::mt19937_64 rng(1);
  const Tensor si = random_tensor({1, 4, 5}, rng, -5, 5), sk = random_tensor({1, 4, 5}, rng, -5, 5);
  const WeightPair w = softmax_weights(si, sk);
  const Tensor c = w.complement();
  for (std::size_t i = 0; i < si.size(); ++i) {
    const double expect = std::exp(sk[i]) / (std::exp(si[i]) + std::exp(sk[i]));
    EXPECT_NEAR(w.w[i], expect, 1e-15);
    EXPECT_NEAR(w.w[i] + c[i], 1.0, 1e-12);
  }
  EXPECT_THROW(softmax_weights(si, Tensor(1, 4, 4)), ShapeError);
  EXPECT_THROW(softmax_weights(Tensor(2, 4, 5), Tensor(2, 4, 5)), ShapeError);
}

TEST(SoftmaxWeights, StableForHugeScores) {
  const Tensor si(Shape{1, 1, 2}, {800, -800}), sk(Shape{1, 1, 2}, {-800, 800});
  const WeightPair w = softmax_weights(si, sk);
  EXPECT_EQ(w.w[0], 0.0);
  EXPECT_EQ(w.w[1], 1.0);
}

TEST(SoftmaxWeights, SymmetricInputsGiveHalf) {
  std::mt19937_64 rng(2);
  const Tensor s = random_tensor({1, 3, 3}, rng);
  const WeightPair w = softmax_weights(s, s);
  for (double v : w.w.data()) EXPECT_EQ(v, 0.5);
}

TEST(AdaptiveWeights, IdenticalInputsGiveHalfForAnyQualityNet) {
  const Params p = Params::initialize(ModelSpec::desk(), 3, InitOptions{false});
  std::mt19937_64 rng(3);
  const Tensor f = random_tensor({16, 4, 4}, rng, 0, 1);
  const WeightPair w = adaptive_weights(f, f, p);
  for (double v : w.w.data()) EXPECT_EQ(v, 0.5);
}

TEST(Fuse, Endpoints) {
  std::mt19937_64 rng(4);
  const Tensor imp = random_tensor({3, 2, 2}, rng), key = random_tensor({3, 2, 2}, rng);
  EXPECT_EQ(fuse(imp, key, constant_weights(2, 2, 1.0)), key);
  EXPECT_EQ(fuse(imp, key, constant_weights(2, 2, 0.0)), imp);
  EXPECT_EQ(fuse(Tensor(1, 1, 1, 2.0), Tensor(1, 1, 1, 4.0), constant_weights(1, 1, 0.5)), Tensor(1, 1, 1, 3.0));
  EXPECT_THROW(fuse(imp, key, constant_weights(3, 2, 0.5)), ShapeError);
  EXPECT_THROW(constant_weights(2, 2, 1.5), ValidationError);
}

TEST(Fuse, BroadcastsPositionWise) {
  std::mt19937_64 rng(5);
  const Tensor imp = random_tensor({3, 2, 3}, rng), key = random_tensor({3, 2, 3}, rng);
  const WeightPair w{random_tensor({1, 2, 3}, rng, 0, 1)};
  const Tensor out = fuse(imp, key, w);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < 2; ++y) {
      for (std::size_t x = 0; x < 3; ++x) {
        const double a = w.w(0, y, x);
        EXPECT_NEAR(out(c, y, x), (1 - a) * imp(c, y, x) + a * key(c, y, x), 1e-15);
      }
    }
  }
}

TEST(ImpressionUpdate, GateEndpoints) {
  std::mt19937_64 rng(6);
  const Tensor key = random_tensor({2, 3, 3}, rng), task = random_tensor({2, 3, 3}, rng);
  EXPECT_EQ(impression_update(key, task, MemoryGate(0.0)), key);
  EXPECT_EQ(impression_update(key, task, MemoryGate(1.0)), task);
  EXPECT_EQ(impression_update(Tensor(1, 1, 1, 2.0), Tensor(1, 1, 1, 4.0), MemoryGate(0.5)), Tensor(1, 1, 1, 3.0));
  EXPECT_THROW(MemoryGate(-0.1), ValidationError);
  EXPECT_THROW(MemoryGate(1.01), ValidationError);
}

TEST(ContributionProfile, HandValues) {
  EXPECT_EQ(contribution_profile(MemoryGate(0.0), 0.5, 4), (std::vector<double>{0.5, 0.5, 0, 0}));
  const auto p = contribution_profile(MemoryGate(1.0), 0.5, 3);
  ASSERT_EQ(p.size(), 3u);
  EXPECT_NEAR(p[0], 0.5, 1e-15);
  EXPECT_NEAR(p[1], 0.25, 1e-15);
  EXPECT_NEAR(p[2], 0.25, 1e-15);
  EXPECT_EQ(contribution_profile(MemoryGate(0.3), 0.5, 1), std::vector<double>{1.0});
  EXPECT_THROW(contribution_profile(MemoryGate(0.3), 0.5, 0), ValidationError);
}

TEST(ContributionProfile, MatchesSymbolicExpansion) {
  for (double g : {0.0, 0.2, 0.5, 0.9, 1.0}) {
    for (double w : {0.1, 0.5, 0.8}) {
      for (std::size_t n = 1; n <= 8; ++n) {
        const auto got = contribution_profile(MemoryGate(g), w, n);
        const auto want = expand(g, w, n);
        ASSERT_EQ(got.size(), n);
        double sum = 0;
        for (std::size_t m = 0; m < n; ++m) {
          EXPECT_NEAR(got[m], want[m], 1e-14) << "g=" << g << " w=" << w << " n=" << n << " m=" << m;
          sum += got[m];
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);  // convex combination
      }
    }
  }
}

// Mass reaching back at least m keyframes has the closed form (1 - w) (g (1 - w))^(m - 1).
TEST(ContributionProfile, CumulativeClosedForm) {
  for (double g : {0.0, 0.3, 1.0}) {
    for (double w : {0.2, 0.5}) {
      const auto tail = cumulative_contribution(contribution_profile(MemoryGate(g), w, 9));
      EXPECT_NEAR(tail[0], 1.0, 1e-12);
      for (std::size_t m = 1; m < 9; ++m) {
        EXPECT_NEAR(tail[m], (1 - w) * std::pow(g * (1 - w), static_cast<double>(m - 1)), 1e-14);
      }
    }
  }
  EXPECT_TRUE(cumulative_contribution({}).empty());
}

// Offset 1 carries exactly 1 - w for every g, so allow rounding noise.
TEST(ContributionProfile, CumulativeNonDecreasingInGate) {
  const double grid[] = {0.0, 0.25, 0.5, 0.75, 1.0};
  for (double w : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    for (std::size_t n = 2; n <= 20; ++n) {
      std::vector<double> prev(n, -1.0);
      for (double g : grid) {
        const auto tail = cumulative_contribution(contribution_profile(MemoryGate(g), w, n));
        for (std::size_t m = 1; m < n; ++m) {
          EXPECT_GE(tail[m], prev[m] - 1e-15) << "w=" << w << " n=" << n << " m=" << m << " g=" << g;
          prev[m] = tail[m];
        }
      }
    }
  }
}

// The oldest keyframe's own coefficient grows with g, but the newest previous keyframe
// loses weight to older ones: (1 - w)(1 - g(1 - w)) at offset 1.
TEST(ContributionProfile, SingleOffsetCoefficientsShiftOlder) {
  const double w = 0.3;
  const auto g0 = contribution_profile(MemoryGate(0.0), w, 4);
  const auto g1 = contribution_profile(MemoryGate(1.0), w, 4);
  EXPECT_NEAR(g0[1], 0.7, 1e-15);
  EXPECT_NEAR(g1[1], 0.7 * 0.3, 1e-15);
  EXPECT_LT(g1[1], g0[1]);
  EXPECT_GT(g1[3], g0[3]);
}

TEST(ContributionProfile, CsvColumns) {
  std::ostringstream os;
  write_contribution_csv(os, {0.5, 0.25, 0.25});
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "offset,coefficient");
}
