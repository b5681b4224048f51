#include <cmath>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "impnet/aggregation.hpp"
#include "impnet/harness.hpp"
#include "impnet/metrics.hpp"
#include "impnet/schedule.hpp"
#include "impnet/training.hpp"
#include "impnet/warp.hpp"

namespace impnet {
namespace {

bool close(double analytic, double numeric, double abs_floor = 1e-9) {
  return std::abs(analytic - numeric) <= 1e-5 * std::max(std::abs(analytic), std::abs(numeric)) + abs_floor;
}

Tensor random_tensor(Shape s, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(s);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

double weighted_sum(const Tensor& x, const Tensor& weights) {
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * weights[i];
  return s;
}

// Central differences of f at every entry of x against `analytic`.
template <typename F>
bool fd_matches(Tensor x, const Tensor& analytic, F&& f) {
  const double h = 1e-5;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f(x);
    x[i] = orig - h;
    const double down = f(x);
    x[i] = orig;
    if (!close(analytic[i], (up - down) / (2 * h))) return false;
  }
  return true;
}

bool check_schedule() {
  const double expected[] = {5.5, 4.7, 4.1, 3.7, 3.5, 3.5};
  for (std::size_t k = 0; k < 6; ++k) {
    if (avg_propagation_distance(10, k) != expected[k]) return false;
  }
  for (std::size_t l = 1; l <= 50; ++l) {
    if (optimal_keyframe(l) != (l - 1) / 2) return false;
  }
  return true;
}

bool check_runtime_ratio() {
  const CostModel only_feat{100, 0, 0, 0, 0};
  const CostModel flow20{100, 20, 0, 0, 0};
  return std::abs(runtime_ratio_exact(only_feat, 10) - 0.1) < 1e-15 &&
         std::abs(runtime_ratio_exact(flow20, 10) - 0.3) < 1e-15 &&
         std::abs(runtime_ratio_approx(flow20, 10) - 0.3) < 1e-15;
}

bool check_warp_identity(std::mt19937_64& rng) {
  const Tensor f = random_tensor({3, 7, 9}, rng, -1, 1);
  return bilinear_warp(f, Tensor(2, 7, 9), unit_scale(7, 9)) == f;
}

bool check_warp_translation(std::mt19937_64& rng) {
  const Tensor f = random_tensor({2, 10, 12}, rng, -1, 1);
  const Tensor out = bilinear_warp(f, translation_flow(2, -1, 10, 12), unit_scale(10, 12));
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t y = 1; y < 10; ++y) {
      for (std::size_t x = 0; x + 2 < 12; ++x) {
        if (out(c, y, x) != f(c, y - 1, x + 2)) return false;
      }
    }
  }
  return true;
}

bool check_warp_gradients(std::mt19937_64& rng) {
  const Tensor f = random_tensor({2, 5, 6}, rng, -1, 1);
  const Tensor flow = random_tensor({2, 5, 6}, rng, -1.7, 1.7);
  const Tensor scale = random_tensor({1, 5, 6}, rng, 0.5, 1.5);
  const Tensor up = random_tensor({2, 5, 6}, rng, -1, 1);
  const WarpGradients g = bilinear_warp_backward(f, flow, scale, up);
  return fd_matches(f, g.feature, [&](const Tensor& x) { return weighted_sum(bilinear_warp(x, flow, scale), up); }) &&
         fd_matches(flow, g.flow, [&](const Tensor& x) { return weighted_sum(bilinear_warp(f, x, scale), up); }) &&
         fd_matches(scale, g.scale, [&](const Tensor& x) { return weighted_sum(bilinear_warp(f, flow, x), up); });
}

bool check_fusion_gradients(std::mt19937_64& rng) {
  const Params params = Params::initialize(ModelSpec::tiny(), 3);
  const Tensor a = random_tensor({3, 4, 4}, rng, -1, 1), b = random_tensor({3, 4, 4}, rng, -1, 1);
  const Tensor sa = random_tensor({1, 4, 4}, rng, -2, 2), sb = random_tensor({1, 4, 4}, rng, -2, 2);
  const Tensor up = random_tensor({3, 4, 4}, rng, -1, 1);
  auto value = [&](const Tensor& x0, const Tensor& x1, const Tensor& s0, const Tensor& s1) {
    return weighted_sum(fuse(x0, x1, softmax_weights(s0, s1)), up);
  };
  Tape tape(params);
  const auto va = tape.variable(a), vb = tape.variable(b), vsa = tape.variable(sa), vsb = tape.variable(sb);
  tape.backward(tape.weighted_sum(tape.softmax_fuse(va, vb, vsa, vsb), up));
  return fd_matches(a, tape.gradient(va), [&](const Tensor& x) { return value(x, b, sa, sb); }) &&
         fd_matches(b, tape.gradient(vb), [&](const Tensor& x) { return value(a, x, sa, sb); }) &&
         fd_matches(sa, tape.gradient(vsa), [&](const Tensor& x) { return value(a, b, x, sb); }) &&
         fd_matches(sb, tape.gradient(vsb), [&](const Tensor& x) { return value(a, b, sa, x); });
}

VideoClip tiny_clip() {
  SceneSpec s;
  s.width = 8;
  s.height = 8;
  s.frame_count = 6;
  s.num_classes = 2;
  s.seed = 5;
  s.objects.push_back({1, ShapeKind::rect, {0.9, 0.2, 0.2}, 4, 4, 1, 2, 0.5, 0});
  s.degradations.push_back({3, 4, DegradationKind::gaussian_blur, 1.0});
  return render(s);
}

bool check_training_gradients() {
  const VideoClip clip = tiny_clip();
  std::mt19937_64 rng(11);
  const Triplet t = sample_triplet(clip, 2, rng, 2);
  Params params = Params::initialize(ModelSpec::tiny(), 17, InitOptions{false});
  // Zero biases put dead receptive fields exactly on ReLU kinks; nudge them off.
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  std::vector<bool> frozen;
  for (auto& l : params.layers) {
    if (!l.bias_frozen) {
      for (auto& b : l.bias) b = u(rng);
    }
    frozen.insert(frozen.end(), l.kernels.size(), false);
    frozen.insert(frozen.end(), l.bias.size(), l.bias_frozen);
  }
  TrainStep step = forward_train(t, params);
  const std::vector<double> analytic = backward(step).flatten();
  std::vector<double> theta = params.flatten();
  const double h = 1e-6;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    if (frozen[i]) {
      if (analytic[i] != 0.0) return false;
      continue;
    }
    const double orig = theta[i];
    theta[i] = orig + h;
    params.unflatten(theta);
    const double up = forward_train(t, params).terms.total;
    theta[i] = orig - h;
    params.unflatten(theta);
    const double down = forward_train(t, params).terms.total;
    theta[i] = orig;
    // difference quotients carry about eps * |loss| / h of rounding noise
    if (!close(analytic[i], (up - down) / (2 * h), 1e-8)) return false;
  }
  return true;
}

bool check_contribution_profile() {
  const auto p = contribution_profile(MemoryGate(1.0), 0.5, 3);
  if (std::abs(p[0] - 0.5) > 1e-12 || std::abs(p[1] - 0.25) > 1e-12 || std::abs(p[2] - 0.25) > 1e-12) return false;
  const auto zero = contribution_profile(MemoryGate(0.0), 0.5, 5);
  for (std::size_t m = 2; m < zero.size(); ++m) {
    if (zero[m] != 0.0) return false;
  }
  std::vector<double> prev(6, -1.0);
  for (double g : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const auto q = cumulative_contribution(contribution_profile(MemoryGate(g), 0.5, 6));
    for (std::size_t m = 1; m < q.size(); ++m) {
      if (q[m] < prev[m] - 1e-15) return false;  // offset 1 is constant up to rounding
      prev[m] = q[m];
    }
  }
  return true;
}

bool check_map_endpoints() {
  const std::vector<GroundTruth> gt{{0, 0, {0, 0, 4, 4}}, {1, 1, {2, 2, 6, 8}}};
  std::vector<Detection> perfect;
  for (const auto& g : gt) perfect.push_back({g.image, g.class_id, 1.0, g.box});
  return compute_map(perfect, gt, 2).map == 1.0 && compute_map({}, gt, 2).map == 0.0;
}

bool check_pipeline_counts() {
  const Params params = Params::initialize(ModelSpec::tiny(), 2);
  std::mt19937_64 rng(4);
  std::vector<Tensor> frames;
  for (int i = 0; i < 23; ++i) frames.push_back(random_tensor({3, 8, 8}, rng, 0, 1));
  SegmentConfig cfg;
  cfg.segment_length = 5;
  cfg.keyframe_offset = 2;
  const PipelineRun run = run_impression(frames, cfg, params);
  const std::size_t segments = 5;
  return run.frames.size() == 23 && run.counts.feature == segments &&
         run.counts.flow == 23 - segments + (segments - 1) && run.counts.aggregation == segments - 1;
}

}  // namespace

int cmd_verify(std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    std::mt19937_64 rng(2024);
    struct Check {
      const char* name;
      std::function<bool()> run;
    };
    const std::vector<Check> checks{
        {"schedule_table", check_schedule},
        {"runtime_ratio", check_runtime_ratio},
        {"warp_identity", [&] { return check_warp_identity(rng); }},
        {"warp_translation", [&] { return check_warp_translation(rng); }},
        {"warp_gradients", [&] { return check_warp_gradients(rng); }},
        {"fusion_gradients", [&] { return check_fusion_gradients(rng); }},
        {"training_graph_gradients", check_training_gradients},
        {"contribution_profile", check_contribution_profile},
        {"map_endpoints", check_map_endpoints},
        {"pipeline_counts", check_pipeline_counts},
    };
    bool ok = true;
    for (const auto& c : checks) {
      const bool pass = c.run();
      ok = ok && pass;
      out << (pass ? "PASS " : "FAIL ") << c.name << '\n';
    }
    return ok ? kExitOk : kExitValidation;
  });
}

}  // namespace impnet
