#include "impnet/schedule.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <random>

#include "impnet/aggregation.hpp"
#include "impnet/evaluate.hpp"
#include "impnet/warp.hpp"

namespace impnet {

namespace {

double triangle(std::size_t n) { return static_cast<double>(n * (n + 1) / 2); }

}  // namespace

double avg_propagation_distance(std::size_t l, std::size_t k) {
  if (l < 1 || k >= l) {
    throw ValidationError("avg_propagation_distance: need 0 <= k < l, got l=" + std::to_string(l) +
                          " k=" + std::to_string(k));
  }
  // Frames before the keyframe travel 1..k, frames after travel 1..l-1-k; at k = 0 or
  // k = l-1 this reduces to the sum over 1..l-1.
  return (triangle(k) + triangle(l - 1 - k) + static_cast<double>(l)) / static_cast<double>(l);
}

std::size_t optimal_keyframe(std::size_t l) {
  if (l < 1) throw ValidationError("optimal_keyframe: l must be at least 1");
  std::size_t best = 0;
  double best_d = avg_propagation_distance(l, 0);
  for (std::size_t k = 1; k < l; ++k) {
    const double d = avg_propagation_distance(l, k);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

void CostModel::validate() const {
  for (double c : {c_feat, c_flow, c_warp, c_agg, c_task}) {
    if (!std::isfinite(c) || c < 0) throw ValidationError("cost model entries must be finite and nonnegative");
  }
}

double runtime_ratio_exact(const CostModel& cost, std::size_t l) {
  cost.validate();
  if (l < 1) throw ValidationError("runtime ratio: l must be at least 1");
  const double ld = static_cast<double>(l);
  const double denominator = ld * (cost.c_feat + cost.c_task);
  if (denominator == 0) throw ValidationError("runtime ratio: zero per-frame cost");
  return (cost.c_agg + ld * (cost.c_warp + cost.c_flow + cost.c_task) + cost.c_feat) / denominator;
}

double runtime_ratio_approx(const CostModel& cost, std::size_t l) {
  cost.validate();
  if (l < 1) throw ValidationError("runtime ratio: l must be at least 1");
  if (cost.c_feat == 0) throw ValidationError("runtime ratio: zero feature-network cost");
  return cost.c_flow / cost.c_feat + 1.0 / static_cast<double>(l);
}

CostModel calibrate_cost_model(const Params& params, std::size_t height, std::size_t width, std::size_t repeats,
                               std::uint64_t seed) {
  if (repeats == 0) throw ValidationError("calibrate_cost_model: repeats must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto random_image = [&] {
    Tensor t(params.spec.image_channels, height, width);
    for (auto& v : t.data()) v = u(rng);
    return t;
  };
  const Tensor a = random_image();
  const Tensor b = random_image();
  const Tensor fa = feature_forward(a, params);
  const Tensor fb = feature_forward(b, params);
  const FlowOutput fl = flow_forward(a, b, params);
  const MemoryGate gate(0.5);

  auto median_ms = [&](auto&& f) {
    std::vector<double> samples;
    for (std::size_t r = 0; r < repeats; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      f();
      samples.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    std::nth_element(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(samples.size() / 2),
                     samples.end());
    return samples[samples.size() / 2];
  };

  double sink = 0;  // keeps results observable so nothing is optimized away
  CostModel c;
  c.c_feat = median_ms([&] { sink += feature_forward(a, params)[0]; });
  c.c_flow = median_ms([&] { sink += flow_forward(a, b, params).flow[0]; });
  c.c_warp = median_ms([&] { sink += bilinear_warp(fa, fl.flow, fl.scale)[0]; });
  c.c_agg = median_ms([&] {
    const Tensor fused = fuse(fa, fb, adaptive_weights(fa, fb, params));
    sink += impression_update(fb, fused, gate)[0];
  });
  c.c_task = median_ms([&] { sink += task_forward(fa, params).raw[0]; });
  if (!std::isfinite(sink)) throw NumericalError("calibrate_cost_model: non-finite network output");
  return c;
}

std::vector<SweepPoint> sweep(const SweepGrid& grid, const std::vector<VideoClip>& clips, const Params& params,
                              const CostModel* cost) {
  if (params.trained_iterations == 0) {
    throw ValidationError("sweep: parameters have never been trained; pass a trained checkpoint");
  }
  if (grid.l_values.empty() || grid.g_values.empty()) throw ValidationError("sweep: empty grid");
  std::vector<SweepPoint> points;
  for (const std::size_t l : grid.l_values) {
    for (const double g : grid.g_values) {
      SegmentConfig cfg;
      cfg.segment_length = l;
      cfg.keyframe_offset = optimal_keyframe(l);
      cfg.memory_gate = g;
      cfg.flow_source = grid.flow_source;
      const EvalResult r = evaluate(clips, grid.mode, cfg, params, PipelineOptions{grid.measure_time});
      SweepPoint p;
      p.l = l;
      p.g = g;
      p.k = cfg.keyframe_offset;
      p.map = r.map.map;
      p.ms_per_frame = r.ms / static_cast<double>(r.frames);
      p.predicted_ratio = cost ? runtime_ratio_exact(*cost, l) : 0.0;
      p.dbar = avg_propagation_distance(l, p.k);
      points.push_back(p);
    }
  }
  return points;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepPoint>& points) {
  os << "l,g,k,mAP,ms_per_frame,predicted_ratio,dbar\n";
  const auto old = os.precision(10);
  for (const auto& p : points) {
    os << p.l << ',' << p.g << ',' << p.k << ',' << p.map << ',' << p.ms_per_frame << ',' << p.predicted_ratio << ','
       << p.dbar << '\n';
  }
  os.precision(old);
}

void write_schedule_csv(std::ostream& os, std::size_t l_min, std::size_t l_max) {
  if (l_min < 1 || l_min > l_max) throw ValidationError("schedule: need 1 <= l_min <= l_max");
  os << "l,k,dbar,optimal\n";
  const auto old = os.precision(10);
  for (std::size_t l = l_min; l <= l_max; ++l) {
    const std::size_t best = optimal_keyframe(l);
    for (std::size_t k = 0; k < l; ++k) {
      os << l << ',' << k << ',' << avg_propagation_distance(l, k) << ',' << (k == best ? 1 : 0) << '\n';
    }
  }
  os.precision(old);
}

}  // namespace impnet
