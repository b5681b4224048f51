#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "impnet/nets.hpp"
#include "impnet/pipeline.hpp"
#include "impnet/synth.hpp"

namespace impnet {

// Mean warp distance per frame of a segment of length l with keyframe k, counting the
// impression propagation of distance l once per segment.
double avg_propagation_distance(std::size_t l, std::size_t k);

// argmin_k avg_propagation_distance(l, k), ties toward the smaller k.
std::size_t optimal_keyframe(std::size_t l);

// Cost units per invocation of each component.
struct CostModel {
  double c_feat = 0, c_flow = 0, c_warp = 0, c_agg = 0, c_task = 0;

  void validate() const;
};

// (c_agg + l (c_warp + c_flow + c_task) + c_feat) / (l (c_feat + c_task))
double runtime_ratio_exact(const CostModel& cost, std::size_t l);
// c_flow / c_feat + 1 / l
double runtime_ratio_approx(const CostModel& cost, std::size_t l);

// Times each component in isolation (milliseconds per call, median over `repeats`) on
// random frames of the given size. Aggregation covers two quality passes, the fusion and
// the impression update.
CostModel calibrate_cost_model(const Params& params, std::size_t height, std::size_t width, std::size_t repeats,
                               std::uint64_t seed = 0);

struct SweepPoint {
  std::size_t l = 1;
  double g = 1.0;
  std::size_t k = 0;
  double map = 0;
  double ms_per_frame = 0;
  double predicted_ratio = 0;
  double dbar = 0;
};

struct SweepGrid {
  std::vector<std::size_t> l_values{10};
  std::vector<double> g_values{1.0};
  Mode mode = Mode::impression;
  FlowSource flow_source = FlowSource::learned;
  bool measure_time = true;
};

// Runs the pipeline over every clip for each (l, g) with the optimal keyframe. Refuses
// params that have never been trained. `cost` feeds the predicted ratio column; without
// it the column is 0.
std::vector<SweepPoint> sweep(const SweepGrid& grid, const std::vector<VideoClip>& clips, const Params& params,
                              const CostModel* cost = nullptr);

// Columns: l, g, k, mAP, ms_per_frame, predicted_ratio, dbar
void write_sweep_csv(std::ostream& os, const std::vector<SweepPoint>& points);

// Columns: l, k, dbar, optimal
void write_schedule_csv(std::ostream& os, std::size_t l_min, std::size_t l_max);

}  // namespace impnet
