#pragma once

#include <algorithm>
#include <functional>
#include <random>
#include <vector>

#include "impnet/metrics.hpp"

namespace impnet::testing {

// AP as the mean, over ground truths, of the best precision reached at or after the rank
// where that ground truth is recovered (zero for ground truths never recovered).
inline double oracle_ap(const std::vector<bool>& hits, std::size_t positives) {
  double sum = 0;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    if (!hits[i]) continue;
    double best = 0;
    std::size_t tp = 0;
    for (std::size_t j = 0; j < hits.size(); ++j) {
      tp += hits[j];
      if (j >= i) best = std::max(best, static_cast<double>(tp) / static_cast<double>(j + 1));
    }
    sum += best;
  }
  return sum / static_cast<double>(positives);
}

// Enumerates every admissible assignment of ranked detections to ground truths (same image,
// IoU above threshold, the detection's highest-IoU ground truth, each ground truth used once)
// and keeps the one whose hit vector is lexicographically largest in rank order.
inline double brute_force_class_ap(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts, int cls,
                            double thr) {
  std::vector<const Detection*> ranked;
  for (const auto& d : dets) {
    if (d.class_id == cls) ranked.push_back(&d);
  }
  std::sort(ranked.begin(), ranked.end(), [](auto* a, auto* b) { return a->confidence > b->confidence; });
  std::vector<const GroundTruth*> truth;
  for (const auto& g : gts) {
    if (g.class_id == cls) truth.push_back(&g);
  }
  if (truth.empty()) return 0.0;

  std::vector<int> candidate(ranked.size(), -1);
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    double best = -1;
    for (std::size_t j = 0; j < truth.size(); ++j) {
      if (truth[j]->image != ranked[i]->image) continue;
      const double o = iou(ranked[i]->box, truth[j]->box);
      if (o > best) {
        best = o;
        candidate[i] = static_cast<int>(j);
      }
    }
    if (best < thr) candidate[i] = -1;
  }

  std::vector<bool> best_hits(ranked.size(), false), cur(ranked.size(), false);
  std::vector<bool> used(truth.size(), false);
  std::function<void(std::size_t)> rec = [&](std::size_t i) {
    if (i == ranked.size()) {
      if (cur > best_hits) best_hits = cur;
      return;
    }
    cur[i] = false;
    rec(i + 1);
    const int c = candidate[i];
    if (c >= 0 && !used[c]) {
      used[c] = true;
      cur[i] = true;
      rec(i + 1);
      cur[i] = false;
      used[c] = false;
    }
  };
  rec(0);
  return oracle_ap(best_hits, truth.size());
}

inline Box random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(0, 10), ext(1, 5);
  const double x = pos(rng), y = pos(rng);
  return {x, y, x + ext(rng), y + ext(rng)};
}

// One random instance: up to five ground truths and five detections per class over two
// images, most detections jittered copies of some ground truth.
struct MapInstance {
  std::vector<GroundTruth> gt;
  std::vector<Detection> det;
};

inline MapInstance random_map_instance(std::mt19937_64& rng, int classes = 2) {
  std::uniform_int_distribution<int> count(0, 5), image(0, 1);
  std::uniform_real_distribution<double> conf(0.01, 1), jitter(-1, 1);
  MapInstance m;
  for (int c = 0; c < classes; ++c) {
    const int ng = count(rng), nd = count(rng);
    for (int i = 0; i < ng; ++i) m.gt.push_back({static_cast<std::size_t>(image(rng)), c, random_box(rng)});
    for (int i = 0; i < nd; ++i) {
      Box b = random_box(rng);
      if (!m.gt.empty() && conf(rng) < 0.7) {
        const GroundTruth& g = m.gt[std::uniform_int_distribution<std::size_t>(0, m.gt.size() - 1)(rng)];
        b = {g.box.x1 + 0.5 * jitter(rng), g.box.y1 + 0.5 * jitter(rng), g.box.x2 + 0.5 * jitter(rng),
             g.box.y2 + 0.5 * jitter(rng)};
        m.det.push_back({g.image, c, conf(rng), b});
      } else {
        m.det.push_back({static_cast<std::size_t>(image(rng)), c, conf(rng), b});
      }
    }
  }
  return m;
}

}  // namespace impnet::testing
