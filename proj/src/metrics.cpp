#include "impnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace impnet {

double iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) throw ValidationError("iou: degenerate box");
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

double average_precision(const std::vector<bool>& ranked_hits, std::size_t positives) {
  if (positives == 0) return 0.0;
  const std::size_t n = ranked_hits.size();
  std::vector<double> precision(n), recall(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (ranked_hits[i]) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(positives);
  }
  // Precision envelope from the right.
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (recall[i] > prev_recall) {
      ap += (recall[i] - prev_recall) * precision[i];
      prev_recall = recall[i];
    }
  }
  return ap;
}

MapResult compute_map(const std::vector<Detection>& detections, const std::vector<GroundTruth>& ground_truth,
                      std::size_t num_classes, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) throw ValidationError("iou threshold must lie in (0, 1)");
  MapResult result;
  result.ap.assign(num_classes, 0.0);
  result.gt_count.assign(num_classes, 0);

  for (std::size_t cls = 0; cls < num_classes; ++cls) {
    // Ground truth of this class, grouped by image.
    std::map<std::size_t, std::vector<std::size_t>> gt_by_image;
    std::size_t positives = 0;
    for (std::size_t i = 0; i < ground_truth.size(); ++i) {
      if (ground_truth[i].class_id == static_cast<int>(cls)) {
        gt_by_image[ground_truth[i].image].push_back(i);
        ++positives;
      }
    }
    result.gt_count[cls] = positives;
    if (positives == 0) continue;

    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < detections.size(); ++i) {
      if (detections[i].class_id == static_cast<int>(cls)) order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return detections[a].confidence > detections[b].confidence;
    });

    std::vector<bool> matched(ground_truth.size(), false);
    std::vector<bool> hits;
    hits.reserve(order.size());
    for (const std::size_t d : order) {
      const auto it = gt_by_image.find(detections[d].image);
      double best = -1.0;
      std::size_t best_gt = 0;
      if (it != gt_by_image.end()) {
        for (const std::size_t g : it->second) {
          const double o = iou(detections[d].box, ground_truth[g].box);
          if (o > best) {
            best = o;
            best_gt = g;
          }
        }
      }
      if (best >= iou_threshold && !matched[best_gt]) {
        matched[best_gt] = true;
        hits.push_back(true);
      } else {
        hits.push_back(false);
      }
    }
    result.ap[cls] = average_precision(hits, positives);
  }

  std::size_t counted = 0;
  double sum = 0.0;
  for (std::size_t cls = 0; cls < num_classes; ++cls) {
    if (result.gt_count[cls] > 0) {
      sum += result.ap[cls];
      ++counted;
    }
  }
  result.map = counted > 0 ? sum / static_cast<double>(counted) : 0.0;
  return result;
}

std::vector<Detection> decode_detections(const DetectionGrid& grid, std::size_t image, double confidence_floor,
                                         double nms_iou) {
  if (!(confidence_floor > 0.0 && confidence_floor < 1.0) || !(nms_iou > 0.0 && nms_iou < 1.0)) {
    throw ValidationError("decode_detections: thresholds must lie in (0, 1)");
  }
  const std::size_t K = grid.num_classes;
  const double s = static_cast<double>(grid.stride);
  std::vector<Detection> candidates;
  for (std::size_t y = 0; y < grid.height(); ++y) {
    for (std::size_t x = 0; x < grid.width(); ++x) {
      const double objectness = 1.0 / (1.0 + std::exp(-grid.objectness(y, x)));
      if (objectness <= confidence_floor) continue;
      std::size_t best = 0;
      double max_logit = grid.class_logit(0, y, x);
      for (std::size_t k = 1; k < K; ++k) {
        if (grid.class_logit(k, y, x) > max_logit) {
          max_logit = grid.class_logit(k, y, x);
          best = k;
        }
      }
      double denom = 0.0;
      for (std::size_t k = 0; k < K; ++k) denom += std::exp(grid.class_logit(k, y, x) - max_logit);
      const double confidence = objectness / denom;
      if (confidence <= confidence_floor) continue;
      const double cx = (static_cast<double>(x) + grid.box_param(0, y, x)) * s;
      const double cy = (static_cast<double>(y) + grid.box_param(1, y, x)) * s;
      const double w = s * std::exp(std::clamp(grid.box_param(2, y, x), -8.0, 8.0));
      const double h = s * std::exp(std::clamp(grid.box_param(3, y, x), -8.0, 8.0));
      candidates.push_back({image, static_cast<int>(best), confidence,
                            Box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h}});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
  std::vector<Detection> kept;
  for (const auto& c : candidates) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.class_id == c.class_id && iou(k.box, c.box) > nms_iou;
    });
    if (!suppressed) kept.push_back(c);
  }
  return kept;
}

}  // namespace impnet
