#pragma once

#include <cstddef>
#include <vector>

#include "impnet/nets.hpp"

namespace impnet {

struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  bool valid() const { return x1 < x2 && y1 < y2; }
  friend bool operator==(const Box&, const Box&) = default;
};

// Throws ValidationError on degenerate boxes.
double iou(const Box& a, const Box& b);

// `image` identifies the frame across a whole evaluation set (clip offset + frame index).
struct Detection {
  std::size_t image = 0;
  int class_id = 0;
  double confidence = 0;
  Box box;
};

struct GroundTruth {
  std::size_t image = 0;
  int class_id = 0;
  Box box;
};

struct MapResult {
  std::vector<double> ap;          // per class; 0 where the class has no ground truth
  std::vector<std::size_t> gt_count;
  double map = 0.0;                // mean over classes with at least one ground truth
};

// VOC-style evaluation: per class, detections in descending confidence are matched to the
// highest-IoU ground truth of the same image; a ground truth is matched at most once.
// AP is the all-points area under the interpolated precision/recall curve.
MapResult compute_map(const std::vector<Detection>& detections, const std::vector<GroundTruth>& ground_truth,
                      std::size_t num_classes, double iou_threshold = 0.5);

// All-points interpolated AP from a ranked list of hit flags.
double average_precision(const std::vector<bool>& ranked_hits, std::size_t positives);

// Cells whose score sigmoid(objectness) * max softmax(class) exceeds the floor become
// boxes; greedy per-class NMS removes overlaps above nms_iou.
std::vector<Detection> decode_detections(const DetectionGrid& grid, std::size_t image, double confidence_floor,
                                         double nms_iou);

}  // namespace impnet
