#pragma once

#include <optional>
#include <vector>

#include "stvod/boxes.hpp"

namespace stvod {

struct ScoredBox {
  std::size_t class_id = 0;
  double score = 0.0;
  BoxCS box;
};

struct EvalResult {
  /// AP@threshold per class; empty optional for classes without ground truth.
  std::vector<std::optional<double>> ap;
  /// Mean over classes with ground truth; empty when there is none at all.
  std::optional<double> map;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
};

/// Area under the all-point interpolated precision/recall curve for one
/// class. `hits` lists detections sorted by descending score (true = TP).
double average_precision(const std::vector<bool>& hits, std::size_t num_gt);

/// VOC-style mAP: per class, detections sorted by score (ties keep input
/// order, frames first) are greedily matched to the unmatched ground truth
/// of highest IoU in the same frame when that IoU reaches the threshold.
EvalResult evaluate_map(const std::vector<std::vector<ScoredBox>>& detections,
                        const std::vector<std::vector<GroundTruthBox>>& ground_truth,
                        std::size_t num_classes, double iou_threshold = 0.5);

}  // namespace stvod
