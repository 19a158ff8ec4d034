#pragma once

#include <utility>
#include <vector>

#include "stvod/autodiff.hpp"
#include "stvod/boxes.hpp"
#include "stvod/config.hpp"

namespace stvod {

struct LossWeights {
  double cls = 2.0;
  double l1 = 5.0;
  double giou = 2.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;

  static LossWeights from(const LossConfig& config);
  /// Throws std::invalid_argument on negative weights or alpha outside (0,1).
  void validate() const;
};

/// One-to-one matching; pairs are (prediction, ground truth), ordered by
/// ground-truth index.
struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
};

/// Sigmoid focal loss summed over every entry of logits [N,K] against 0/1
/// targets of the same shape (not normalized).
Var sigmoid_focal_loss(const Var& logits, const Tensor& targets, double alpha, double gamma);

/// Per-row GIoU of center-size boxes [N,4] vs [N,4], returned as [N,1].
Var generalized_iou_rows(const Var& boxes, const Var& targets);

/// cost(i,j) = cls * focal_cost(i, class_j) + l1 * |box_i - box_j|_1 +
/// giou * (1 - giou(box_i, box_j)); shape [N_pred, N_gt].
/// focal_cost is the positive focal term minus the negative one at the
/// ground-truth class.
Tensor pairwise_cost(const Tensor& logits, const Tensor& boxes,
                     const std::vector<GroundTruthBox>& gts, const LossWeights& w);

/// Minimum-cost assignment of every column (ground truth) to a distinct row
/// (prediction). Throws std::invalid_argument when N_pred < N_gt or the cost
/// has non-finite entries.
Assignment hungarian(const Tensor& cost);
double assignment_cost(const Tensor& cost, const Assignment& a);

struct LossTerms {
  Var total;
  double cls = 0.0;   // normalized focal loss
  double l1 = 0.0;    // normalized, unweighted
  double giou = 0.0;  // normalized sum of (1 - giou), unweighted
  Assignment assignment;
};

/// Set-prediction loss for one query set: logits [N,K], sigmoid boxes [N,4].
/// Classification covers every prediction (unmatched ones are all-negative);
/// box terms cover matched pairs. Every term is divided by max(1, N_gt).
/// With `frozen` the given assignment replaces the matching.
LossTerms detection_loss(const Var& logits, const Var& boxes,
                         const std::vector<GroundTruthBox>& gts, const LossWeights& w,
                         const Assignment* frozen = nullptr);

/// Focal classification term alone against the matched classes of an
/// assignment, normalized by max(1, N_gt).
Var classification_loss(const Var& logits, const std::vector<GroundTruthBox>& gts,
                        const Assignment& assignment, const LossWeights& w);

Tensor boxes_to_tensor(const std::vector<GroundTruthBox>& gts);

}  // namespace stvod
