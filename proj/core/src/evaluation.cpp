#include "stvod/evaluation.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace stvod {

double average_precision(const std::vector<bool>& hits, std::size_t num_gt) {
  if (num_gt == 0) throw std::invalid_argument("average precision needs at least one ground truth");
  std::vector<double> recall{0.0}, precision{0.0};
  std::size_t tp = 0;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    if (hits[i]) ++tp;
    recall.push_back(static_cast<double>(tp) / static_cast<double>(num_gt));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
  }
  recall.push_back(1.0);
  precision.push_back(0.0);
  for (std::size_t i = precision.size() - 1; i > 0; --i) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double ap = 0.0;
  for (std::size_t i = 1; i < recall.size(); ++i) {
    if (recall[i] != recall[i - 1]) ap += (recall[i] - recall[i - 1]) * precision[i];
  }
  return ap;
}

EvalResult evaluate_map(const std::vector<std::vector<ScoredBox>>& detections,
                        const std::vector<std::vector<GroundTruthBox>>& ground_truth,
                        std::size_t num_classes, double iou_threshold) {
  if (detections.size() != ground_truth.size()) {
    throw std::invalid_argument("evaluate_map: " + std::to_string(detections.size()) +
                                " detection frames vs " + std::to_string(ground_truth.size()) +
                                " ground-truth frames");
  }
  EvalResult result;
  result.ap.assign(num_classes, std::nullopt);
  double ap_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    struct Candidate {
      double score;
      std::size_t frame, order;
      const BoxCS* box;
    };
    std::vector<Candidate> cands;
    std::size_t num_gt = 0;
    for (std::size_t f = 0; f < detections.size(); ++f) {
      for (std::size_t i = 0; i < detections[f].size(); ++i) {
        const auto& d = detections[f][i];
        if (d.class_id >= num_classes) throw std::invalid_argument("detection class out of range");
        if (d.class_id == c) cands.push_back({d.score, f, i, &d.box});
      }
      for (const auto& g : ground_truth[f]) num_gt += g.class_id == c;
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
    std::vector<std::vector<char>> used(ground_truth.size());
    for (std::size_t f = 0; f < ground_truth.size(); ++f) used[f].assign(ground_truth[f].size(), 0);
    std::vector<bool> hits;
    for (const auto& cand : cands) {
      const auto& gts = ground_truth[cand.frame];
      double best = -1.0;
      std::size_t best_j = gts.size();
      for (std::size_t j = 0; j < gts.size(); ++j) {
        if (gts[j].class_id != c || used[cand.frame][j]) continue;
        const double o = iou(*cand.box, gts[j].box);
        if (o > best) {
          best = o;
          best_j = j;
        }
      }
      const bool hit = best_j < gts.size() && best >= iou_threshold;
      if (hit) used[cand.frame][best_j] = 1;
      hits.push_back(hit);
      if (hit) {
        ++result.true_positives;
      } else {
        ++result.false_positives;
      }
    }
    const std::size_t matched = static_cast<std::size_t>(std::count(hits.begin(), hits.end(), true));
    result.false_negatives += num_gt - matched;
    if (num_gt == 0) continue;
    const double ap = average_precision(hits, num_gt);
    result.ap[c] = ap;
    ap_sum += ap;
    ++present;
  }
  if (present > 0) result.map = ap_sum / static_cast<double>(present);
  return result;
}

}  // namespace stvod
