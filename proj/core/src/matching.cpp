#include "stvod/matching.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace stvod {
namespace {

// log(1 + e^x) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double focal_positive(double x, double alpha, double gamma) {
  const double p = sigmoid_value(x);
  return alpha * std::pow(1.0 - p, gamma) * softplus(-x);
}

double focal_negative(double x, double alpha, double gamma) {
  const double p = sigmoid_value(x);
  return (1.0 - alpha) * std::pow(p, gamma) * softplus(x);
}

Var column(const Var& x, std::size_t c) { return slice(x, 1, c, 1); }

}  // namespace

LossWeights LossWeights::from(const LossConfig& c) {
  return LossWeights{c.cls, c.l1, c.giou, c.focal_alpha, c.focal_gamma};
}

void LossWeights::validate() const {
  if (cls < 0 || l1 < 0 || giou < 0) throw std::invalid_argument("loss weights must be >= 0");
  if (!(focal_alpha > 0 && focal_alpha < 1)) throw std::invalid_argument("alpha must lie in (0,1)");
  if (focal_gamma < 0) throw std::invalid_argument("gamma must be >= 0");
}

Var sigmoid_focal_loss(const Var& logits, const Tensor& targets, double alpha, double gamma) {
  if (logits.shape() != targets.shape()) {
    throw ShapeError("focal loss: logits " + shape_to_string(logits.shape()) + " vs targets " +
                     shape_to_string(targets.shape()));
  }
  const auto& x = logits.value();
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    total += targets[i] > 0.5 ? focal_positive(x[i], alpha, gamma)
                              : focal_negative(x[i], alpha, gamma);
  }
  return make_op("focal_loss", Tensor::scalar(total), {logits},
                 [targets, alpha, gamma](Node& self) {
                   auto& parent = *self.parents[0];
                   const double g = self.grad[0];
                   Tensor d(parent.value.shape());
                   for (std::size_t i = 0; i < d.size(); ++i) {
                     const double xi = parent.value[i];
                     const double p = sigmoid_value(xi);
                     if (targets[i] > 0.5) {
                       // d/dx of -alpha (1-p)^gamma log p
                       d[i] = alpha * std::pow(1.0 - p, gamma) *
                              (gamma * p * -softplus(-xi) - (1.0 - p));
                     } else {
                       // d/dx of -(1-alpha) p^gamma log(1-p)
                       d[i] = (1.0 - alpha) * std::pow(p, gamma) *
                              (p + gamma * (1.0 - p) * softplus(xi));
                     }
                   }
                   parent.accumulate(d, g);
                 });
}

Var generalized_iou_rows(const Var& a, const Var& b) {
  if (a.shape() != b.shape() || a.value().rank() != 2 || a.dim(1) != 4) {
    throw ShapeError("giou rows: " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  auto corners = [](const Var& box) {
    Var cx = column(box, 0), cy = column(box, 1);
    Var hw = scale(column(box, 2), 0.5), hh = scale(column(box, 3), 0.5);
    return std::array<Var, 4>{sub(cx, hw), sub(cy, hh), add(cx, hw), add(cy, hh)};
  };
  auto ca = corners(a), cb = corners(b);
  Var area_a = mul(column(a, 2), column(a, 3));
  Var area_b = mul(column(b, 2), column(b, 3));
  Var iw = relu(sub(minimum(ca[2], cb[2]), maximum(ca[0], cb[0])));
  Var ih = relu(sub(minimum(ca[3], cb[3]), maximum(ca[1], cb[1])));
  Var inter = mul(iw, ih);
  Var uni = sub(add(area_a, area_b), inter);
  Var enclosing = mul(sub(maximum(ca[2], cb[2]), minimum(ca[0], cb[0])),
                      sub(maximum(ca[3], cb[3]), minimum(ca[1], cb[1])));
  return sub(div(inter, uni), div(sub(enclosing, uni), enclosing));
}

Tensor boxes_to_tensor(const std::vector<GroundTruthBox>& gts) {
  Tensor t(Shape{std::max<std::size_t>(gts.size(), 1), 4}, 0.0);
  for (std::size_t i = 0; i < gts.size(); ++i) {
    t[i * 4] = gts[i].box.cx;
    t[i * 4 + 1] = gts[i].box.cy;
    t[i * 4 + 2] = gts[i].box.w;
    t[i * 4 + 3] = gts[i].box.h;
  }
  return t;
}

Tensor pairwise_cost(const Tensor& logits, const Tensor& boxes,
                     const std::vector<GroundTruthBox>& gts, const LossWeights& w) {
  if (logits.rank() != 2 || boxes.rank() != 2 || boxes.dim(1) != 4 ||
      logits.dim(0) != boxes.dim(0)) {
    throw ShapeError("pairwise_cost: logits " + shape_to_string(logits.shape()) + ", boxes " +
                     shape_to_string(boxes.shape()));
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1), g = gts.size();
  if (g == 0) return Tensor{};
  Tensor cost(Shape{n, g});
  for (std::size_t i = 0; i < n; ++i) {
    const BoxCS pred{boxes[i * 4], boxes[i * 4 + 1], boxes[i * 4 + 2], boxes[i * 4 + 3]};
    for (std::size_t j = 0; j < g; ++j) {
      const auto& gt = gts[j];
      if (gt.class_id >= k) {
        throw std::invalid_argument("ground-truth class " + std::to_string(gt.class_id) +
                                    " outside " + std::to_string(k) + " classes");
      }
      const double x = logits[i * k + gt.class_id];
      const double cls = focal_positive(x, w.focal_alpha, w.focal_gamma) -
                         focal_negative(x, w.focal_alpha, w.focal_gamma);
      const double l1 = std::abs(pred.cx - gt.box.cx) + std::abs(pred.cy - gt.box.cy) +
                        std::abs(pred.w - gt.box.w) + std::abs(pred.h - gt.box.h);
      cost.at(i, j) = w.cls * cls + w.l1 * l1 + w.giou * (1.0 - generalized_iou(pred, gt.box));
    }
  }
  return cost;
}

Assignment hungarian(const Tensor& cost) {
  Assignment result;
  if (cost.rank() == 0 || cost.size() == 0) return result;
  if (cost.rank() != 2) throw ShapeError("hungarian expects a matrix");
  const std::size_t preds = cost.dim(0), gts = cost.dim(1);
  if (preds < gts) {
    throw std::invalid_argument("hungarian: " + std::to_string(preds) +
                                " predictions cannot cover " + std::to_string(gts) +
                                " ground truths");
  }
  if (!cost.all_finite()) throw std::invalid_argument("hungarian: non-finite cost entry");

  // Rows are ground truths (1-based), columns predictions; column 0 is the
  // virtual start. Potentials u, v keep reduced costs nonnegative.
  const std::size_t n = gts, m = preds;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> owner(m + 1, 0), way(m + 1, 0);
  for (std::size_t row = 1; row <= n; ++row) {
    owner[0] = row;
    std::size_t col0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[col0] = 1;
      const std::size_t r = owner[col0];
      double delta = inf;
      std::size_t col1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double reduced = cost.at(j - 1, r - 1) - u[r] - v[j];
        if (reduced < minv[j]) {
          minv[j] = reduced;
          way[j] = col0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          col1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      col0 = col1;
    } while (owner[col0] != 0);
    do {
      const std::size_t col1 = way[col0];
      owner[col0] = owner[col1];
      col0 = col1;
    } while (col0 != 0);
  }
  std::vector<std::size_t> pred_of(n, 0);
  for (std::size_t j = 1; j <= m; ++j) {
    if (owner[j] != 0) pred_of[owner[j] - 1] = j - 1;
  }
  for (std::size_t g = 0; g < n; ++g) result.pairs.emplace_back(pred_of[g], g);
  return result;
}

double assignment_cost(const Tensor& cost, const Assignment& a) {
  double total = 0.0;
  for (const auto& [p, g] : a.pairs) total += cost.at(p, g);
  return total;
}

Var classification_loss(const Var& logits, const std::vector<GroundTruthBox>& gts,
                        const Assignment& assignment, const LossWeights& w) {
  const std::size_t k = logits.dim(1);
  Tensor targets(logits.shape(), 0.0);
  for (const auto& [p, g] : assignment.pairs) {
    if (g >= gts.size() || p >= logits.dim(0) || gts[g].class_id >= k) {
      throw std::invalid_argument("assignment pair out of range");
    }
    targets[p * k + gts[g].class_id] = 1.0;
  }
  const double norm = static_cast<double>(std::max<std::size_t>(1, gts.size()));
  return scale(sigmoid_focal_loss(logits, targets, w.focal_alpha, w.focal_gamma), 1.0 / norm);
}

LossTerms detection_loss(const Var& logits, const Var& boxes,
                         const std::vector<GroundTruthBox>& gts, const LossWeights& w,
                         const Assignment* frozen) {
  if (logits.value().rank() != 2 || boxes.value().rank() != 2 || boxes.dim(1) != 4 ||
      logits.dim(0) != boxes.dim(0)) {
    throw ShapeError("detection_loss: logits " + shape_to_string(logits.shape()) + ", boxes " +
                     shape_to_string(boxes.shape()));
  }
  LossTerms out;
  if (frozen != nullptr) {
    if (frozen->pairs.size() != gts.size()) {
      throw std::invalid_argument("frozen assignment does not cover every ground truth");
    }
    out.assignment = *frozen;
  } else {
    out.assignment = hungarian(pairwise_cost(logits.value(), boxes.value(), gts, w));
  }
  const double norm = static_cast<double>(std::max<std::size_t>(1, gts.size()));
  Var cls = classification_loss(logits, gts, out.assignment, w);
  out.cls = cls.value().item();
  std::vector<Var> terms{scale(cls, w.cls)};
  if (!gts.empty()) {
    std::vector<std::size_t> rows;
    for (const auto& [p, g] : out.assignment.pairs) rows.push_back(p);
    Var matched = gather_rows(boxes, rows);
    Var target = Var::constant(boxes_to_tensor(gts));
    Var l1 = scale(sum(abs(sub(matched, target))), 1.0 / norm);
    Var giou = scale(sum(add_scalar(neg(generalized_iou_rows(matched, target)), 1.0)), 1.0 / norm);
    out.l1 = l1.value().item();
    out.giou = giou.value().item();
    terms.push_back(scale(l1, w.l1));
    terms.push_back(scale(giou, w.giou));
  }
  out.total = add_n(terms);
  return out;
}

}  // namespace stvod
