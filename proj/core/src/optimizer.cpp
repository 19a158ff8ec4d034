#include "stvod/optimizer.hpp"

#include <cmath>

namespace stvod {

void AdamW::add_group(ParamGroup group) {
  std::vector<Tensor> m, v;
  for (auto* p : group.params) {
    m.emplace_back(p->var.shape(), 0.0);
    v.emplace_back(p->var.shape(), 0.0);
  }
  m_.push_back(std::move(m));
  v_.push_back(std::move(v));
  groups_.push_back(std::move(group));
}

const Tensor& AdamW::first_moment(std::size_t group, std::size_t index) const {
  return m_.at(group).at(index);
}

const Tensor& AdamW::second_moment(std::size_t group, std::size_t index) const {
  return v_.at(group).at(index);
}

void AdamW::scale_lr(double factor) {
  for (auto& g : groups_) g.lr *= factor;
}

double AdamW::step() {
  double sq = 0.0;
  for (const auto& g : groups_) {
    for (const auto* p : g.params) {
      const Tensor& grad = p->var.grad();
      for (double x : grad.data()) {
        if (!std::isfinite(x)) throw NumericalError("non-finite gradient in " + p->name);
        sq += x * x;
      }
    }
  }
  const double norm = std::sqrt(sq);
  const double clip =
      config_.clip_norm > 0 && norm > config_.clip_norm ? config_.clip_norm / norm : 1.0;
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    const auto& g = groups_[gi];
    for (std::size_t pi = 0; pi < g.params.size(); ++pi) {
      Var var = g.params[pi]->var;
      const Tensor& grad = var.grad();
      Tensor& value = var.mutable_value();
      Tensor& m = m_[gi][pi];
      Tensor& v = v_[gi][pi];
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double gr = grad[i] * clip;
        m[i] = config_.beta1 * m[i] + (1 - config_.beta1) * gr;
        v[i] = config_.beta2 * v[i] + (1 - config_.beta2) * gr * gr;
        value[i] *= 1 - g.lr * config_.weight_decay;
        value[i] -= g.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
      }
    }
  }
  return norm;
}

AdamW make_optimizer(ParameterStore& store, const OptimConfig& optim,
                     const std::vector<std::string>& prefixes) {
  ParamGroup backbone{"backbone", optim.lr_backbone, {}};
  ParamGroup rest{"transformer", optim.lr, {}};
  const std::string backbone_prefix = "spatial.backbone";
  for (auto& p : store.all()) {
    if (!p.trainable) continue;
    bool selected = false;
    for (const auto& prefix : prefixes) selected |= p.name.rfind(prefix, 0) == 0;
    if (!selected) continue;
    (p.name.rfind(backbone_prefix, 0) == 0 ? backbone : rest).params.push_back(&p);
  }
  AdamW opt(optim);
  opt.add_group(std::move(backbone));
  opt.add_group(std::move(rest));
  return opt;
}

}  // namespace stvod
