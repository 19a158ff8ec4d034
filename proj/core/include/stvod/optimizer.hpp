#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "stvod/config.hpp"
#include "stvod/parameters.hpp"

namespace stvod {

/// Non-finite gradient or loss; the message names the offending tensor.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ParamGroup {
  std::string name;
  double lr = 0.0;
  std::vector<Parameter*> params;
};

/// AdamW with decoupled weight decay, global-norm clipping and per-group
/// step sizes.
class AdamW {
 public:
  explicit AdamW(const OptimConfig& config) : config_(config) {}

  void add_group(ParamGroup group);
  /// Applies one update from the current gradients and returns the gradient
  /// norm before clipping. Throws NumericalError before touching any
  /// parameter when a gradient is not finite.
  double step();
  /// Multiplies every group's step size by `factor`.
  void scale_lr(double factor);

  std::size_t steps() const { return steps_; }
  const std::vector<ParamGroup>& groups() const { return groups_; }
  const Tensor& first_moment(std::size_t group, std::size_t index) const;
  const Tensor& second_moment(std::size_t group, std::size_t index) const;

 private:
  OptimConfig config_;
  std::vector<ParamGroup> groups_;
  std::vector<std::vector<Tensor>> m_, v_;
  std::size_t steps_ = 0;
};

/// Backbone parameters (prefix "spatial.backbone") at optim.lr_backbone, every
/// other trainable parameter under one of `prefixes` at optim.lr.
AdamW make_optimizer(ParameterStore& store, const OptimConfig& optim,
                     const std::vector<std::string>& prefixes);

}  // namespace stvod
