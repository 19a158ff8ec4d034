#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "stvod/autodiff.hpp"

namespace stvod {

/// A named, persistent leaf of the differentiation graph.
struct Parameter {
  std::string name;
  Var var;
  bool trainable = true;
};

/// Owns every learnable tensor of a model, in registration order.
class ParameterStore {
 public:
  /// Throws std::invalid_argument on a duplicate name.
  Var add(const std::string& name, Tensor init, bool trainable = true);

  const std::vector<Parameter>& all() const { return params_; }
  std::vector<Parameter>& all() { return params_; }
  const Parameter& get(const std::string& name) const;
  Parameter& get(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  /// Every parameter whose name starts with `prefix`.
  std::vector<Parameter*> with_prefix(const std::string& prefix);
  void set_trainable(const std::string& prefix, bool trainable);

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Deterministic initializers; every draw goes through the passed engine.
Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);
Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng);

/// Uniform double in [0,1) that does not depend on the standard library's
/// distribution implementation.
double unit_uniform(std::mt19937_64& rng);

}  // namespace stvod
