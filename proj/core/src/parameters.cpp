#include "stvod/parameters.hpp"

#include <cmath>
#include <stdexcept>

namespace stvod {

Var ParameterStore::add(const std::string& name, Tensor init, bool trainable) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Var v = Var::leaf(std::move(init), trainable);
  index_.emplace(name, params_.size());
  params_.push_back(Parameter{name, v, trainable});
  return v;
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return params_[it->second];
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return params_[it->second];
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var.value().size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

std::vector<Parameter*> ParameterStore::with_prefix(const std::string& prefix) {
  std::vector<Parameter*> out;
  for (auto& p : params_) {
    if (p.name.rfind(prefix, 0) == 0) out.push_back(&p);
  }
  return out;
}

void ParameterStore::set_trainable(const std::string& prefix, bool trainable) {
  for (auto* p : with_prefix(prefix)) {
    p->trainable = trainable;
    p->var.set_requires_grad(trainable);
  }
}

double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = lo + (hi - lo) * unit_uniform(rng);
  return t;
}

Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform(std::move(shape), -bound, bound, rng);
}

}  // namespace stvod
