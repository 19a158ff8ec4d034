#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "stvod/autodiff.hpp"

namespace stvod {

struct GradCheckOptions {
  double step = 1e-6;
  double tolerance = 1e-5;
  /// Denominator floor for the relative error: |a - n| / max(|a|, |n|, floor).
  /// Below the floor the check is effectively absolute (floor * tolerance).
  double floor = 1e-3;
  /// 0 checks every coordinate; otherwise a seeded subset per tensor.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 7;
};

struct GradCheckEntry {
  std::string name;
  std::size_t coords_checked = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::string label;
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  /// "<tensor name>[<flat index>]" of the largest discrepancy.
  std::string worst;
  bool passed = true;

  std::string summary() const;
};

using NamedLeaf = std::pair<std::string, Var>;

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences, perturbing each listed leaf in place. `f` must rebuild its
/// graph from the leaves on every call.
GradCheckReport grad_check(const std::string& label, const std::function<Var()>& f,
                           const std::vector<NamedLeaf>& leaves,
                           const GradCheckOptions& options = {});

double relative_error(double analytic, double numeric, double floor);

}  // namespace stvod
