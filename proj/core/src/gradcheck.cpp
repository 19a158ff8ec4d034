#include "stvod/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace stvod {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

std::string GradCheckReport::summary() const {
  std::ostringstream out;
  out << (passed ? "PASS " : "FAIL ") << label << " max_rel_error=" << max_rel_error;
  if (!worst.empty()) out << " worst=" << worst;
  return out.str();
}

GradCheckReport grad_check(const std::string& label, const std::function<Var()>& f,
                           const std::vector<NamedLeaf>& leaves, const GradCheckOptions& options) {
  GradCheckReport report;
  report.label = label;

  std::vector<bool> restore_flag;
  for (const auto& named : leaves) {
    Var leaf = named.second;
    restore_flag.push_back(leaf.requires_grad());
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  {
    Var loss = f();
    backward(loss);
  }
  std::vector<Tensor> analytic;
  analytic.reserve(leaves.size());
  for (const auto& [name, leaf] : leaves) analytic.push_back(leaf.grad());

  auto eval = [&]() {
    NoGradGuard guard;
    return f().value().item();
  };

  std::mt19937_64 rng(options.seed);
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Var leaf = leaves[li].second;
    const std::size_t n = leaf.value().size();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_tensor && n > options.max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    GradCheckEntry entry;
    entry.name = leaves[li].first;
    for (std::size_t idx : coords) {
      double& x = leaf.mutable_value()[idx];
      const double saved = x;
      x = saved + options.step;
      const double fp = eval();
      x = saved - options.step;
      const double fm = eval();
      x = saved;
      const double numeric = (fp - fm) / (2.0 * options.step);
      const double a = analytic[li][idx];
      const double err = relative_error(a, numeric, options.floor);
      ++entry.coords_checked;
      if (err > entry.max_rel_error || entry.coords_checked == 1) {
        entry.max_rel_error = err;
        entry.worst_index = idx;
        entry.analytic = a;
        entry.numeric = numeric;
      }
    }
    if (entry.max_rel_error > report.max_rel_error || report.worst.empty()) {
      report.max_rel_error = entry.max_rel_error;
      report.worst = entry.name + "[" + std::to_string(entry.worst_index) + "]";
    }
    report.entries.push_back(std::move(entry));
  }
  report.passed = report.max_rel_error < options.tolerance;

  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Var leaf = leaves[li].second;
    leaf.zero_grad();
    leaf.set_requires_grad(restore_flag[li]);
  }
  return report;
}

}  // namespace stvod
