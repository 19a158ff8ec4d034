#pragma once

#include <functional>
#include <string>
#include <vector>

#include "stvod/config.hpp"
#include "stvod/gradcheck.hpp"

namespace stvod {

struct SuiteCheck {
  std::string name;
  std::function<GradCheckReport(const GradCheckOptions&)> run;
};

/// One check per differentiable primitive, at toy shapes with inputs kept
/// away from kinks.
std::vector<SuiteCheck> op_checks();

/// Composite checks: attention layers, the spatial detector, TQE+TDTD and
/// the set loss (assignment frozen). Model sizes are toy-scale; loss
/// weights come from `config`.
std::vector<SuiteCheck> composite_checks(const RunConfig& config);

/// Runs every check; report labels are the check names.
std::vector<GradCheckReport> run_checks(const std::vector<SuiteCheck>& checks,
                                        const GradCheckOptions& options);

/// Model config used by the composite checks.
ModelConfig toy_model_config();

}  // namespace stvod
