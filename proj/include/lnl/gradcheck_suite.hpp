#pragma once
// Finite-difference verification of every differentiable operator plus the
// assembled network's joint loss. Shared by the gradcheck CLI subcommand
// and the test/acceptance suites.

#include <string>
#include <vector>

#include "lnl/ops.hpp"

namespace lnl {

struct GradCheckEntry {
  std::string name;
  GradCheckReport report;
  double tolerance = 0.0;
};

// f64=false: float pipeline, tolerance 1e-3. f64=true: double pipeline,
// tolerance 1e-6. Deterministic (fixed seeds throughout).
std::vector<GradCheckEntry> run_gradcheck_suite(bool f64);

}  // namespace lnl
