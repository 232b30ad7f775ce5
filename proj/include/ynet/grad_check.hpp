#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ynet/autograd.hpp"

namespace ynet {

// Builds a scalar-valued computation on `tape` from the given input vars.
using ScalarGraph = std::function<Var(Tape& tape, std::span<const Var> inputs)>;

struct GradCheckOptions {
  double step = 1e-3;
  double tol = 1e-4;
  // Elements checked per input; 0 checks all. Subsets are evenly strided.
  int64_t max_elements = 0;
  // Floor applied to the relative-error denominator.
  double abs_floor = 1e-8;
};

struct GradCheckReport {
  std::vector<double> max_rel_err;  // one per input
  bool passed = false;
  std::string message;
};

/// Compares analytic gradients against central finite differences.
///
/// Relative error is |a - n| / max(|a|, |n|, abs_floor). Non-finite values on
/// either side produce a failed report rather than an exception.
GradCheckReport grad_check(const ScalarGraph& graph, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& options = {});

}  // namespace ynet
