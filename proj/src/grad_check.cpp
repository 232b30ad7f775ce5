#include "ynet/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ynet {
namespace {

double evaluate(const ScalarGraph& graph, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(tape.constant(t));
  return graph(tape, vars).value().item();
}

}  // namespace

GradCheckReport grad_check(const ScalarGraph& graph, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  report.max_rel_err.assign(inputs.size(), 0.0);

  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(tape.param(t));
    Var out = graph(tape, vars);
    if (out.value().numel() != 1) {
      report.message = "graph output is not scalar: " + to_string(out.shape());
      return report;
    }
    tape.backward(out);
    for (const Var& v : vars) analytic.push_back(tape.grad(v));
  }

  std::ostringstream msg;
  bool ok = true;
  std::vector<Tensor> work = inputs;
  for (size_t i = 0; i < inputs.size(); ++i) {
    const int64_t n = inputs[i].numel();
    const int64_t count = options.max_elements > 0 ? std::min(n, options.max_elements) : n;
    int64_t worst = -1;
    double worst_a = 0.0, worst_n = 0.0;
    for (int64_t c = 0; c < count; ++c) {
      const int64_t e = count == n ? c : (c * n) / count;
      const double orig = inputs[i][e];
      work[i][e] = orig + options.step;
      const double fp = evaluate(graph, work);
      work[i][e] = orig - options.step;
      const double fm = evaluate(graph, work);
      work[i][e] = orig;
      const double numeric = (fp - fm) / (2.0 * options.step);
      const double a = analytic[i][e];
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        ok = false;
        report.max_rel_err[i] = INFINITY;
        msg << "input " << i << " element " << e << ": non-finite gradient (analytic " << a << ", numeric "
            << numeric << ")\n";
        continue;
      }
      const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > report.max_rel_err[i]) {
        report.max_rel_err[i] = rel;
        worst = e;
        worst_a = a;
        worst_n = numeric;
      }
    }
    if (!(report.max_rel_err[i] < options.tol)) {
      ok = false;
      msg << "input " << i << ": max relative error " << report.max_rel_err[i] << " >= tol " << options.tol;
      if (worst >= 0) msg << " at element " << worst << " (analytic " << worst_a << ", numeric " << worst_n << ")";
      msg << "\n";
    }
  }
  report.passed = ok;
  report.message = msg.str();
  return report;
}

}  // namespace ynet
