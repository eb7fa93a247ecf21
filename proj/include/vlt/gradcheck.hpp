#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vlt/autodiff.hpp"
#include "vlt/errors.hpp"
#include "vlt/tensor.hpp"

namespace vlt {

/// Builds a scalar-valued graph on `tape` from the given input leaves.
using GraphFn = std::function<Var(Tape& tape, const std::vector<Var>& inputs)>;

struct GradReport {
  std::string name;
  std::vector<double> max_rel_error;  // one per input tensor
  double tolerance = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates whose +-h probes cross a kink
  bool pass = false;

  double worst() const {
    return max_rel_error.empty() ? 0.0 : *std::max_element(max_rel_error.begin(), max_rel_error.end());
  }
};

struct GraphValue {
  double value = 0.0;
  std::uint64_t branches = 0;
};

inline GraphValue evaluate_graph_traced(const GraphFn& graph, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t, false));
  const Var out = graph(tape, leaves);
  if (out.value().numel() != 1) {
    throw ContractError("grad_check: graph output must be scalar, got " + shape_str(out.shape()));
  }
  return {out.value()[0], tape.branch_signature()};
}

inline double evaluate_graph(const GraphFn& graph, const std::vector<Tensor>& inputs) {
  return evaluate_graph_traced(graph, inputs).value;
}

/// Reverse-mode gradients against central differences (f(x+h) - f(x-h)) / 2h,
/// coordinate by coordinate. Relative error uses max(|analytic|, |numeric|, 1e-8)
/// as denominator. A coordinate is skipped when x+h or x-h evaluates a ReLU or
/// |.| on the other side of its kink than x does, since the difference quotient
/// then straddles a non-differentiable point.
inline GradReport grad_check(const GraphFn& graph, const std::vector<Tensor>& inputs, double h, double tol,
                             std::string name = "graph") {
  if (!(h > 0.0)) throw ArgumentError("grad_check: step must be positive");
  GradReport report;
  report.name = std::move(name);
  report.tolerance = tol;

  std::vector<Tensor> analytic;
  std::uint64_t base_branches = 0;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t, true));
    const Var out = graph(tape, leaves);
    if (out.value().numel() != 1) {
      throw ContractError("grad_check: graph output must be scalar, got " + shape_str(out.shape()));
    }
    base_branches = tape.branch_signature();
    tape.backward(out);
    for (const Var& v : leaves) analytic.push_back(v.grad());
  }

  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    double worst = 0.0;
    for (std::size_t i = 0; i < probe[k].numel(); ++i) {
      const double orig = probe[k][i];
      probe[k][i] = orig + h;
      const GraphValue fp = evaluate_graph_traced(graph, probe);
      probe[k][i] = orig - h;
      const GraphValue fm = evaluate_graph_traced(graph, probe);
      probe[k][i] = orig;
      if (fp.branches != base_branches || fm.branches != base_branches) {
        ++report.skipped;
        continue;
      }
      ++report.checked;
      const double numeric = (fp.value - fm.value) / (2.0 * h);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    report.max_rel_error.push_back(worst);
  }
  report.pass = report.checked > 0 && std::all_of(report.max_rel_error.begin(), report.max_rel_error.end(),
                            [tol](double e) { return e <= tol; });
  return report;
}

}  // namespace vlt
