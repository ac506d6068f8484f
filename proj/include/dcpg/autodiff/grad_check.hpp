#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "dcpg/autodiff/ops.hpp"

namespace dcpg {

// Builds a scalar loss from its inputs. Must be deterministic: any sampling
// inside has to reseed from a fixed seed on every call.
using GraphBuilder = std::function<Var(const std::vector<Var>&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_entry = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares reverse-mode gradients with central differences over every entry
// of every input. Relative error is |analytic - numeric| / max(1e-8, |numeric|).
inline GradCheckResult grad_check_detailed(const GraphBuilder& f, const std::vector<Tensor>& inputs, double eps = 1e-5) {
  std::vector<Var> params;
  params.reserve(inputs.size());
  for (const auto& t : inputs) params.push_back(Var::parameter(t, "grad_check_input"));
  {
    Tape tape;
    Tape::Scope scope(tape);
    Var loss = f(params);
    if (loss.requires_grad()) tape.backward(loss);
  }

  auto evaluate = [&](std::size_t which, std::size_t entry, double delta) {
    std::vector<Var> probe;
    probe.reserve(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      Tensor t = inputs[i];
      if (i == which) t[entry] += delta;
      probe.push_back(Var::constant(std::move(t)));
    }
    return f(probe).item();
  };

  GradCheckResult result;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t e = 0; e < inputs[i].size(); ++e) {
      const double numeric = (evaluate(i, e, eps) - evaluate(i, e, -eps)) / (2.0 * eps);
      const double analytic = params[i].has_grad() ? params[i].grad()[e] : 0.0;
      const double err = std::abs(analytic - numeric) / std::max(1e-8, std::abs(numeric));
      if (err > result.max_relative_error) {
        result = {err, i, e, analytic, numeric};
      }
    }
  }
  return result;
}

inline double grad_check(const GraphBuilder& f, const std::vector<Tensor>& inputs, double eps = 1e-5) {
  return grad_check_detailed(f, inputs, eps).max_relative_error;
}

}  // namespace dcpg
