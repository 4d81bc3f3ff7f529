#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "phaseforge/autodiff.hpp"

namespace phaseforge::ad {

/// Builds the output of a differentiable function from leaf variables on a fresh tape.
using GraphBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheckResult {
  /// max_i |analytic_i - numeric_i| / max(max_i |numeric_i|, floor), worst input.
  double max_relative_error = 0;
  std::size_t checked_entries = 0;
};

/// Central finite-difference check of the adjoint <f(x), v> for a fixed random v.
/// Compares backward() against (L(x + h e_i) - L(x - h e_i)) / 2h for up to
/// max_entries_per_input coordinates of each input (all coordinates when 0).
GradCheckResult check_gradient(const GraphBuilder& build, const std::vector<Tensor>& inputs,
                               std::uint64_t seed, double step = 1e-6,
                               std::size_t max_entries_per_input = 0);

}  // namespace phaseforge::ad
