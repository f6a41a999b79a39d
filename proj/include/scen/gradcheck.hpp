#pragma once

#include <functional>

#include "scen/autodiff.hpp"

namespace scen {

// Builds a scalar loss on `g` from the leaf bound to the point being checked.
using ScalarGraphFn = std::function<Var(Graph& g, Var x)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
};

// Compares the engine's analytic gradient at `point` with the fourth-order
// central difference (8[f(x+e)-f(x-e)] - [f(x+2e)-f(x-2e)]) / 12e, combined
// in double from float forwards. Error per coordinate is
// |analytic - numeric| / max(1, |analytic|); the maximum is returned.
GradCheckResult finite_diff_check(const ScalarGraphFn& f, const Tensor& point, double eps);

}  // namespace scen
