#pragma once

#include <string>
#include <vector>

#include "dermpolar/value_grid.hpp"

namespace dermpolar {

/// A differentiable block: a forward map from input grids to one output
/// grid and the matching backward map. Static (non-differentiated)
/// parameters live in the concrete op object, not in `inputs`.
///
/// Contract: backward output shapes equal the forward input shapes, and
/// backward is linear in the output gradient.
class DifferentiableOp {
public:
    virtual ~DifferentiableOp() = default;

    virtual std::string name() const = 0;
    virtual ValueGrid forward(const std::vector<ValueGrid>& inputs) const = 0;

    /// Gradient of sum(forward(inputs) * output_grad) w.r.t. each input.
    virtual std::vector<ValueGrid> backward(const std::vector<ValueGrid>& inputs,
                                            const ValueGrid& output_grad) const = 0;
};

/// Central finite-difference check of an op's backward pass.
///
/// Contracts the output with `probe`, perturbs every input element by
/// +/- epsilon, and returns the maximum relative error between the
/// analytic gradient and (f(x+eps) - f(x-eps)) / 2 eps. The relative
/// error denominator is max(|analytic|, |numeric|, 1e-8).
double finite_diff_check(const DifferentiableOp& op,
                         std::vector<ValueGrid> inputs,
                         const ValueGrid& probe,
                         double epsilon);

} // namespace dermpolar
