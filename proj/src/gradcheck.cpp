#include "dermpolar/gradcheck.hpp"

#include <cmath>
#include <string>

namespace dermpolar {

namespace {

double contract(const ValueGrid& output, const ValueGrid& probe) {
    double total = 0.0;
    for (std::size_t i = 0; i < output.size(); ++i) total += output[i] * probe[i];
    return total;
}

} // namespace

double finite_diff_check(const DifferentiableOp& op,
                         std::vector<ValueGrid> inputs,
                         const ValueGrid& probe,
                         double epsilon) {
    if (epsilon <= 0.0) throw Error("finite_diff_check: epsilon must be positive");

    const ValueGrid output = op.forward(inputs);
    if (!output.same_shape(probe)) {
        throw ShapeError("finite_diff_check: probe shape does not match op output for " +
                         op.name());
    }

    const std::vector<ValueGrid> analytic = op.backward(inputs, probe);
    if (analytic.size() != inputs.size()) {
        throw ShapeError("finite_diff_check: backward returned " +
                         std::to_string(analytic.size()) + " gradients for " +
                         std::to_string(inputs.size()) + " inputs in " + op.name());
    }

    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        if (!analytic[k].same_shape(inputs[k])) {
            throw ShapeError("finite_diff_check: gradient shape mismatch on input " +
                             std::to_string(k) + " of " + op.name());
        }
        for (std::size_t j = 0; j < inputs[k].size(); ++j) {
            const double saved = inputs[k][j];
            inputs[k][j] = saved + epsilon;
            const double plus = contract(op.forward(inputs), probe);
            inputs[k][j] = saved - epsilon;
            const double minus = contract(op.forward(inputs), probe);
            inputs[k][j] = saved;

            const double numeric = (plus - minus) / (2.0 * epsilon);
            const double exact = analytic[k][j];
            const double denom =
                std::max({std::abs(exact), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(exact - numeric) / denom);
        }
    }
    return worst;
}

} // namespace dermpolar
